//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line (visible under `--nocapture`) and panicking on FAIL.
//!
//! Expensive Green-field sequences are solved once in shared statics; the
//! criteria that reuse them share the runtime budget of their primary
//! criterion, so both members of a pair carry the same budget.

use once_cell::sync::Lazy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::{Duration, Instant};

use halfwalk::deviations::{green_ld_bound_check, optimal_cost};
use halfwalk::geometry::{
    a_of_q, beta_min, kkt_residual, phi, spectral_radius_truncated, Direction, DualPoint,
};
use halfwalk::green::{
    certified_field, ld_slope, twisted_green_identity_check, BoxPolicy, GreenField, GreenKind,
    TruncationBox,
};
use halfwalk::harmonic::{build, explicit_left_continuous, harmonic_residual, martin_candidate_ratio};
use halfwalk::ladder::{mc_boundary_oracle, mean_overshoot, survival_probability, BoundaryTarget};
use halfwalk::{BoundaryClass, HarmonicEvaluator, JumpDistribution, LatticeVector, OneDWalk};

const FIELD_TOL: f64 = 1e-8;

fn m1() -> JumpDistribution {
    JumpDistribution::parse("dim 2\njump 1 0 0.3\njump -1 0 0.2\njump 0 1 0.3\njump 0 -1 0.2\n")
        .unwrap()
}

fn m2() -> JumpDistribution {
    JumpDistribution::parse(
        "dim 2\njump 1 0 0.3\njump -1 0 0.2\njump 0 1 0.3\njump 0 -1 0.15\njump 0 -2 0.05\n",
    )
    .unwrap()
}

fn z(x: i64, y: i64) -> LatticeVector {
    LatticeVector::new(vec![x, y])
}

fn upper_direction(qy: f64) -> Direction {
    Direction::normalized(vec![(1.0 - qy * qy).sqrt(), qy]).unwrap()
}

fn schedule(kind: &str) -> Vec<LatticeVector> {
    (5..=60)
        .step_by(5)
        .map(|n| match kind {
            "diag" => z(n, n),
            _ => z(n, 1),
        })
        .collect()
}

fn solve_sequence(targets: &[LatticeVector]) -> Vec<GreenField> {
    let model = m1();
    let policy = BoxPolicy::default();
    targets
        .par_iter()
        .map(|t| {
            certified_field(&model, GreenKind::Killed, t, &z(0, 2), &z(0, 1), &policy, FIELD_TOL)
                .expect("certified solve along the schedule")
        })
        .collect()
}

static DIAG_FIELDS: Lazy<Vec<GreenField>> = Lazy::new(|| solve_sequence(&schedule("diag")));
static WALL_FIELDS: Lazy<Vec<GreenField>> = Lazy::new(|| solve_sequence(&schedule("wall")));

/// M1 evaluators at ten boundary points spread over the upper directions,
/// built tight enough for the closed-form comparison. Slot 6 is the mean
/// direction, whose boundary point is the origin of the dual body.
static M1_EVALUATORS: Lazy<Vec<(f64, DualPoint, HarmonicEvaluator)>> = Lazy::new(|| {
    let model = m1();
    let mut heights: Vec<f64> = (0..10).map(|k| k as f64 / 9.0).collect();
    heights[6] = std::f64::consts::FRAC_1_SQRT_2;
    heights
        .into_iter()
        .map(|qy| {
            let a = a_of_q(&model, &upper_direction(qy), 1e-12).unwrap();
            let ev = build(&model, &a, 1e-10).unwrap();
            (qy, a, ev)
        })
        .collect()
});

fn kernel(field: &GreenField, num: &LatticeVector, den: &LatticeVector) -> f64 {
    field.value(num) / field.value(den)
}

fn residual_grid(
    model: &JumpDistribution,
    ev: &HarmonicEvaluator,
    label: &str,
    problems: &mut Vec<String>,
) {
    for x in -5..=5i64 {
        for y in 1..=20i64 {
            let r = harmonic_residual(model, ev, &z(x, y)).unwrap();
            if r > 1e-6 {
                problems.push(format!("{label}: residual {r:.3e} at ({x},{y})"));
            }
        }
    }
}

/// Errors must eventually decrease: each of the last four is no larger
/// than the value three schedule steps earlier.
fn eventually_decreasing(errors: &[f64], problems: &mut Vec<String>, label: &str) {
    for i in errors.len() - 4..errors.len() {
        if errors[i] > errors[i - 3] {
            problems.push(format!(
                "{label}: error {:.3e} at step {} exceeds {:.3e} at step {}",
                errors[i],
                i,
                errors[i - 3],
                i - 3
            ));
        }
    }
}

fn finish(name: &str, budget: Duration, started: Instant, mut problems: Vec<String>) {
    let elapsed = started.elapsed();
    if elapsed > budget {
        problems.push(format!("runtime {elapsed:.1?} exceeded the {budget:?} budget"));
    }
    if problems.is_empty() {
        println!("criterion {name}: PASS ({elapsed:.1?})");
    } else {
        println!("criterion {name}: FAIL ({elapsed:.1?})");
        for p in &problems {
            println!("  - {p}");
        }
        panic!("criterion {name} failed: {}", problems.join("; "));
    }
}

#[test]
fn criterion_01_dual_geometry() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();

    let at_zero = phi(&model, &DualPoint::new(vec![0.0, 0.0]));
    if at_zero != 1.0 {
        problems.push(format!("phi(0) = {at_zero}, expected exactly 1"));
    }

    let qm = Direction::normalized(model.mean()).unwrap();
    let am = a_of_q(&model, &qm, 1e-10).unwrap();
    let norm = am.coords().iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 1e-8 {
        problems.push(format!("a(m/|m|) has norm {norm:.3e}, expected 0 within 1e-8"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20_26);
    for i in 0..100 {
        let theta: f64 = rng.random::<f64>() * std::f64::consts::PI;
        let q = Direction::normalized(vec![theta.cos(), theta.sin()]).unwrap();
        let a = a_of_q(&model, &q, 1e-10).unwrap();
        let kkt = kkt_residual(&model, &a, &q);
        if kkt > 1e-8 {
            problems.push(format!("sample {i}: KKT residual {kkt:.3e} > 1e-8"));
        }
        match optimal_cost(&model, &q) {
            Ok(oc) => {
                let gap = (oc.legendre_side - oc.product_side).abs();
                if gap > 1e-8 {
                    problems.push(format!("sample {i}: duality gap {gap:.3e} > 1e-8"));
                }
            }
            Err(e) => problems.push(format!("sample {i}: duality identity failed: {e}")),
        }
    }
    finish("01 dual geometry", Duration::from_secs(5), started, problems);
}

#[test]
fn criterion_02_closed_form_agreement() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();

    for (qy, a, ev) in M1_EVALUATORS.iter() {
        for x in -4..=5i64 {
            for y in 1..=5i64 {
                let point = z(x, y);
                let built = ev.evaluate(&point).unwrap();
                let closed = explicit_left_continuous(&model, a, &point).unwrap();
                if (built - closed).abs() > 1e-9 * closed.abs() {
                    problems.push(format!(
                        "q_y={qy:.3}, z=({x},{y}): built {built:.12e} vs closed {closed:.12e}"
                    ));
                }
            }
        }
    }

    let origin_ev = &M1_EVALUATORS
        .iter()
        .find(|(_, a, _)| a.coords().iter().all(|c| c.abs() < 1e-9))
        .expect("the mean direction evaluator sits at a = 0")
        .2;
    for y in 1..=8i64 {
        let exact = 1.0 - (2.0f64 / 3.0).powi(y as i32);
        let got = origin_ev.evaluate(&z(3, y)).unwrap();
        if (got - exact).abs() > 1e-9 {
            problems.push(format!("h_0(3,{y}) = {got:.12e} vs 1-(2/3)^{y} = {exact:.12e}"));
        }
    }
    finish("02 closed-form agreement", Duration::from_secs(10), started, problems);
}

#[test]
fn criterion_03_harmonicity() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let reference = m1();
    let deep_jump = m2();

    for (qy, _, ev) in M1_EVALUATORS.iter() {
        residual_grid(&reference, ev, &format!("reference q_y={qy:.3}"), &mut problems);
    }
    for qy in [0.0f64, 0.5, 1.0] {
        let a = a_of_q(&deep_jump, &upper_direction(qy), 1e-12).unwrap();
        let ev = build(&deep_jump, &a, 1e-10).unwrap();
        if qy == 0.0 && ev.class() != BoundaryClass::Tangent {
            problems.push("deep-jump wall direction should classify as tangent".into());
        }
        residual_grid(&deep_jump, &ev, &format!("deep-jump q_y={qy:.1}"), &mut problems);
    }
    finish("03 harmonicity", Duration::from_secs(30), started, problems);
}

#[test]
fn criterion_04_ladder_oracles() {
    let started = Instant::now();
    let mut problems = Vec::new();

    for (p, q, r) in [(0.3, 0.2, 0.5), (0.4, 0.1, 0.5), (0.25, 0.2, 0.55)] {
        let law = OneDWalk::new([(1, p), (-1, q), (0, r)].into_iter().collect()).unwrap();
        let table = survival_probability(&law, 1e-10).unwrap();
        for y in 1..=20i64 {
            let exact = 1.0 - (q / p).powi(y as i32);
            let got = table.value(y);
            if (got - exact).abs() > 1e-9 {
                problems.push(format!(
                    "ruin law ({p},{q},{r}): u({y}) = {got:.12e} vs {exact:.12e}"
                ));
            }
        }
    }

    let span_two = OneDWalk::new([(2, 0.25), (-2, 0.25), (0, 0.5)].into_iter().collect()).unwrap();
    let table = mean_overshoot(&span_two, 1e-10).unwrap();
    for y in [1i64, 2, 5, 10] {
        // A zero-drift path that survives 10^4 steps contributes nothing
        // but runtime: censoring leaves the completed-path mean unbiased
        // here, and the fraction is reported on failure.
        let est = mc_boundary_oracle(&span_two, y, BoundaryTarget::FinalPosition, 1_000_000, 10_000, 2024);
        let mc_f = y as f64 - est.estimate;
        let diff = (table.value(y) - mc_f).abs();
        let allowed = 3.0 * est.std_error + 1e-9;
        if diff > allowed {
            problems.push(format!(
                "span-two overshoot at y={y}: solver {:.12e} vs MC {:.12e} (3 s.e. = {:.3e}, censored {:.2e})",
                table.value(y),
                mc_f,
                3.0 * est.std_error,
                est.censored_fraction
            ));
        }
    }
    finish("04 ladder oracles", Duration::from_secs(120), started, problems);
}

#[test]
fn criterion_05_interior_martin_kernel() {
    let started = Instant::now();
    let mut problems = Vec::new();

    let errors: Vec<f64> = DIAG_FIELDS
        .iter()
        .map(|f| (kernel(f, &z(0, 2), &z(0, 1)) - 5.0 / 3.0).abs())
        .collect();
    let last = *errors.last().unwrap();
    if last > 0.05 {
        problems.push(format!("|K - 5/3| = {last:.4} at n=60, allowed 0.05"));
    }
    eventually_decreasing(&errors, &mut problems, "interior kernel");
    finish(
        "05 interior Martin kernel",
        Duration::from_secs(300),
        started,
        problems,
    );
}

#[test]
fn criterion_06_wall_martin_kernel() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();

    let a = a_of_q(&model, &upper_direction(0.0), 1e-10).unwrap();
    let ev = build(&model, &a, 1e-10).unwrap();
    let limit = martin_candidate_ratio(&ev, &z(0, 2), &z(0, 1)).unwrap();

    let errors: Vec<f64> = WALL_FIELDS
        .iter()
        .map(|f| (kernel(f, &z(0, 2), &z(0, 1)) - limit).abs())
        .collect();
    let last = *errors.last().unwrap();
    if last > 0.10 {
        problems.push(format!(
            "|K - {limit:.6}| = {last:.4} at n=60, allowed 0.10"
        ));
    }
    eventually_decreasing(&errors, &mut problems, "wall kernel");
    finish(
        "06 wall Martin kernel",
        Duration::from_secs(600),
        started,
        problems,
    );
}

#[test]
fn criterion_07_shift_invariance() {
    let started = Instant::now();
    let mut problems = Vec::new();

    let shifted = z(2, 1);
    let base = z(0, 1);
    let ratios: Vec<f64> = DIAG_FIELDS
        .iter()
        .map(|f| kernel(f, &shifted, &base))
        .collect();
    let last = *ratios.last().unwrap();
    if !(0.95..=1.05).contains(&last) {
        problems.push(format!("shift ratio {last:.4} at n=60 outside [0.95, 1.05]"));
    }
    let errors: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    eventually_decreasing(&errors, &mut problems, "shift ratio");
    finish(
        "07 shift invariance",
        Duration::from_secs(300),
        started,
        problems,
    );
}

#[test]
fn criterion_08_twisted_green_identity() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();

    let a = DualPoint::new(vec![0.0, (2.0f64 / 3.0).ln()]);
    let pairs = [
        (z(0, 1), z(3, 2)),
        (z(1, 1), z(3, 2)),
        (z(0, 2), z(2, 3)),
        (z(-1, 1), z(2, 3)),
        (z(0, 1), z(0, 4)),
    ];
    let boundary = TruncationBox::new(vec![30], 25).unwrap();
    match twisted_green_identity_check(&model, &a, &pairs, &boundary, 1e-10) {
        Ok(worst) => {
            if worst > 1e-7 {
                problems.push(format!("max relative deviation {worst:.3e} > 1e-7"));
            }
        }
        Err(e) => problems.push(format!("identity check failed to run: {e}")),
    }
    finish(
        "08 twisted Green identity",
        Duration::from_secs(120),
        started,
        problems,
    );
}

#[test]
fn criterion_09_free_walk_kernel() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();
    let policy = BoxPolicy::default();
    let origin = z(0, 0);
    let probes = [z(1, 0), z(0, 1), z(1, 1)];

    let diag_field = certified_field(
        &model,
        GreenKind::Free,
        &z(60, 60),
        &z(1, 1),
        &origin,
        &policy,
        FIELD_TOL,
    )
    .unwrap();
    for probe in &probes {
        let k = kernel(&diag_field, probe, &origin);
        if (k - 1.0).abs() > 0.03 {
            problems.push(format!(
                "mean direction: kernel {k:.4} at z={probe} deviates from 1 by more than 0.03"
            ));
        }
    }

    let a_wall = a_of_q(&model, &upper_direction(0.0), 1e-10).unwrap();
    let wall_field = certified_field(
        &model,
        GreenKind::Free,
        &z(85, 0),
        &z(1, 1),
        &origin,
        &policy,
        FIELD_TOL,
    )
    .unwrap();
    for probe in &probes {
        let k = kernel(&wall_field, probe, &origin);
        let limit = a_wall.dot_lattice(probe).exp();
        if (k - limit).abs() > 0.05 {
            problems.push(format!(
                "wall direction: kernel {k:.4} at z={probe} vs e^(a·z) = {limit:.4}, allowed 0.05"
            ));
        }
    }
    finish(
        "09 free-walk kernel",
        Duration::from_secs(300),
        started,
        problems,
    );
}

#[test]
fn criterion_10_spectral_radius() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();

    let (_, lambda) = beta_min(&model, &[0.0]).unwrap();
    let truncated: Vec<f64> = [25usize, 50, 100, 200]
        .iter()
        .map(|&k| spectral_radius_truncated(&model, &[0.0], k).unwrap())
        .collect();
    for w in truncated.windows(2) {
        if w[1] < w[0] {
            problems.push(format!(
                "truncation values not monotone: {:.8} then {:.8}",
                w[0], w[1]
            ));
        }
    }
    let gap = (truncated[3] - lambda).abs();
    if gap > 1e-3 {
        problems.push(format!("K=200 truncation off by {gap:.3e} > 1e-3"));
    }
    finish(
        "10 spectral radius",
        Duration::from_secs(30),
        started,
        problems,
    );
}

#[test]
fn criterion_11_ld_decay_bound() {
    let started = Instant::now();
    let mut problems = Vec::new();
    let model = m1();

    let slopes = ld_slope(&WALL_FIELDS, &z(0, 2)).unwrap();
    let report = green_ld_bound_check(&model, &upper_direction(0.0), &slopes, 0.2).unwrap();
    if !report.pass {
        problems.push(format!(
            "final slope {:.6} below bound {:.6} (margin {:.6})",
            report.final_slope, report.bound, report.margin
        ));
    }
    finish(
        "11 LD decay bound",
        Duration::from_secs(600),
        started,
        problems,
    );
}
