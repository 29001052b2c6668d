//! Green's functions of the killed and free walks on truncated boxes, and
//! the ratio experiments built on them.
//!
//! Everything is source-indexed: for a fixed target z', the field
//! u(z) = G(z, z') is the unique fixed point of
//!
//!   u(z) = delta_{z,z'} + sum_j mu(j) u(z + j),
//!
//! with u = 0 outside the admissible region (the half-space for the killed
//! walk, everywhere truncated to a finite box). One solve per target serves
//! every source, which is exactly the shape Martin-kernel experiments need.
//! Truncation discards paths, so enlarging the box can only increase
//! values; box growth therefore yields a one-sided convergence certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::{self, Direction, DualPoint};
use crate::harmonic;
use crate::ladder::McEstimate;
use crate::model::{JumpDistribution, LatticeVector};

const SWEEP_BUDGET: u64 = 500_000;

/// Which walk a Green field belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreenKind {
    /// Killed outside the upper half-space: sites with y <= 0 absorb.
    Killed,
    /// The unrestricted walk.
    Free,
}

/// A centered box: |x_i| <= x_half_widths[i] horizontally, and vertically
/// 1..=y_max for the killed walk or -y_max..=y_max for the free one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationBox {
    x_half_widths: Vec<i64>,
    y_max: i64,
}

impl TruncationBox {
    pub fn new(x_half_widths: Vec<i64>, y_max: i64) -> Result<Self> {
        if x_half_widths.iter().any(|&w| w <= 0) || y_max < 1 {
            return Err(Error::Domain(
                "truncation box extents must be positive".into(),
            ));
        }
        Ok(TruncationBox {
            x_half_widths,
            y_max,
        })
    }

    pub fn x_half_widths(&self) -> &[i64] {
        &self.x_half_widths
    }

    pub fn y_max(&self) -> i64 {
        self.y_max
    }

    pub fn doubled(&self) -> TruncationBox {
        TruncationBox {
            x_half_widths: self.x_half_widths.iter().map(|w| w * 2).collect(),
            y_max: self.y_max * 2,
        }
    }

    fn dim(&self) -> usize {
        self.x_half_widths.len() + 1
    }

    fn y_lo(&self, kind: GreenKind) -> i64 {
        match kind {
            GreenKind::Killed => 1,
            GreenKind::Free => -self.y_max,
        }
    }

    pub fn contains(&self, z: &LatticeVector, kind: GreenKind) -> bool {
        if z.dim() != self.dim() {
            return false;
        }
        let y = z.y();
        if y < self.y_lo(kind) || y > self.y_max {
            return false;
        }
        z.coords()[..self.dim() - 1]
            .iter()
            .zip(&self.x_half_widths)
            .all(|(&c, &w)| c.abs() <= w)
    }

    fn strictly_inside(&self, z: &LatticeVector, kind: GreenKind) -> bool {
        if z.dim() != self.dim() {
            return false;
        }
        let y = z.y();
        let y_ok = match kind {
            GreenKind::Killed => (1..self.y_max).contains(&y),
            GreenKind::Free => y.abs() < self.y_max,
        };
        y_ok && z.coords()[..self.dim() - 1]
            .iter()
            .zip(&self.x_half_widths)
            .all(|(&c, &w)| c.abs() < w)
    }

    fn cell_count(&self, kind: GreenKind) -> usize {
        let y_cells = (self.y_max - self.y_lo(kind) + 1) as usize;
        self.x_half_widths
            .iter()
            .map(|&w| (2 * w + 1) as usize)
            .product::<usize>()
            * y_cells
    }

    fn index_of(&self, z: &LatticeVector, kind: GreenKind) -> Option<usize> {
        if !self.contains(z, kind) {
            return None;
        }
        let mut idx = 0usize;
        for (i, &c) in z.coords()[..self.dim() - 1].iter().enumerate() {
            let w = self.x_half_widths[i];
            idx = idx * (2 * w + 1) as usize + (c + w) as usize;
        }
        let y_cells = (self.y_max - self.y_lo(kind) + 1) as usize;
        Some(idx * y_cells + (z.y() - self.y_lo(kind)) as usize)
    }
}

/// A solved Green field: u(z) = G(z, target) on the box, zero outside.
#[derive(Debug, Clone)]
pub struct GreenField {
    target: LatticeVector,
    kind: GreenKind,
    boundary: TruncationBox,
    values: Vec<f64>,
    iterations: u64,
    residual: f64,
}

impl GreenField {
    pub fn target(&self) -> &LatticeVector {
        &self.target
    }

    pub fn kind(&self) -> GreenKind {
        self.kind
    }

    pub fn truncation_box(&self) -> &TruncationBox {
        &self.boundary
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// G(z, target); zero outside the box and in the killed region.
    pub fn value(&self, z: &LatticeVector) -> f64 {
        match self.boundary.index_of(z, self.kind) {
            Some(i) => self.values[i],
            None => 0.0,
        }
    }
}

/// Precomputed sweep structure: per cell, the flat indices of its
/// in-region successors, in jump order.
struct SweepPlan {
    probs: Vec<f64>,
    neighbors: Vec<u32>,
    n_jumps: usize,
    source: usize,
}

fn build_plan(
    model: &JumpDistribution,
    target: &LatticeVector,
    boundary: &TruncationBox,
    kind: GreenKind,
) -> Result<SweepPlan> {
    let n = boundary.cell_count(kind);
    if n > u32::MAX as usize / 2 {
        return Err(Error::Domain("truncation box too large to index".into()));
    }
    let jumps: Vec<(LatticeVector, f64)> = model.iter().map(|(z, p)| (z.clone(), p)).collect();
    let n_jumps = jumps.len();
    let mut neighbors = vec![u32::MAX; n * n_jumps];
    let d = boundary.dim();
    let y_lo = boundary.y_lo(kind);
    let y_cells = (boundary.y_max - y_lo + 1) as i64;
    // Odometer over cells in flat order.
    let mut coords: Vec<i64> = boundary.x_half_widths.iter().map(|w| -w).collect();
    coords.push(y_lo);
    for cell in 0..n {
        let z = LatticeVector::new(coords.clone());
        for (k, (jump, _)) in jumps.iter().enumerate() {
            let nz = z.add(jump);
            if let Some(i) = boundary.index_of(&nz, kind) {
                neighbors[cell * n_jumps + k] = i as u32;
            }
        }
        // Advance: y fastest, then x coordinates from the last.
        let mut axis = d;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            if axis == d - 1 {
                coords[axis] += 1;
                if coords[axis] - y_lo < y_cells {
                    break;
                }
                coords[axis] = y_lo;
            } else {
                coords[axis] += 1;
                if coords[axis] <= boundary.x_half_widths[axis] {
                    break;
                }
                coords[axis] = -boundary.x_half_widths[axis];
            }
        }
    }
    let source = boundary
        .index_of(target, kind)
        .ok_or_else(|| Error::Domain("target must lie inside the truncation box".into()))?;
    Ok(SweepPlan {
        probs: jumps.into_iter().map(|(_, p)| p).collect(),
        neighbors,
        n_jumps,
        source,
    })
}

impl SweepPlan {
    fn cell_rhs(&self, u: &[f64], i: usize) -> f64 {
        let mut s = if i == self.source { 1.0 } else { 0.0 };
        let row = &self.neighbors[i * self.n_jumps..(i + 1) * self.n_jumps];
        for (k, &nb) in row.iter().enumerate() {
            if nb != u32::MAX {
                s += self.probs[k] * u[nb as usize];
            }
        }
        s
    }

    /// One forward plus one backward in-place sweep; returns the sup-norm
    /// update.
    fn sweep(&self, u: &mut [f64]) -> f64 {
        let mut delta = 0.0f64;
        for i in 0..u.len() {
            let s = self.cell_rhs(u, i);
            delta = delta.max((s - u[i]).abs());
            u[i] = s;
        }
        for i in (0..u.len()).rev() {
            let s = self.cell_rhs(u, i);
            delta = delta.max((s - u[i]).abs());
            u[i] = s;
        }
        delta
    }

    fn residual(&self, u: &[f64]) -> f64 {
        let mut r = 0.0f64;
        for i in 0..u.len() {
            r = r.max((self.cell_rhs(u, i) - u[i]).abs());
        }
        r
    }
}

fn solve(
    model: &JumpDistribution,
    target: &LatticeVector,
    boundary: &TruncationBox,
    kind: GreenKind,
    tol: f64,
    warm: Option<&GreenField>,
) -> Result<GreenField> {
    if target.dim() != model.dim() {
        return Err(Error::Domain("target dimension mismatch".into()));
    }
    if !boundary.strictly_inside(target, kind) {
        return Err(Error::Domain(
            "target must lie strictly inside the truncation box".into(),
        ));
    }
    if kind == GreenKind::Free {
        let mean_norm: f64 = model.mean().iter().map(|m| m * m).sum::<f64>().sqrt();
        if mean_norm <= 1e-12 {
            return Err(Error::Domain(
                "free Green function needs a nonzero mean for transience".into(),
            ));
        }
    }
    let plan = build_plan(model, target, boundary, kind)?;
    let mut u = vec![0.0f64; boundary.cell_count(kind)];
    if let Some(prev) = warm {
        // Values from a nested smaller box are a subsolution of the larger
        // system, so the iteration stays monotone from below.
        let y_lo = boundary.y_lo(kind);
        let y_cells = (boundary.y_max - y_lo + 1) as i64;
        let mut coords: Vec<i64> = boundary.x_half_widths.iter().map(|w| -w).collect();
        coords.push(y_lo);
        let d = boundary.dim();
        for cell in u.iter_mut() {
            let z = LatticeVector::new(coords.clone());
            *cell = prev.value(&z);
            let mut axis = d;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                if axis == d - 1 {
                    coords[axis] += 1;
                    if coords[axis] - y_lo < y_cells {
                        break;
                    }
                    coords[axis] = y_lo;
                } else {
                    coords[axis] += 1;
                    if coords[axis] <= boundary.x_half_widths[axis] {
                        break;
                    }
                    coords[axis] = -boundary.x_half_widths[axis];
                }
            }
        }
    }
    let mut iterations = 0u64;
    let mut last_delta = f64::INFINITY;
    let mut calm = 0u32;
    loop {
        let delta = plan.sweep(&mut u);
        iterations += 1;
        if iterations > SWEEP_BUDGET {
            return Err(Error::NonConvergence {
                what: "Green sweep iteration",
                residual: delta,
            });
        }
        let rho = (delta / last_delta).min(0.999_999);
        let estimated = delta * rho / (1.0 - rho);
        last_delta = delta;
        if delta <= f64::EPSILON || estimated < tol {
            calm += 1;
            if calm >= 3 {
                let residual = plan.residual(&u);
                if residual <= tol {
                    return Ok(GreenField {
                        target: target.clone(),
                        kind,
                        boundary: boundary.clone(),
                        values: u,
                        iterations,
                        residual,
                    });
                }
                calm = 0;
            }
        } else {
            calm = 0;
        }
    }
}

/// Green's function of the killed walk on a truncated box.
pub fn green_killed(
    model: &JumpDistribution,
    target: &LatticeVector,
    boundary: &TruncationBox,
    tol: f64,
) -> Result<GreenField> {
    if target.y() < 1 {
        return Err(Error::Domain("killed-walk target must have y >= 1".into()));
    }
    solve(model, target, boundary, GreenKind::Killed, tol, None)
}

/// Green's function of the free walk on a truncated box.
pub fn green_free(
    model: &JumpDistribution,
    target: &LatticeVector,
    boundary: &TruncationBox,
    tol: f64,
) -> Result<GreenField> {
    solve(model, target, boundary, GreenKind::Free, tol, None)
}

/// K(z, target) = G(z, target) / G(z0, target).
pub fn martin_kernel(field: &GreenField, z: &LatticeVector, z0: &LatticeVector) -> Result<f64> {
    let den = field.value(z0);
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(field.value(z) / den)
}

/// How truncation boxes are chosen and certified for a target sequence.
#[derive(Debug, Clone)]
pub struct BoxPolicy {
    pub x_factor: i64,
    pub x_pad: i64,
    pub y_pad: i64,
    /// Maximum relative kernel change allowed under one box doubling.
    pub kernel_change: f64,
    pub max_doublings: u32,
}

impl Default for BoxPolicy {
    fn default() -> Self {
        BoxPolicy {
            x_factor: 2,
            x_pad: 40,
            y_pad: 40,
            kernel_change: 0.005,
            max_doublings: 2,
        }
    }
}

impl BoxPolicy {
    pub fn box_for(&self, target: &LatticeVector) -> TruncationBox {
        let n = target.norm().ceil() as i64;
        let widths = vec![self.x_factor * n + self.x_pad; target.dim() - 1];
        TruncationBox::new(widths, n + self.y_pad).expect("policy extents are positive")
    }
}

/// Solves G(., target), growing the box until doubling moves the reference
/// kernel value num/den by less than the policy threshold. Truncation bias
/// is monotone, so the certificate is one-sided.
pub fn certified_field(
    model: &JumpDistribution,
    kind: GreenKind,
    target: &LatticeVector,
    num: &LatticeVector,
    den: &LatticeVector,
    policy: &BoxPolicy,
    tol: f64,
) -> Result<GreenField> {
    let mut boundary = policy.box_for(target);
    let mut field = solve(model, target, &boundary, kind, tol, None)?;
    let mut kernel = martin_kernel(&field, num, den)?;
    let mut change = f64::INFINITY;
    for _ in 0..policy.max_doublings {
        boundary = boundary.doubled();
        let next = solve(model, target, &boundary, kind, tol, Some(&field))?;
        let next_kernel = martin_kernel(&next, num, den)?;
        change = (next_kernel - kernel).abs() / next_kernel.abs().max(f64::MIN_POSITIVE);
        field = next;
        kernel = next_kernel;
        if change < self_change_bound(policy) {
            return Ok(field);
        }
    }
    Err(Error::NonConvergence {
        what: "box-doubling certificate",
        residual: change,
    })
}

fn self_change_bound(policy: &BoxPolicy) -> f64 {
    policy.kernel_change
}

/// One row of a convergence table: the kernel at target index n against
/// its predicted limit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: i64,
    pub abs_zn: f64,
    pub kernel: f64,
    pub limit: f64,
    pub abs_err: f64,
}

fn row(target: &LatticeVector, kernel: f64, limit: f64) -> ConvergenceRow {
    ConvergenceRow {
        n: target.coords()[0],
        abs_zn: target.norm(),
        kernel,
        limit,
        abs_err: (kernel - limit).abs(),
    }
}

/// Martin-kernel convergence experiment: K_+(z, z_n) along the targets
/// against the harmonic ratio h(z)/h(z0) for the direction's boundary
/// point.
pub fn ratio_limit_experiment(
    model: &JumpDistribution,
    q: &Direction,
    targets: &[LatticeVector],
    z: &LatticeVector,
    z0: &LatticeVector,
    policy: &BoxPolicy,
    tol: f64,
) -> Result<Vec<ConvergenceRow>> {
    let a = geometry::a_of_q(model, q, geometry::DEFAULT_TOL)?;
    let ev = harmonic::build(model, &a, tol.min(1e-9))?;
    let limit = harmonic::martin_candidate_ratio(&ev, z, z0)?;
    targets
        .iter()
        .map(|t| {
            let field = certified_field(model, GreenKind::Killed, t, z, z0, policy, tol)?;
            Ok(row(t, martin_kernel(&field, z, z0)?, limit))
        })
        .collect()
}

/// Horizontal-shift invariance check: G_+(z + k_hat w, z_n)/G_+(z, z_n)
/// should approach 1 when k_hat is the walk's period and w is horizontal.
pub fn shift_ratio_check(
    model: &JumpDistribution,
    targets: &[LatticeVector],
    z: &LatticeVector,
    w: &LatticeVector,
    k_hat: i64,
    policy: &BoxPolicy,
    tol: f64,
) -> Result<Vec<ConvergenceRow>> {
    if w.y() != 0 {
        return Err(Error::Domain("shift vector must be horizontal".into()));
    }
    let shifted = z.add(&w.scale(k_hat));
    targets
        .iter()
        .map(|t| {
            let field = certified_field(model, GreenKind::Killed, t, &shifted, z, policy, tol)?;
            Ok(row(t, martin_kernel(&field, &shifted, z)?, 1.0))
        })
        .collect()
}

/// Free-walk kernel against the homogeneous limit e^{a(q)·z}.
pub fn ney_spitzer_experiment(
    model: &JumpDistribution,
    q: &Direction,
    targets: &[LatticeVector],
    z: &LatticeVector,
    policy: &BoxPolicy,
    tol: f64,
) -> Result<Vec<ConvergenceRow>> {
    let a = geometry::a_of_q(model, q, geometry::DEFAULT_TOL)?;
    let origin = LatticeVector::zero(model.dim());
    let limit = a.dot_lattice(z).exp();
    targets
        .iter()
        .map(|t| {
            let field = certified_field(model, GreenKind::Free, t, z, &origin, policy, tol)?;
            Ok(row(t, martin_kernel(&field, z, &origin)?, limit))
        })
        .collect()
}

/// Deviation of one source point from the twisted-Green identity
/// G~(z, target) = e^{a·(target - z)} ... e^{a·(z' - z)} G(z, z').
pub fn twist_deviation(
    plain: &GreenField,
    twisted: &GreenField,
    a: &DualPoint,
    z: &LatticeVector,
) -> Result<f64> {
    if plain.truncation_box() != twisted.truncation_box()
        || plain.target() != twisted.target()
        || plain.kind() != twisted.kind()
    {
        return Err(Error::BoxMismatch);
    }
    let g = plain.value(z);
    if g == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let displacement = plain.target().sub(z);
    let predicted = a.dot_lattice(&displacement).exp() * g;
    Ok((twisted.value(z) - predicted).abs() / predicted.abs())
}

/// Max relative deviation of the twisted-Green identity over source/target
/// pairs, both fields solved on the same box.
pub fn twisted_green_identity_check(
    model: &JumpDistribution,
    a: &DualPoint,
    pairs: &[(LatticeVector, LatticeVector)],
    boundary: &TruncationBox,
    tol: f64,
) -> Result<f64> {
    let twisted_model = model.twist(a)?;
    let targets: BTreeSet<&LatticeVector> = pairs.iter().map(|(_, t)| t).collect();
    let mut worst = 0.0f64;
    for target in targets {
        let plain = green_killed(model, target, boundary, tol)?;
        let twisted = green_killed(&twisted_model, target, boundary, tol)?;
        for (z, t) in pairs.iter().filter(|(_, t)| t == target) {
            let _ = t;
            worst = worst.max(twist_deviation(&plain, &twisted, a, z)?);
        }
    }
    Ok(worst)
}

/// Logarithmic decay slopes (1/|z_n|) log G(z, z_n) of a solved sequence.
pub fn ld_slope(fields: &[GreenField], z: &LatticeVector) -> Result<Vec<(f64, f64)>> {
    fields
        .iter()
        .map(|f| {
            let g = f.value(z);
            if g <= 0.0 {
                return Err(Error::Domain(
                    "log slope needs a positive Green value".into(),
                ));
            }
            let n = f.target().norm();
            Ok((n, g.ln() / n))
        })
        .collect()
}

/// Monte Carlo visit counts: estimates G(source, target) by simulating
/// paths up to the horizon. Deterministic given the seed.
pub fn mc_green(
    model: &JumpDistribution,
    source: &LatticeVector,
    target: &LatticeVector,
    kind: GreenKind,
    n_paths: u64,
    horizon: u64,
    seed: u64,
) -> McEstimate {
    assert!(n_paths >= 1);
    const BATCH: u64 = 2048;
    let cdf: Vec<(f64, LatticeVector)> = {
        let mut acc = 0.0;
        model
            .iter()
            .map(|(z, p)| {
                acc += p;
                (acc, z.clone())
            })
            .collect()
    };
    #[derive(Default, Clone, Copy)]
    struct Tally {
        visit_sum: u64,
        visit_sq_sum: u64,
        censored: u64,
    }
    let n_batches = n_paths.div_ceil(BATCH);
    let tallies: Vec<Tally> = (0..n_batches)
        .into_par_iter()
        .map(|batch| {
            let mut t = Tally::default();
            let lo = batch * BATCH;
            let hi = ((batch + 1) * BATCH).min(n_paths);
            for path in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path);
                let mut pos = source.clone();
                let mut visits = if pos == *target { 1u64 } else { 0 };
                let mut cut_off = true;
                for _ in 0..horizon {
                    let u: f64 = rng.random();
                    let jump = &cdf
                        .iter()
                        .find(|(c, _)| u < *c)
                        .unwrap_or(cdf.last().expect("nonempty support"))
                        .1;
                    pos = pos.add(jump);
                    if kind == GreenKind::Killed && pos.y() <= 0 {
                        cut_off = false;
                        break;
                    }
                    if pos == *target {
                        visits += 1;
                    }
                }
                t.visit_sum += visits;
                t.visit_sq_sum += visits * visits;
                if cut_off {
                    t.censored += 1;
                }
            }
            t
        })
        .collect();
    let mut total = Tally::default();
    for t in tallies {
        total.visit_sum += t.visit_sum;
        total.visit_sq_sum += t.visit_sq_sum;
        total.censored += t.censored;
    }
    let n = n_paths as f64;
    let mean = total.visit_sum as f64 / n;
    let var = if n_paths > 1 {
        (total.visit_sq_sum as f64 - n * mean * mean) / (n - 1.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        std_error: (var.max(0.0) / n).sqrt(),
        censored_fraction: total.censored as f64 / n,
        n_paths,
    }
}

/// Shortest jump-path length from one half-space point to another, staying
/// at y >= 1 throughout; None if unreachable within max_steps.
pub fn half_space_step_count(
    model: &JumpDistribution,
    from: &LatticeVector,
    to: &LatticeVector,
    max_steps: u32,
) -> Option<u32> {
    if from == to {
        return Some(0);
    }
    let mut seen: BTreeSet<LatticeVector> = BTreeSet::new();
    let mut queue: VecDeque<(LatticeVector, u32)> = VecDeque::new();
    seen.insert(from.clone());
    queue.push_back((from.clone(), 0));
    while let Some((pos, dist)) = queue.pop_front() {
        if dist == max_steps {
            continue;
        }
        for (jump, _) in model.iter() {
            let next = pos.add(jump);
            if next.y() < 1 || seen.contains(&next) {
                continue;
            }
            if next == *to {
                return Some(dist + 1);
            }
            seen.insert(next.clone());
            queue.push_back((next, dist + 1));
        }
    }
    None
}
