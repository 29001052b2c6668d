//! Boundary functions of the killed 1-D walk.
//!
//! For a vertical jump law P(y, y') = t(y' - y) and the killing time
//! tau = inf{t : Y(t) <= 0}, the positive solutions of
//!
//!   f(y) = sum_{y' > 0} P(y, y') f(y'),   y >= 1,
//!
//! that matter are the survival probability u(y) = P_y(tau = infinity)
//! when the drift is positive and f(y) = y - E_y[Y(tau)] when the drift is
//! zero. Both are computed from truncated linear systems with controlled
//! far-field boundary conditions: u == 1 beyond the truncation and flat
//! extrapolation of the final-position mean g(y) = E_y[Y(tau)], taken per
//! residue class of the support span so that periodic supports keep their
//! parity structure.
//!
//! Truncations are solved directly (banded elimination; the matrices are
//! M-matrices, so no pivoting is needed) up to height 2048 and by
//! Gauss-Seidel sweeps beyond, and the height doubles until the table is
//! stable on the retained range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::PROB_SUM_TOL;

/// Drifts below this magnitude count as zero.
pub const DRIFT_TOL: f64 = 1e-9;
/// Default table tolerance.
pub const DEFAULT_LADDER_TOL: f64 = 1e-9;
const DIRECT_SOLVE_LIMIT: i64 = 2048;
const INITIAL_HEIGHT: i64 = 64;
const MAX_HEIGHT: i64 = 1 << 21;
const MC_BATCH: u64 = 4096;

/// A one-dimensional jump law with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct OneDWalk {
    entries: BTreeMap<i64, f64>,
}

impl OneDWalk {
    pub fn new(entries: BTreeMap<i64, f64>) -> Result<Self> {
        Self::checked(entries, PROB_SUM_TOL)
    }

    /// Constructor for marginals produced inside the crate; twisted laws
    /// carry the looser level-set tolerance.
    pub(crate) fn from_producer(entries: BTreeMap<i64, f64>, tol: f64) -> OneDWalk {
        Self::checked(entries, tol).expect("marginal of a validated law is a valid 1-D law")
    }

    fn checked(entries: BTreeMap<i64, f64>, tol: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Model("1-D law has empty support".into()));
        }
        for (&j, &p) in &entries {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Model(format!(
                    "jump {j} has non-positive probability {p}"
                )));
            }
        }
        let sum: f64 = entries.values().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::Model(format!(
                "1-D law sums to {sum}, outside tolerance {tol}"
            )));
        }
        Ok(OneDWalk { entries })
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.entries.iter().map(|(&j, &p)| (j, p))
    }

    pub fn prob(&self, j: i64) -> f64 {
        self.entries.get(&j).copied().unwrap_or(0.0)
    }

    pub fn drift(&self) -> f64 {
        self.iter().map(|(j, p)| j as f64 * p).sum()
    }

    pub fn min_jump(&self) -> i64 {
        *self.entries.keys().next().expect("nonempty support")
    }

    pub fn max_jump(&self) -> i64 {
        *self.entries.keys().next_back().expect("nonempty support")
    }

    /// gcd of the nonzero jump sizes; 1 for a law supported on {0}.
    pub fn span(&self) -> i64 {
        let mut g = 0i64;
        for (j, _) in self.iter() {
            g = gcd(g, j.abs());
        }
        g.max(1)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Which boundary function a table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftCase {
    /// Survival probability u(y) = P_y(tau = infinity).
    Positive,
    /// f(y) = y - E_y[Y(tau)].
    Zero,
}

/// f on {1..L} plus the far-field extension it was solved with.
#[derive(Debug, Clone)]
pub struct BoundaryFunctionTable {
    drift_case: DriftCase,
    l: i64,
    span: i64,
    values: Vec<f64>,
    est_error: f64,
}

impl BoundaryFunctionTable {
    pub fn drift_case(&self) -> DriftCase {
        self.drift_case
    }

    pub fn height(&self) -> i64 {
        self.l
    }

    pub fn est_error(&self) -> f64 {
        self.est_error
    }

    /// f(y), extended by its solve-time boundary conditions: 0 at and below
    /// the killing boundary, 1 (survival) or residue-class flat
    /// continuation of the final-position mean (overshoot) above the table.
    pub fn value(&self, y: i64) -> f64 {
        if y <= 0 {
            return 0.0;
        }
        if y <= self.l {
            return self.values[(y - 1) as usize];
        }
        match self.drift_case {
            DriftCase::Positive => 1.0,
            DriftCase::Zero => {
                let rep = fold_index(y, self.l, self.span);
                (y - rep) as f64 + self.values[(rep - 1) as usize]
            }
        }
    }

    /// Residual of the killed harmonic equation at y under the table's own
    /// extension.
    pub fn equation_residual(&self, law: &OneDWalk, y: i64) -> f64 {
        let lhs: f64 = law
            .iter()
            .map(|(j, p)| {
                let yp = y + j;
                if yp > 0 {
                    p * self.value(yp)
                } else {
                    0.0
                }
            })
            .sum();
        (lhs - self.value(y)).abs()
    }
}

/// Largest index <= l in the residue class of y modulo span.
fn fold_index(y: i64, l: i64, span: i64) -> i64 {
    y - span * ((y - l + span - 1).div_euclid(span))
}

/// Survival probability table for a positive-drift law.
pub fn survival_probability(law: &OneDWalk, tol: f64) -> Result<BoundaryFunctionTable> {
    if law.drift() <= DRIFT_TOL {
        return Err(Error::DriftSign { drift: law.drift() });
    }
    solve_table(law, DriftCase::Positive, tol)
}

/// f(y) = y - E_y[Y(tau)] for a zero-drift law.
pub fn mean_overshoot(law: &OneDWalk, tol: f64) -> Result<BoundaryFunctionTable> {
    mean_overshoot_with_drift_tol(law, tol, DRIFT_TOL)
}

fn mean_overshoot_with_drift_tol(
    law: &OneDWalk,
    tol: f64,
    drift_tol: f64,
) -> Result<BoundaryFunctionTable> {
    if law.drift().abs() > drift_tol {
        return Err(Error::DriftSign { drift: law.drift() });
    }
    solve_table(law, DriftCase::Zero, tol)
}

/// Dispatches on the drift sign with the default drift tolerance.
pub fn f_table(law: &OneDWalk, tol: f64) -> Result<BoundaryFunctionTable> {
    f_table_with_drift_tol(law, tol, DRIFT_TOL)
}

/// Dispatches on the drift sign; callers that classified the boundary point
/// with a looser tolerance pass it here so the two decisions agree.
pub fn f_table_with_drift_tol(
    law: &OneDWalk,
    tol: f64,
    drift_tol: f64,
) -> Result<BoundaryFunctionTable> {
    let drift = law.drift();
    if drift > drift_tol {
        survival_probability(law, tol)
    } else if drift >= -drift_tol {
        mean_overshoot_with_drift_tol(law, tol, drift_tol)
    } else {
        Err(Error::DriftSign { drift })
    }
}

fn solve_table(law: &OneDWalk, case: DriftCase, tol: f64) -> Result<BoundaryFunctionTable> {
    if law.min_jump() >= 0 || law.max_jump() <= 0 {
        return Err(Error::Model(
            "boundary functions need vertical jumps of both signs".into(),
        ));
    }
    let span = law.span();
    let mut l = INITIAL_HEIGHT;
    let mut prev: Option<Vec<f64>> = None;
    loop {
        let cur = solve_fixed_height(law, case, l, tol)?;
        if let Some(p) = &prev {
            let half = p.len() / 2;
            let change = (0..half)
                .map(|i| (cur[i] - p[i]).abs())
                .fold(0.0f64, f64::max);
            if change < tol {
                let values = match case {
                    DriftCase::Positive => cur,
                    DriftCase::Zero => cur
                        .iter()
                        .enumerate()
                        .map(|(i, g)| (i as i64 + 1) as f64 - g)
                        .collect(),
                };
                return Ok(BoundaryFunctionTable {
                    drift_case: case,
                    l,
                    span,
                    values,
                    est_error: change,
                });
            }
        }
        prev = Some(cur);
        l *= 2;
        if l > MAX_HEIGHT {
            return Err(Error::NonConvergence {
                what: "boundary-function truncation doubling",
                residual: f64::NAN,
            });
        }
    }
}

/// Sparse row form of the truncated system A x = b with the far-field
/// boundary conditions folded in.
struct TruncatedSystem {
    diag: Vec<f64>,
    off: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

fn assemble(law: &OneDWalk, case: DriftCase, l: i64) -> TruncatedSystem {
    let n = l as usize;
    let span = law.span();
    let mut diag = vec![1.0; n];
    let mut off: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let y = i as i64 + 1;
        for (j, w) in law.iter() {
            let yp = y + j;
            if yp <= 0 {
                if case == DriftCase::Zero {
                    rhs[i] += w * yp as f64;
                }
            } else {
                let col = if yp <= l {
                    yp
                } else {
                    match case {
                        DriftCase::Positive => {
                            rhs[i] += w;
                            continue;
                        }
                        DriftCase::Zero => fold_index(yp, l, span),
                    }
                };
                if col == y {
                    diag[i] -= w;
                } else {
                    off[i].push(((col - 1) as usize, w));
                }
            }
        }
    }
    TruncatedSystem { diag, off, rhs }
}

fn solve_fixed_height(law: &OneDWalk, case: DriftCase, l: i64, tol: f64) -> Result<Vec<f64>> {
    let sys = assemble(law, case, l);
    if l <= DIRECT_SOLVE_LIMIT {
        Ok(banded_solve(law, &sys, l))
    } else {
        gauss_seidel(&sys, tol)
    }
}

/// Direct elimination on banded storage. The systems are weakly chained
/// diagonally dominant M-matrices, so no pivoting is required and the
/// bandwidth is preserved.
fn banded_solve(law: &OneDWalk, sys: &TruncatedSystem, l: i64) -> Vec<f64> {
    let n = l as usize;
    let wl = (-law.min_jump()).max(law.span() - 1).max(0) as usize;
    let wu = law.max_jump().max(0) as usize;
    let width = wl + wu + 1;
    let mut band = vec![0.0f64; n * width];
    let mut rhs = sys.rhs.clone();
    let idx = |r: usize, c: usize| -> usize { r * width + (c + wl - r) };
    for r in 0..n {
        band[idx(r, r)] = sys.diag[r];
        for &(c, w) in &sys.off[r] {
            band[idx(r, c)] -= w;
        }
    }
    for i in 0..n {
        let pivot = band[idx(i, i)];
        for r in i + 1..=(i + wl).min(n - 1) {
            let factor = band[idx(r, i)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in i..=(i + wu).min(n - 1) {
                let v = band[idx(i, c)];
                band[idx(r, c)] -= factor * v;
            }
            rhs[r] -= factor * rhs[i];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for c in i + 1..=(i + wu).min(n - 1) {
            s -= band[idx(i, c)] * x[c];
        }
        x[i] = s / band[idx(i, i)];
    }
    x
}

fn gauss_seidel(sys: &TruncatedSystem, tol: f64) -> Result<Vec<f64>> {
    let n = sys.diag.len();
    let mut x = vec![0.0f64; n];
    let mut last_update = f64::INFINITY;
    let residual = |x: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let mut s = sys.rhs[i] - sys.diag[i] * x[i];
                for &(c, w) in &sys.off[i] {
                    s += w * x[c];
                }
                s.abs()
            })
            .fold(0.0f64, f64::max)
    };
    for _ in 0..500_000 {
        let mut update = 0.0f64;
        for pass in 0..2 {
            let rows: Box<dyn Iterator<Item = usize>> = if pass == 0 {
                Box::new(0..n)
            } else {
                Box::new((0..n).rev())
            };
            for i in rows {
                let mut s = sys.rhs[i];
                for &(c, w) in &sys.off[i] {
                    s += w * x[c];
                }
                let next = s / sys.diag[i];
                update = update.max((next - x[i]).abs());
                x[i] = next;
            }
        }
        // The extrapolated-tail stop needs a contraction-rate estimate, so
        // it is armed only once two consecutive update norms exist, and the
        // cheap estimate is always confirmed against the true residual.
        let extrapolated_small = last_update.is_finite() && {
            let rho = (update / last_update).min(0.999_999);
            update * rho / (1.0 - rho) < 0.1 * tol
        };
        if (update <= f64::EPSILON || extrapolated_small) && residual(&x) <= tol {
            return Ok(x);
        }
        last_update = update;
    }
    Err(Error::NonConvergence {
        what: "boundary-function stationary iteration",
        residual: residual(&x),
    })
}

/// What the Monte Carlo oracle estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTarget {
    /// P_y(tau > horizon), an upper bound for the survival probability.
    Survival,
    /// Mean final position E_y[Y(tau) | tau <= horizon].
    FinalPosition,
}

/// A Monte Carlo estimate with its sampling error and the fraction of paths
/// cut off by the horizon (the handle on the one-sided horizon bias).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
    pub n_paths: u64,
}

/// Simulates killed paths of the 1-D walk. Deterministic for a given seed:
/// each path uses its own counter-derived ChaCha stream, so the result does
/// not depend on thread scheduling.
pub fn mc_boundary_oracle(
    law: &OneDWalk,
    y0: i64,
    target: BoundaryTarget,
    n_paths: u64,
    horizon: u64,
    seed: u64,
) -> McEstimate {
    assert!(y0 >= 1, "start inside the half-space");
    assert!(n_paths >= 1);
    let cdf: Vec<(f64, i64)> = {
        let mut acc = 0.0;
        law.iter()
            .map(|(j, p)| {
                acc += p;
                (acc, j)
            })
            .collect()
    };
    #[derive(Default, Clone, Copy)]
    struct Tally {
        completed: u64,
        censored: u64,
        final_sum: i64,
        final_sq_sum: i64,
    }
    let n_batches = n_paths.div_ceil(MC_BATCH);
    let tallies: Vec<Tally> = (0..n_batches)
        .into_par_iter()
        .map(|batch| {
            let mut t = Tally::default();
            let lo = batch * MC_BATCH;
            let hi = ((batch + 1) * MC_BATCH).min(n_paths);
            for path in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path);
                let mut y = y0;
                let mut survived = true;
                for _ in 0..horizon {
                    let u: f64 = rng.random();
                    let jump = cdf
                        .iter()
                        .find(|(c, _)| u < *c)
                        .map(|&(_, j)| j)
                        .unwrap_or(cdf.last().expect("nonempty support").1);
                    y += jump;
                    if y <= 0 {
                        survived = false;
                        break;
                    }
                }
                if survived {
                    t.censored += 1;
                } else {
                    t.completed += 1;
                    t.final_sum += y;
                    t.final_sq_sum += y * y;
                }
            }
            t
        })
        .collect();
    let mut total = Tally::default();
    for t in tallies {
        total.completed += t.completed;
        total.censored += t.censored;
        total.final_sum += t.final_sum;
        total.final_sq_sum += t.final_sq_sum;
    }
    let n = n_paths as f64;
    let censored_fraction = total.censored as f64 / n;
    match target {
        BoundaryTarget::Survival => {
            let p = censored_fraction;
            McEstimate {
                estimate: p,
                std_error: (p * (1.0 - p) / n).sqrt(),
                censored_fraction,
                n_paths,
            }
        }
        BoundaryTarget::FinalPosition => {
            let nc = total.completed as f64;
            if total.completed == 0 {
                return McEstimate {
                    estimate: 0.0,
                    std_error: f64::INFINITY,
                    censored_fraction,
                    n_paths,
                };
            }
            let mean = total.final_sum as f64 / nc;
            let var = if total.completed > 1 {
                (total.final_sq_sum as f64 - nc * mean * mean) / (nc - 1.0)
            } else {
                0.0
            };
            McEstimate {
                estimate: mean,
                std_error: (var.max(0.0) / nc).sqrt(),
                censored_fraction,
                n_paths,
            }
        }
    }
}
