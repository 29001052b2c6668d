//! Dual convex geometry of the jump generating function
//!
//!   phi(a) = sum_z mu(z) e^{a (dot) z},
//!
//! the body D = {a : phi(a) <= 1}, the correspondence between boundary
//! points and outward directions q(a) = grad phi(a)/|grad phi(a)|, the
//! vertical minimization beta -> log phi(alpha, beta) whose value is the
//! spectral radius lambda_+(alpha) of the tilted vertical kernel, Legendre
//! transforms of log phi, and the truncated power-iteration estimate of the
//! same spectral radius.
//!
//! phi is smooth and strictly convex for irreducible finite-support laws,
//! so every solver here is Newton with a line search; the support-point
//! solver falls back to an interior log-barrier path when the plain Newton
//! system stalls.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{JumpDistribution, LatticeVector};

/// Default residual tolerance for the boundary solvers.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Tangency threshold on the vertical derivative of phi.
pub const CLASS_TOL: f64 = 1e-8;
/// How far phi(a) may sit from 1 for a point that claims to be on the
/// boundary.
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Divergence guard for the Legendre-transform Newton iteration.
const TILT_NORM_CAP: f64 = 50.0;
const NEWTON_BUDGET: usize = 200;

/// A tilt parameter a in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint(Vec<f64>);

impl DualPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        DualPoint(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Horizontal block (all but the last coordinate).
    pub fn alpha(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    /// Vertical (last) coordinate.
    pub fn beta(&self) -> f64 {
        *self.0.last().expect("dual point is never empty")
    }

    pub fn dot_lattice(&self, z: &LatticeVector) -> f64 {
        self.0
            .iter()
            .zip(z.coords())
            .map(|(a, &c)| a * c as f64)
            .sum()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// A unit direction; the last coordinate tells whether it points into the
/// upper half-sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Accepts a vector that is already unit length within 1e-12.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let norm: f64 = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "direction has norm {norm}, expected 1 within 1e-12"
            )));
        }
        Ok(Direction(coords))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(coords: Vec<f64>) -> Result<Self> {
        let norm: f64 = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero direction".into()));
        }
        Ok(Direction(coords.into_iter().map(|c| c / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Last coordinate >= 0: the direction lies on the closed upper
    /// half-sphere.
    pub fn is_upper(&self) -> bool {
        *self.0.last().expect("direction is never empty") >= 0.0
    }
}

/// Where a boundary point sits relative to the equator of directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryClass {
    /// Outward direction has a strictly positive vertical component.
    PositiveInterior,
    /// Outward direction is horizontal; the twisted walk has zero vertical
    /// drift.
    Tangent,
}

pub fn phi(model: &JumpDistribution, a: &DualPoint) -> f64 {
    model.iter().map(|(z, p)| p * a.dot_lattice(z).exp()).sum()
}

pub fn grad_phi(model: &JumpDistribution, a: &DualPoint) -> DVector<f64> {
    let d = model.dim();
    let mut g = DVector::zeros(d);
    for (z, p) in model.iter() {
        let w = p * a.dot_lattice(z).exp();
        for (i, &c) in z.coords().iter().enumerate() {
            g[i] += w * c as f64;
        }
    }
    g
}

pub fn hessian_phi(model: &JumpDistribution, a: &DualPoint) -> DMatrix<f64> {
    let d = model.dim();
    let mut h = DMatrix::zeros(d, d);
    for (z, p) in model.iter() {
        let w = p * a.dot_lattice(z).exp();
        for (i, &ci) in z.coords().iter().enumerate() {
            for (j, &cj) in z.coords().iter().enumerate() {
                h[(i, j)] += w * ci as f64 * cj as f64;
            }
        }
    }
    h
}

/// Vertical derivative of phi, the drift of the twisted vertical marginal.
pub fn dphi_dbeta(model: &JumpDistribution, a: &DualPoint) -> f64 {
    model
        .iter()
        .map(|(z, p)| p * a.dot_lattice(z).exp() * z.y() as f64)
        .sum()
}

/// Joint residual of the support-point conditions phi(a) = 1 and
/// grad phi(a) parallel to q.
pub fn kkt_residual(model: &JumpDistribution, a: &DualPoint, q: &Direction) -> f64 {
    let g = grad_phi(model, a);
    let norm = g.norm();
    if norm == 0.0 {
        return f64::INFINITY;
    }
    let dir_err: f64 = g
        .iter()
        .zip(q.coords())
        .map(|(gi, qi)| (gi / norm - qi).powi(2))
        .sum::<f64>()
        .sqrt();
    (phi(model, a) - 1.0).abs().max(dir_err)
}

/// Outward direction of the level set at a.
pub fn q_of_a(model: &JumpDistribution, a: &DualPoint) -> Result<Direction> {
    let g = grad_phi(model, a);
    Direction::normalized(g.iter().copied().collect())
}

/// Support point of D in direction q: the unique a with phi(a) = 1 and
/// grad phi(a) = t·q, t > 0.
///
/// Newton on the (d+1)-dimensional system in (a, t), started from the mean
/// point a = 0, t = |m|, with a backtracking line search on the residual
/// norm. If that stalls, an interior log-barrier path is followed instead
/// and the Newton polish is repeated from its endpoint.
pub fn a_of_q(model: &JumpDistribution, q: &Direction, tol: f64) -> Result<DualPoint> {
    let d = model.dim();
    if q.dim() != d {
        return Err(Error::Domain(format!(
            "direction has dimension {}, model has {d}",
            q.dim()
        )));
    }
    let m = grad_phi(model, &DualPoint::new(vec![0.0; d]));
    if m.norm() <= 1e-12 {
        return Err(Error::Domain(
            "zero-mean model: the dual body is degenerate at the origin".into(),
        ));
    }
    let start = DVector::from_fn(d + 1, |i, _| if i < d { 0.0 } else { m.norm() });
    if let Some(a) = newton_support_point(model, q, start, tol) {
        return Ok(a);
    }
    let interior = barrier_support_point(model, q)?;
    let mut start = DVector::zeros(d + 1);
    for i in 0..d {
        start[i] = interior.coords()[i];
    }
    start[d] = grad_phi(model, &interior).norm();
    newton_support_point(model, q, start, tol).ok_or(Error::NonConvergence {
        what: "support-point solve",
        residual: kkt_residual(model, &interior, q),
    })
}

fn newton_support_point(
    model: &JumpDistribution,
    q: &Direction,
    start: DVector<f64>,
    tol: f64,
) -> Option<DualPoint> {
    let d = model.dim();
    let eval = |x: &DVector<f64>| -> (DualPoint, DVector<f64>) {
        let a = DualPoint::new(x.rows(0, d).iter().copied().collect());
        let t = x[d];
        let mut f = DVector::zeros(d + 1);
        f[0] = phi(model, &a) - 1.0;
        let g = grad_phi(model, &a);
        for i in 0..d {
            f[i + 1] = g[i] - t * q.coords()[i];
        }
        (a, f)
    };
    let mut x = start;
    let (mut a, mut f) = eval(&x);
    for _ in 0..NEWTON_BUDGET {
        let t = x[d];
        if f.norm() <= tol && t > 0.0 && kkt_residual(model, &a, q) <= tol {
            return Some(a);
        }
        let g = grad_phi(model, &a);
        let h = hessian_phi(model, &a);
        let mut jac = DMatrix::zeros(d + 1, d + 1);
        for i in 0..d {
            jac[(0, i)] = g[i];
            jac[(i + 1, d)] = -q.coords()[i];
            for j in 0..d {
                jac[(i + 1, j)] = h[(i, j)];
            }
        }
        let step = jac.lu().solve(&(-&f))?;
        let mut s = 1.0;
        let fnorm = f.norm();
        loop {
            let xs = &x + s * &step;
            let (at, ft) = eval(&xs);
            if ft.norm() <= (1.0 - 1e-4 * s) * fnorm {
                x = xs;
                a = at;
                f = ft;
                break;
            }
            s *= 0.5;
            if s < 1e-8 {
                return None;
            }
        }
    }
    None
}

/// Interior-point fallback: follows maximizers of a·q + mu·log(1 - phi(a))
/// down a decreasing barrier schedule, staying strictly inside D.
fn barrier_support_point(model: &JumpDistribution, q: &Direction) -> Result<DualPoint> {
    let d = model.dim();
    // Strictly interior start: the global minimizer of phi.
    let mut a = DVector::zeros(d);
    for _ in 0..NEWTON_BUDGET {
        let ad = DualPoint::new(a.iter().copied().collect());
        let g = grad_phi(model, &ad);
        if g.norm() <= 1e-13 {
            break;
        }
        let h = hessian_phi(model, &ad);
        let step = h
            .lu()
            .solve(&(-&g))
            .ok_or(Error::Domain("singular Hessian of phi".into()))?;
        let base = phi(model, &ad);
        let mut s = 1.0;
        loop {
            let trial = DualPoint::new((&a + s * &step).iter().copied().collect());
            if phi(model, &trial) < base {
                a += s * &step;
                break;
            }
            s *= 0.5;
            if s < 1e-10 {
                break;
            }
        }
    }
    if phi(model, &DualPoint::new(a.iter().copied().collect())) >= 1.0 - 1e-12 {
        return Err(Error::Domain(
            "dual body has no interior below the unit level".into(),
        ));
    }

    let qv = DVector::from_iterator(d, q.coords().iter().copied());
    let mut mu = 1e-2;
    while mu > 1e-13 {
        for _ in 0..NEWTON_BUDGET {
            let ad = DualPoint::new(a.iter().copied().collect());
            let slack = 1.0 - phi(model, &ad);
            let g_phi = grad_phi(model, &ad);
            let grad = -&qv + (mu / slack) * &g_phi;
            if grad.norm() <= 1e-12 * (1.0 + mu / slack) {
                break;
            }
            let h = hessian_phi(model, &ad);
            let hess = (mu / slack) * h + (mu / (slack * slack)) * (&g_phi * g_phi.transpose());
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => hess
                    .lu()
                    .solve(&(-&grad))
                    .ok_or(Error::Domain("singular barrier Hessian".into()))?,
            };
            let obj = |v: &DVector<f64>| -> f64 {
                let p = phi(model, &DualPoint::new(v.iter().copied().collect()));
                if p >= 1.0 {
                    f64::INFINITY
                } else {
                    -v.dot(&qv) - mu * (1.0 - p).ln()
                }
            };
            let base = obj(&a);
            let mut s = 1.0;
            loop {
                let trial = &a + s * &step;
                if obj(&trial) < base {
                    a = trial;
                    break;
                }
                s *= 0.5;
                if s < 1e-12 {
                    break;
                }
            }
            if s_small(step.norm(), &a) {
                break;
            }
        }
        mu *= 0.1;
    }
    Ok(DualPoint::new(a.iter().copied().collect()))
}

fn s_small(step_norm: f64, a: &DVector<f64>) -> bool {
    step_norm <= 1e-14 * (1.0 + a.norm())
}

/// Minimizer of beta -> log phi(alpha, beta) and the minimal value
/// lambda_+(alpha).
///
/// Requires vertical jumps of both signs so the section is coercive.
pub fn beta_min(model: &JumpDistribution, alpha: &[f64]) -> Result<(f64, f64)> {
    if alpha.len() != model.dim() - 1 {
        return Err(Error::Domain(format!(
            "alpha has {} coordinates, expected {}",
            alpha.len(),
            model.dim() - 1
        )));
    }
    let has_up = model.iter().any(|(z, _)| z.y() > 0);
    let has_down = model.iter().any(|(z, _)| z.y() < 0);
    if !has_up || !has_down {
        return Err(Error::Domain(
            "vertical marginal needs jumps of both signs for a coercive section".into(),
        ));
    }
    // Weight of each vertical step after tilting the horizontal block.
    let tilted = tilted_vertical_kernel(model, alpha);
    let dpsi = |b: f64| -> f64 {
        tilted
            .iter()
            .map(|(&j, &w)| w * j as f64 * (b * j as f64).exp())
            .sum()
    };
    let d2psi = |b: f64| -> f64 {
        tilted
            .iter()
            .map(|(&j, &w)| w * (j * j) as f64 * (b * j as f64).exp())
            .sum()
    };

    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut guard = 0;
    while dpsi(lo) >= 0.0 {
        lo *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NonConvergence {
                what: "beta bracketing",
                residual: dpsi(lo),
            });
        }
    }
    while dpsi(hi) <= 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::NonConvergence {
                what: "beta bracketing",
                residual: dpsi(hi),
            });
        }
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..NEWTON_BUDGET {
        let d1 = dpsi(b);
        let scale: f64 = tilted
            .iter()
            .map(|(&j, &w)| w * (j as f64).abs() * (b * j as f64).exp())
            .sum();
        if d1.abs() <= 1e-15 * scale.max(1e-300) {
            break;
        }
        if d1 > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let newton = b - d1 / d2psi(b);
        b = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let psi: f64 = tilted
        .iter()
        .map(|(&j, &w)| w * (b * j as f64).exp())
        .sum();
    Ok((b, psi.ln()))
}

/// The vertical kernel tilted horizontally: t(j) = sum_x mu(x, j) e^{alpha·x}.
fn tilted_vertical_kernel(model: &JumpDistribution, alpha: &[f64]) -> BTreeMap<i64, f64> {
    let mut t: BTreeMap<i64, f64> = BTreeMap::new();
    for (z, p) in model.iter() {
        let ax: f64 = alpha
            .iter()
            .zip(z.coords())
            .map(|(a, &c)| a * c as f64)
            .sum();
        *t.entry(z.y()).or_insert(0.0) += p * ax.exp();
    }
    t
}

/// The unique boundary point (alpha, beta) with beta >= beta_min(alpha),
/// found by a bracketed root search on the upper branch of the section.
pub fn boundary_point_for_alpha(model: &JumpDistribution, alpha: &[f64]) -> Result<DualPoint> {
    let (b0, lam) = beta_min(model, alpha)?;
    if lam > 1e-12 {
        return Err(Error::Domain(format!(
            "lambda_plus(alpha) = {lam:.6e} > 0: alpha is outside the projected body"
        )));
    }
    let mut point = alpha.to_vec();
    if lam > -1e-15 {
        point.push(b0);
        return Ok(DualPoint::new(point));
    }
    let tilted = tilted_vertical_kernel(model, alpha);
    let section = |b: f64| -> f64 {
        tilted
            .iter()
            .map(|(&j, &w)| w * (b * j as f64).exp())
            .sum::<f64>()
            - 1.0
    };
    let dsection = |b: f64| -> f64 {
        tilted
            .iter()
            .map(|(&j, &w)| w * j as f64 * (b * j as f64).exp())
            .sum()
    };
    let beta = bracketed_root(section, dsection, b0, 1.0, true)?;
    point.push(beta);
    Ok(DualPoint::new(point))
}

/// Second intersection of the vertical section with the unit level,
/// below the minimizer. Equals `a` itself exactly when `a` is tangent.
pub fn conjugate_point(model: &JumpDistribution, a: &DualPoint) -> Result<DualPoint> {
    let class = classify(model, a, CLASS_TOL)?;
    if class == BoundaryClass::Tangent {
        return Ok(a.clone());
    }
    let alpha = a.alpha();
    let (b0, _) = beta_min(model, alpha)?;
    let tilted = tilted_vertical_kernel(model, alpha);
    let section = |b: f64| -> f64 {
        tilted
            .iter()
            .map(|(&j, &w)| w * (b * j as f64).exp())
            .sum::<f64>()
            - 1.0
    };
    let dsection = |b: f64| -> f64 {
        tilted
            .iter()
            .map(|(&j, &w)| w * j as f64 * (b * j as f64).exp())
            .sum()
    };
    let beta_bar = bracketed_root(section, dsection, b0, 1.0, false)?;
    let mut point = alpha.to_vec();
    point.push(beta_bar);
    Ok(DualPoint::new(point))
}

/// Root of `f` on the branch starting at the strict minimum `b0` and going
/// up (`upward`) or down; safeguarded Newton inside an expanding bracket.
fn bracketed_root<F, G>(f: F, df: G, b0: f64, init_step: f64, upward: bool) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let sign = if upward { 1.0 } else { -1.0 };
    let mut step = init_step;
    let mut outer = b0 + sign * step;
    let mut guard = 0;
    while f(outer) <= 0.0 {
        step *= 2.0;
        outer = b0 + sign * step;
        guard += 1;
        if guard > 200 {
            return Err(Error::NonConvergence {
                what: "root bracketing",
                residual: f(outer),
            });
        }
    }
    // f < 0 at inner, f > 0 at outer.
    let (mut inner, mut outer) = (b0, outer);
    let mut b = 0.5 * (inner + outer);
    for _ in 0..300 {
        let v = f(b);
        if v.abs() <= 1e-14 {
            return Ok(b);
        }
        if v > 0.0 {
            outer = b;
        } else {
            inner = b;
        }
        let newton = b - v / df(b);
        let (lo, hi) = if inner < outer {
            (inner, outer)
        } else {
            (outer, inner)
        };
        b = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo).abs() <= 1e-16 * (1.0 + b.abs()) {
            return Ok(b);
        }
    }
    Ok(b)
}

/// Classifies a boundary point by the sign of its vertical derivative.
pub fn classify(
    model: &JumpDistribution,
    a: &DualPoint,
    class_tol: f64,
) -> Result<BoundaryClass> {
    let p = phi(model, a);
    if (p - 1.0).abs() > BOUNDARY_TOL {
        return Err(Error::OffBoundary { phi: p });
    }
    let db = dphi_dbeta(model, a);
    if db.abs() <= class_tol {
        Ok(BoundaryClass::Tangent)
    } else if db > 0.0 {
        Ok(BoundaryClass::PositiveInterior)
    } else {
        Err(Error::NotUpperBoundary { dphi_dbeta: db })
    }
}

/// Legendre transform (log phi)*(v) = sup_a (a·v - log phi(a)), computed by
/// solving grad log phi(a) = v with damped Newton.
///
/// Velocities outside the attainable range make the iteration diverge; the
/// norm cap turns that into an error.
pub fn log_phi_conjugate(model: &JumpDistribution, v: &[f64]) -> Result<f64> {
    let d = model.dim();
    if v.len() != d {
        return Err(Error::Domain(format!(
            "velocity has {} coordinates, expected {d}",
            v.len()
        )));
    }
    let vv = DVector::from_iterator(d, v.iter().copied());
    let mut a = DVector::zeros(d);
    let objective = |a: &DVector<f64>| -> f64 {
        let ad = DualPoint::new(a.iter().copied().collect());
        phi(model, &ad).ln() - a.dot(&vv)
    };
    for _ in 0..NEWTON_BUDGET {
        if a.norm() > TILT_NORM_CAP {
            return Err(Error::VelocityOutOfRange);
        }
        let ad = DualPoint::new(a.iter().copied().collect());
        let p = phi(model, &ad);
        let g_phi = grad_phi(model, &ad);
        let grad = &g_phi / p - &vv;
        if grad.norm() <= 1e-12 * (1.0 + vv.norm()) {
            return Ok(a.dot(&vv) - p.ln());
        }
        let h = hessian_phi(model, &ad) / p - (&g_phi / p) * (g_phi / p).transpose();
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => return Err(Error::VelocityOutOfRange),
        };
        let base = objective(&a);
        let mut s = 1.0;
        loop {
            let trial = &a + s * &step;
            if objective(&trial) < base {
                a = trial;
                break;
            }
            s *= 0.5;
            if s < 1e-12 {
                // The objective can no longer decrease in floating point.
                // Accept the iterate when the gradient is already small;
                // the remaining value error is quadratic in it.
                if grad.norm() <= 1e-8 * (1.0 + vv.norm()) {
                    return Ok(a.dot(&vv) - p.ln());
                }
                return Err(Error::VelocityOutOfRange);
            }
        }
    }
    Err(Error::VelocityOutOfRange)
}

/// log of the dominant eigenvalue of the K x K truncation of the tilted
/// vertical kernel P(alpha; y, y') = sum_x mu(x, y'-y) e^{alpha·x} on
/// {1..K}.
///
/// Power iteration on the shifted operator with Collatz-Wielandt brackets;
/// truncations increase to lambda_+(alpha) from below as K grows.
pub fn spectral_radius_truncated(
    model: &JumpDistribution,
    alpha: &[f64],
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("truncation size must be >= 1".into()));
    }
    let tilted = tilted_vertical_kernel(model, alpha);
    let apply = |v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let y = i as i64 + 1;
            let mut s = v[i]; // shift: (M + I) v
            for (&j, &w) in &tilted {
                let yp = y + j;
                if yp >= 1 && yp <= k as i64 {
                    s += w * v[(yp - 1) as usize];
                }
            }
            *o = s;
        }
    };
    let tol = 1e-10;
    let mut v = vec![1.0; k];
    let mut out = vec![0.0; k];
    let mut last_est = f64::NAN;
    let mut stable = 0;
    for _ in 0..4_000_000usize {
        apply(&v, &mut out);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (a, b) in out.iter().zip(&v) {
            let r = a / b;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let est = 0.5 * (lo + hi);
        if hi - lo <= tol {
            return Ok((est - 1.0).ln());
        }
        // Reducible truncations never close the bracket; accept a long
        // stretch of stagnating estimates instead.
        if (est - last_est).abs() <= tol * 1e-2 {
            stable += 1;
            if stable > 50 {
                return Ok((est - 1.0).ln());
            }
        } else {
            stable = 0;
        }
        last_est = est;
        let max = out.iter().cloned().fold(0.0f64, f64::max);
        for (vi, oi) in v.iter_mut().zip(&out) {
            *vi = oi / max;
        }
    }
    Err(Error::NonConvergence {
        what: "power iteration",
        residual: f64::NAN,
    })
}
