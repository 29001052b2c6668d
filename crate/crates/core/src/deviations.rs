//! Sample-path large-deviation costs for the walk and its killed version.
//!
//! The rate of a piecewise-linear path is the Mogulskii functional: the
//! integral of the Legendre transform of log phi along the velocity,
//! extended by +infinity off the attainable velocity range and, for the
//! killed walk, off the closed upper half-space. The scalar consequence
//! used by the Green-function experiments is the optimal escape cost
//! a(q)·q in a direction q, tied to the rate functional through
//!
//!   (log phi)*(grad phi(a(q))) = |grad phi(a(q))| · a(q)·q.

use crate::error::{Error, Result};
use crate::geometry::{self, Direction};
use crate::model::JumpDistribution;

/// A path given by breakpoints (time, position), strictly increasing in
/// time and starting at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    breakpoints: Vec<(f64, Vec<f64>)>,
}

impl PiecewiseLinearPath {
    pub fn new(breakpoints: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Domain("a path needs at least two breakpoints".into()));
        }
        if breakpoints[0].0 != 0.0 {
            return Err(Error::Domain("paths start at time zero".into()));
        }
        let dim = breakpoints[0].1.len();
        let mut last = f64::NEG_INFINITY;
        for (t, p) in &breakpoints {
            if !t.is_finite() || *t <= last {
                return Err(Error::Domain("breakpoint times must strictly increase".into()));
            }
            if p.len() != dim || p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain("breakpoint positions must be finite".into()));
            }
            last = *t;
        }
        Ok(PiecewiseLinearPath { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, Vec<f64>)] {
        &self.breakpoints
    }

    fn segments(&self) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
        self.breakpoints.windows(2).map(|w| {
            let (t0, p0) = &w[0];
            let (t1, p1) = &w[1];
            let dt = t1 - t0;
            let v = p0
                .iter()
                .zip(p1)
                .map(|(a, b)| (b - a) / dt)
                .collect::<Vec<_>>();
            (dt, v)
        })
    }
}

/// Mogulskii rate of the free walk; +infinity when a segment velocity is
/// unattainable.
pub fn rate_free(model: &JumpDistribution, path: &PiecewiseLinearPath) -> f64 {
    let mut total = 0.0;
    for (dt, v) in path.segments() {
        match geometry::log_phi_conjugate(model, &v) {
            Ok(cost) => total += dt * cost,
            Err(_) => return f64::INFINITY,
        }
    }
    total
}

/// Rate of the killed walk: +infinity unless the path stays in the closed
/// upper half-space (piecewise-linear, so checking breakpoints suffices).
pub fn rate_killed(model: &JumpDistribution, path: &PiecewiseLinearPath) -> f64 {
    let leaves = path
        .breakpoints
        .iter()
        .any(|(_, p)| *p.last().expect("nonempty position") < 0.0);
    if leaves {
        f64::INFINITY
    } else {
        rate_free(model, path)
    }
}

/// The escape cost a(q)·q together with both sides of the duality identity
/// it was verified against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalCost {
    pub cost: f64,
    /// (log phi)*(grad phi(a(q))).
    pub legendre_side: f64,
    /// |grad phi(a(q))| · a(q)·q.
    pub product_side: f64,
}

const DUALITY_TOL: f64 = 1e-8;

/// a(q)·q for a unit direction q, cross-checked against the Legendre
/// transform of the boundary velocity.
pub fn optimal_cost(model: &JumpDistribution, q: &Direction) -> Result<OptimalCost> {
    let a = geometry::a_of_q(model, q, geometry::DEFAULT_TOL)?;
    let cost = a.dot(q.coords());
    let grad = geometry::grad_phi(model, &a);
    let v: Vec<f64> = grad.iter().copied().collect();
    let legendre_side = geometry::log_phi_conjugate(model, &v)?;
    let product_side = grad.norm() * cost;
    if (legendre_side - product_side).abs() > DUALITY_TOL {
        return Err(Error::NonConvergence {
            what: "escape-cost duality identity",
            residual: (legendre_side - product_side).abs(),
        });
    }
    Ok(OptimalCost {
        cost,
        legendre_side,
        product_side,
    })
}

/// Outcome of the one-sided Green decay bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdBoundReport {
    /// The slackened lower bound -a(q)·q·(1 + slack).
    pub bound: f64,
    pub final_slope: f64,
    /// final_slope - bound; nonnegative means the bound holds.
    pub margin: f64,
    pub pass: bool,
}

/// Checks the final logarithmic Green slope against -a(q)·q with relative
/// slack (default 0.2 at desk scale).
pub fn green_ld_bound_check(
    model: &JumpDistribution,
    q: &Direction,
    slopes: &[(f64, f64)],
    slack: f64,
) -> Result<LdBoundReport> {
    let (_, final_slope) = *slopes
        .last()
        .ok_or_else(|| Error::Domain("no slopes to check".into()))?;
    let cost = optimal_cost(model, q)?.cost;
    let bound = -cost * (1.0 + slack);
    let margin = final_slope - bound;
    Ok(LdBoundReport {
        bound,
        final_slope,
        margin,
        pass: margin >= 0.0,
    })
}
