//! Minimal positive harmonic functions of the killed walk.
//!
//! For each boundary point a of the dual body with an upper outward
//! direction, the killed kernel has exactly one minimal harmonic function
//! up to scale, and it factorizes as
//!
//!   h(x, y) = e^{a·(x,y)} f(y),
//!
//! where f is the boundary function of the a-twisted vertical marginal:
//! survival probability when the twisted drift is positive, y minus the
//! mean final position when it vanishes (tangent points). Left-continuous
//! models (no vertical jump below -1) admit closed forms, kept here as an
//! independent cross-check.

use crate::error::{Error, Result};
use crate::geometry::{self, BoundaryClass, DualPoint, CLASS_TOL};
use crate::ladder::{self, BoundaryFunctionTable};
use crate::model::{JumpDistribution, LatticeVector};

/// An immutable evaluator for h(z) = e^{a·z} f(y).
#[derive(Debug, Clone)]
pub struct HarmonicEvaluator {
    a: DualPoint,
    class: BoundaryClass,
    f: BoundaryFunctionTable,
    conjugate: Option<DualPoint>,
}

impl HarmonicEvaluator {
    pub fn a(&self) -> &DualPoint {
        &self.a
    }

    pub fn class(&self) -> BoundaryClass {
        self.class
    }

    pub fn table(&self) -> &BoundaryFunctionTable {
        &self.f
    }

    /// The conjugate boundary point, stored when the model is
    /// left-continuous and the closed form applies.
    pub fn conjugate(&self) -> Option<&DualPoint> {
        self.conjugate.as_ref()
    }

    /// h(z) = e^{a·z} f(y).
    pub fn evaluate(&self, z: &LatticeVector) -> Result<f64> {
        let y = z.y();
        if y < 1 || y > self.f.height() {
            return Err(Error::TableRange {
                y,
                l: self.f.height(),
            });
        }
        Ok(self.a.dot_lattice(z).exp() * self.f.value(y))
    }
}

/// Whether every vertical down-jump is exactly -1.
pub fn is_left_continuous(model: &JumpDistribution) -> bool {
    model.iter().all(|(z, _)| z.y() >= -1)
}

/// Builds the evaluator at a boundary point with an upper direction.
///
/// The tangent versus positive-drift dichotomy is decided once, by the
/// geometric classification, and the ladder dispatch inherits it: the
/// vertical derivative of phi at `a` is exactly the twisted drift.
pub fn build(model: &JumpDistribution, a: &DualPoint, tol: f64) -> Result<HarmonicEvaluator> {
    let class = geometry::classify(model, a, CLASS_TOL)?;
    let twisted = model.twist(a)?;
    let marginal = twisted.y_marginal();
    let f = ladder::f_table_with_drift_tol(&marginal, tol, CLASS_TOL)?;
    let conjugate = if is_left_continuous(model) {
        Some(geometry::conjugate_point(model, a)?)
    } else {
        None
    };
    Ok(HarmonicEvaluator {
        a: a.clone(),
        class,
        f,
        conjugate,
    })
}

/// Closed form for left-continuous models: e^{a·z} - e^{abar·z} away from
/// tangency, y·e^{a·z} at it.
pub fn explicit_left_continuous(
    model: &JumpDistribution,
    a: &DualPoint,
    z: &LatticeVector,
) -> Result<f64> {
    if !is_left_continuous(model) {
        return Err(Error::Domain(
            "closed form needs every vertical down-jump to be -1".into(),
        ));
    }
    match geometry::classify(model, a, CLASS_TOL)? {
        BoundaryClass::Tangent => Ok(z.y() as f64 * a.dot_lattice(z).exp()),
        BoundaryClass::PositiveInterior => {
            let bar = geometry::conjugate_point(model, a)?;
            Ok(a.dot_lattice(z).exp() - bar.dot_lattice(z).exp())
        }
    }
}

/// Relative residual of the killed mean-value equation at z.
pub fn harmonic_residual(
    model: &JumpDistribution,
    ev: &HarmonicEvaluator,
    z: &LatticeVector,
) -> Result<f64> {
    let h_z = ev.evaluate(z)?;
    let mut sum = 0.0;
    for (jump, p) in model.iter() {
        let next = z.add(jump);
        if next.y() >= 1 {
            sum += p * ev.evaluate(&next)?;
        }
    }
    Ok((sum - h_z).abs() / h_z)
}

/// h(z)/h(z0), the candidate limit of the Martin-kernel ratio experiments.
pub fn martin_candidate_ratio(
    ev: &HarmonicEvaluator,
    z: &LatticeVector,
    z0: &LatticeVector,
) -> Result<f64> {
    let denom = ev.evaluate(z0)?;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(ev.evaluate(z)? / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{a_of_q, Direction, DEFAULT_TOL};
    use crate::ladder::{mc_boundary_oracle, BoundaryTarget};

    const BETA_STAR: f64 = -0.20273255405408219;
    const ALPHA_PLUS: f64 = 0.083487825896293888;

    fn m1() -> JumpDistribution {
        JumpDistribution::parse(
            "dim 2\njump 1 0 0.3\njump -1 0 0.2\njump 0 1 0.3\njump 0 -1 0.2\n",
        )
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

    #[test]
    fn untwisted_evaluator_is_gamblers_ruin() {
        let ev = build(&m1(), &DualPoint::new(vec![0.0, 0.0]), 1e-10).unwrap();
        assert_eq!(ev.class(), BoundaryClass::PositiveInterior);
        assert!((ev.evaluate(&z(0, 1)).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        assert!(
            (ev.evaluate(&z(7, 2)).unwrap() - 5.0 / 9.0).abs() < 1e-9,
            "alpha = 0 makes h x-independent"
        );
    }

    #[test]
    fn tangent_evaluator_is_y_times_exponential() {
        let ev = build(&m1(), &DualPoint::new(vec![ALPHA_PLUS, BETA_STAR]), 1e-10).unwrap();
        assert_eq!(ev.class(), BoundaryClass::Tangent);
        let got = ev.evaluate(&z(0, 3)).unwrap();
        assert!((got - 1.6329931618554521).abs() < 1e-9, "h(0,3) = {got}");
    }

    #[test]
    fn build_rejects_points_off_the_level_set() {
        assert!(matches!(
            build(&m1(), &DualPoint::new(vec![0.0, 0.5]), 1e-10),
            Err(Error::OffBoundary { .. })
        ));
    }

    #[test]
    fn evaluate_checks_the_table_range() {
        let ev = build(&m1(), &DualPoint::new(vec![0.0, 0.0]), 1e-10).unwrap();
        assert!(matches!(
            ev.evaluate(&z(0, 0)),
            Err(Error::TableRange { .. })
        ));
        assert!(matches!(
            ev.evaluate(&z(0, ev.table().height() + 1)),
            Err(Error::TableRange { .. })
        ));
    }

    #[test]
    fn closed_form_matches_the_built_evaluator() {
        let m = m1();
        for qy in [0.0f64, 0.35, 0.7, 1.0] {
            let q = Direction::normalized(vec![(1.0 - qy * qy).sqrt(), qy]).unwrap();
            // The table error inherits |phi(a) - 1| / drift, so the
            // boundary point must be solved tighter than the agreement
            // tolerance asked of the evaluator.
            let a = a_of_q(&m, &q, 1e-12).unwrap();
            let ev = build(&m, &a, 1e-10).unwrap();
            for x in [-3i64, 0, 2] {
                for y in [1i64, 2, 5, 11] {
                    let built = ev.evaluate(&z(x, y)).unwrap();
                    let closed = explicit_left_continuous(&m, &a, &z(x, y)).unwrap();
                    assert!(
                        (built - closed).abs() <= 1e-9 * closed.abs(),
                        "q_y={qy} z=({x},{y}): built {built} vs closed {closed}"
                    );
                }
            }
        }
    }

    #[test]
    fn closed_form_values_at_reference_points() {
        let m = m1();
        let a0 = DualPoint::new(vec![0.0, 0.0]);
        for y in 1..=6 {
            let v = explicit_left_continuous(&m, &a0, &z(4, y)).unwrap();
            let exact = 1.0 - (2.0f64 / 3.0).powi(y as i32);
            assert!((v - exact).abs() < 1e-12);
        }
        let tangent = DualPoint::new(vec![ALPHA_PLUS, BETA_STAR]);
        let v = explicit_left_continuous(&m, &tangent, &z(0, 1)).unwrap();
        assert!((v - BETA_STAR.exp()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_deep_down_jumps() {
        let a = DualPoint::new(vec![0.0, 0.0]);
        assert!(explicit_left_continuous(&m2(), &a, &z(0, 1)).is_err());
    }

    #[test]
    fn residuals_vanish_for_built_evaluators() {
        let m = m1();
        let cases = [
            DualPoint::new(vec![0.0, 0.0]),
            DualPoint::new(vec![ALPHA_PLUS, BETA_STAR]),
        ];
        for a in cases {
            let ev = build(&m, &a, 1e-10).unwrap();
            for x in [-2i64, 0, 5] {
                for y in 1..=20 {
                    let r = harmonic_residual(&m, &ev, &z(x, y)).unwrap();
                    assert!(r <= 1e-9, "residual {r} at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn residuals_vanish_without_a_closed_form() {
        let m = m2();
        let q = Direction::new(vec![1.0, 0.0]).unwrap();
        let a = a_of_q(&m, &q, DEFAULT_TOL).unwrap();
        let ev = build(&m, &a, 1e-10).unwrap();
        assert_eq!(ev.class(), BoundaryClass::Tangent);
        assert!(ev.conjugate().is_none());
        for y in 1..=25 {
            let r = harmonic_residual(&m, &ev, &z(0, y)).unwrap();
            assert!(r <= 1e-6, "residual {r} at y={y}");
        }
    }

    #[test]
    fn residual_detects_the_wrong_kernel() {
        // An evaluator harmonic for M1 is not harmonic for the five-jump
        // model.
        let ev = build(&m1(), &DualPoint::new(vec![0.0, 0.0]), 1e-10).unwrap();
        let r = harmonic_residual(&m2(), &ev, &z(0, 2)).unwrap();
        assert!(r > 1e-3, "negative control residual {r}");
    }

    #[test]
    fn evaluator_factorizes_in_x() {
        let m = m1();
        let tangent = DualPoint::new(vec![ALPHA_PLUS, BETA_STAR]);
        let ev = build(&m, &tangent, 1e-10).unwrap();
        for y in [1i64, 4, 9] {
            let base = ev.evaluate(&z(0, y)).unwrap();
            for x in [-6i64, -1, 3, 8] {
                let v = ev.evaluate(&z(x, y)).unwrap();
                let expected = (ALPHA_PLUS * x as f64).exp() * base;
                assert!(
                    (v - expected).abs() <= 1e-12 * expected.abs(),
                    "x-factorization broke at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn ratio_examples() {
        let ev = build(&m1(), &DualPoint::new(vec![0.0, 0.0]), 1e-10).unwrap();
        let r = martin_candidate_ratio(&ev, &z(0, 2), &z(0, 1)).unwrap();
        assert!((r - 5.0 / 3.0).abs() < 1e-9);
        assert_eq!(
            martin_candidate_ratio(&ev, &z(4, 3), &z(4, 3)).unwrap(),
            1.0
        );
        let shift = martin_candidate_ratio(&ev, &z(3, 1), &z(0, 1)).unwrap();
        assert!((shift - 1.0).abs() < 1e-12);
    }

    #[test]
    fn survival_evaluator_agrees_with_direct_simulation() {
        let m = m1();
        let ev = build(&m, &DualPoint::new(vec![0.0, 0.0]), 1e-10).unwrap();
        let est = mc_boundary_oracle(
            &m.y_marginal(),
            2,
            BoundaryTarget::Survival,
            100_000,
            20_000,
            41,
        );
        let h = ev.evaluate(&z(0, 2)).unwrap();
        assert!(
            (est.estimate - h).abs() <= 3.0 * est.std_error + 1e-6,
            "mc {} vs h {h}",
            est.estimate
        );
    }
}
