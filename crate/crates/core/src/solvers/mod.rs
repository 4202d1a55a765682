//! Deflection-maximizing transmit power allocation.
//!
//! Three constraint regimes are supported:
//!
//! - **TPC** (total power): `||a_t||^2 <= p_tot`;
//! - **TIPC** (total + individual): `||a_t||^2 <= p_tot` and
//!   `a_tk^2 <= p0_k` per sensor, with `p_tot < sum(p0)` so the total
//!   budget actually binds;
//! - **IPC** (individual only): `a_tk^2 <= p0_k` per sensor.
//!
//! Each regime has an analytic KKT procedure covering the cases the closed
//! forms reach ([`solve_tpc`], [`solve_tipc`], [`solve_ipc`]), and every
//! solver falls back to a convex reformulation solved numerically
//! ([`solve_qp`]) when its closed form does not apply.  All solvers return a
//! [`PowerAllocation`] carrying the achieved deflection and a KKT residual
//! certificate.

mod analytic;
mod kkt;
mod qp;

pub use analytic::{solve_ipc, solve_tipc, solve_tpc, tpc_independent_qk};
pub use kkt::kkt_residual;
pub use qp::solve_qp;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Feasible set for the transmit amplitudes `a_t >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    /// Total transmit power budget: `||a_t||^2 <= p_tot`.
    TotalPower { p_tot: f64 },
    /// Total budget plus per-sensor caps; the total must be strictly below
    /// the sum of caps, otherwise only the caps matter.
    TotalWithCaps { p_tot: f64, p0: DVector<f64> },
    /// Per-sensor caps only: `a_tk^2 <= p0_k`.
    CapsOnly { p0: DVector<f64> },
}

impl ConstraintSet {
    /// Validates budgets against the sensor count `m`.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] for non-positive budgets or dimension
    /// mismatches; [`Error::Infeasible`] when a combined regime has
    /// `p_tot >= sum(p0)`.
    pub fn validate(&self, m: usize) -> Result<()> {
        let check_caps = |p0: &DVector<f64>| -> Result<()> {
            if p0.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: p0.len(),
                    context: "per-sensor caps",
                });
            }
            if p0.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(Error::InvalidParameter(
                    "per-sensor caps must be positive and finite".into(),
                ));
            }
            Ok(())
        };
        match self {
            ConstraintSet::TotalPower { p_tot } => {
                if !(*p_tot > 0.0) || !p_tot.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "p_tot must be positive and finite, got {p_tot}"
                    )));
                }
                Ok(())
            }
            ConstraintSet::TotalWithCaps { p_tot, p0 } => {
                if !(*p_tot > 0.0) || !p_tot.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "p_tot must be positive and finite, got {p_tot}"
                    )));
                }
                check_caps(p0)?;
                if *p_tot >= p0.sum() {
                    return Err(Error::Infeasible(format!(
                        "total budget {p_tot} must be strictly below the cap sum {}; \
                         use the caps-only regime otherwise",
                        p0.sum()
                    )));
                }
                Ok(())
            }
            ConstraintSet::CapsOnly { p0 } => check_caps(p0),
        }
    }

    /// Largest feasible squared amplitude scale, used for relative
    /// tolerances.
    pub(crate) fn power_scale(&self) -> f64 {
        match self {
            ConstraintSet::TotalPower { p_tot } => *p_tot,
            ConstraintSet::TotalWithCaps { p_tot, .. } => *p_tot,
            ConstraintSet::CapsOnly { p0 } => p0.max(),
        }
    }

    /// Checks membership of `a_t` up to a relative tolerance on the power
    /// scale.
    pub fn is_feasible(&self, a_t: &DVector<f64>, rel_tol: f64) -> bool {
        let tol = rel_tol * self.power_scale();
        if a_t.iter().any(|&x| x < -tol.sqrt()) {
            return false;
        }
        match self {
            ConstraintSet::TotalPower { p_tot } => a_t.norm_squared() <= p_tot + tol,
            ConstraintSet::TotalWithCaps { p_tot, p0 } => {
                a_t.norm_squared() <= p_tot + tol
                    && a_t.iter().zip(p0.iter()).all(|(&a, &p)| a * a <= p + tol)
            }
            ConstraintSet::CapsOnly { p0 } => {
                a_t.iter().zip(p0.iter()).all(|(&a, &p)| a * a <= p + tol)
            }
        }
    }
}

/// Which procedure produced an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Direct closed form (possibly after a sign flip of the unconstrained
    /// direction).
    AnalyticClosedForm,
    /// Closed-form total-power direction projected onto the capped sphere
    /// by the sorted saturation sweep.
    AnalyticProjection,
    /// Cap-saturation sweep on the per-sensor water level.
    AnalyticSaturation,
    /// Convex reformulation solved by the numeric fallback.
    QpFallback,
}

/// A solved transmit power allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// Transmit amplitudes `a_tk = sqrt(P_tk) >= 0`.
    pub a_t: DVector<f64>,
    /// Transmit powers `P_tk = a_tk^2`.
    pub powers: DVector<f64>,
    /// Deflection coefficient achieved.
    pub mdc: f64,
    /// Procedure that produced the solution.
    pub method: SolveMethod,
    /// Max absolute violation of the optimality system certifying this
    /// solution: the constrained-deflection KKT conditions for every path
    /// except [`SolveMethod::AnalyticProjection`], which certifies the KKT
    /// system of its projection step instead.
    pub kkt_residual: f64,
}

impl PowerAllocation {
    pub(crate) fn from_amplitudes(
        a_t: DVector<f64>,
        mdc: f64,
        method: SolveMethod,
        kkt_residual: f64,
    ) -> Self {
        let powers = a_t.map(|x| x * x);
        PowerAllocation {
            a_t,
            powers,
            mdc,
            method,
            kkt_residual,
        }
    }
}

/// Solves the regime described by `constraints`.
///
/// # Errors
/// Propagates the underlying solver's validation and convergence errors.
pub fn solve(form: &crate::mdc::MdcForm, constraints: &ConstraintSet) -> Result<PowerAllocation> {
    match constraints {
        ConstraintSet::TotalPower { p_tot } => solve_tpc(form, *p_tot),
        ConstraintSet::TotalWithCaps { p_tot, p0 } => solve_tipc(form, *p_tot, p0),
        ConstraintSet::CapsOnly { p0 } => solve_ipc(form, p0),
    }
}

/// Uniform power allocation: the full budget split evenly (total-power
/// regimes) or every cap fully used (caps-only).
///
/// # Errors
/// [`Error::Infeasible`] when an even split violates some cap, and the
/// validation errors of [`ConstraintSet::validate`].
pub fn uniform_allocation(constraints: &ConstraintSet, m: usize) -> Result<DVector<f64>> {
    constraints.validate(m)?;
    match constraints {
        ConstraintSet::TotalPower { p_tot } => {
            Ok(DVector::from_element(m, (p_tot / m as f64).sqrt()))
        }
        ConstraintSet::TotalWithCaps { p_tot, p0 } => {
            let per = p_tot / m as f64;
            if p0.iter().any(|&cap| per > cap * (1.0 + 1e-12)) {
                return Err(Error::Infeasible(format!(
                    "even split {per} exceeds a per-sensor cap {}",
                    p0.min()
                )));
            }
            Ok(DVector::from_element(m, per.sqrt()))
        }
        ConstraintSet::CapsOnly { p0 } => Ok(p0.map(|p| p.sqrt())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_validation_catches_bad_budgets() {
        assert!(ConstraintSet::TotalPower { p_tot: 0.0 }.validate(2).is_err());
        assert!(ConstraintSet::TotalPower { p_tot: 5.0 }.validate(2).is_ok());
        let p0 = DVector::from_vec(vec![1.0, 2.0]);
        assert!(
            ConstraintSet::TotalWithCaps { p_tot: 3.0, p0: p0.clone() }
                .validate(2)
                .is_err(),
            "total equal to cap sum must be rejected"
        );
        assert!(ConstraintSet::TotalWithCaps { p_tot: 2.9, p0: p0.clone() }
            .validate(2)
            .is_ok());
        assert!(ConstraintSet::CapsOnly { p0 }.validate(3).is_err(), "dim mismatch");
    }

    #[test]
    fn feasibility_check_matches_regions() {
        let c = ConstraintSet::TotalWithCaps {
            p_tot: 10.0,
            p0: DVector::from_vec(vec![4.0, 9.0]),
        };
        let inside = DVector::from_vec(vec![1.0, 2.0]);
        let on_sphere = DVector::from_vec(vec![2.0, 6.0f64.sqrt()]);
        let over_cap = DVector::from_vec(vec![2.5, 1.0]);
        assert!(c.is_feasible(&inside, 1e-9));
        assert!(c.is_feasible(&on_sphere, 1e-9));
        assert!(!c.is_feasible(&over_cap, 1e-9));
        assert!(!c.is_feasible(&DVector::from_vec(vec![-1.0, 1.0]), 1e-9));
    }

    #[test]
    fn uniform_allocation_per_regime() {
        let m = 4;
        let tpc = uniform_allocation(&ConstraintSet::TotalPower { p_tot: 16.0 }, m).unwrap();
        assert!(tpc.iter().all(|&a| (a - 2.0).abs() < 1e-12));
        let caps = uniform_allocation(
            &ConstraintSet::CapsOnly {
                p0: DVector::from_element(m, 9.0),
            },
            m,
        )
        .unwrap();
        assert!(caps.iter().all(|&a| (a - 3.0).abs() < 1e-12));
        let tight = ConstraintSet::TotalWithCaps {
            p_tot: 16.0,
            p0: DVector::from_vec(vec![1.0, 9.0, 9.0, 9.0]),
        };
        assert!(uniform_allocation(&tight, m).is_err(), "cap below even split");
    }
}
