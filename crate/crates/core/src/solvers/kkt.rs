//! First-order optimality certificates for solved allocations.
//!
//! The residual fits the Lagrange multipliers that the candidate point
//! implies (sphere multiplier from the free coordinates, cap and
//! nonnegativity multipliers from stationarity on their active
//! coordinates) and reports the worst violation across stationarity,
//! multiplier signs, and complementarity, normalized by the gradient
//! scale.  A correct solution lands near machine precision; a perturbed
//! one shows an O(1) residual.

use nalgebra::DVector;

use super::ConstraintSet;
use crate::error::{Error, Result};
use crate::mdc::MdcForm;

/// Relative amplitude tolerance deciding which constraints count as
/// active when fitting multipliers.
const ACTIVE_TOL: f64 = 1e-7;

/// Relative feasibility gate: candidates farther outside the feasible set
/// than this are rejected instead of scored.
const FEAS_TOL: f64 = 1e-6;

/// Max relative violation of the deflection-maximization KKT system at
/// `a_t` under `constraints`.
///
/// The deflection gradient is `(2 S / D^2) (D b_t - S K_t a_t)` with
/// `S = b_t' a_t` and `D = a_t' K_t a_t + c`.  Stationarity requires it to
/// be balanced by `2 mu a_t` on free coordinates, absorbed by a
/// nonnegative cap multiplier where a cap is active, and nonpositive where
/// the allocation is zero.
///
/// # Errors
/// [`Error::DimensionMismatch`] for a wrong-length candidate,
/// [`Error::InvalidParameter`] for non-finite entries, and
/// [`Error::Infeasible`] when `a_t` is outside the feasible set by more
/// than a `1e-6` relative margin.
pub fn kkt_residual(
    form: &MdcForm,
    constraints: &ConstraintSet,
    a_t: &DVector<f64>,
) -> Result<f64> {
    let m = form.num_sensors();
    if a_t.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: a_t.len(),
            context: "allocation candidate",
        });
    }
    if a_t.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "allocation candidate has non-finite entries".into(),
        ));
    }
    constraints.validate(m)?;
    if !constraints.is_feasible(a_t, FEAS_TOL) {
        return Err(Error::Infeasible(
            "candidate violates the constraint set beyond tolerance".into(),
        ));
    }
    if form.b_t.amax() == 0.0 && a_t.amax() == 0.0 {
        return Ok(0.0);
    }

    let amp_scale = constraints.power_scale().sqrt();
    let eps_a = ACTIVE_TOL * amp_scale;

    let s = form.b_t.dot(a_t);
    let ka = &form.k_t * a_t;
    let d = ka.dot(a_t) + form.c;
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(
            "deflection denominator vanished at the candidate".into(),
        ));
    }
    // Gradient of (b'a)^2 / (a'Ka + c).
    let grad = (&form.b_t * d - &ka * s) * (2.0 * s / (d * d));
    let gscale = grad.amax().max(form.b_t.amax() * 2.0 * s.abs() / d).max(1e-300);

    let (sphere_budget, caps): (Option<f64>, Option<&DVector<f64>>) = match constraints {
        ConstraintSet::TotalPower { p_tot } => (Some(*p_tot), None),
        ConstraintSet::TotalWithCaps { p_tot, p0 } => (Some(*p_tot), Some(p0)),
        ConstraintSet::CapsOnly { p0 } => (None, Some(p0)),
    };

    let sphere_active = sphere_budget
        .map(|p| p.sqrt() - a_t.norm() <= eps_a)
        .unwrap_or(false);
    let cap_active = |k: usize| -> bool {
        caps.map(|p0| p0[k].sqrt() - a_t[k] <= eps_a).unwrap_or(false)
    };
    let lower_active = |k: usize| a_t[k].abs() <= eps_a;

    // Sphere multiplier from free coordinates: grad_k = 2 mu a_k there.
    let mut mu = 0.0;
    if sphere_active {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..m {
            if !cap_active(k) && !lower_active(k) {
                num += grad[k] * a_t[k];
                den += 2.0 * a_t[k] * a_t[k];
            }
        }
        if den > 0.0 {
            mu = (num / den).max(0.0);
        }
    }

    let mut worst = 0.0f64;
    let mut push = |v: f64| worst = worst.max(v);
    for k in 0..m {
        let resid = grad[k] - 2.0 * mu * a_t[k];
        if lower_active(k) {
            // Nonnegativity multiplier must absorb a nonpositive residual.
            push(resid.max(0.0) / gscale);
            // Complementarity: multiplier times amplitude.
            push((-resid).max(0.0) * a_t[k].abs() / (gscale * amp_scale));
        } else if cap_active(k) {
            // Cap multiplier psi_k = resid must be nonnegative.
            push((-resid).max(0.0) / gscale);
            if let Some(p0) = caps {
                push(resid.max(0.0) * (p0[k].sqrt() - a_t[k]).abs() / (gscale * amp_scale));
            }
        } else {
            push(resid.abs() / gscale);
        }
    }
    if let Some(p) = sphere_budget {
        // Complementarity on the sphere; exact zero when inactive (mu = 0).
        push(mu * (p - a_t.norm_squared()).abs() / (gscale * amp_scale * amp_scale));
    }
    Ok(worst)
}

/// Residual of the capped-sphere projection system: for
/// `min ||a - a_star||^2` over `||a||^2 = p_tot`, `0 <= a_k <= cap_k`,
/// checks stationarity of unsaturated entries at shrink level `mu`
/// (`a_k = a_star_k / (2 mu)`), nonnegativity of the implied cap
/// multipliers `2 (a_star_k - 2 mu cap_k)` on saturated entries, and
/// primal feasibility.
pub(crate) fn projection_residual(
    a_star: &DVector<f64>,
    p_tot: f64,
    cap_amp: &DVector<f64>,
    a: &DVector<f64>,
    mu: f64,
) -> f64 {
    let amp_scale = p_tot.sqrt();
    let mut worst = ((a.norm_squared() - p_tot).abs() / p_tot).max(0.0);
    for k in 0..a.len() {
        worst = worst.max((-a[k]).max(0.0) / amp_scale);
        worst = worst.max((a[k] - cap_amp[k]).max(0.0) / amp_scale);
        if (cap_amp[k] - a[k]).abs() <= 1e-12 * amp_scale.max(cap_amp[k]) {
            let psi = 2.0 * (a_star[k] - 2.0 * mu * cap_amp[k]);
            worst = worst.max((-psi).max(0.0) / (2.0 * amp_scale));
        } else {
            worst = worst.max((2.0 * mu * a[k] - a_star[k]).abs() / amp_scale);
        }
    }
    worst
}
