//! Analytic KKT procedures for the three constraint regimes.
//!
//! The total-power solver rests on two facts: the optimum uses the full
//! budget (scaling an allocation up never decreases the deflection), and on
//! the sphere the deflection becomes a generalized Rayleigh quotient
//! `(x'b_t)^2 / (x' Q_a x)` with `Q_a = K_t + (c/p_tot) I`, maximized by
//! `x* = Q_a^{-1} b_t` with value `b_t' Q_a^{-1} b_t`.  When that direction
//! is sign-uniform it is the transmit solution; otherwise the nonnegativity
//! constraint is active and the convex fallback takes over.
//!
//! The combined regime reuses the total-power direction when it fits under
//! the caps, and otherwise projects it onto the capped sphere: sorting
//! sensors by how far over their cap the unconstrained solution sits, a
//! saturated prefix is grown until the induced shrink level for the rest is
//! consistent with exactly that prefix being capped.  The projection's KKT
//! system has a unique consistent prefix.
//!
//! The caps-only solver (independent decisions, equal caps) walks the
//! sensors in decreasing `b_tk / [K_t]_kk` and grows the saturated prefix
//! until the implied water level `eta = (a'K_t a + c) / (b_t'a)` lands in
//! the bracket that makes exactly that prefix saturate.  At least one sensor
//! is always saturated.

use nalgebra::DVector;

use super::{kkt, qp, ConstraintSet, PowerAllocation, SolveMethod};
use crate::error::{Error, Result};
use crate::mdc::MdcForm;

/// Relative tolerance for sign / activity classification of closed-form
/// directions.
const SIGN_TOL: f64 = 1e-12;

/// Zero allocation for a form with no mean separation: any allocation
/// yields zero deflection, so spend nothing.
fn zero_allocation(form: &MdcForm) -> PowerAllocation {
    PowerAllocation::from_amplitudes(
        DVector::zeros(form.num_sensors()),
        0.0,
        SolveMethod::AnalyticClosedForm,
        0.0,
    )
}

/// Unconstrained-direction computation shared by the total-power paths:
/// returns the unit direction `q / ||q||` with `q = Q_a^{-1} b_t`, or
/// `None` when the direction has genuinely mixed signs.
fn closed_form_direction(form: &MdcForm, p_tot: f64) -> Result<Option<DVector<f64>>> {
    let m = form.num_sensors();
    let mut q_a = form.k_t.clone();
    for k in 0..m {
        q_a[(k, k)] += form.c / p_tot;
    }
    let chol = nalgebra::Cholesky::new(q_a).ok_or_else(|| {
        Error::InvalidParameter(
            "K_t + (c/p_tot) I is not positive definite; need c > 0 or full-rank K_t".into(),
        )
    })?;
    let q = chol.solve(&form.b_t);
    let norm = q.norm();
    if !(norm > 0.0) {
        return Err(Error::Internal("closed-form direction collapsed to zero".into()));
    }
    let qhat = q / norm;
    let tol = SIGN_TOL;
    let all_nonneg = qhat.iter().all(|&x| x >= -tol);
    let all_nonpos = qhat.iter().all(|&x| x <= tol);
    if !(all_nonneg || all_nonpos) {
        return Ok(None);
    }
    // The deflection is even in the direction, so orient it nonnegative and
    // clear roundoff-negative entries.
    let mut dir = if all_nonneg { qhat } else { -qhat };
    dir.apply(|x| *x = x.max(0.0));
    let norm = dir.norm();
    if !(norm > 0.0) {
        return Err(Error::Internal("closed-form direction collapsed to zero".into()));
    }
    Ok(Some(dir / norm))
}

/// Maximizes the deflection under a total power budget.
///
/// Uses the closed-form direction when it is sign-uniform and dispatches to
/// [`qp::solve_qp`] otherwise.
///
/// # Errors
/// [`Error::InvalidParameter`] on a non-positive budget or a singular
/// sphere-restricted quadratic, plus fallback solver errors.
pub fn solve_tpc(form: &MdcForm, p_tot: f64) -> Result<PowerAllocation> {
    let constraints = ConstraintSet::TotalPower { p_tot };
    constraints.validate(form.num_sensors())?;
    if form.b_t.amax() == 0.0 {
        return Ok(zero_allocation(form));
    }
    match closed_form_direction(form, p_tot)? {
        Some(dir) => {
            let a_t = dir * p_tot.sqrt();
            let mdc = form.value(&a_t);
            let residual = kkt::kkt_residual(form, &constraints, &a_t)?;
            Ok(PowerAllocation::from_amplitudes(
                a_t,
                mdc,
                SolveMethod::AnalyticClosedForm,
                residual,
            ))
        }
        None => qp::solve_qp(form, &constraints),
    }
}

/// Closed-form per-sensor weights of the total-power solution for
/// conditionally independent decisions (diagonal `K_t`):
/// `q_k = b_tk / ([K_t]_kk + c / p_tot)`, unnormalized.
///
/// At low budget (`c/p_tot` dominant) the weights follow the channel gains;
/// at high budget they invert them.
///
/// # Errors
/// [`Error::ContractViolation`] when `K_t` is not diagonal.
pub fn tpc_independent_qk(form: &MdcForm, p_tot: f64) -> Result<DVector<f64>> {
    ConstraintSet::TotalPower { p_tot }.validate(form.num_sensors())?;
    let m = form.num_sensors();
    let scale = form.k_t.amax().max(1e-300);
    for i in 0..m {
        for j in 0..m {
            if i != j && form.k_t[(i, j)].abs() > 1e-12 * scale {
                return Err(Error::ContractViolation(
                    "independent-decision weights need a diagonal K_t".into(),
                ));
            }
        }
    }
    Ok(DVector::from_iterator(
        m,
        (0..m).map(|k| form.b_t[k] / (form.k_t[(k, k)] + form.c / p_tot)),
    ))
}

/// Maximizes the deflection under a total budget with per-sensor caps.
///
/// Takes the total-power closed form when it already satisfies the caps;
/// otherwise projects it onto the capped sphere with the saturation sweep.
/// A mixed-sign closed-form direction dispatches to [`qp::solve_qp`].
///
/// # Errors
/// Validation errors of the constraint set, [`Error::Internal`] if the
/// saturation sweep exhausts without a consistent prefix (impossible for
/// valid inputs), plus fallback solver errors.
pub fn solve_tipc(form: &MdcForm, p_tot: f64, p0: &DVector<f64>) -> Result<PowerAllocation> {
    let constraints = ConstraintSet::TotalWithCaps {
        p_tot,
        p0: p0.clone(),
    };
    constraints.validate(form.num_sensors())?;
    if form.b_t.amax() == 0.0 {
        return Ok(zero_allocation(form));
    }
    let dir = match closed_form_direction(form, p_tot)? {
        Some(dir) => dir,
        None => return qp::solve_qp(form, &constraints),
    };
    let a_star = dir * p_tot.sqrt();
    let cap_amp = p0.map(|p| p.sqrt());
    let cap_tol = SIGN_TOL * p_tot.sqrt();
    if (0..a_star.len()).all(|k| a_star[k] <= cap_amp[k] + cap_tol) {
        let a_t = DVector::from_iterator(
            a_star.len(),
            (0..a_star.len()).map(|k| a_star[k].min(cap_amp[k])),
        );
        let mdc = form.value(&a_t);
        let residual = kkt::kkt_residual(form, &constraints, &a_t)?;
        return Ok(PowerAllocation::from_amplitudes(
            a_t,
            mdc,
            SolveMethod::AnalyticClosedForm,
            residual,
        ));
    }
    let (a_t, shrink) = project_onto_capped_sphere(&a_star, p_tot, &cap_amp)?;
    let mdc = form.value(&a_t);
    let residual = kkt::projection_residual(&a_star, p_tot, &cap_amp, &a_t, shrink);
    Ok(PowerAllocation::from_amplitudes(
        a_t,
        mdc,
        SolveMethod::AnalyticProjection,
        residual,
    ))
}

/// Projects `a_star` (a point on the sphere `||a||^2 = p_tot` violating
/// some caps) onto the capped sphere in the least-squares sense.  Returns
/// the projection and the shrink level `mu` applied to unsaturated entries
/// (`a_k = a*_k / (2 mu)`).
fn project_onto_capped_sphere(
    a_star: &DVector<f64>,
    p_tot: f64,
    cap_amp: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let m = a_star.len();
    // Sort by cap-relative overshoot, descending; ties broken by index so
    // permuted inputs produce the identically permuted output.
    let ratio: Vec<f64> = (0..m).map(|k| a_star[k] / cap_amp[k]).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        ratio[j]
            .partial_cmp(&ratio[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    // Tail sums of squared unconstrained amplitudes in sorted order.
    let mut saturated_power = 0.0;
    let mut tail_sq: f64 = a_star.iter().map(|&x| x * x).sum();
    let accept_tol = 1e-9;
    for sat in 1..m {
        let idx = order[sat - 1];
        saturated_power += cap_amp[idx] * cap_amp[idx];
        tail_sq -= a_star[idx] * a_star[idx];
        let remaining = p_tot - saturated_power;
        if remaining <= 0.0 {
            break;
        }
        let mu = (tail_sq.max(0.0) / (4.0 * remaining)).sqrt();
        let upper = 0.5 * ratio[order[sat - 1]];
        let lower = 0.5 * ratio[order[sat]];
        if mu >= lower * (1.0 - accept_tol) - accept_tol && mu <= upper * (1.0 + accept_tol) {
            let mut a = DVector::zeros(m);
            for (pos, &k) in order.iter().enumerate() {
                a[k] = if pos < sat {
                    cap_amp[k]
                } else {
                    a_star[k] / (2.0 * mu)
                };
            }
            return Ok((a, mu));
        }
    }
    Err(Error::Internal(
        "cap saturation sweep found no consistent prefix".into(),
    ))
}

/// Maximizes the deflection under per-sensor caps only.
///
/// The analytic path applies to conditionally independent decisions
/// (diagonal `K_t`) with equal caps and strictly positive `b_t` and
/// diagonal; anything else dispatches to [`qp::solve_qp`].  At least one
/// sensor always transmits at its cap.
///
/// # Errors
/// Validation errors of the constraint set, [`Error::Internal`] for an
/// inconsistent saturation sweep (impossible for valid inputs), plus
/// fallback solver errors.
pub fn solve_ipc(form: &MdcForm, p0: &DVector<f64>) -> Result<PowerAllocation> {
    let constraints = ConstraintSet::CapsOnly { p0: p0.clone() };
    constraints.validate(form.num_sensors())?;
    if form.b_t.amax() == 0.0 {
        return Ok(zero_allocation(form));
    }
    let m = form.num_sensors();
    let scale = form.k_t.amax().max(1e-300);
    let diagonal = (0..m).all(|i| {
        (0..m).all(|j| i == j || form.k_t[(i, j)].abs() <= 1e-12 * scale)
    });
    let equal_caps = p0.max() - p0.min() <= 1e-12 * p0.max();
    let positive_terms = (0..m).all(|k| form.b_t[k] > 0.0 && form.k_t[(k, k)] > 0.0);
    if !(diagonal && equal_caps && positive_terms) {
        return qp::solve_qp(form, &constraints);
    }

    let p_cap = p0[0];
    let cap_amp = p_cap.sqrt();
    // Sensors in decreasing marginal quality b_k / K_kk; ties by index.
    let quality: Vec<f64> = (0..m).map(|k| form.b_t[k] / form.k_t[(k, k)]).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        quality[j]
            .partial_cmp(&quality[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut sum_k = 0.0;
    let mut sum_b = 0.0;
    let accept_tol = 1e-9;
    for sat in 1..=m {
        let idx = order[sat - 1];
        sum_k += form.k_t[(idx, idx)];
        sum_b += form.b_t[idx];
        let eta = (p_cap * sum_k + form.c) / (cap_amp * sum_b);
        // eta must make exactly the first `sat` sensors saturate: at or
        // above the saturation point of sensor `sat`, below that of sensor
        // `sat + 1`.
        let lower = cap_amp / quality[idx];
        let upper = if sat < m {
            cap_amp / quality[order[sat]]
        } else {
            f64::INFINITY
        };
        if eta >= lower * (1.0 - accept_tol) && eta <= upper * (1.0 + accept_tol) {
            let mut a = DVector::zeros(m);
            for (pos, &k) in order.iter().enumerate() {
                a[k] = if pos < sat {
                    cap_amp
                } else {
                    (eta * quality[k]).min(cap_amp)
                };
            }
            let mdc = form.value(&a);
            let residual = kkt::kkt_residual(form, &constraints, &a)?;
            return Ok(PowerAllocation::from_amplitudes(
                a,
                mdc,
                SolveMethod::AnalyticSaturation,
                residual,
            ));
        }
    }
    Err(Error::Internal(
        "water-level sweep found no consistent prefix".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdc::ChannelType;
    use nalgebra::DMatrix;

    const EPS: f64 = 1e-9;

    fn diag_form(b: Vec<f64>, k_diag: Vec<f64>, c: f64) -> MdcForm {
        MdcForm::new(
            DVector::from_vec(b),
            DMatrix::from_diagonal(&DVector::from_vec(k_diag)),
            c,
            ChannelType::Pac,
        )
        .unwrap()
    }

    #[test]
    fn independent_weights_by_hand() {
        // b_k = (0.5 - 0.1) = 0.4 with unit gains, K_kk = 0.25, c/p_tot = 1.
        let form = diag_form(vec![0.4, 0.4], vec![0.25, 0.25], 2.0);
        let q = tpc_independent_qk(&form, 2.0).unwrap();
        assert!((q[0] - 0.32).abs() < 1e-15, "q = {q}");
        assert!((q[1] - 0.32).abs() < 1e-15);
    }

    #[test]
    fn independent_weights_reject_coupled_decisions() {
        let mut k = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.25]));
        k[(0, 1)] = 0.1;
        k[(1, 0)] = 0.1;
        let form = MdcForm::new(
            DVector::from_vec(vec![0.4, 0.4]),
            k,
            1.0,
            ChannelType::Pac,
        )
        .unwrap();
        assert!(matches!(
            tpc_independent_qk(&form, 1.0),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn total_power_solution_matches_independent_weights() {
        let form = diag_form(vec![0.5, 0.3, 0.1], vec![0.2, 0.15, 0.05], 0.7);
        let p_tot = 3.0;
        let alloc = solve_tpc(&form, p_tot).unwrap();
        assert_eq!(alloc.method, SolveMethod::AnalyticClosedForm);
        let q = tpc_independent_qk(&form, p_tot).unwrap();
        let expected = &q * (p_tot.sqrt() / q.norm());
        assert!((&alloc.a_t - &expected).amax() < EPS);
        assert!((alloc.a_t.norm_squared() - p_tot).abs() < EPS * p_tot);
        assert!(alloc.kkt_residual <= 1e-9, "residual {}", alloc.kkt_residual);
    }

    #[test]
    fn total_power_value_equals_rayleigh_bound() {
        // On the sphere the optimum value is b' Q^-1 b with Q = K + (c/P) I.
        let form = diag_form(vec![0.5, 0.3], vec![0.2, 0.15], 0.7);
        let p_tot = 2.0;
        let alloc = solve_tpc(&form, p_tot).unwrap();
        let q0 = 0.5f64.powi(2) / (0.2 + 0.7 / p_tot);
        let q1 = 0.3f64.powi(2) / (0.15 + 0.7 / p_tot);
        assert!((alloc.mdc - (q0 + q1)).abs() < 1e-12, "mdc = {}", alloc.mdc);
    }

    #[test]
    fn zero_mean_separation_spends_nothing() {
        let form = diag_form(vec![0.0, 0.0], vec![0.2, 0.15], 0.7);
        for alloc in [
            solve_tpc(&form, 1.0).unwrap(),
            solve_tipc(&form, 1.0, &DVector::from_vec(vec![0.8, 0.8])).unwrap(),
            solve_ipc(&form, &DVector::from_vec(vec![0.8, 0.8])).unwrap(),
        ] {
            assert_eq!(alloc.mdc, 0.0);
            assert_eq!(alloc.a_t.amax(), 0.0);
        }
    }

    #[test]
    fn capped_solver_keeps_closed_form_when_caps_are_loose() {
        let form = diag_form(vec![0.5, 0.3], vec![0.2, 0.15], 0.7);
        let p_tot = 2.0;
        let p0 = DVector::from_vec(vec![1.9, 1.9]);
        let capped = solve_tipc(&form, p_tot, &p0).unwrap();
        let free = solve_tpc(&form, p_tot).unwrap();
        assert_eq!(capped.method, SolveMethod::AnalyticClosedForm);
        assert!((capped.a_t - free.a_t).amax() < EPS);
    }

    #[test]
    fn projection_example_by_hand() {
        // Unconstrained direction (3, 1) on the sphere of power 10; caps
        // (4, 9).  Sensor 1 saturates at 2 and sensor 2 spreads the rest:
        // mu^2 = 1 / (4 * 6), a_2 = 1 / (2 mu) = sqrt(6).
        let a_star = DVector::from_vec(vec![3.0, 1.0]);
        let caps = DVector::from_vec(vec![2.0, 3.0]);
        let (a, mu) = project_onto_capped_sphere(&a_star, 10.0, &caps).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-12, "a = {a}");
        assert!((a[1] - 6.0f64.sqrt()).abs() < 1e-12);
        assert!((a.norm_squared() - 10.0).abs() < 1e-12);
        assert!((mu - (1.0 / 24.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn capped_solver_projects_and_stays_feasible() {
        // Strong first sensor pushes the closed form over its cap.
        let form = diag_form(vec![0.9, 0.1, 0.1], vec![0.05, 0.2, 0.2], 0.5);
        let p_tot = 9.0;
        let p0 = DVector::from_vec(vec![2.0, 4.0, 4.0]);
        let free = solve_tpc(&form, p_tot).unwrap();
        assert!(
            free.a_t[0] * free.a_t[0] > p0[0],
            "test premise: cap must bind, got {}",
            free.a_t[0]
        );
        let alloc = solve_tipc(&form, p_tot, &p0).unwrap();
        assert_eq!(alloc.method, SolveMethod::AnalyticProjection);
        let set = ConstraintSet::TotalWithCaps { p_tot, p0 };
        assert!(set.is_feasible(&alloc.a_t, 1e-9));
        assert!((alloc.a_t.norm_squared() - p_tot).abs() < 1e-9 * p_tot);
        assert!((alloc.a_t[0] - 2.0f64.sqrt()).abs() < 1e-12, "capped entry");
        assert!(
            alloc.kkt_residual <= 1e-9,
            "projection residual {}",
            alloc.kkt_residual
        );
    }

    #[test]
    fn caps_only_saturates_everything_when_noise_dominates() {
        // Large c: the quadratic penalty is negligible, every sensor should
        // transmit at its cap exactly.
        let form = diag_form(vec![0.5, 0.4, 0.3], vec![0.2, 0.15, 0.1], 1e4);
        let p0 = DVector::from_element(3, 2.0);
        let alloc = solve_ipc(&form, &p0).unwrap();
        assert_eq!(alloc.method, SolveMethod::AnalyticSaturation);
        for k in 0..3 {
            assert!(
                (alloc.a_t[k] - 2.0f64.sqrt()).abs() < 1e-12,
                "sensor {k}: {}",
                alloc.a_t[k]
            );
        }
    }

    #[test]
    fn caps_only_saturates_at_least_one_sensor() {
        // Small c: interference matters and weak sensors back off, but the
        // best sensor stays at its cap.
        let form = diag_form(vec![0.5, 0.05, 0.02], vec![0.05, 0.2, 0.3], 1e-3);
        let p0 = DVector::from_element(3, 4.0);
        let alloc = solve_ipc(&form, &p0).unwrap();
        assert_eq!(alloc.method, SolveMethod::AnalyticSaturation);
        let n_saturated = (0..3)
            .filter(|&k| (alloc.a_t[k] - 2.0).abs() < 1e-9)
            .count();
        assert!(n_saturated >= 1);
        assert!(
            alloc.a_t[2] < 2.0 - 1e-6,
            "weakest sensor should back off, got {}",
            alloc.a_t[2]
        );
        assert!(alloc.kkt_residual <= 1e-9, "residual {}", alloc.kkt_residual);
    }

    #[test]
    fn caps_only_water_level_is_self_consistent() {
        let form = diag_form(vec![0.5, 0.3, 0.2, 0.1], vec![0.25, 0.2, 0.3, 0.15], 0.05);
        let p0 = DVector::from_element(4, 1.5);
        let alloc = solve_ipc(&form, &p0).unwrap();
        let s = form.b_t.dot(&alloc.a_t);
        let eta = ((&form.k_t * &alloc.a_t).dot(&alloc.a_t) + form.c) / s;
        for k in 0..4 {
            let unsat = eta * form.b_t[k] / form.k_t[(k, k)];
            let expected = unsat.min(p0[k].sqrt());
            assert!(
                (alloc.a_t[k] - expected).abs() < 1e-9,
                "sensor {k}: {} vs {expected}",
                alloc.a_t[k]
            );
        }
    }

    #[test]
    fn unequal_caps_dispatch_to_fallback() {
        let form = diag_form(vec![0.5, 0.3], vec![0.2, 0.15], 0.7);
        let p0 = DVector::from_vec(vec![1.0, 2.0]);
        let alloc = solve_ipc(&form, &p0).unwrap();
        assert_eq!(alloc.method, SolveMethod::QpFallback);
        assert!(ConstraintSet::CapsOnly { p0 }.is_feasible(&alloc.a_t, 1e-9));
    }
}
