//! Convex-reformulation fallback solver.
//!
//! The deflection ratio is lifted to `z = [x; t]` with `x = a_t / (b_t'a_t)`
//! and `t = 1 / (b_t'a_t)`: on the slice `b_t'x = 1` the objective becomes
//! the convex quadratic `x'K_t x + c t^2` (its minimum is the reciprocal of
//! the best deflection), the nonnegativity and cap constraints become
//! `z >= 0` and `x_k <= sqrt(p0_k) t`, and the total-power constraint
//! becomes the second-order cone `||x|| <= sqrt(p_tot) t`, kept as a convex
//! inequality; the recovered allocation is rescaled onto the power sphere
//! when the budget binds.
//!
//! Polyhedral subproblems (everything except the cone) are solved exactly
//! by a primal active-set method.  The cone is handled by dualizing
//! `||x||^2 - t^2 <= 0` (in budget-normalized coordinates) with a
//! multiplier `lambda in [0, c]`: the inner problem stays a polyhedral QP,
//! the cone gap is monotone in `lambda`, and a bisection pins the
//! binding-budget solutions while the endpoints cover the slack-budget and
//! cap-free cases.

use nalgebra::{DMatrix, DVector};

use super::{kkt, ConstraintSet, PowerAllocation, SolveMethod};
use crate::error::{Error, Result};
use crate::mdc::MdcForm;

/// Iteration cap across active-set pivots of one inner solve.
const MAX_ITERS: usize = 100_000;
/// Relative step size below which an active-set iterate counts as stationary.
const STEP_TOL: f64 = 1e-12;
/// Relative multiplier tolerance for declaring an active set optimal.
const MULT_TOL: f64 = 1e-9;
/// Relative ridge added to a numerically singular reduced KKT system.
const RIDGE: f64 = 1e-13;

/// Scaled feasible region (amplitudes normalized by the power scale).
enum Region {
    /// Unit sphere only.
    Sphere,
    /// Unit sphere intersected with per-sensor caps.
    SphereBox(DVector<f64>),
    /// Per-sensor caps only.
    BoxOnly(DVector<f64>),
}

/// Maximizes the deflection of `form` over `constraints` via the convex
/// lifted program.  Handles every regime; the analytic solvers dispatch
/// here when their closed forms do not apply.
///
/// # Errors
/// Constraint validation errors, [`Error::NonConvergence`] when an inner
/// active-set solve exceeds its iteration cap, and [`Error::Internal`] on
/// irrecoverably singular subproblems.
pub fn solve_qp(form: &MdcForm, constraints: &ConstraintSet) -> Result<PowerAllocation> {
    let m = form.num_sensors();
    constraints.validate(m)?;
    if form.b_t.amax() == 0.0 {
        // Zero mean separation: the deflection is identically zero.
        return Ok(PowerAllocation::from_amplitudes(
            DVector::zeros(m),
            0.0,
            SolveMethod::AnalyticClosedForm,
            0.0,
        ));
    }
    let s = constraints.power_scale().sqrt();
    let b_norm = form.b_t.norm();
    let k_hat = &form.k_t / (b_norm * b_norm);
    let c_hat = form.c / (s * s * b_norm * b_norm);
    let region = match constraints {
        ConstraintSet::TotalPower { .. } => Region::Sphere,
        ConstraintSet::TotalWithCaps { p0, .. } => Region::SphereBox(p0.map(|p| p.sqrt() / s)),
        ConstraintSet::CapsOnly { p0 } => Region::BoxOnly(p0.map(|p| p.sqrt() / s)),
    };

    // The deflection is even in b_t'a_t; with mixed-sign b_t both
    // orientations of the slice b_t'x = 1 are candidate optima.
    let mut best: Option<(DVector<f64>, f64)> = None;
    for sign in [1.0, -1.0] {
        let oriented = &form.b_t * (sign / b_norm);
        if oriented.max() <= 0.0 || (sign < 0.0 && form.b_t.min() >= 0.0) {
            continue;
        }
        let unit = solve_scaled(&oriented, &k_hat, c_hat, &region)?;
        let a = &unit * s;
        let value = form.value(&a);
        if best.as_ref().map_or(true, |(_, v)| value > *v) {
            best = Some((a, value));
        }
    }
    let (a_t, mdc) = best.ok_or_else(|| {
        Error::Internal("no feasible slice orientation for the lifted program".into())
    })?;
    let residual = kkt::kkt_residual(form, constraints, &a_t)?;
    Ok(PowerAllocation::from_amplitudes(
        a_t,
        mdc,
        SolveMethod::QpFallback,
        residual,
    ))
}

/// Solves the scaled problem: maximize `(b'u)^2 / (u'K u + c)` over the
/// region, returning the unit-scale allocation `u >= 0`.
fn solve_scaled(
    b: &DVector<f64>,
    k: &DMatrix<f64>,
    c: f64,
    region: &Region,
) -> Result<DVector<f64>> {
    let m = b.len();
    let k_scale = k.amax().max(1e-300);
    match region {
        Region::Sphere => {
            let x = minimize_on_slice(b, &ridge_shifted(k, c), None)?;
            normalize_direction(x)
        }
        Region::SphereBox(r) => {
            // Budget-only candidate first: if it clears the caps the box
            // rows are slack and the sphere solution stands.
            let u = normalize_direction(minimize_on_slice(b, &ridge_shifted(k, c), None)?)?;
            if (0..m).all(|i| u[i] <= r[i] * (1.0 + 1e-12)) {
                return Ok(clip_to_box(u, r));
            }
            if c <= 1e-14 * k_scale {
                return Ok(scale_into_box(u, r, true));
            }
            // Cone multiplier search.  At lambda = 0 the cone is ignored;
            // a nonpositive gap there means the budget is slack.
            let mut inner = InnerState::new(b, r)?;
            let (x, t) = inner.solve(k, 0.0, c)?;
            if x.norm_squared() <= t * t * (1.0 + 1e-10) {
                return Ok(sanitize_sphere_box(x / t, r));
            }
            // The gap ||x||^2 - t^2 decreases in lambda and is negative
            // just below lambda = c (there the x-block tends to the
            // budget-only candidate, which violates a cap, so t, pinned to
            // the largest x_k / r_k, exceeds ||x||).
            let mut lo = 0.0;
            let mut hi = c * (1.0 - 1e-9);
            let mut feasible: Option<(DVector<f64>, f64)> = None;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let (x, t) = inner.solve(k, mid, c)?;
                if x.norm_squared() > t * t {
                    lo = mid;
                } else {
                    hi = mid;
                    feasible = Some((x, t));
                }
                if hi - lo <= 1e-15 * c {
                    break;
                }
            }
            let (x, t) = match feasible {
                Some(sol) => sol,
                // The cone multiplier sits within ridge distance of its
                // upper endpoint; the endpoint solve is the answer.
                None => inner.solve(k, hi, c)?,
            };
            Ok(sanitize_sphere_box(x / t, r))
        }
        Region::BoxOnly(r) => {
            if c <= 1e-14 * k_scale {
                let u = normalize_direction(minimize_on_slice(b, &ridge_shifted(k, c), None)?)?;
                return Ok(scale_into_box(u, r, false));
            }
            let mut inner = InnerState::new(b, r)?;
            let (x, t) = inner.solve(k, 0.0, c)?;
            Ok(clip_to_box(x / t, r))
        }
    }
}

fn ridge_shifted(k: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let mut q = k.clone();
    for i in 0..q.nrows() {
        q[(i, i)] += c;
    }
    q
}

fn normalize_direction(x: DVector<f64>) -> Result<DVector<f64>> {
    let mut u = x;
    u.apply(|v| *v = v.max(0.0));
    let n = u.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Internal("lifted solution collapsed to zero".into()));
    }
    Ok(u / n)
}

fn clip_to_box(mut u: DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    for i in 0..u.len() {
        u[i] = u[i].clamp(0.0, r[i]);
    }
    u
}

/// Scales a unit direction to touch the box (used when the objective is
/// scale-invariant, `c = 0`); optionally also stays inside the unit sphere.
fn scale_into_box(u: DVector<f64>, r: &DVector<f64>, inside_sphere: bool) -> DVector<f64> {
    let mut scale = f64::INFINITY;
    for i in 0..u.len() {
        if u[i] > 0.0 {
            scale = scale.min(r[i] / u[i]);
        }
    }
    if !scale.is_finite() {
        scale = 1.0;
    }
    if inside_sphere {
        scale = scale.min(1.0);
    }
    u * scale
}

fn sanitize_sphere_box(u: DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    let mut u = clip_to_box(u, r);
    let n = u.norm();
    if n > 1.0 {
        u /= n;
    }
    u
}

/// Minimizes `x'Q x` over `b'x = 1`, `x >= 0` (optionally with extra box
/// rows handled by the caller through [`InnerState`]).
fn minimize_on_slice(
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    warm: Option<(DVector<f64>, Vec<bool>)>,
) -> Result<DVector<f64>> {
    let m = b.len();
    let rows: Vec<DVector<f64>> = (0..m)
        .map(|k| {
            let mut g = DVector::zeros(m);
            g[k] = -1.0;
            g
        })
        .collect();
    let h = q * 2.0;
    let (z0, w0) = match warm {
        Some(start) => start,
        None => {
            let j = argmax(b)?;
            let mut z = DVector::zeros(m);
            z[j] = 1.0 / b[j];
            let w = (0..m).map(|k| k != j).collect();
            (z, w)
        }
    };
    let (z, _) = active_set_qp(&h, b, &rows, z0, w0)?;
    Ok(z)
}

fn argmax(b: &DVector<f64>) -> Result<usize> {
    let mut j = 0;
    for k in 1..b.len() {
        if b[k] > b[j] {
            j = k;
        }
    }
    if b[j] <= 0.0 {
        return Err(Error::Infeasible(
            "normalization slice b'x = 1 unreachable with x >= 0".into(),
        ));
    }
    Ok(j)
}

/// Warm-startable inner solver for the box-constrained lifted problem in
/// `z = [x; t]`: minimize `x'(K + lambda I)x + (c - lambda) t^2` over
/// `b'x = 1`, `z >= 0`, `x_k <= r_k t`.
struct InnerState {
    b_aug: DVector<f64>,
    rows: Vec<DVector<f64>>,
    z: DVector<f64>,
    w: Vec<bool>,
    r: DVector<f64>,
}

impl InnerState {
    fn new(b: &DVector<f64>, r: &DVector<f64>) -> Result<Self> {
        let m = b.len();
        let n = m + 1;
        let j = argmax(b)?;
        let mut b_aug = DVector::zeros(n);
        for k in 0..m {
            b_aug[k] = b[k];
        }
        let mut rows = Vec::with_capacity(2 * m + 1);
        // Nonnegativity of every coordinate, t included.
        for k in 0..n {
            let mut g = DVector::zeros(n);
            g[k] = -1.0;
            rows.push(g);
        }
        // Caps x_k - r_k t <= 0.
        for k in 0..m {
            let mut g = DVector::zeros(n);
            g[k] = 1.0;
            g[m] = -r[k];
            rows.push(g);
        }
        let mut z = DVector::zeros(n);
        z[j] = 1.0 / b[j];
        z[m] = z[j] / r[j] + 1.0;
        let w = (0..rows.len()).map(|i| i < m && i != j).collect();
        Ok(InnerState {
            b_aug,
            rows,
            z,
            w,
            r: r.clone(),
        })
    }

    /// Solves at the given cone multiplier, reusing the previous solution
    /// and working set as a feasible warm start.
    fn solve(&mut self, k: &DMatrix<f64>, lambda: f64, c: f64) -> Result<(DVector<f64>, f64)> {
        let m = k.nrows();
        let n = m + 1;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..m {
            for j in 0..m {
                h[(i, j)] = 2.0 * k[(i, j)];
            }
            h[(i, i)] += 2.0 * lambda;
        }
        h[(m, m)] = 2.0 * (c - lambda);
        let (z, w) = active_set_qp(&h, &self.b_aug, &self.rows, self.z.clone(), self.w.clone())?;
        self.z = z.clone();
        self.w = w;
        let t = z[m];
        if !(t > 0.0) {
            return Err(Error::Internal(
                "lifted scale variable collapsed to zero".into(),
            ));
        }
        let x = DVector::from_iterator(m, (0..m).map(|i| z[i]));
        debug_assert!(
            (0..m).all(|i| x[i] <= self.r[i] * t * (1.0 + 1e-6)),
            "inner solve left the box"
        );
        Ok((x, t))
    }
}

/// Primal active-set method for `min 1/2 z'H z` s.t. `b'z = 1`,
/// `g_j'z <= 0`.  `z0` must be feasible; `w0` flags the rows treated as
/// active initially.  Returns the minimizer and its final working set.
fn active_set_qp(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    rows: &[DVector<f64>],
    z0: DVector<f64>,
    w0: Vec<bool>,
) -> Result<(DVector<f64>, Vec<bool>)> {
    let n = z0.len();
    let mut z = z0;
    let mut w = w0;
    for iter in 0..MAX_ITERS {
        let active: Vec<usize> = (0..rows.len()).filter(|&j| w[j]).collect();
        let na = active.len();
        let dim = n + 1 + na;
        let mut kkt_m = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                kkt_m[(i, j)] = h[(i, j)];
            }
            kkt_m[(i, n)] = b[i];
            kkt_m[(n, i)] = b[i];
        }
        for (a, &j) in active.iter().enumerate() {
            for i in 0..n {
                kkt_m[(i, n + 1 + a)] = rows[j][i];
                kkt_m[(n + 1 + a, i)] = rows[j][i];
            }
        }
        let mut rhs = DVector::zeros(dim);
        rhs[n] = 1.0;
        let sol = solve_kkt_system(kkt_m, &rhs, n)?;
        let z_hat = DVector::from_iterator(n, (0..n).map(|i| sol[i]));
        let p = &z_hat - &z;
        if p.amax() <= STEP_TOL * (1.0 + z.amax()) {
            // Stationary on the working set: inspect inequality multipliers.
            let mult_scale = (h * &z).amax().max(1.0);
            let mut drop = None;
            let mut most_negative = -MULT_TOL * mult_scale;
            for (a, &j) in active.iter().enumerate() {
                let nu = sol[n + 1 + a];
                if nu < most_negative {
                    most_negative = nu;
                    drop = Some(j);
                }
            }
            match drop {
                Some(j) => w[j] = false,
                None => return Ok((z, w)),
            }
            continue;
        }
        // Longest feasible step toward the working-set minimizer.
        let mut alpha = 1.0;
        let mut blocking = None;
        for (j, g) in rows.iter().enumerate() {
            if w[j] {
                continue;
            }
            let gp = g.dot(&p);
            if gp > 1e-14 * (1.0 + p.amax()) {
                let step = (-g.dot(&z) / gp).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(j);
                }
            }
        }
        z += &p * alpha;
        if let Some(j) = blocking {
            if alpha < 1.0 {
                w[j] = true;
            }
        }
        if iter + 1 == MAX_ITERS {
            return Err(Error::NonConvergence {
                iterations: MAX_ITERS,
                residual: p.amax(),
            });
        }
    }
    unreachable!("loop exits by return or error")
}

/// Solves the symmetric indefinite working-set KKT system, retrying with a
/// ridge on the Hessian block and finally a pseudoinverse when the plain
/// factorization is singular.
fn solve_kkt_system(mat: DMatrix<f64>, rhs: &DVector<f64>, nh: usize) -> Result<DVector<f64>> {
    let scale = mat.amax().max(1e-300);
    if let Some(sol) = mat.clone().full_piv_lu().solve(rhs) {
        if sol.iter().all(|v| v.is_finite()) && (&mat * &sol - rhs).amax() <= 1e-8 * scale * (1.0 + sol.amax()) {
            return Ok(sol);
        }
    }
    let mut ridged = mat.clone();
    for i in 0..nh {
        ridged[(i, i)] += RIDGE * scale;
    }
    if let Some(sol) = ridged.clone().full_piv_lu().solve(rhs) {
        if sol.iter().all(|v| v.is_finite()) && (&ridged * &sol - rhs).amax() <= 1e-8 * scale * (1.0 + sol.amax()) {
            return Ok(sol);
        }
    }
    let svd = mat.svd(true, true);
    svd.solve(rhs, 1e-12 * scale)
        .ok()
        .filter(|sol: &DVector<f64>| sol.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Internal("singular working-set system".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdc::{mdc_value, ChannelType};
    use crate::solvers::{solve_tipc, solve_tpc};

    fn form(b: Vec<f64>, k: DMatrix<f64>, c: f64) -> MdcForm {
        MdcForm::new(DVector::from_vec(b), k, c, ChannelType::Pac).unwrap()
    }

    fn diag(d: Vec<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(d))
    }

    #[test]
    fn matches_closed_form_on_total_power() {
        let f = form(vec![0.5, 0.3, 0.1], diag(vec![0.2, 0.15, 0.05]), 0.7);
        let p_tot = 3.0;
        let analytic = solve_tpc(&f, p_tot).unwrap();
        assert_eq!(analytic.method, SolveMethod::AnalyticClosedForm);
        let qp = solve_qp(&f, &ConstraintSet::TotalPower { p_tot }).unwrap();
        assert!(
            (&qp.a_t - &analytic.a_t).amax() < 1e-6,
            "qp {} vs analytic {}",
            qp.a_t,
            analytic.a_t
        );
        assert!(qp.kkt_residual <= 1e-8, "residual {}", qp.kkt_residual);
        assert!(qp.mdc >= analytic.mdc - 1e-6);
    }

    #[test]
    fn mixed_sign_direction_zeroes_the_harmful_sensor() {
        // Strong cross-covariance makes the unconstrained direction push
        // sensor 2 negative; the constrained optimum parks it at zero.
        let mut k = diag(vec![0.1, 1.5]);
        k[(0, 1)] = 0.3;
        k[(1, 0)] = 0.3;
        let f = form(vec![1.0, 0.05], k, 0.05);
        let p_tot = 1.0;
        let alloc = solve_tpc(&f, p_tot).unwrap();
        assert_eq!(alloc.method, SolveMethod::QpFallback);
        assert!(alloc.a_t[1].abs() < 1e-9, "harmful sensor active: {}", alloc.a_t);
        // One-dimensional sweep over the sphere quadrant is the oracle.
        let mut best = 0.0f64;
        for i in 0..=4000 {
            let th = i as f64 / 4000.0 * std::f64::consts::FRAC_PI_2;
            let a = DVector::from_vec(vec![th.cos(), th.sin()]) * p_tot.sqrt();
            best = best.max(mdc_value(&f, &a).unwrap());
        }
        assert!(alloc.mdc >= best - 1e-6, "qp {} vs sweep {best}", alloc.mdc);
        assert!(alloc.kkt_residual <= 1e-8);
    }

    #[test]
    fn single_sensor_cap_saturates() {
        let f = form(vec![0.4], diag(vec![0.25]), 0.3);
        let qp = solve_qp(
            &f,
            &ConstraintSet::CapsOnly {
                p0: DVector::from_vec(vec![2.25]),
            },
        )
        .unwrap();
        assert!((qp.a_t[0] - 1.5).abs() < 1e-9, "a = {}", qp.a_t);
    }

    #[test]
    fn slack_budget_beats_the_equality_shell() {
        // A nearly useless, noisy sensor: forcing the full budget onto the
        // shell wastes power on it, while the inequality region lets it
        // idle.  The fallback must find the slack-budget optimum and
        // dominate the shell-restricted analytic path.
        let f = form(vec![1.0, 0.01], diag(vec![0.1, 10.0]), 0.1);
        let p_tot = 1.9;
        let p0 = DVector::from_vec(vec![1.0, 1.0]);
        let analytic = solve_tipc(&f, p_tot, &p0).unwrap();
        let qp = solve_qp(
            &f,
            &ConstraintSet::TotalWithCaps {
                p_tot,
                p0: p0.clone(),
            },
        )
        .unwrap();
        assert!(qp.mdc >= analytic.mdc - 1e-9, "qp {} analytic {}", qp.mdc, analytic.mdc);
        assert!(qp.mdc > 4.9, "slack-budget optimum missed: {}", qp.mdc);
        assert!(
            qp.a_t.norm_squared() < 0.75 * p_tot,
            "budget should be slack, got {}",
            qp.a_t.norm_squared()
        );
        assert!((qp.a_t[0] - 1.0).abs() < 1e-6, "strong sensor at its cap");
    }

    #[test]
    fn binding_budget_matches_the_projection_path() {
        let f = form(vec![0.5, 0.3], diag(vec![0.2, 0.15]), 0.7);
        let p_tot = 2.0;
        let p0 = DVector::from_vec(vec![1.0, 1.9]);
        let analytic = solve_tipc(&f, p_tot, &p0).unwrap();
        assert_eq!(analytic.method, SolveMethod::AnalyticProjection);
        let qp = solve_qp(&f, &ConstraintSet::TotalWithCaps { p_tot, p0 }).unwrap();
        assert!(
            (qp.mdc - analytic.mdc).abs() < 1e-8,
            "qp {} analytic {}",
            qp.mdc,
            analytic.mdc
        );
        assert!((&qp.a_t - &analytic.a_t).amax() < 1e-5);
        assert!((qp.a_t.norm_squared() - p_tot).abs() < 1e-6 * p_tot);
    }

    #[test]
    fn unequal_caps_match_a_box_lattice_sweep() {
        let f = form(vec![0.5, 0.3], diag(vec![0.2, 0.15]), 0.1);
        let p0 = DVector::from_vec(vec![1.0, 0.25]);
        let qp = solve_qp(&f, &ConstraintSet::CapsOnly { p0: p0.clone() }).unwrap();
        let mut best = 0.0f64;
        let res = 800;
        for i in 0..=res {
            for j in 0..=res {
                let a = DVector::from_vec(vec![
                    i as f64 / res as f64 * p0[0].sqrt(),
                    j as f64 / res as f64 * p0[1].sqrt(),
                ]);
                best = best.max(mdc_value(&f, &a).unwrap());
            }
        }
        assert!(qp.mdc >= best - 1e-6, "qp {} sweep {best}", qp.mdc);
        assert!(ConstraintSet::CapsOnly { p0 }.is_feasible(&qp.a_t, 1e-9));
    }

    #[test]
    fn correlated_caps_only_solution_is_stationary() {
        let mut k = diag(vec![0.25, 0.2, 0.3]);
        k[(0, 1)] = 0.08;
        k[(1, 0)] = 0.08;
        k[(1, 2)] = 0.05;
        k[(2, 1)] = 0.05;
        let f = form(vec![0.5, 0.4, 0.3], k, 0.2);
        let p0 = DVector::from_element(3, 1.5);
        let qp = solve_qp(&f, &ConstraintSet::CapsOnly { p0 }).unwrap();
        assert_eq!(qp.method, SolveMethod::QpFallback);
        assert!(qp.kkt_residual <= 1e-8, "residual {}", qp.kkt_residual);
    }
}
