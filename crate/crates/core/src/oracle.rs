//! Independent brute-force references for the solvers and the statistics.
//!
//! Nothing here shares code paths with the procedures under test: the grid
//! search evaluates the deflection pointwise over an exhaustive
//! parameterization of the feasible set, the joint-detection sampler counts
//! exceedances of raw Gaussian draws, and the two-sensor detection-optimal
//! allocation scans the budget simplex with full Monte-Carlo detection
//! estimates per candidate split.  All scans use common random numbers:
//! every candidate consumes the identical random stream, so comparisons
//! between candidates are exact rather than statistical.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdc::{build_mdc_form, ChannelType, Hypothesis, MdcForm};
use crate::model::{ChannelRealization, LocalStats, NetworkModel};
use crate::sim::{calibrate_tau0, derive_rng, DecisionSampler};
use crate::solvers::{kkt_residual, solve_tpc, ConstraintSet, PowerAllocation, SolveMethod};

/// Exhaustive search for the best allocation on a dense feasible grid.
///
/// Total-power regimes walk the nonnegative orthant of the power sphere
/// (`resolution` subdivisions per angle), dropping points outside the caps
/// in the combined regime; the caps-only regime walks the full box lattice.
/// The result's `method` tag is [`SolveMethod::QpFallback`] (a grid search
/// is numeric, not analytic) and its KKT residual is evaluated at the grid
/// point, so it is only as small as the resolution allows.
///
/// # Errors
/// [`Error::InvalidParameter`] for more than 3 sensors or a resolution
/// below 100; [`Error::Infeasible`] when no grid point satisfies the caps
/// (combined regime with a feasibility band finer than the grid).
pub fn grid_search_allocation(
    form: &MdcForm,
    constraints: &ConstraintSet,
    resolution: usize,
) -> Result<PowerAllocation> {
    let m = form.num_sensors();
    constraints.validate(m)?;
    if m > 3 {
        return Err(Error::InvalidParameter(format!(
            "grid search supports at most 3 sensors, got {m}"
        )));
    }
    if resolution < 100 {
        return Err(Error::InvalidParameter(format!(
            "grid resolution must be at least 100, got {resolution}"
        )));
    }
    let best = match constraints {
        ConstraintSet::TotalPower { p_tot } => sphere_scan(form, *p_tot, None, resolution),
        ConstraintSet::TotalWithCaps { p_tot, p0 } => {
            sphere_scan(form, *p_tot, Some(p0), resolution)
        }
        ConstraintSet::CapsOnly { p0 } => Some(box_scan(form, p0, resolution)),
    };
    let (value, a_t) = best.ok_or_else(|| {
        Error::Infeasible(
            "no grid point satisfies the per-sensor caps; raise the resolution".into(),
        )
    })?;
    let residual = kkt_residual(form, constraints, &a_t)?;
    Ok(PowerAllocation::from_amplitudes(
        a_t,
        value,
        SolveMethod::QpFallback,
        residual,
    ))
}

/// Picks the better of two scored candidates; ties and incomparable scores
/// keep the lower index for determinism.
fn better(
    a: Option<(f64, usize, DVector<f64>)>,
    b: Option<(f64, usize, DVector<f64>)>,
) -> Option<(f64, usize, DVector<f64>)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

fn cap_ok(a: &DVector<f64>, p0: Option<&DVector<f64>>) -> bool {
    match p0 {
        None => true,
        Some(p0) => (0..a.len()).all(|k| a[k] * a[k] <= p0[k] * (1.0 + 1e-12)),
    }
}

fn sphere_scan(
    form: &MdcForm,
    p_tot: f64,
    p0: Option<&DVector<f64>>,
    resolution: usize,
) -> Option<(f64, DVector<f64>)> {
    let root = p_tot.sqrt();
    let m = form.num_sensors();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let angle = |i: usize| i as f64 / resolution as f64 * half_pi;
    let best = match m {
        1 => {
            let a = DVector::from_element(1, root);
            cap_ok(&a, p0).then(|| {
                let v = form.value(&a);
                (v, 0, a)
            })
        }
        2 => (0..=resolution)
            .into_par_iter()
            .map(|i| {
                let th = angle(i);
                let a = DVector::from_vec(vec![root * th.cos(), root * th.sin()]);
                if !cap_ok(&a, p0) {
                    return None;
                }
                let v = form.value(&a);
                v.is_finite().then_some((v, i, a))
            })
            .reduce(|| None, better),
        _ => (0..=resolution)
            .into_par_iter()
            .map(|i| {
                let th = angle(i);
                let (sin_th, cos_th) = th.sin_cos();
                let mut local: Option<(f64, usize, DVector<f64>)> = None;
                for j in 0..=resolution {
                    let ph = angle(j);
                    let a = DVector::from_vec(vec![
                        root * sin_th * ph.cos(),
                        root * sin_th * ph.sin(),
                        root * cos_th,
                    ]);
                    if !cap_ok(&a, p0) {
                        continue;
                    }
                    let v = form.value(&a);
                    if v.is_finite() {
                        local = better(local, Some((v, i * (resolution + 1) + j, a)));
                    }
                }
                local
            })
            .reduce(|| None, better),
    };
    best.map(|(v, _, a)| (v, a))
}

fn box_scan(form: &MdcForm, p0: &DVector<f64>, resolution: usize) -> (f64, DVector<f64>) {
    let m = form.num_sensors();
    let caps: Vec<f64> = p0.iter().map(|p| p.sqrt()).collect();
    let step = |i: usize, k: usize| i as f64 / resolution as f64 * caps[k];
    let best = (0..=resolution)
        .into_par_iter()
        .map(|i| {
            let mut local: Option<(f64, usize, DVector<f64>)> = None;
            let mut consider = |idx: usize, a: DVector<f64>| {
                let v = form.value(&a);
                if v.is_finite() {
                    local = better(local.take(), Some((v, idx, a)));
                }
            };
            match m {
                1 => consider(i, DVector::from_element(1, step(i, 0))),
                2 => {
                    for j in 0..=resolution {
                        let a = DVector::from_vec(vec![step(i, 0), step(j, 1)]);
                        consider(i * (resolution + 1) + j, a);
                    }
                }
                _ => {
                    for j in 0..=resolution {
                        for l in 0..=resolution {
                            let a = DVector::from_vec(vec![step(i, 0), step(j, 1), step(l, 2)]);
                            consider((i * (resolution + 1) + j) * (resolution + 1) + l, a);
                        }
                    }
                }
            }
            local
        })
        .reduce(|| None, better);
    let (v, _, a) = best.expect("box lattice always contains the origin");
    (v, a)
}

/// Fusion rule evaluated by the two-sensor detection-optimal scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionRule {
    /// Threshold on the linear fusion statistic.
    Linear,
    /// Threshold on the exact likelihood ratio of the fusion statistic
    /// (the channel output is a known Gaussian mixture over the four
    /// decision patterns).
    Lrt,
}

/// Output of the two-sensor detection-optimal power scan.
#[derive(Debug, Clone, PartialEq)]
pub struct OpaScan {
    /// Budget fraction assigned to sensor 1 at the best grid point.
    pub best_split: f64,
    /// Transmit powers at the best grid point (mW).
    pub best_powers: DVector<f64>,
    /// Detection probability at the best grid point.
    pub best_pd0: f64,
    /// Binomial standard error of one detection estimate.
    pub pd0_stderr: f64,
    /// Budget fraction chosen by the deflection-maximizing solver.
    pub dpa_split: f64,
    /// Detection probability at the deflection-maximizing split, estimated
    /// with the same random numbers as every other candidate.
    pub dpa_pd0: f64,
    /// Detection probability at the even split, same random numbers.
    pub upa_pd0: f64,
}

/// Brute-force detection-optimal allocation for a two-sensor network under
/// a total power budget: scans 21 evenly spaced budget splits plus the
/// deflection-maximizing split, estimating the global detection
/// probability of each by Monte Carlo at a threshold calibrated to
/// `beta_f` on noise-only draws.  Every split consumes the identical
/// random stream (common random numbers), so the returned maximum
/// dominates the deflection-based and even splits exactly, not just
/// statistically.  The reporting channel uses unit gains.
///
/// # Errors
/// [`Error::InvalidParameter`] unless the model has exactly 2 sensors, for
/// a non-positive budget, or a budget `beta_f` outside (0, 1); threshold
/// calibration errors when `mc_budget` is too small for `beta_f`.
pub fn brute_force_opa_2sensor(
    model: &NetworkModel,
    channel_type: ChannelType,
    p_tot: f64,
    beta_f: f64,
    rule: FusionRule,
    mc_budget: usize,
    seed: u64,
) -> Result<OpaScan> {
    let model = model.clone().validated()?;
    if model.num_sensors() != 2 {
        return Err(Error::InvalidParameter(format!(
            "detection-optimal scan is defined for exactly 2 sensors, got {}",
            model.num_sensors()
        )));
    }
    if !(p_tot > 0.0) || !p_tot.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "p_tot must be positive and finite, got {p_tot}"
        )));
    }
    let stats = LocalStats::from_model(&model)?;
    let theta = model.pathloss_vector()?;
    let channel = ChannelRealization::unit_gain(theta)?;
    let sampler = DecisionSampler::new(&model, &stats)?;
    let form = build_mdc_form(&stats, &channel, channel_type, model.sigma_n_sq)?;

    // Deflection-maximizing split on this (deterministic) channel.
    let dpa = solve_tpc(&form, p_tot)?;
    let dpa_split = dpa.powers[0] / p_tot;

    let mut splits: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    splits.push(dpa_split);

    let g = channel.transmit_gains();
    let pd0s: Vec<f64> = splits
        .par_iter()
        .map(|&f| -> Result<f64> {
            let a = DVector::from_vec(vec![(f * p_tot).sqrt(), ((1.0 - f) * p_tot).sqrt()]);
            let amp = [a[0] * g[0], a[1] * g[1]];
            estimate_split_pd0(
                &sampler,
                &stats,
                amp,
                channel_type,
                model.sigma_n_sq,
                beta_f,
                rule,
                mc_budget,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best_idx = 0;
    for (i, &v) in pd0s.iter().enumerate() {
        if v > pd0s[best_idx] {
            best_idx = i;
        }
    }
    let best_split = splits[best_idx];
    let best_pd0 = pd0s[best_idx];
    let upa_pd0 = pd0s[10];
    let dpa_pd0 = pd0s[21];
    Ok(OpaScan {
        best_split,
        best_powers: DVector::from_vec(vec![best_split * p_tot, (1.0 - best_split) * p_tot]),
        best_pd0,
        pd0_stderr: (best_pd0 * (1.0 - best_pd0) / mc_budget as f64).sqrt(),
        dpa_split,
        dpa_pd0,
        upa_pd0,
    })
}

/// Detection probability of one candidate split, from a fixed derived
/// stream so every split sees identical randomness.
#[allow(clippy::too_many_arguments)]
fn estimate_split_pd0(
    sampler: &DecisionSampler,
    stats: &LocalStats,
    amp: [f64; 2],
    channel_type: ChannelType,
    sigma_n_sq: f64,
    beta_f: f64,
    rule: FusionRule,
    mc_budget: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = derive_rng(seed, 0);
    let noise_sd = (0.5 * sigma_n_sq).sqrt();
    let mut u = vec![false; 2];
    let mut draw_t = |hyp: Hypothesis, rng: &mut rand_chacha::ChaCha12Rng| -> f64 {
        sampler.sample(hyp, rng, &mut u);
        let mut t = 0.0;
        match channel_type {
            ChannelType::Pac => {
                for k in 0..2 {
                    let w: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                    if u[k] {
                        t += amp[k];
                    }
                    t += noise_sd * w;
                }
            }
            ChannelType::Mac => {
                for k in 0..2 {
                    if u[k] {
                        t += amp[k];
                    }
                }
                let w: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                t += noise_sd * w;
            }
        }
        t
    };
    let t_h0: Vec<f64> = (0..mc_budget).map(|_| draw_t(Hypothesis::H0, &mut rng)).collect();
    let t_h1: Vec<f64> = (0..mc_budget).map(|_| draw_t(Hypothesis::H1, &mut rng)).collect();
    match rule {
        FusionRule::Linear => {
            let tau0 = calibrate_tau0(&t_h0, beta_f)?;
            Ok(t_h1.iter().filter(|&&t| t > tau0).count() as f64 / mc_budget as f64)
        }
        FusionRule::Lrt => {
            let llr = MixtureLlr::new(stats, amp, channel_type, sigma_n_sq)?;
            let l_h0: Vec<f64> = t_h0.iter().map(|&t| llr.eval(t)).collect();
            let lambda0 = calibrate_tau0(&l_h0, beta_f)?;
            Ok(t_h1.iter().filter(|&&t| llr.eval(t) > lambda0).count() as f64
                / mc_budget as f64)
        }
    }
}

/// Exact log-likelihood ratio of the fused statistic for two sensors: under
/// either hypothesis the statistic is a four-component Gaussian mixture
/// over the decision patterns, with weights from the joint decision
/// probabilities.
struct MixtureLlr {
    means: [f64; 4],
    weights_h1: [f64; 4],
    weights_h0: [f64; 4],
    sd: f64,
}

impl MixtureLlr {
    fn new(
        stats: &LocalStats,
        amp: [f64; 2],
        channel_type: ChannelType,
        sigma_n_sq: f64,
    ) -> Result<Self> {
        let branches = match channel_type {
            ChannelType::Pac => 2.0,
            ChannelType::Mac => 1.0,
        };
        let var = branches * 0.5 * sigma_n_sq;
        if !(var > 0.0) {
            return Err(Error::InvalidParameter(
                "likelihood-ratio fusion needs positive channel noise".into(),
            ));
        }
        let joint_h1 = stats.pbar_d[(0, 1)];
        let w_h1 = pattern_weights(stats.p_d[0], stats.p_d[1], joint_h1)?;
        // Noise-only decisions are independent: the joint exceedance
        // factorizes through the same pairwise path at zero correlation.
        let joint_h0 = crate::model::pairwise_joint_detection(
            1.0,
            1.0,
            0.0,
            quantile_sq(stats.p_f[0]),
            quantile_sq(stats.p_f[1]),
        )?;
        let w_h0 = pattern_weights(stats.p_f[0], stats.p_f[1], joint_h0)?;
        Ok(MixtureLlr {
            // Pattern order: (0,0), (1,0), (0,1), (1,1).
            means: [0.0, amp[0], amp[1], amp[0] + amp[1]],
            weights_h1: w_h1,
            weights_h0: w_h0,
            sd: var.sqrt(),
        })
    }

    fn eval(&self, t: f64) -> f64 {
        let log_mix = |weights: &[f64; 4]| -> f64 {
            let exps: Vec<f64> = (0..4)
                .map(|i| {
                    let z = (t - self.means[i]) / self.sd;
                    -0.5 * z * z
                })
                .collect();
            let peak = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..4)
                .map(|i| weights[i] * (exps[i] - peak).exp())
                .sum();
            peak + sum.max(1e-300).ln()
        };
        log_mix(&self.weights_h1) - log_mix(&self.weights_h0)
    }
}

/// Squared marginal exceedance threshold (unit variance) hitting rate `p`.
fn quantile_sq(p: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    let z = statrs::distribution::Normal::standard().inverse_cdf(1.0 - 0.5 * p);
    z * z
}

/// Probabilities of the four decision patterns from the marginals and the
/// both-exceed probability.
fn pattern_weights(p1: f64, p2: f64, joint: f64) -> Result<[f64; 4]> {
    let p11 = joint;
    let p10 = p1 - joint;
    let p01 = p2 - joint;
    let p00 = 1.0 - p1 - p2 + joint;
    let w = [p00, p10, p01, p11];
    if w.iter().any(|&x| x < -1e-9) {
        return Err(Error::Internal(format!(
            "inconsistent decision-pattern weights: {w:?}"
        )));
    }
    Ok(w.map(|x| x.max(0.0)))
}

/// Empirical joint exceedance frequencies with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDetectionEstimate {
    /// `[i][j]`: fraction of draws where both sensors exceeded their
    /// thresholds; diagonal holds the marginal rates.
    pub freq: DMatrix<f64>,
    /// Per-entry binomial standard errors.
    pub stderr: DMatrix<f64>,
    /// Sample count behind every entry.
    pub n_samples: usize,
}

/// Monte-Carlo reference for the joint detection matrix: draws
/// signal-present observations and counts pairwise squared-threshold
/// exceedances.  Deterministic in `seed`, independent of thread count
/// (fixed chunked streams, integer reduction).
///
/// # Errors
/// [`Error::InsufficientSamples`] below 10^6 samples (the point of the
/// oracle is tight standard errors); [`Error::NotPositiveSemidefinite`]
/// when the observation covariance has no Cholesky factor.
pub fn mc_joint_detection(
    model: &NetworkModel,
    thresholds: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<JointDetectionEstimate> {
    let model = model.clone().validated()?;
    let m = model.num_sensors();
    if thresholds.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: thresholds.len(),
            context: "thresholds",
        });
    }
    if n_samples < 1_000_000 {
        return Err(Error::InsufficientSamples(format!(
            "joint-detection oracle needs at least 1e6 samples, got {n_samples}"
        )));
    }
    let sigma = model.observation_covariance_h1()?;
    let chol = Cholesky::new(sigma)
        .ok_or_else(|| {
            Error::NotPositiveSemidefinite(
                "signal-present observation covariance is not positive definite".into(),
            )
        })?
        .l();

    const CHUNKS: usize = 256;
    let base = n_samples / CHUNKS;
    let rem = n_samples % CHUNKS;
    let counts: Vec<u64> = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let n = base + usize::from(chunk < rem);
            let mut rng = derive_rng(seed, chunk as u64);
            let mut local = vec![0u64; m * m];
            let mut z = vec![0.0f64; m];
            let mut exceed = vec![false; m];
            for _ in 0..n {
                for zk in z.iter_mut() {
                    *zk = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                }
                for k in 0..m {
                    let mut x = 0.0;
                    for j in 0..=k {
                        x += chol[(k, j)] * z[j];
                    }
                    exceed[k] = x * x > thresholds[k];
                }
                for i in 0..m {
                    if exceed[i] {
                        for j in 0..m {
                            if exceed[j] {
                                local[i * m + j] += 1;
                            }
                        }
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; m * m],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let n = n_samples as f64;
    let freq = DMatrix::from_fn(m, m, |i, j| counts[i * m + j] as f64 / n);
    let stderr = freq.map(|p| (p * (1.0 - p) / n).sqrt());
    Ok(JointDetectionEstimate {
        freq,
        stderr,
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::circle_positions;
    use crate::solvers::{solve_ipc, solve_tipc};

    fn network(m: usize, rho: f64, source: [f64; 3]) -> NetworkModel {
        NetworkModel {
            sensors: circle_positions(m, 5.0),
            source,
            fusion_center: [0.0, 0.0, -10.0],
            sigma_s_sq: 2.002_662_5e-5,
            eps_s: 2.0,
            sigma0_sq: 1e-7,
            rho,
            pf_target: 0.1,
            gain: 10f64.powf(-5.5),
            eps_c: 2.0,
            sigma_n_sq: 1e-7,
        }
    }

    fn diag_form(b: Vec<f64>, k: Vec<f64>, c: f64) -> MdcForm {
        MdcForm::new(
            DVector::from_vec(b),
            DMatrix::from_diagonal(&DVector::from_vec(k)),
            c,
            ChannelType::Pac,
        )
        .unwrap()
    }

    #[test]
    fn single_sensor_budget_goes_all_in() {
        let form = diag_form(vec![0.4], vec![0.2], 0.5);
        let got =
            grid_search_allocation(&form, &ConstraintSet::TotalPower { p_tot: 4.0 }, 100).unwrap();
        assert!((got.a_t[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_tracks_the_closed_form_and_slack_shrinks() {
        let form = diag_form(vec![0.5, 0.3], vec![0.2, 0.15], 0.7);
        let c = ConstraintSet::TotalPower { p_tot: 2.0 };
        let exact = solve_tpc(&form, 2.0).unwrap();
        let coarse = grid_search_allocation(&form, &c, 300).unwrap();
        let fine = grid_search_allocation(&form, &c, 3000).unwrap();
        assert!(coarse.mdc <= exact.mdc + 1e-12, "grid cannot beat the optimum");
        assert!(fine.mdc <= exact.mdc + 1e-12);
        let slack_coarse = exact.mdc - coarse.mdc;
        let slack_fine = exact.mdc - fine.mdc;
        assert!(slack_fine <= slack_coarse, "finer grid must be at least as good");
        assert!(exact.mdc - fine.mdc < 1e-3, "slack {}", exact.mdc - fine.mdc);
    }

    #[test]
    fn grid_respects_caps_in_the_combined_regime() {
        let form = diag_form(vec![0.9, 0.1, 0.1], vec![0.05, 0.2, 0.2], 0.5);
        let p0 = DVector::from_vec(vec![2.0, 4.0, 4.0]);
        let c = ConstraintSet::TotalWithCaps {
            p_tot: 9.0,
            p0: p0.clone(),
        };
        let got = grid_search_allocation(&form, &c, 400).unwrap();
        assert!(c.is_feasible(&got.a_t, 1e-9));
        assert!((got.a_t.norm_squared() - 9.0).abs() < 1e-9 * 9.0, "stays on the shell");
        let exact = solve_tipc(&form, 9.0, &p0).unwrap();
        assert!(got.mdc <= exact.mdc + 1e-12);
        assert!(exact.mdc - got.mdc < 1e-3, "slack {}", exact.mdc - got.mdc);
    }

    #[test]
    fn box_lattice_matches_the_caps_only_solver() {
        let form = diag_form(vec![0.5, 0.05], vec![0.05, 0.2], 1e-3);
        let p0 = DVector::from_element(2, 4.0);
        let exact = solve_ipc(&form, &p0).unwrap();
        let got =
            grid_search_allocation(&form, &ConstraintSet::CapsOnly { p0 }, 1000).unwrap();
        assert!(got.mdc <= exact.mdc + 1e-12);
        assert!(exact.mdc - got.mdc < 1e-3, "slack {}", exact.mdc - got.mdc);
    }

    #[test]
    fn oversized_networks_are_rejected() {
        let form = diag_form(vec![0.4; 4], vec![0.2; 4], 0.5);
        assert!(matches!(
            grid_search_allocation(&form, &ConstraintSet::TotalPower { p_tot: 1.0 }, 500),
            Err(Error::InvalidParameter(_))
        ));
        let form2 = diag_form(vec![0.4], vec![0.2], 0.5);
        assert!(grid_search_allocation(&form2, &ConstraintSet::TotalPower { p_tot: 1.0 }, 50)
            .is_err());
    }

    #[test]
    fn joint_detection_sampler_matches_quadrature() {
        for rho in [0.0, 0.5] {
            let model = network(2, rho, [0.0, 0.0, 3.0]);
            let stats = LocalStats::from_model(&model).unwrap();
            let est = mc_joint_detection(&model, &stats.tau, 1_000_000, 99).unwrap();
            for i in 0..2 {
                let d = (est.freq[(i, i)] - stats.p_d[i]).abs();
                assert!(
                    d < 3.5 * est.stderr[(i, i)],
                    "marginal {i}: {} vs {}",
                    est.freq[(i, i)],
                    stats.p_d[i]
                );
            }
            let d = (est.freq[(0, 1)] - stats.pbar_d[(0, 1)]).abs();
            assert!(
                d < 3.5 * est.stderr[(0, 1)],
                "rho {rho}: joint {} vs quadrature {}",
                est.freq[(0, 1)],
                stats.pbar_d[(0, 1)]
            );
            if rho == 0.0 {
                let product = stats.p_d[0] * stats.p_d[1];
                assert!(
                    (est.freq[(0, 1)] - product).abs() < 3.5 * est.stderr[(0, 1)],
                    "independent joint {} vs product {product}",
                    est.freq[(0, 1)]
                );
            }
        }
    }

    #[test]
    fn joint_detection_sampler_guards_sample_count() {
        let model = network(2, 0.1, [0.0, 0.0, 3.0]);
        let stats = LocalStats::from_model(&model).unwrap();
        assert!(matches!(
            mc_joint_detection(&model, &stats.tau, 1000, 1),
            Err(Error::InsufficientSamples(_))
        ));
    }

    fn two_sensor_model() -> NetworkModel {
        let mut model = network(2, 0.1, [0.0, 0.0, 3.0]);
        // The two retained sensors of the offset-source scenario: one near,
        // one far.
        model.sensors = vec![[2.5, 0.0, 0.0], [-2.5, 0.0, 0.0]];
        model.source = [1.5, 0.0, 3.0];
        model
    }

    #[test]
    fn opa_scan_dominates_the_fixed_splits_exactly() {
        let model = two_sensor_model();
        let scan = brute_force_opa_2sensor(
            &model,
            ChannelType::Pac,
            6e-4,
            0.1,
            FusionRule::Linear,
            20_000,
            7,
        )
        .unwrap();
        assert!(scan.best_pd0 >= scan.dpa_pd0, "scan includes the solver split");
        assert!(scan.best_pd0 >= scan.upa_pd0, "scan includes the even split");
        assert!(scan.best_pd0 <= 1.0 && scan.best_pd0 >= 0.0);
        assert!(
            (scan.best_powers.sum() - 6e-4).abs() < 1e-16,
            "budget fully spent"
        );
    }

    #[test]
    fn symmetric_sensors_split_evenly() {
        let model = network(2, 0.1, [0.0, 0.0, 3.0]);
        let scan = brute_force_opa_2sensor(
            &model,
            ChannelType::Pac,
            4e-4,
            0.1,
            FusionRule::Linear,
            40_000,
            11,
        )
        .unwrap();
        assert!(
            (scan.dpa_split - 0.5).abs() < 1e-6,
            "solver split {} should be even for identical sensors",
            scan.dpa_split
        );
        assert!(
            (scan.best_split - 0.5).abs() <= 0.25,
            "best split {} strays far from symmetry",
            scan.best_split
        );
    }

    #[test]
    fn likelihood_rule_dominates_linear_fusion() {
        let model = two_sensor_model();
        let budget = 40_000;
        let linear = brute_force_opa_2sensor(
            &model,
            ChannelType::Pac,
            5e-4,
            0.1,
            FusionRule::Linear,
            budget,
            13,
        )
        .unwrap();
        let lrt = brute_force_opa_2sensor(
            &model,
            ChannelType::Pac,
            5e-4,
            0.1,
            FusionRule::Lrt,
            budget,
            13,
        )
        .unwrap();
        let se = (linear.best_pd0 * (1.0 - linear.best_pd0) / budget as f64).sqrt();
        assert!(
            lrt.best_pd0 >= linear.best_pd0 - 3.0 * se,
            "lrt {} vs linear {}",
            lrt.best_pd0,
            linear.best_pd0
        );
    }

    #[test]
    fn opa_scan_requires_two_sensors() {
        let model = network(3, 0.1, [0.0, 0.0, 3.0]);
        assert!(matches!(
            brute_force_opa_2sensor(
                &model,
                ChannelType::Pac,
                1e-4,
                0.1,
                FusionRule::Linear,
                5000,
                0
            ),
            Err(Error::InvalidParameter(_))
        ));
    }
}
