//! Monte-Carlo simulation of the full detection chain.
//!
//! One simulated trial walks the whole pipeline: correlated Gaussian
//! observations at the sensors, per-sensor energy decisions, transport of
//! the weighted decisions over the fading reporting channel (parallel or
//! multiple access), linear fusion at the fusion center, and a global
//! threshold test calibrated to a false-alarm budget.  Channel
//! realizations are the outer loop: per realization the transmit powers
//! are re-optimized (deflection-maximizing policy) or split evenly
//! (uniform policy), the fusion threshold is calibrated on noise-only
//! samples, and detection/false-alarm rates are estimated on held-out
//! draws.
//!
//! Every realization owns an independent counter-derived random stream, so
//! results are bit-identical for a fixed seed regardless of how the
//! realizations are scheduled across threads.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mdc::{build_mdc_form, mdc_value, ChannelType, Hypothesis};
use crate::model::{ChannelRealization, LocalStats, NetworkModel};
use crate::solvers::{self, uniform_allocation, ConstraintSet};

/// Reporting-channel fading model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    /// Rayleigh magnitudes of circularly symmetric unit-variance complex
    /// gains, redrawn per realization.
    RayleighCn01,
    /// Deterministic `|h_k| = 1`.
    UnitGain,
}

/// How the fusion threshold is set from the false-alarm budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tau0Method {
    /// Empirical quantile of noise-only fusion samples (the fused statistic
    /// is a Gaussian mixture, so this is the honest default).
    EmpiricalQuantile,
    /// Moment-matched Gaussian approximation of the noise-only statistic.
    GaussianApprox,
}

/// Simulation shape and reproducibility parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Outer loop: independent channel draws.
    pub n_channel_realizations: usize,
    /// Inner loop: Monte-Carlo trials per hypothesis per realization.
    pub n_monte_carlo_per_realization: usize,
    /// Master seed; every realization derives its own stream from it.
    pub seed: u64,
    /// Fading model for the reporting channel.
    pub fading: Fading,
    /// Global false-alarm budget for the fusion threshold.
    pub beta_f: f64,
    /// Threshold calibration method.
    pub tau0_method: Tau0Method,
}

impl SimConfig {
    /// Validates counts and the false-alarm budget.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] for zero counts or a budget outside
    /// `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        if self.n_channel_realizations == 0 || self.n_monte_carlo_per_realization == 0 {
            return Err(Error::InvalidParameter(
                "realization and trial counts must be at least 1".into(),
            ));
        }
        if !(self.beta_f > 0.0 && self.beta_f < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "false-alarm budget must lie in (0, 1), got {}",
                self.beta_f
            )));
        }
        Ok(())
    }
}

/// Power-allocation policy applied per channel realization.
#[derive(Debug, Clone, PartialEq)]
pub enum AllocationPolicy {
    /// Deflection-maximizing: re-solve the allocation for each realization.
    Dpa(ConstraintSet),
    /// Uniform: even budget split (or full caps) regardless of the channel.
    Upa(ConstraintSet),
}

impl AllocationPolicy {
    /// The constraint regime the policy allocates under.
    pub fn constraints(&self) -> &ConstraintSet {
        match self {
            AllocationPolicy::Dpa(c) | AllocationPolicy::Upa(c) => c,
        }
    }
}

/// Global detection performance estimated by simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEstimate {
    /// Mean global detection probability over channel realizations.
    pub pd0: f64,
    /// Mean global false-alarm rate on held-out noise-only draws.
    pub pf0: f64,
    /// Standard error of `pd0` across realizations.
    pub pd0_stderr: f64,
    /// Mean fusion threshold used.
    pub threshold_tau0: f64,
}

/// Aggregate simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceSummary {
    /// Detection/false-alarm estimates.
    pub detection: DetectionEstimate,
    /// Deflection coefficient of the applied allocation, averaged over
    /// channel realizations.
    pub mean_mdc: f64,
    /// Per-sensor transmit power, averaged over channel realizations (mW).
    pub mean_powers: DVector<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-stream generator: mixes `(seed, stream)` into a
/// 256-bit key, so distinct streams are statistically independent and a
/// given stream never depends on which thread consumes it.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908u64.wrapping_mul(2 * stream + 1);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Draws one reporting-channel realization for sensors with pathloss
/// `theta`.
///
/// # Errors
/// Propagates [`ChannelRealization::new`] validation.
pub fn draw_channel<R: Rng + ?Sized>(
    theta: &DVector<f64>,
    fading: Fading,
    rng: &mut R,
) -> Result<ChannelRealization> {
    match fading {
        Fading::UnitGain => ChannelRealization::unit_gain(theta.clone()),
        Fading::RayleighCn01 => {
            let h = theta.map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                (0.5 * (re * re + im * im)).sqrt()
            });
            ChannelRealization::new(h, theta.clone())
        }
    }
}

/// Reusable sampler of local decision vectors; factors the signal-present
/// observation covariance once.
pub struct DecisionSampler {
    chol_lower: DMatrix<f64>,
    sigma0: f64,
    tau: DVector<f64>,
}

impl DecisionSampler {
    /// Prepares the sampler from a model and its local-detector statistics.
    ///
    /// # Errors
    /// [`Error::NotPositiveSemidefinite`] when the signal-present
    /// observation covariance has no Cholesky factor.
    pub fn new(model: &NetworkModel, stats: &LocalStats) -> Result<Self> {
        let sigma_h1 = model.observation_covariance_h1()?;
        let chol = Cholesky::new(sigma_h1).ok_or_else(|| {
            Error::NotPositiveSemidefinite(
                "signal-present observation covariance is not positive definite".into(),
            )
        })?;
        Ok(DecisionSampler {
            chol_lower: chol.l(),
            sigma0: model.sigma0_sq.sqrt(),
            tau: stats.tau.clone(),
        })
    }

    /// Number of sensors the sampler serves.
    pub fn num_sensors(&self) -> usize {
        self.tau.len()
    }

    /// Fills `u` with one decision vector under `hypothesis`.
    ///
    /// # Panics
    /// If `u` is not exactly one slot per sensor.
    pub fn sample<R: Rng + ?Sized>(&self, hypothesis: Hypothesis, rng: &mut R, u: &mut [bool]) {
        let m = self.tau.len();
        assert_eq!(u.len(), m, "decision buffer length must equal sensor count");
        match hypothesis {
            Hypothesis::H0 => {
                for k in 0..m {
                    let z: f64 = StandardNormal.sample(rng);
                    let x = self.sigma0 * z;
                    u[k] = x * x > self.tau[k];
                }
            }
            Hypothesis::H1 => {
                let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
                for k in 0..m {
                    let mut x = 0.0;
                    for (j, &zj) in z.iter().enumerate().take(k + 1) {
                        x += self.chol_lower[(k, j)] * zj;
                    }
                    u[k] = x * x > self.tau[k];
                }
            }
        }
    }
}

/// Draws one local decision vector under `hypothesis`.
///
/// Convenience wrapper over [`DecisionSampler`]; hot loops should build
/// the sampler once instead.
///
/// # Errors
/// Propagates [`DecisionSampler::new`].
pub fn sample_decisions<R: Rng + ?Sized>(
    model: &NetworkModel,
    stats: &LocalStats,
    hypothesis: Hypothesis,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let sampler = DecisionSampler::new(model, stats)?;
    let mut u = vec![false; sampler.num_sensors()];
    sampler.sample(hypothesis, rng, &mut u);
    Ok(u)
}

/// Fuses one decision vector into the global test statistic.
///
/// Parallel access adds an independent noise draw per branch; multiple
/// access superimposes the weighted decisions and adds a single draw.
///
/// # Panics
/// On mismatched dimensions.
pub fn fuse<R: Rng + ?Sized>(
    channel_type: ChannelType,
    a_t: &DVector<f64>,
    channel: &ChannelRealization,
    u: &[bool],
    sigma_n_sq: f64,
    rng: &mut R,
) -> f64 {
    let m = channel.num_sensors();
    assert_eq!(a_t.len(), m, "allocation length must equal sensor count");
    assert_eq!(u.len(), m, "decision length must equal sensor count");
    let g = channel.transmit_gains();
    let noise_sd = (0.5 * sigma_n_sq).sqrt();
    let mut t = 0.0;
    match channel_type {
        ChannelType::Pac => {
            for k in 0..m {
                let w: f64 = StandardNormal.sample(rng);
                if u[k] {
                    t += a_t[k] * g[k];
                }
                t += noise_sd * w;
            }
        }
        ChannelType::Mac => {
            for k in 0..m {
                if u[k] {
                    t += a_t[k] * g[k];
                }
            }
            let w: f64 = StandardNormal.sample(rng);
            t += noise_sd * w;
        }
    }
    t
}

/// Linear-interpolated quantile of a sorted sample (the `(n-1)p` plotting
/// convention).
fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Fusion threshold from noise-only samples: the empirical `(1 - beta_f)`
/// quantile, linearly interpolated.
///
/// # Errors
/// [`Error::InvalidParameter`] for a budget outside `(0, 1]`;
/// [`Error::InsufficientSamples`] when fewer than `10 / beta_f` samples
/// are provided (too few tail samples to place the quantile).
pub fn calibrate_tau0(t_samples_h0: &[f64], beta_f: f64) -> Result<f64> {
    if !(beta_f > 0.0 && beta_f <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "false-alarm budget must lie in (0, 1], got {beta_f}"
        )));
    }
    let needed = (10.0 / beta_f).ceil();
    if (t_samples_h0.len() as f64) < needed {
        return Err(Error::InsufficientSamples(format!(
            "threshold calibration at budget {beta_f} needs at least {needed} noise-only \
             samples, got {}",
            t_samples_h0.len()
        )));
    }
    if t_samples_h0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "noise-only samples must be finite".into(),
        ));
    }
    let mut sorted = t_samples_h0.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples compare"));
    Ok(type7_quantile(&sorted, 1.0 - beta_f))
}

/// Moment-matched Gaussian threshold: mean and variance of the noise-only
/// statistic are exact (decisions are independent under noise), only the
/// Gaussian shape is an approximation.
fn gaussian_tau0(
    amp: &DVector<f64>,
    p_f: &DVector<f64>,
    channel_type: ChannelType,
    sigma_n_sq: f64,
    beta_f: f64,
) -> f64 {
    let mean: f64 = (0..amp.len()).map(|k| amp[k] * p_f[k]).sum();
    let branches = match channel_type {
        ChannelType::Pac => amp.len() as f64,
        ChannelType::Mac => 1.0,
    };
    let var: f64 = (0..amp.len())
        .map(|k| amp[k] * amp[k] * p_f[k] * (1.0 - p_f[k]))
        .sum::<f64>()
        + branches * 0.5 * sigma_n_sq;
    let z = Normal::standard().inverse_cdf(1.0 - beta_f);
    mean + z * var.sqrt()
}

struct RealizationOutcome {
    pd0: f64,
    pf0: f64,
    tau0: f64,
    mdc: f64,
    powers: DVector<f64>,
}

/// Runs the full simulation: draws channels, allocates power per the
/// policy, calibrates the fusion threshold per realization, and estimates
/// detection performance and the achieved deflection.
///
/// Deterministic for a fixed config seed, independent of thread count.
///
/// # Errors
/// Model/config validation errors, [`Error::InsufficientSamples`] when the
/// per-realization trial count cannot support empirical threshold
/// calibration at the requested budget, and any solver error under the
/// deflection-maximizing policy.
pub fn estimate_performance(
    model: &NetworkModel,
    policy: &AllocationPolicy,
    config: &SimConfig,
    channel_type: ChannelType,
) -> Result<PerformanceSummary> {
    config.validate()?;
    let model = model.clone().validated()?;
    let m = model.num_sensors();
    policy.constraints().validate(m)?;
    let n_mc = config.n_monte_carlo_per_realization;
    if config.tau0_method == Tau0Method::EmpiricalQuantile
        && ((n_mc / 2) as f64) < (10.0 / config.beta_f).ceil()
    {
        return Err(Error::InsufficientSamples(format!(
            "empirical threshold calibration at budget {} needs at least {} trials per \
             realization (half are held out), got {n_mc}",
            config.beta_f,
            2.0 * (10.0 / config.beta_f).ceil()
        )));
    }
    let stats = LocalStats::from_model(&model)?;
    let theta = model.pathloss_vector()?;
    let sampler = DecisionSampler::new(&model, &stats)?;

    let outcomes: Vec<RealizationOutcome> = (0..config.n_channel_realizations)
        .into_par_iter()
        .map(|i| -> Result<RealizationOutcome> {
            let mut rng = derive_rng(config.seed, i as u64);
            let channel = draw_channel(&theta, config.fading, &mut rng)?;
            let form = build_mdc_form(&stats, &channel, channel_type, model.sigma_n_sq)?;
            let a_t = match policy {
                AllocationPolicy::Dpa(c) => solvers::solve(&form, c)?.a_t,
                AllocationPolicy::Upa(c) => uniform_allocation(c, m)?,
            };
            let mdc = mdc_value(&form, &a_t)?;

            let g = channel.transmit_gains();
            let amp = DVector::from_iterator(m, (0..m).map(|k| a_t[k] * g[k]));
            let noise_sd = (0.5 * model.sigma_n_sq).sqrt();
            let mut u = vec![false; m];
            let mut draw_t = |hyp: Hypothesis, rng: &mut ChaCha12Rng| -> f64 {
                sampler.sample(hyp, rng, &mut u);
                let mut t = 0.0;
                match channel_type {
                    ChannelType::Pac => {
                        for k in 0..m {
                            let w: f64 = StandardNormal.sample(rng);
                            if u[k] {
                                t += amp[k];
                            }
                            t += noise_sd * w;
                        }
                    }
                    ChannelType::Mac => {
                        for k in 0..m {
                            if u[k] {
                                t += amp[k];
                            }
                        }
                        let w: f64 = StandardNormal.sample(rng);
                        t += noise_sd * w;
                    }
                }
                t
            };

            let t_h0: Vec<f64> = (0..n_mc).map(|_| draw_t(Hypothesis::H0, &mut rng)).collect();
            let (tau0, pf0) = match config.tau0_method {
                Tau0Method::EmpiricalQuantile => {
                    let (calibration, held_out) = t_h0.split_at(n_mc / 2);
                    let tau0 = calibrate_tau0(calibration, config.beta_f)?;
                    let exceed = held_out.iter().filter(|&&t| t > tau0).count();
                    (tau0, exceed as f64 / held_out.len() as f64)
                }
                Tau0Method::GaussianApprox => {
                    let tau0 = gaussian_tau0(
                        &amp,
                        &stats.p_f,
                        channel_type,
                        model.sigma_n_sq,
                        config.beta_f,
                    );
                    let exceed = t_h0.iter().filter(|&&t| t > tau0).count();
                    (tau0, exceed as f64 / t_h0.len() as f64)
                }
            };
            let detections = (0..n_mc)
                .filter(|_| draw_t(Hypothesis::H1, &mut rng) > tau0)
                .count();
            Ok(RealizationOutcome {
                pd0: detections as f64 / n_mc as f64,
                pf0,
                tau0,
                mdc,
                powers: a_t.map(|a| a * a),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let r = outcomes.len() as f64;
    let pd0 = outcomes.iter().map(|o| o.pd0).sum::<f64>() / r;
    let pf0 = outcomes.iter().map(|o| o.pf0).sum::<f64>() / r;
    let tau0 = outcomes.iter().map(|o| o.tau0).sum::<f64>() / r;
    let mean_mdc = outcomes.iter().map(|o| o.mdc).sum::<f64>() / r;
    let mut mean_powers = DVector::zeros(m);
    for o in &outcomes {
        mean_powers += &o.powers;
    }
    mean_powers /= r;
    let pd0_stderr = if outcomes.len() >= 2 {
        let var = outcomes.iter().map(|o| (o.pd0 - pd0).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    } else {
        // Single realization: binomial error of the inner Monte Carlo.
        (pd0 * (1.0 - pd0) / n_mc as f64).sqrt()
    };
    Ok(PerformanceSummary {
        detection: DetectionEstimate {
            pd0,
            pf0,
            pd0_stderr,
            threshold_tau0: tau0,
        },
        mean_mdc,
        mean_powers,
    })
}
