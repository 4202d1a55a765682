//! Network geometry, sensing statistics, and energy-detector calibration.
//!
//! A [`NetworkModel`] places `M` sensors, a signal source, and a fusion
//! center in 3-D space and carries the sensing-side parameters (source power,
//! sensing pathloss exponent, sensing noise, exponential spatial correlation,
//! per-sensor false-alarm target) together with the reporting-side parameters
//! (reference channel gain, channel pathloss exponent, channel noise).
//!
//! From the model, [`LocalStats`] derives everything the fusion statistic
//! needs about the local detectors: per-sensor received signal power,
//! calibrated energy-detector thresholds, detection/false-alarm probabilities,
//! and the matrix of pairwise joint detection probabilities.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bvn;
use crate::error::{Error, Result};

/// Euclidean distance between two points.
fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Deterministic pathloss `gain * d^(-eps)`.
///
/// # Errors
/// Returns [`Error::InvalidParameter`] when `d <= 0` or `gain <= 0`.
pub fn pathloss(d: f64, eps: f64, gain: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pathloss distance must be > 0, got {d}"
        )));
    }
    if !(gain > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pathloss gain must be > 0, got {gain}"
        )));
    }
    if eps < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "pathloss exponent must be >= 0, got {eps}"
        )));
    }
    Ok(gain * d.powf(-eps))
}

/// Sensor positions evenly spaced on a circle of the given diameter in the
/// `z = 0` plane, starting on the positive x-axis.
pub fn circle_positions(m: usize, diameter: f64) -> Vec<[f64; 3]> {
    let r = 0.5 * diameter;
    (0..m)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * (k as f64) / (m as f64);
            [r * phi.cos(), r * phi.sin(), 0.0]
        })
        .collect()
}

/// Static description of the sensing network and its channel parameters.
///
/// All powers are linear (mW); unit conversion from dB-style inputs is the
/// caller's responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    /// Sensor positions (metres).
    pub sensors: Vec<[f64; 3]>,
    /// Position of the monitored signal source.
    pub source: [f64; 3],
    /// Position of the fusion center.
    pub fusion_center: [f64; 3],
    /// Source signal power at unit distance (mW).
    pub sigma_s_sq: f64,
    /// Sensing pathloss exponent.
    pub eps_s: f64,
    /// Sensing noise power per sensor (mW).
    pub sigma0_sq: f64,
    /// Base of the exponential spatial signal correlation, in `[0, 1]`:
    /// the signal correlation between sensors `i` and `j` is `rho^d_ij`.
    pub rho: f64,
    /// Per-sensor false-alarm probability the detectors are calibrated to.
    pub pf_target: f64,
    /// Reference reporting-channel gain at unit distance (linear).
    pub gain: f64,
    /// Reporting-channel pathloss exponent.
    pub eps_c: f64,
    /// Reporting-channel noise power (mW).
    pub sigma_n_sq: f64,
}

impl NetworkModel {
    /// Number of sensors `M`.
    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Checks every structural invariant, returning `self` for chaining.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] on an empty network, non-positive powers,
    /// a correlation base outside `[0, 1]`, a false-alarm target outside
    /// `(0, 1)`, or a source/fusion-center placed on top of a sensor.
    pub fn validated(self) -> Result<Self> {
        if self.sensors.is_empty() {
            return Err(Error::InvalidParameter("at least one sensor required".into()));
        }
        for (name, v) in [
            ("sigma_s_sq", self.sigma_s_sq),
            ("sigma0_sq", self.sigma0_sq),
            ("gain", self.gain),
            ("sigma_n_sq", self.sigma_n_sq),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.pf_target > 0.0 && self.pf_target < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pf_target must lie in (0, 1), got {}",
                self.pf_target
            )));
        }
        if self.eps_s < 0.0 || self.eps_c < 0.0 {
            return Err(Error::InvalidParameter(
                "pathloss exponents must be >= 0".into(),
            ));
        }
        for (k, &s) in self.sensors.iter().enumerate() {
            if dist(s, self.source) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "source coincides with sensor {k}"
                )));
            }
            if dist(s, self.fusion_center) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "fusion center coincides with sensor {k}"
                )));
            }
        }
        Ok(self)
    }

    /// Distances from the source to each sensor.
    pub fn source_distances(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.sensors.len(),
            self.sensors.iter().map(|&s| dist(s, self.source)),
        )
    }

    /// Distances from the fusion center to each sensor.
    pub fn fc_distances(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.sensors.len(),
            self.sensors.iter().map(|&s| dist(s, self.fusion_center)),
        )
    }

    /// Distance between sensors `i` and `j`.
    pub fn sensor_distance(&self, i: usize, j: usize) -> f64 {
        dist(self.sensors[i], self.sensors[j])
    }

    /// Reporting-channel pathloss `theta_k = gain * d_k^(-eps_c)` per sensor.
    pub fn pathloss_vector(&self) -> Result<DVector<f64>> {
        let d = self.fc_distances();
        let mut theta = DVector::zeros(d.len());
        for k in 0..d.len() {
            theta[k] = pathloss(d[k], self.eps_c, self.gain)?;
        }
        Ok(theta)
    }

    /// Per-sensor received signal power `sigma_s^2 / d_k^eps_s` and the full
    /// signal covariance `[K_s]_ij = rho^d_ij * sqrt(sigma_si^2 sigma_sj^2)`.
    pub fn signal_covariance(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.num_sensors();
        let d_src = self.source_distances();
        let mut var = DVector::zeros(m);
        for k in 0..m {
            var[k] = self.sigma_s_sq * pathloss(d_src[k], self.eps_s, 1.0)?;
        }
        let mut k_s = DMatrix::zeros(m, m);
        for i in 0..m {
            k_s[(i, i)] = var[i];
            for j in (i + 1)..m {
                let corr = self.rho.powf(self.sensor_distance(i, j));
                let cov = corr * (var[i] * var[j]).sqrt();
                k_s[(i, j)] = cov;
                k_s[(j, i)] = cov;
            }
        }
        Ok((var, k_s))
    }

    /// Observation covariance under the signal-present hypothesis,
    /// `K_s + sigma0^2 I`.
    pub fn observation_covariance_h1(&self) -> Result<DMatrix<f64>> {
        let m = self.num_sensors();
        let (_, mut cov) = self.signal_covariance()?;
        for k in 0..m {
            cov[(k, k)] += self.sigma0_sq;
        }
        Ok(cov)
    }
}

/// Calibrates a square-law energy detector `u = 1{x^2 > tau}` so that the
/// false-alarm probability under `x ~ N(0, sigma0_sq)` equals `pf_target`,
/// and evaluates the detection probability under
/// `x ~ N(0, sigma0_sq + sigma_s_sq)`.
///
/// Returns `(tau, p_d)`.
///
/// # Errors
/// [`Error::InvalidParameter`] when `sigma0_sq <= 0`, `sigma_s_sq < 0`, or
/// `pf_target` is outside `(0, 1)`.
pub fn calibrate_energy_detector(
    sigma0_sq: f64,
    sigma_s_sq: f64,
    pf_target: f64,
) -> Result<(f64, f64)> {
    if !(sigma0_sq > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma0_sq must be > 0, got {sigma0_sq}"
        )));
    }
    if !(sigma_s_sq >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_s_sq must be >= 0, got {sigma_s_sq}"
        )));
    }
    if !(pf_target > 0.0 && pf_target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pf_target must lie in (0, 1), got {pf_target}"
        )));
    }
    let z = Normal::standard().inverse_cdf(1.0 - 0.5 * pf_target);
    let tau = sigma0_sq * z * z;
    let p_d = 2.0 * bvn::std_normal_sf(tau.sqrt() / (sigma0_sq + sigma_s_sq).sqrt());
    Ok((tau, p_d))
}

/// Joint two-sided exceedance probability for one pair of zero-mean jointly
/// Gaussian observations: `P(x_i^2 > tau_i, x_j^2 > tau_j)` where the pair
/// has variances `var_i`, `var_j` and covariance `cov_ij`.
///
/// # Errors
/// [`Error::InvalidParameter`] on non-positive variances, negative
/// thresholds, or an implied correlation outside `[-1, 1]`.
pub fn pairwise_joint_detection(
    var_i: f64,
    var_j: f64,
    cov_ij: f64,
    tau_i: f64,
    tau_j: f64,
) -> Result<f64> {
    if !(var_i > 0.0 && var_j > 0.0) {
        return Err(Error::InvalidParameter(
            "observation variances must be positive".into(),
        ));
    }
    if tau_i < 0.0 || tau_j < 0.0 {
        return Err(Error::InvalidParameter("thresholds must be >= 0".into()));
    }
    let r = cov_ij / (var_i * var_j).sqrt();
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::InvalidParameter(format!(
            "implied observation correlation {r} outside [-1, 1]"
        )));
    }
    let a = (tau_i / var_i).sqrt();
    let b = (tau_j / var_j).sqrt();
    Ok(bvn::both_exceed_two_sided(a, b, r))
}

/// Derived statistics of the local detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    /// Per-sensor received signal power (mW).
    pub sigma_s_sq: DVector<f64>,
    /// Per-sensor energy-detector threshold.
    pub tau: DVector<f64>,
    /// Per-sensor detection probability.
    pub p_d: DVector<f64>,
    /// Per-sensor false-alarm probability (equals the calibration target).
    pub p_f: DVector<f64>,
    /// Pairwise joint detection probabilities under the signal-present
    /// hypothesis; diagonal equals `p_d`.
    pub pbar_d: DMatrix<f64>,
}

impl LocalStats {
    /// Derives the local-detector statistics from a network model.
    ///
    /// Each off-diagonal joint probability is evaluated by adaptive
    /// quadrature of the pairwise observation density and then clamped into
    /// its Frechet bounds, which the exact value satisfies; the clamp can
    /// only move an entry by the quadrature tolerance.
    ///
    /// Sensors whose detection probability is within `1e-6` of the
    /// false-alarm target contribute nothing to the fused statistic and are
    /// reported through a warning.
    pub fn from_model(model: &NetworkModel) -> Result<Self> {
        let model = model.clone().validated()?;
        let m = model.num_sensors();
        let (var_s, k_s) = model.signal_covariance()?;
        let mut tau = DVector::zeros(m);
        let mut p_d = DVector::zeros(m);
        for k in 0..m {
            let (t, pd) = calibrate_energy_detector(model.sigma0_sq, var_s[k], model.pf_target)?;
            tau[k] = t;
            p_d[k] = pd;
            if pd - model.pf_target < 1e-6 {
                log::warn!(
                    "sensor {k} is nearly uninformative: p_d = {pd:.6} vs p_f = {:.6}",
                    model.pf_target
                );
            }
        }
        let mut pbar = DMatrix::zeros(m, m);
        for i in 0..m {
            pbar[(i, i)] = p_d[i];
            for j in (i + 1)..m {
                let vi = var_s[i] + model.sigma0_sq;
                let vj = var_s[j] + model.sigma0_sq;
                let p = pairwise_joint_detection(vi, vj, k_s[(i, j)], tau[i], tau[j])?;
                let lower = (p_d[i] + p_d[j] - 1.0).max(0.0);
                let upper = p_d[i].min(p_d[j]);
                let p = p.clamp(lower, upper);
                pbar[(i, j)] = p;
                pbar[(j, i)] = p;
            }
        }
        Ok(LocalStats {
            sigma_s_sq: var_s,
            tau,
            p_d,
            p_f: DVector::from_element(m, model.pf_target),
            pbar_d: pbar,
        })
    }

    /// Number of sensors.
    pub fn num_sensors(&self) -> usize {
        self.p_d.len()
    }

    /// Decision covariance `pbar_d - p_d p_d^T`.
    pub fn decision_covariance(&self) -> DMatrix<f64> {
        &self.pbar_d - &self.p_d * self.p_d.transpose()
    }
}

/// Joint detection matrix for conditionally independent local decisions:
/// off-diagonal entries `p_i p_j`, diagonal `p_i`.  Equals
/// `diag(p)(I - diag(p)) + p p^T`.
pub fn independent_joint_matrix(p_d: &DVector<f64>) -> DMatrix<f64> {
    let m = p_d.len();
    let mut pbar = p_d * p_d.transpose();
    for k in 0..m {
        pbar[(k, k)] = p_d[k];
    }
    pbar
}

/// One realization of the reporting channels: fading magnitudes and
/// deterministic pathloss.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Fading magnitudes `|h_k| >= 0`.
    pub h_mag: DVector<f64>,
    /// Pathloss `theta_k > 0`.
    pub theta: DVector<f64>,
}

impl ChannelRealization {
    /// Builds a realization, validating signs and matching dimensions.
    ///
    /// # Errors
    /// [`Error::DimensionMismatch`] or [`Error::InvalidParameter`].
    pub fn new(h_mag: DVector<f64>, theta: DVector<f64>) -> Result<Self> {
        if h_mag.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: h_mag.len(),
                context: "channel magnitudes vs pathloss",
            });
        }
        if h_mag.iter().any(|&h| !(h >= 0.0) || !h.is_finite()) {
            return Err(Error::InvalidParameter(
                "fading magnitudes must be finite and >= 0".into(),
            ));
        }
        if theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter(
                "pathloss values must be finite and > 0".into(),
            ));
        }
        Ok(ChannelRealization { h_mag, theta })
    }

    /// Unit-gain fading (`|h_k| = 1`) over the given pathloss.
    pub fn unit_gain(theta: DVector<f64>) -> Result<Self> {
        let h = DVector::from_element(theta.len(), 1.0);
        ChannelRealization::new(h, theta)
    }

    /// Effective amplitude gain per unit transmit amplitude,
    /// `g_k = sqrt(theta_k) * |h_k|`.
    pub fn transmit_gains(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.theta.len(),
            self.theta
                .iter()
                .zip(self.h_mag.iter())
                .map(|(&t, &h)| t.sqrt() * h),
        )
    }

    /// Number of sensors.
    pub fn num_sensors(&self) -> usize {
        self.theta.len()
    }
}
