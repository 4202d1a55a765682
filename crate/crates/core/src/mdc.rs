//! The modified deflection coefficient in transmit coordinates.
//!
//! The fusion statistic `T` is linear in the received decision amplitudes,
//! so both conditional means and the signal-present variance are available
//! in closed form from the local-detector statistics and one channel
//! realization.  Collecting terms in the transmit amplitudes
//! `a_t` (`a_tk = sqrt(P_tk)`) gives
//!
//! ```text
//! MDC(a_t) = (b_t' a_t)^2 / (a_t' K_t a_t + c)
//! ```
//!
//! with `b_tk = g_k (p_dk - p_fk)`, `[K_t]_ij = g_i g_j [Pbar_d - p_d p_d']_ij`,
//! `g_k = sqrt(theta_k) |h_k|`, and `c` the fused channel-noise variance:
//! `M sigma_n^2 / 2` on parallel channels, `sigma_n^2 / 2` on the multiple
//! access channel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ChannelRealization, LocalStats};

/// Reporting-channel architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelType {
    /// Parallel access: one independently noisy branch per sensor.
    Pac,
    /// Multiple access: decisions superimpose onto a single noisy branch.
    Mac,
}

/// Hypothesis labels for the sensing field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Signal absent.
    H0,
    /// Signal present.
    H1,
}

/// Largest negative eigenvalue of `K_t` repaired by clamping; anything more
/// negative is rejected as non-PSD input.
const PSD_TOL: f64 = 1e-9;

/// Quadratic form of the deflection coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct MdcForm {
    /// Linear term: per-sensor mean-separation gain.
    pub b_t: DVector<f64>,
    /// Quadratic term: decision covariance seen through the channel gains.
    /// Positive semidefinite.
    pub k_t: DMatrix<f64>,
    /// Fused channel-noise variance (constant part of the denominator).
    pub c: f64,
    /// Channel architecture the form was built for.
    pub channel_type: ChannelType,
}

impl MdcForm {
    /// Builds a form from raw components, enforcing the PSD contract on
    /// `K_t`: eigenvalues in `[-1e-9, 0)` are clamped to zero, anything
    /// below that is an error.
    ///
    /// # Errors
    /// [`Error::DimensionMismatch`], [`Error::InvalidParameter`] for a
    /// negative `c` or an asymmetric `K_t`, and
    /// [`Error::NotPositiveSemidefinite`] past the clamp tolerance.
    pub fn new(
        b_t: DVector<f64>,
        k_t: DMatrix<f64>,
        c: f64,
        channel_type: ChannelType,
    ) -> Result<Self> {
        let m = b_t.len();
        if k_t.nrows() != m || k_t.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: k_t.nrows(),
                context: "K_t vs b_t",
            });
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise term c must be finite and >= 0, got {c}"
            )));
        }
        if b_t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("b_t must be finite".into()));
        }
        let scale = k_t.amax().max(1e-300);
        let asym = (&k_t - k_t.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(Error::InvalidParameter(format!(
                "K_t is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let k_sym = 0.5 * (&k_t + k_t.transpose());
        let eig = nalgebra::SymmetricEigen::new(k_sym.clone());
        let min_eig = eig.eigenvalues.min();
        let k_t = if min_eig < -PSD_TOL {
            return Err(Error::NotPositiveSemidefinite(format!(
                "K_t has eigenvalue {min_eig:.3e} below -{PSD_TOL:.0e}"
            )));
        } else if min_eig < 0.0 {
            // Clamp roundoff-negative eigenvalues and rebuild.
            let lambda = eig.eigenvalues.map(|l| l.max(0.0));
            let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose();
            0.5 * (&rebuilt + rebuilt.transpose())
        } else {
            k_sym
        };
        Ok(MdcForm {
            b_t,
            k_t,
            c,
            channel_type,
        })
    }

    /// Number of sensors.
    pub fn num_sensors(&self) -> usize {
        self.b_t.len()
    }

    /// Deflection coefficient at the transmit amplitudes `a_t`, without
    /// domain checks.  The denominator is assumed positive.
    #[inline]
    pub fn value(&self, a_t: &DVector<f64>) -> f64 {
        let s = self.b_t.dot(a_t);
        let q = (&self.k_t * a_t).dot(a_t);
        s * s / (q + self.c)
    }
}

/// Builds the deflection form for one channel realization.
///
/// # Errors
/// Propagates dimension mismatches and the PSD contract of
/// [`MdcForm::new`].
pub fn build_mdc_form(
    stats: &LocalStats,
    channel: &ChannelRealization,
    channel_type: ChannelType,
    sigma_n_sq: f64,
) -> Result<MdcForm> {
    let m = stats.num_sensors();
    if channel.num_sensors() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: channel.num_sensors(),
            context: "channel realization vs local stats",
        });
    }
    if !(sigma_n_sq > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_n_sq must be > 0, got {sigma_n_sq}"
        )));
    }
    let g = channel.transmit_gains();
    let b_t = DVector::from_iterator(
        m,
        (0..m).map(|k| g[k] * (stats.p_d[k] - stats.p_f[k])),
    );
    let cov = stats.decision_covariance();
    let mut k_t = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            k_t[(i, j)] = g[i] * g[j] * cov[(i, j)];
        }
    }
    let c = match channel_type {
        ChannelType::Pac => (m as f64) * sigma_n_sq * 0.5,
        ChannelType::Mac => sigma_n_sq * 0.5,
    };
    MdcForm::new(b_t, k_t, c, channel_type)
}

/// Deflection coefficient at `a_t` with full domain checking.
///
/// # Errors
/// [`Error::DimensionMismatch`] on length disagreement;
/// [`Error::InvalidParameter`] when the variance denominator is not
/// positive.
pub fn mdc_value(form: &MdcForm, a_t: &DVector<f64>) -> Result<f64> {
    if a_t.len() != form.num_sensors() {
        return Err(Error::DimensionMismatch {
            expected: form.num_sensors(),
            got: a_t.len(),
            context: "a_t vs form",
        });
    }
    let denom = (&form.k_t * a_t).dot(a_t) + form.c;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "MDC denominator must be positive, got {denom:.3e}"
        )));
    }
    let s = form.b_t.dot(a_t);
    Ok(s * s / denom)
}

/// Monte-Carlo estimates of the fused-statistic moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalMoments {
    /// Sample mean of `T` under each hypothesis.
    pub mean_h0: f64,
    pub mean_h1: f64,
    /// Sample variance of `T` under the signal-present hypothesis.
    pub var_h1: f64,
    /// Standard errors of the three estimates above.
    pub se_mean_h0: f64,
    pub se_mean_h1: f64,
    pub se_var_h1: f64,
    /// Draws per hypothesis.
    pub n: usize,
}

/// Estimates the fused-statistic moments by direct simulation of the
/// reporting chain, for validating the closed forms behind [`MdcForm`].
///
/// `sample_u` must fill its buffer with one joint draw of the local
/// decisions under the requested hypothesis each time it is called.  The
/// channel noise is drawn internally: per branch on parallel channels, once
/// per draw on the multiple access channel.
///
/// # Errors
/// [`Error::InsufficientSamples`] when `n_draws < 2`;
/// [`Error::DimensionMismatch`] on length disagreement.
pub fn empirical_moments<R, F>(
    channel: &ChannelRealization,
    a_t: &DVector<f64>,
    channel_type: ChannelType,
    sigma_n_sq: f64,
    n_draws: usize,
    rng: &mut R,
    mut sample_u: F,
) -> Result<EmpiricalMoments>
where
    R: Rng,
    F: FnMut(Hypothesis, &mut R, &mut [bool]),
{
    let m = channel.num_sensors();
    if a_t.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: a_t.len(),
            context: "a_t vs channel",
        });
    }
    if n_draws < 2 {
        return Err(Error::InsufficientSamples(
            "need at least 2 draws per hypothesis".into(),
        ));
    }
    let amp: Vec<f64> = {
        let g = channel.transmit_gains();
        (0..m).map(|k| a_t[k] * g[k]).collect()
    };
    let noise_sd = (sigma_n_sq * 0.5).sqrt();
    let mut u = vec![false; m];
    let mut draw_t = |hyp: Hypothesis, rng: &mut R| -> f64 {
        sample_u(hyp, rng, &mut u);
        let mut t = 0.0;
        match channel_type {
            ChannelType::Pac => {
                for k in 0..m {
                    let w: f64 = StandardNormal.sample(rng);
                    t += if u[k] { amp[k] } else { 0.0 } + noise_sd * w;
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

    let n = n_draws as f64;
    let mut sum_h0 = 0.0;
    let mut sumsq_h0 = 0.0;
    for _ in 0..n_draws {
        let t = draw_t(Hypothesis::H0, rng);
        sum_h0 += t;
        sumsq_h0 += t * t;
    }
    let mean_h0 = sum_h0 / n;
    let var_h0 = (sumsq_h0 / n - mean_h0 * mean_h0).max(0.0) * n / (n - 1.0);

    // Two passes under H1: the variance standard error needs the fourth
    // central moment, so keep the samples.
    let t_h1: Vec<f64> = (0..n_draws).map(|_| draw_t(Hypothesis::H1, rng)).collect();
    let mean_h1 = t_h1.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &t in &t_h1 {
        let d = t - mean_h1;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    let var_h1 = m2 * n / (n - 1.0);
    let se_var_h1 = ((m4 - m2 * m2).max(0.0) / n).sqrt();

    Ok(EmpiricalMoments {
        mean_h0,
        mean_h1,
        var_h1,
        se_mean_h0: (var_h0 / n).sqrt(),
        se_mean_h1: (var_h1 / n).sqrt(),
        se_var_h1,
        n: n_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    const EPS: f64 = 1e-12;

    fn scalar_form(b: f64, k: f64, c: f64) -> MdcForm {
        MdcForm::new(
            DVector::from_vec(vec![b]),
            DMatrix::from_vec(1, 1, vec![k]),
            c,
            ChannelType::Pac,
        )
        .unwrap()
    }

    #[test]
    fn single_sensor_value_by_hand() {
        // (2*1)^2 / (2*1 + 1) = 4/3.
        let form = scalar_form(2.0, 2.0, 1.0);
        let a = DVector::from_vec(vec![1.0]);
        let got = mdc_value(&form, &a).unwrap();
        assert!((got - 4.0 / 3.0).abs() < EPS, "got {got}");
    }

    #[test]
    fn mac_noise_term_is_single_branch() {
        let stats = crate::model::LocalStats {
            sigma_s_sq: DVector::from_vec(vec![1.0, 1.0]),
            tau: DVector::from_vec(vec![1.0, 1.0]),
            p_d: DVector::from_vec(vec![0.7, 0.6]),
            p_f: DVector::from_vec(vec![0.1, 0.1]),
            pbar_d: crate::model::independent_joint_matrix(&DVector::from_vec(vec![0.7, 0.6])),
        };
        let ch = ChannelRealization::unit_gain(DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let pac = build_mdc_form(&stats, &ch, ChannelType::Pac, 1.0).unwrap();
        let mac = build_mdc_form(&stats, &ch, ChannelType::Mac, 1.0).unwrap();
        assert!((pac.c - 1.0).abs() < EPS);
        assert!((mac.c - 0.5).abs() < EPS);
        assert_eq!(pac.b_t, mac.b_t);
        assert_eq!(pac.k_t, mac.k_t);
        // Same allocation fuses with less noise on the MAC.
        let a = DVector::from_vec(vec![1.0, 2.0]);
        assert!(mac.value(&a) >= pac.value(&a));
    }

    #[test]
    fn transmit_coordinates_absorb_gains() {
        // K_t entries are g_i g_j times the decision covariance.
        let p_d = DVector::from_vec(vec![0.5, 0.5]);
        let stats = crate::model::LocalStats {
            sigma_s_sq: DVector::from_vec(vec![1.0, 1.0]),
            tau: DVector::from_vec(vec![1.0, 1.0]),
            p_d: p_d.clone(),
            p_f: DVector::from_vec(vec![0.1, 0.1]),
            pbar_d: crate::model::independent_joint_matrix(&p_d),
        };
        let theta = DVector::from_vec(vec![4.0, 0.25]);
        let ch = ChannelRealization::unit_gain(theta).unwrap();
        let form = build_mdc_form(&stats, &ch, ChannelType::Pac, 1.0).unwrap();
        assert!((form.b_t[0] - 2.0 * 0.4).abs() < EPS);
        assert!((form.b_t[1] - 0.5 * 0.4).abs() < EPS);
        assert!((form.k_t[(0, 0)] - 4.0 * 0.25).abs() < EPS);
        assert!((form.k_t[(1, 1)] - 0.25 * 0.25).abs() < EPS);
        assert!(form.k_t[(0, 1)].abs() < EPS, "independent sensors uncorrelate");
    }

    #[test]
    fn psd_contract_clamps_roundoff_and_rejects_violations() {
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let tiny = DMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -5e-10]);
        let form = MdcForm::new(b.clone(), tiny, 1.0, ChannelType::Pac).unwrap();
        let eig = nalgebra::SymmetricEigen::new(form.k_t.clone());
        assert!(eig.eigenvalues.min() >= 0.0, "clamped to PSD");

        let bad = DMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1e-6]);
        assert!(matches!(
            MdcForm::new(b, bad, 1.0, ChannelType::Pac),
            Err(crate::Error::NotPositiveSemidefinite(_))
        ));
    }

    #[test]
    fn denominator_domain_is_enforced() {
        let form = scalar_form(1.0, 0.0, 0.0);
        let a = DVector::from_vec(vec![1.0]);
        assert!(mdc_value(&form, &a).is_err());
    }

    #[test]
    fn noiseless_deterministic_decisions_have_exact_moments() {
        let theta = DVector::from_vec(vec![4.0, 9.0]);
        let ch = ChannelRealization::unit_gain(theta).unwrap();
        let a = DVector::from_vec(vec![1.0, 1.0]);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = empirical_moments(
            &ch,
            &a,
            ChannelType::Pac,
            0.0,
            1000,
            &mut rng,
            |hyp, _rng, u| {
                let fire = matches!(hyp, Hypothesis::H1);
                u.fill(fire);
            },
        )
        .unwrap();
        assert!((m.mean_h1 - 5.0).abs() < EPS, "sum of gains 2 + 3");
        assert!(m.mean_h0.abs() < EPS);
        assert!(m.var_h1.abs() < EPS);
    }

    #[test]
    fn empirical_moments_match_closed_form_for_independent_sensors() {
        let p_d = DVector::from_vec(vec![0.7, 0.4, 0.55]);
        let p_f = DVector::from_vec(vec![0.1, 0.1, 0.1]);
        let stats = crate::model::LocalStats {
            sigma_s_sq: DVector::zeros(3),
            tau: DVector::zeros(3),
            p_d: p_d.clone(),
            p_f: p_f.clone(),
            pbar_d: crate::model::independent_joint_matrix(&p_d),
        };
        let ch = ChannelRealization::unit_gain(DVector::from_vec(vec![1.0, 2.0, 0.5])).unwrap();
        let sigma_n_sq = 0.3;
        for channel_type in [ChannelType::Pac, ChannelType::Mac] {
            let form = build_mdc_form(&stats, &ch, channel_type, sigma_n_sq).unwrap();
            let a = DVector::from_vec(vec![1.0, 0.5, 2.0]);
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            let est = empirical_moments(
                &ch,
                &a,
                channel_type,
                sigma_n_sq,
                200_000,
                &mut rng,
                |hyp, rng, u| {
                    let p = match hyp {
                        Hypothesis::H0 => &p_f,
                        Hypothesis::H1 => &p_d,
                    };
                    for (k, slot) in u.iter_mut().enumerate() {
                        *slot = rng.random::<f64>() < p[k];
                    }
                },
            )
            .unwrap();
            let g = ch.transmit_gains();
            let mean_h1: f64 = (0..3).map(|k| a[k] * g[k] * p_d[k]).sum();
            let mean_h0: f64 = (0..3).map(|k| a[k] * g[k] * p_f[k]).sum();
            let var_h1 = (&form.k_t * &a).dot(&a) + form.c;
            assert!(
                (est.mean_h1 - mean_h1).abs() < 3.0 * est.se_mean_h1,
                "{channel_type:?} mean_h1 {} vs {}",
                est.mean_h1,
                mean_h1
            );
            assert!(
                (est.mean_h0 - mean_h0).abs() < 3.0 * est.se_mean_h0,
                "{channel_type:?} mean_h0"
            );
            assert!(
                (est.var_h1 - var_h1).abs() < 3.0 * est.se_var_h1,
                "{channel_type:?} var_h1 {} vs {}",
                est.var_h1,
                var_h1
            );
        }
    }

    proptest! {
        /// Scaling an allocation up never decreases the deflection: the
        /// numerator scales by lambda^2 while only part of the denominator
        /// does.
        #[test]
        fn scaling_up_never_hurts(
            b in prop::collection::vec(0.0f64..2.0, 3),
            a in prop::collection::vec(0.0f64..2.0, 3),
            lambda in 1.0f64..10.0,
        ) {
            let b = DVector::from_vec(b);
            let a = DVector::from_vec(a);
            // Simple PSD quadratic term: diagonal.
            let k = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.1, 0.5]));
            let form = MdcForm::new(b, k, 0.7, ChannelType::Pac).unwrap();
            let before = form.value(&a);
            let after = form.value(&(lambda * a));
            prop_assert!(after >= before - 1e-12);
        }

        /// The MAC form never fuses with more noise than the PAC form.
        #[test]
        fn mac_dominates_pac_pointwise(
            seed in 0u64..1_000,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let m = 4;
            let p_d = DVector::from_fn(m, |_, _| 0.2 + 0.7 * rng.random::<f64>());
            let stats = crate::model::LocalStats {
                sigma_s_sq: DVector::zeros(m),
                tau: DVector::zeros(m),
                p_d: p_d.clone(),
                p_f: DVector::from_element(m, 0.1),
                pbar_d: crate::model::independent_joint_matrix(&p_d),
            };
            let theta = DVector::from_fn(m, |_, _| 0.1 + rng.random::<f64>());
            let ch = ChannelRealization::unit_gain(theta).unwrap();
            let a = DVector::from_fn(m, |_, _| rng.random::<f64>() * 3.0);
            let pac = build_mdc_form(&stats, &ch, ChannelType::Pac, 0.8).unwrap();
            let mac = build_mdc_form(&stats, &ch, ChannelType::Mac, 0.8).unwrap();
            prop_assert!(mac.value(&a) >= pac.value(&a) - 1e-12);
        }
    }
}
