//! Likelihood-ratio attack detection and Monte Carlo error-rate estimation.
//!
//! The operator decides "attack" when the log likelihood ratio of the
//! attacked density over the clean density meets the threshold. Alpha is
//! the false alarm rate on clean data, beta the missed detection rate on
//! attacked data. The threshold is calibrated as an empirical quantile of
//! the statistic under the clean distribution; the quadratic form has no
//! convenient closed-form distribution at the sizes involved.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::attack_core::AttackCovariance;
use crate::error::{Error, Result};
use crate::stat_models::{
    derive_seed, measurement_covariance, CovarianceMatrix, GaussianSampler, ObservationModel,
};

/// Likelihood-ratio detector between the clean and attacked measurement
/// distributions, with cached precision matrices. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct LrtDetector {
    sigma_clean: CovarianceMatrix,
    sigma_attacked: CovarianceMatrix,
    precision_clean: DMatrix<f64>,
    precision_attacked: DMatrix<f64>,
    /// log(|Sigma_YY| / |Sigma_{Y_A Y_A}|)
    log_det_ratio: f64,
    pub log_tau: f64,
}

/// Estimated error rates of a calibrated detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub n_mc: usize,
    /// -ln(beta_hat) / n for the block size used (n = 1 here); infinite
    /// when no Type II errors were observed.
    pub exponent_hat: f64,
}

fn log_det(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

impl LrtDetector {
    pub fn new(
        sigma_clean: CovarianceMatrix,
        sigma_attacked: CovarianceMatrix,
        log_tau: f64,
    ) -> Result<Self> {
        if sigma_clean.dim() != sigma_attacked.dim() {
            return Err(Error::ShapeError(format!(
                "hypothesis covariances disagree: {} vs {}",
                sigma_clean.dim(),
                sigma_attacked.dim()
            )));
        }
        let chol_clean =
            Cholesky::new(sigma_clean.entries().clone()).ok_or(Error::NotPositiveDefinite)?;
        let chol_attacked =
            Cholesky::new(sigma_attacked.entries().clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det_ratio = log_det(&chol_clean) - log_det(&chol_attacked);
        Ok(Self {
            sigma_clean,
            sigma_attacked,
            precision_clean: chol_clean.inverse(),
            precision_attacked: chol_attacked.inverse(),
            log_det_ratio,
            log_tau,
        })
    }

    /// Build a detector for the model under the given attack and calibrate
    /// its threshold at the target false alarm rate.
    pub fn calibrated(
        model: &ObservationModel,
        attack: &AttackCovariance,
        alpha_target: f64,
        n_mc: usize,
        seed: u64,
    ) -> Result<Self> {
        let clean = measurement_covariance(model, None)?;
        let attacked = measurement_covariance(model, Some(&attack.sigma_aa))?;
        let mut detector = Self::new(clean, attacked, 0.0)?;
        detector.log_tau = calibrate_threshold(&detector, alpha_target, n_mc, seed)?;
        Ok(detector)
    }

    pub fn dim(&self) -> usize {
        self.sigma_clean.dim()
    }

    pub fn sigma_clean(&self) -> &CovarianceMatrix {
        &self.sigma_clean
    }

    pub fn sigma_attacked(&self) -> &CovarianceMatrix {
        &self.sigma_attacked
    }

    /// log L(y) = (y' Sigma_YY^{-1} y - y' Sigma_{Y_A Y_A}^{-1} y
    ///             + log(|Sigma_YY| / |Sigma_{Y_A Y_A}|)) / 2
    pub fn log_lrt(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::ShapeError(format!(
                "measurement vector has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        let q_clean = (&self.precision_clean * y).dot(y);
        let q_attacked = (&self.precision_attacked * y).dot(y);
        Ok(0.5 * (q_clean - q_attacked + self.log_det_ratio))
    }

    /// Statistics for a batch of clean-hypothesis draws, then a batch of
    /// attacked-hypothesis draws, with seeds derived per distribution.
    fn sample_statistics(&self, n: usize, seed: u64, attacked: bool) -> Vec<f64> {
        let cov = if attacked {
            &self.sigma_attacked
        } else {
            &self.sigma_clean
        };
        let mut sampler = GaussianSampler::new(cov, seed);
        let mut y = DVector::zeros(self.dim());
        (0..n)
            .map(|_| {
                sampler.draw_into(&mut y);
                self.log_lrt(&y).expect("dimension fixed by construction")
            })
            .collect()
    }
}

/// Empirical (1 - alpha)-quantile of the statistic under the clean
/// distribution. Deciding "attack" at or above the returned threshold
/// yields a false alarm rate close to the target.
pub fn calibrate_threshold(
    detector: &LrtDetector,
    alpha_target: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha_target > 0.0 && alpha_target < 0.5) {
        return Err(Error::InvalidAlpha(alpha_target));
    }
    if n_mc < 1000 {
        return Err(Error::Config(format!(
            "threshold calibration needs n_mc >= 1000, got {n_mc}"
        )));
    }
    let mut stats = detector.sample_statistics(n_mc, seed, false);
    stats.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    // Leave round(alpha * n_mc) statistics at or above the threshold.
    let above = ((alpha_target * n_mc as f64).round() as usize).clamp(1, n_mc);
    Ok(stats[n_mc - above])
}

/// Estimate alpha and beta for a calibrated detector by fresh Monte Carlo
/// draws from both hypotheses.
pub fn empirical_error_rates(detector: &LrtDetector, n_mc: usize, seed: u64) -> DetectionReport {
    let clean = detector.sample_statistics(n_mc, derive_seed(seed, 0), false);
    let attacked = detector.sample_statistics(n_mc, derive_seed(seed, 1), true);
    let alpha_hat =
        clean.iter().filter(|&&s| s >= detector.log_tau).count() as f64 / n_mc as f64;
    let beta_hat =
        attacked.iter().filter(|&&s| s < detector.log_tau).count() as f64 / n_mc as f64;
    let exponent_hat = if beta_hat > 0.0 {
        -beta_hat.ln()
    } else {
        f64::INFINITY
    };
    DetectionReport {
        alpha_hat,
        beta_hat,
        n_mc,
        exponent_hat,
    }
}

/// Error rates for the block test: the statistic is the sum of per-sample
/// log likelihood ratios over n i.i.d. measurement vectors, with the block
/// threshold calibrated at the target alpha.
pub fn block_error_rates(
    detector: &LrtDetector,
    n_per_decision: usize,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<DetectionReport> {
    if n_per_decision == 0 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let block_stats = |attacked: bool, stream: u64| -> Vec<f64> {
        let cov = if attacked {
            detector.sigma_attacked()
        } else {
            detector.sigma_clean()
        };
        let mut sampler = GaussianSampler::new(cov, derive_seed(seed, stream));
        let mut y = DVector::zeros(detector.dim());
        (0..n_mc)
            .map(|_| {
                let mut sum = 0.0;
                for _ in 0..n_per_decision {
                    sampler.draw_into(&mut y);
                    sum += detector.log_lrt(&y).expect("dimension fixed");
                }
                sum
            })
            .collect()
    };

    let mut calib = block_stats(false, 0);
    calib.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let above = ((alpha * n_mc as f64).round() as usize).clamp(1, n_mc);
    let log_tau = calib[n_mc - above];

    let clean = block_stats(false, 1);
    let attacked = block_stats(true, 2);
    let alpha_hat = clean.iter().filter(|&&s| s >= log_tau).count() as f64 / n_mc as f64;
    let beta_hat = attacked.iter().filter(|&&s| s < log_tau).count() as f64 / n_mc as f64;
    let exponent_hat = if beta_hat > 0.0 {
        -beta_hat.ln() / n_per_decision as f64
    } else {
        f64::INFINITY
    };
    Ok(DetectionReport {
        alpha_hat,
        beta_hat,
        n_mc,
        exponent_hat,
    })
}

/// Empirical decay exponent of the Type II error over blocks of
/// `n_per_decision` i.i.d. measurement vectors: -ln(beta_hat) / n. As the
/// block size grows this approaches the KL divergence between the attacked
/// and clean measurement distributions.
pub fn stein_exponent(
    model: &ObservationModel,
    attack: &AttackCovariance,
    n_per_decision: usize,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let clean = measurement_covariance(model, None)?;
    let attacked = measurement_covariance(model, Some(&attack.sigma_aa))?;
    let detector = LrtDetector::new(clean, attacked, 0.0)?;
    let report = block_error_rates(&detector, n_per_decision, alpha, n_mc, seed)?;
    if report.beta_hat == 0.0 {
        // Suggest enough draws to expect ~10 misses at the asymptotic rate.
        let d = crate::attack_core::kl_gaussian(detector.sigma_attacked(), detector.sigma_clean())?;
        let needed = (10.0 * (n_per_decision as f64 * d).exp()).min(1e18) as usize;
        return Err(Error::InsufficientMcResolution {
            n_mc,
            needed: needed.max(n_mc * 10),
        });
    }
    Ok(report.exponent_hat)
}
