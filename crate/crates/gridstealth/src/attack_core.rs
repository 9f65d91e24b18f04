//! Optimal stealthy attack construction.
//!
//! The attacker injects a zero-mean Gaussian vector with covariance
//! Sigma_AA and scores it by the utility I(X; Y_A) + D(P_{Y_A} || P_Y),
//! which it minimizes. Over the PSD cone the objective is convex and the
//! unique minimizer is Sigma_AA = H Sigma_XX H^T. With only K training
//! realizations of the state available, the attack is built from the
//! sample covariance instead and its conditional utility dominates the
//! exact-statistics optimum realization by realization.
//!
//! All information quantities are in nats.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::stat_models::{
    self, derive_seed, measurement_covariance, CovarianceMatrix, ObservationModel,
};

/// Where an attack covariance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Closed-form optimum H Sigma_XX H^T.
    Optimal,
    /// H S_XX H^T for a sample covariance estimated from training data.
    FromSamples {
        k: Option<usize>,
        seed: Option<u64>,
    },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackCovariance {
    pub sigma_aa: CovarianceMatrix,
    pub provenance: Provenance,
}

impl AttackCovariance {
    pub fn custom(sigma_aa: CovarianceMatrix) -> Self {
        Self {
            sigma_aa,
            provenance: Provenance::Custom,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::custom(CovarianceMatrix::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.sigma_aa.dim()
    }
}

/// The utility split into its two objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityBreakdown {
    /// I(X; Y_A): information the operator still gets about the state.
    pub mutual_information: f64,
    /// D(P_{Y_A} || P_Y): detectability of the induced distribution shift.
    pub kl_divergence: f64,
    /// Sum of the two, equal to D(P_{X Y_A} || P_X P_Y).
    pub total: f64,
}

fn log_det_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn check_same_dim(a: &CovarianceMatrix, b: &CovarianceMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeError(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// KL divergence between N(0, sigma0) and N(0, sigma1) in nats:
/// (log(|sigma1|/|sigma0|) - M + tr(sigma1^{-1} sigma0)) / 2.
///
/// The trace term is solve-based; no inverse of sigma1 is materialized.
/// A singular sigma0 yields +infinity (the first distribution is not
/// absolutely continuous with respect to the second).
pub fn kl_gaussian(sigma0: &CovarianceMatrix, sigma1: &CovarianceMatrix) -> Result<f64> {
    check_same_dim(sigma0, sigma1)?;
    let m = sigma0.dim();
    let chol1 = Cholesky::new(sigma1.entries().clone()).ok_or(Error::NotPositiveDefinite)?;
    let log_det1 = log_det_cholesky(&chol1);
    let trace = chol1.solve(sigma0.entries()).trace();
    let log_det0 = match Cholesky::new(sigma0.entries().clone()) {
        Some(chol0) => log_det_cholesky(&chol0),
        None => return Ok(f64::INFINITY),
    };
    Ok((0.5 * (log_det1 - log_det0 - m as f64 + trace)).max(0.0))
}

/// The closed-form optimal attack covariance H Sigma_XX H^T.
pub fn optimal_attack(model: &ObservationModel) -> AttackCovariance {
    let sigma_aa = CovarianceMatrix::new(model.signal_covariance())
        .expect("H Sigma_XX H^T is PSD by construction");
    AttackCovariance {
        sigma_aa,
        provenance: Provenance::Optimal,
    }
}

fn attacked_covariance(
    model: &ObservationModel,
    attack: &AttackCovariance,
) -> Result<CovarianceMatrix> {
    measurement_covariance(model, Some(&attack.sigma_aa))
}

/// Sigma_AA + sigma^2 I, the conditional covariance of Y_A given X. Always
/// positive definite.
fn noise_plus_attack(model: &ObservationModel, attack: &AttackCovariance) -> DMatrix<f64> {
    let mut out = attack.sigma_aa.entries().clone();
    for i in 0..out.nrows() {
        out[(i, i)] += model.sigma_sq;
    }
    out
}

/// I(X; Y_A) in nats: (logdet Sigma_{Y_A Y_A} - logdet(Sigma_AA + sigma^2 I)) / 2.
pub fn mutual_information(model: &ObservationModel, attack: &AttackCovariance) -> Result<f64> {
    if attack.dim() != model.num_measurements() {
        return Err(Error::ShapeError(format!(
            "attack covariance is {}x{} but the model has {} measurements",
            attack.dim(),
            attack.dim(),
            model.num_measurements()
        )));
    }
    let attacked = attacked_covariance(model, attack)?;
    let chol_attacked = Cholesky::new(attacked.entries().clone())
        .ok_or(Error::NotPositiveDefinite)?;
    let chol_cond = Cholesky::new(noise_plus_attack(model, attack))
        .expect("Sigma_AA + sigma^2 I is positive definite");
    Ok((0.5 * (log_det_cholesky(&chol_attacked) - log_det_cholesky(&chol_cond))).max(0.0))
}

/// Evaluate the attacker's utility: mutual information, KL detectability
/// term, and their sum.
pub fn stealth_utility(
    model: &ObservationModel,
    attack: &AttackCovariance,
) -> Result<UtilityBreakdown> {
    let mi = mutual_information(model, attack)?;
    let clean = measurement_covariance(model, None)?;
    let attacked = attacked_covariance(model, attack)?;
    let kl = kl_gaussian(&attacked, &clean)?;
    Ok(UtilityBreakdown {
        mutual_information: mi,
        kl_divergence: kl,
        total: mi + kl,
    })
}

/// The reduced objective tr(Sigma_YY^{-1} Sigma_AA) - log|Sigma_AA + sigma^2 I|,
/// which differs from twice the utility only by the constant logdet Sigma_YY.
pub fn reduced_objective(model: &ObservationModel, attack: &AttackCovariance) -> Result<f64> {
    if attack.dim() != model.num_measurements() {
        return Err(Error::ShapeError("attack dimension mismatch".into()));
    }
    let clean = measurement_covariance(model, None)?;
    let chol_clean =
        Cholesky::new(clean.entries().clone()).ok_or(Error::NotPositiveDefinite)?;
    let trace = chol_clean.solve(attack.sigma_aa.entries()).trace();
    let chol_cond = Cholesky::new(noise_plus_attack(model, attack))
        .expect("Sigma_AA + sigma^2 I is positive definite");
    Ok(trace - log_det_cholesky(&chol_cond))
}

/// Frobenius norm of Sigma_YY^{-1} - (Sigma_AA + sigma^2 I)^{-1}. Zero
/// exactly at the optimal attack, strictly positive elsewhere.
pub fn stationarity_residual(model: &ObservationModel, attack: &AttackCovariance) -> Result<f64> {
    let clean = measurement_covariance(model, None)?;
    let inv_clean = Cholesky::new(clean.entries().clone())
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let inv_cond = Cholesky::new(noise_plus_attack(model, attack))
        .expect("Sigma_AA + sigma^2 I is positive definite")
        .inverse();
    Ok((inv_clean - inv_cond).norm())
}

/// Attack built from estimated state statistics: H S_XX H^T.
pub fn attack_from_samples(
    model: &ObservationModel,
    s_xx: &CovarianceMatrix,
) -> Result<AttackCovariance> {
    if s_xx.dim() != model.num_states() {
        return Err(Error::ShapeError(format!(
            "sample covariance is {}x{} but the model has {} states",
            s_xx.dim(),
            s_xx.dim(),
            model.num_states()
        )));
    }
    let h = &model.jacobian.matrix;
    let raw = h * s_xx.entries() * h.transpose();
    let sigma_aa = CovarianceMatrix::new(0.5 * (&raw + raw.transpose()))
        .expect("H S H^T is PSD by construction");
    Ok(AttackCovariance {
        sigma_aa,
        provenance: Provenance::FromSamples {
            k: None,
            seed: None,
        },
    })
}

/// Result of the Monte Carlo estimate of the conditional divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct McDivergence {
    pub mean: f64,
    pub per_trial: Vec<f64>,
}

/// Average utility of sample-covariance attacks over independent training
/// sets of size k. Per-trial seeds are derived from the base seed and the
/// trial index, so the output is trial-order deterministic.
pub fn conditional_divergence_mc(
    model: &ObservationModel,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<McDivergence> {
    let n = model.num_states();
    if k < n.max(2) {
        return Err(Error::InsufficientSamples {
            needed: n.max(2),
            got: k,
        });
    }
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut per_trial = Vec::with_capacity(trials);
    for trial in 0..trials {
        let trial_seed = derive_seed(seed, trial as u64);
        let set = stat_models::sample_gaussian(&model.sigma_xx, k, trial_seed);
        let s_xx = stat_models::sample_covariance(&set)?;
        let mut attack = attack_from_samples(model, &s_xx)?;
        attack.provenance = Provenance::FromSamples {
            k: Some(k),
            seed: Some(trial_seed),
        };
        per_trial.push(stealth_utility(model, &attack)?.total);
    }
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    Ok(McDivergence { mean, per_trial })
}

/// ||reference - estimate||_F / ||reference||_F.
pub fn normalized_frobenius_gap(
    reference: &AttackCovariance,
    estimate: &AttackCovariance,
) -> Result<f64> {
    check_same_dim(&reference.sigma_aa, &estimate.sigma_aa)?;
    let norm = reference.sigma_aa.entries().norm();
    if norm == 0.0 {
        return Err(Error::UndefinedNormalization);
    }
    Ok((reference.sigma_aa.entries() - estimate.sigma_aa.entries()).norm() / norm)
}
