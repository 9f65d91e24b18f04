//! Covariance construction, SNR bookkeeping, seeded Gaussian sampling,
//! and the sample covariance estimator.
//!
//! Sampling is reproducible across builds: the generator is ChaCha8 seeded
//! through `SeedableRng::seed_from_u64`, standard normals come from the
//! `rand_distr::StandardNormal` ziggurat, and each sample vector is filled
//! coordinate-by-coordinate in index order. Parallel work derives per-task
//! seeds with [`derive_seed`] so results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dc_model::Jacobian;
use crate::error::{Error, Result};

/// Absolute symmetry tolerance for covariance validation.
const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to -PSD_TOL times the spectral norm are accepted and
/// treated as zero where a square root is taken.
const PSD_TOL: f64 = 1e-9;

/// A validated symmetric positive semi-definite matrix.
///
/// Entries are symmetrized exactly as (A + A^T)/2 on construction; slightly
/// negative eigenvalues within tolerance are accepted and clamped to zero
/// only where the matrix square root is formed, so entries are otherwise
/// bit-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::ShapeError(format!(
                "covariance must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::NotPsd(format!(
                        "asymmetry {:.3e} at ({i},{j}) exceeds {SYMMETRY_TOL:.0e}",
                        (matrix[(i, j)] - matrix[(j, i)]).abs()
                    )));
                }
            }
        }
        let sym = 0.5 * (&matrix + matrix.transpose());
        let eigs = sym.clone().symmetric_eigenvalues();
        let spectral = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let min_eig = eigs.iter().fold(f64::INFINITY, |a, &e| a.min(e));
        if min_eig < -PSD_TOL * spectral.max(1.0) {
            return Err(Error::NotPsd(format!(
                "smallest eigenvalue {min_eig:.3e} below tolerance"
            )));
        }
        Ok(Self { entries: sym })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_scalar(value: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, value))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Symmetric square-root factor F with F F^T equal to the matrix, via
    /// eigendecomposition. Negative round-off eigenvalues are clamped to
    /// zero, so singular covariances are sampleable.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let eig = self.entries.clone().symmetric_eigen();
        let mut factor = eig.eigenvectors;
        for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
            let scale = lambda.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(scale);
        }
        factor
    }
}

/// The observation model: measurement matrix, state covariance, and noise
/// variance.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub jacobian: Jacobian,
    pub sigma_sq: f64,
    pub sigma_xx: CovarianceMatrix,
}

impl ObservationModel {
    pub fn new(jacobian: Jacobian, sigma_xx: CovarianceMatrix, sigma_sq: f64) -> Result<Self> {
        if sigma_xx.dim() != jacobian.num_states() {
            return Err(Error::ShapeError(format!(
                "state covariance is {}x{} but the model has {} states",
                sigma_xx.dim(),
                sigma_xx.dim(),
                jacobian.num_states()
            )));
        }
        if !(sigma_sq > 0.0) {
            return Err(Error::ShapeError(format!(
                "noise variance must be positive, got {sigma_sq}"
            )));
        }
        Ok(Self {
            jacobian,
            sigma_sq,
            sigma_xx,
        })
    }

    pub fn num_measurements(&self) -> usize {
        self.jacobian.num_measurements()
    }

    pub fn num_states(&self) -> usize {
        self.jacobian.num_states()
    }

    /// H Sigma_XX H^T, symmetrized exactly.
    pub fn signal_covariance(&self) -> DMatrix<f64> {
        let h = &self.jacobian.matrix;
        let raw = h * self.sigma_xx.entries() * h.transpose();
        0.5 * (&raw + raw.transpose())
    }
}

/// K zero-mean state realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSampleSet {
    pub samples: Vec<DVector<f64>>,
}

impl StateSampleSet {
    pub fn k(&self) -> usize {
        self.samples.len()
    }
}

/// Deterministic seed splitting: task seed = splitmix64(base + index).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Streaming zero-mean Gaussian sampler with a fixed covariance factor.
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    rng: ChaCha8Rng,
    scratch: DVector<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &CovarianceMatrix, seed: u64) -> Self {
        let dim = cov.dim();
        Self {
            factor: cov.sqrt_factor(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            scratch: DVector::zeros(dim),
        }
    }

    pub fn draw(&mut self) -> DVector<f64> {
        let mut out = DVector::zeros(self.factor.nrows());
        self.draw_into(&mut out);
        out
    }

    pub fn draw_into(&mut self, out: &mut DVector<f64>) {
        for z in self.scratch.iter_mut() {
            *z = self.rng.sample(StandardNormal);
        }
        out.gemv(1.0, &self.factor, &self.scratch, 0.0);
    }
}

/// Toeplitz prior with unit diagonal and exponential decay `rho^|i-j|`.
pub fn toeplitz_covariance(n: usize, rho: f64) -> Result<CovarianceMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidCorrelationStrength(rho));
    }
    let entries = DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()));
    CovarianceMatrix::new(entries)
}

/// Covariance of the measurement vector: H Sigma_XX H^T + sigma^2 I, plus
/// the attack covariance when one is present.
pub fn measurement_covariance(
    model: &ObservationModel,
    sigma_aa: Option<&CovarianceMatrix>,
) -> Result<CovarianceMatrix> {
    let m = model.num_measurements();
    let mut cov = model.signal_covariance();
    for i in 0..m {
        cov[(i, i)] += model.sigma_sq;
    }
    if let Some(attack) = sigma_aa {
        if attack.dim() != m {
            return Err(Error::ShapeError(format!(
                "attack covariance is {}x{} but the model has {m} measurements",
                attack.dim(),
                attack.dim()
            )));
        }
        cov += attack.entries();
    }
    CovarianceMatrix::new(cov)
}

/// SNR in decibels: 10 log10(tr(H Sigma_XX H^T) / (M sigma^2)).
pub fn snr_db(model: &ObservationModel) -> f64 {
    let trace = model.signal_covariance().trace();
    let m = model.num_measurements() as f64;
    10.0 * (trace / (m * model.sigma_sq)).log10()
}

/// Invert the SNR definition: the noise variance that places the model at
/// the target SNR.
pub fn noise_variance_for_snr(
    jacobian: &Jacobian,
    sigma_xx: &CovarianceMatrix,
    target_snr_db: f64,
) -> Result<f64> {
    if sigma_xx.dim() != jacobian.num_states() {
        return Err(Error::ShapeError(format!(
            "state covariance is {}x{} but the matrix has {} columns",
            sigma_xx.dim(),
            sigma_xx.dim(),
            jacobian.num_states()
        )));
    }
    let h = &jacobian.matrix;
    let trace = (h * sigma_xx.entries() * h.transpose()).trace();
    if !(trace > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    let m = jacobian.num_measurements() as f64;
    Ok(trace / (m * 10f64.powf(target_snr_db / 10.0)))
}

/// Draw K i.i.d. zero-mean Gaussian state vectors, deterministically from
/// the seed.
pub fn sample_gaussian(cov: &CovarianceMatrix, k: usize, seed: u64) -> StateSampleSet {
    let mut sampler = GaussianSampler::new(cov, seed);
    let samples = (0..k).map(|_| sampler.draw()).collect();
    StateSampleSet { samples }
}

/// Sample covariance without mean subtraction (the prior is zero mean):
/// S = (1/(K-1)) sum_i x_i x_i^T.
pub fn sample_covariance(set: &StateSampleSet) -> Result<CovarianceMatrix> {
    let k = set.k();
    if k < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: k });
    }
    let n = set.samples[0].len();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for x in &set.samples {
        if x.len() != n {
            return Err(Error::ShapeError("inconsistent sample lengths".into()));
        }
        acc.ger(1.0, x, x, 1.0);
    }
    acc /= (k - 1) as f64;
    CovarianceMatrix::new(acc)
}
