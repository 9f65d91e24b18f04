use thiserror::Error;

/// Errors produced by parsing, model construction, and the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed case: {0}")]
    MalformedCase(String),
    #[error("slack bus violation: {0}")]
    SlackBusViolation(String),
    #[error("degenerate branch: zero reactance on in-service branch {from}-{to}")]
    DegenerateBranch { from: usize, to: usize },
    #[error("unknown bus: branch references bus {0} which is not defined")]
    UnknownBus(usize),
    #[error("islanded network: grid is not connected over in-service branches")]
    IslandedNetwork,
    #[error("degenerate system: a single-bus case has no state variables")]
    DegenerateSystem,
    #[error("invalid correlation strength: rho = {0} is outside [0, 1)")]
    InvalidCorrelationStrength(f64),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("degenerate signal: tr(H \u{03a3}_XX H^T) must be positive")]
    DegenerateSignal,
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("matrix is not symmetric positive semi-definite: {0}")]
    NotPsd(String),
    #[error("second argument must be positive definite")]
    NotPositiveDefinite,
    #[error("invalid alpha: {0} is outside the open interval (0, 0.5)")]
    InvalidAlpha(f64),
    #[error("undefined normalization: reference matrix has zero Frobenius norm")]
    UndefinedNormalization,
    #[error(
        "insufficient Monte Carlo resolution: no Type II errors observed at n_mc = {n_mc}; \
         at least ~{needed} draws are required to resolve the error rate"
    )]
    InsufficientMcResolution { n_mc: usize, needed: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
