use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("wrong region kind: operation requires a {expected}")]
    WrongRegionKind { expected: &'static str },

    #[error("unsupported dimension {dim} for {op}")]
    UnsupportedDimension { dim: usize, op: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate variance in partial autocorrelation at lag {lag}")]
    DegenerateVariance { lag: usize },

    #[error("training diverged at epoch {epoch}: risk {risk:e} exceeds 1e6 x initial risk")]
    Divergence { epoch: usize, risk: f64 },

    #[error("rank-deficient design matrix (enable the ridge fallback or supply more data)")]
    RankDeficient,

    #[error("noise covariance is not symmetric positive semidefinite")]
    NotPsd,

    #[error("unstable system: spectral radius {rho} >= 1 (set allow_unstable to override)")]
    UnstableSystem { rho: f64 },

    #[error("state overflow at step {step} (non-finite value under the current dynamics)")]
    Overflow { step: usize },

    #[error("mixing proxy undefined: spectral radius {rho} >= 1")]
    ProxyUndefined { rho: f64 },

    #[error("block arithmetic: 2*a*m + l = {lhs} but n = {n}")]
    BlockArithmetic { lhs: usize, n: usize },

    #[error("block gap: block length a = {a} must exceed lag offset l = {l}")]
    BlockGap { a: usize, l: usize },

    #[error("infeasible confidence: delta' = {delta_prime:e} <= 0 (2*m*beta(a-l) exceeds delta)")]
    InfeasibleConfidence { delta_prime: f64 },

    #[error("degenerate denominator: sum |z*(y_t)| = {sum:e} is below 1e-9")]
    DegenerateDenominator { sum: f64 },

    #[error("trial {index} failed: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
