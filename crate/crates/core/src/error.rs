//! Error types shared across the crate.

use thiserror::Error;

/// Per-horizon contraction diagnostics kept when certification fails, so the
/// caller can inspect why no gap was found.
#[derive(Debug, Clone)]
pub struct RatioDiagnostics {
    /// (horizon n, worst normalized distance ratio at that horizon)
    pub ratios: Vec<(u32, f64)>,
    /// Fitted per-step decay ratio (>= 1 - tolerance when certification fails).
    pub fitted_gamma: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {state} is outside the kernel's state space: {reason}")]
    DomainError { state: String, reason: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid construction: {0}")]
    Invalid(String),

    #[error("cost matrix is not a metric: {0}")]
    NonMetricCost(String),

    #[error("no spectral gap certified (fitted gamma = {})", diagnostics.fitted_gamma)]
    NoGapCertified { diagnostics: RatioDiagnostics },

    #[error("stationary measure is not unique (rank deficiency beyond normalization)")]
    NonUniqueStationary,

    #[error("asymptotic variance is degenerate (sigma^2 = {sigma2:.3e} below tolerance)")]
    DegenerateVariance { sigma2: f64 },

    #[error("observable is not centered: <psi, mu*> = {mean:.6e} exceeds tolerance {tol:.1e}")]
    UncenteredObservable { mean: f64, tol: f64 },

    #[error("unsupported initial distribution for this state space: {0}")]
    UnsupportedInitial(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("a contraction certificate is required for this operation (pass an override to skip)")]
    MissingCertificate,

    #[error("variance-time sequence is not strictly increasing at index {index}")]
    NonMonotoneVariance { index: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("report version mismatch: report was written by {report_version}, this binary is {binary_version}")]
    VersionMismatch {
        report_version: String,
        binary_version: String,
    },

    #[error("replay mismatch in {field}: recorded {recorded}, regenerated {regenerated}")]
    ReplayMismatch {
        field: String,
        recorded: String,
        regenerated: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
