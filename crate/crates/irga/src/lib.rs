//! Posterior approximation for regression models with a high-dimensional
//! nuisance term.
//!
//! The model is `y ~ N(X beta + eta, sigma2 I)` where `beta` is the
//! low-dimensional parameter of interest and `eta` an n-dimensional nuisance.
//! The method rotates the data with the orthogonal factor of a QR
//! decomposition of `X`, which splits the likelihood into a p-dimensional
//! part containing `beta` and an (n-p)-dimensional part containing only the
//! nuisance. The nuisance part is summarized by a moment-matched Gaussian and
//! folded back into the small model, which is then solved exactly.
//!
//! Modules:
//! - [`rotation`]: the orthonormal split and rotated data quantities.
//! - [`priors`]: prior families and the scalar spike-and-slab denoiser.
//! - [`vamp`]: vector approximate message passing for the nuisance submodel.
//! - [`exact_posterior`]: exact enumeration over support patterns.
//! - [`fit`]: the end-to-end algorithm and the variable-selection driver.
//! - [`gp_nuisance`]: Gaussian-process nuisance via a Gauss-Newton Laplace fit.
//! - [`diagnostics`]: divergence estimators and accuracy-bound checks.
//! - [`mcmc`]: reference samplers used for validation.
//! - [`synthetic`]: seeded scenario generators.
//! - [`io`]: CSV ingestion and the structured output document.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod diagnostics;
pub mod exact_posterior;
pub mod fit;
pub mod gp_nuisance;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod priors;
pub mod rotation;
pub mod synthetic;
pub mod vamp;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(
        "design matrix is rank deficient: smallest singular value {smallest:.3e} \
         below tolerance {tol:.3e}"
    )]
    RankDeficient { smallest: f64, tol: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid variance: {0}")]
    InvalidVariance(String),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("too many variables for exact enumeration: {n} > {max}")]
    TooManyVariables { n: usize, max: usize },
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("kernel matrix not positive definite after jitter")]
    SingularKernel,
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("non-finite log-density ratio in divergence estimate")]
    UnboundedRatio,
    #[error("trace too short for batch means: length {len}, batch length {batch}")]
    TraceTooShort { len: usize, batch: usize },
    #[error("estimator incompatible with data: {0}")]
    IncompatibleEstimator(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 parse, 3 config, 4 numerical,
    /// 5 resource limits.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Io(_) => 2,
            Error::Config(_) | Error::IncompatibleEstimator(_) | Error::DimensionMismatch(_) => 3,
            Error::RankDeficient { .. }
            | Error::InvalidVariance(_)
            | Error::NumericalDivergence(_)
            | Error::SingularCovariance(_)
            | Error::SingularKernel
            | Error::DegenerateCovariance(_)
            | Error::UnboundedRatio => 4,
            Error::TooManyVariables { .. } | Error::TraceTooShort { .. } => 5,
        }
    }
}
