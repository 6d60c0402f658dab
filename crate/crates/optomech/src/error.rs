use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("detuning must be negative (red), got {0} rad/s")]
    InvalidDetuning(f64),
    #[error("integration did not converge: estimated error {err:e} > tolerance {tol:e}")]
    NonConvergent { err: f64, tol: f64 },
    #[error("integration step too large: {0}")]
    StepTooLarge(String),
    #[error("no cancellation possible: required |a_sig/a_hom| = {0} exceeds the cosine bound")]
    NoCancellation(f64),
    #[error("input occupies {0:.0}% of the band; quadratic products would alias")]
    AliasWarning(f64),
    #[error("filter diverged at sample {0}")]
    DivergenceDetected(usize),
    #[error("insufficient slices: {got} < {need}")]
    InsufficientSlices { got: usize, need: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("unstable filter: pole magnitude {0}")]
    UnstableFilter(f64),
    #[error("ill-conditioned calibration: {0}")]
    IllConditioned(String),
    #[error("calibration tone at {0} Hz not found")]
    ToneNotFound(f64),
    #[error("mechanical peak not found")]
    PeakNotFound,
    #[error("phase unwrap failed: {0}")]
    UnwrapFailure(String),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("singular Jacobian")]
    SingularJacobian,
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Config/schema problems as opposed to numerical or I/O failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParams(_) | Error::InvalidDetuning(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Format(_))
    }
}
