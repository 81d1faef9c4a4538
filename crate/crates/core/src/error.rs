use thiserror::Error;

/// Errors produced by the spectral and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {value} outside admissible range [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("no connecting orbit: {0}")]
    NoConnection(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("eigenvalues coalesce near tau = {tau}")]
    BranchPoint { tau: f64 },

    #[error("consistent splitting fails at xi = {xi}, lambda = {re}{im:+}i")]
    Splitting { xi: f64, re: f64, im: f64 },

    #[error("ill-conditioned computation: {0}")]
    Conditioning(String),

    #[error("degenerate root: {0}")]
    DegenerateRoot(String),

    #[error("root branch lost after xi = {last_xi}")]
    BranchLost { last_xi: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("root on contour: {0}")]
    RootOnContour(String),

    #[error("time step violates stability bound: {0}")]
    StepSize(String),

    #[error("front lost: {0}")]
    FrontLost(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
