use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure taxonomy of the
/// operations: configuration problems, violated preconditions, domain
/// errors at singular points, and the kernel-validation gate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("kernel validation rejected: theta = {theta} >= n/2 = {half_n} in dimension {dim}; no fully supported majorizing kernel can have this exponent")]
    TheoremGate { theta: f64, half_n: f64, dim: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("not a majorizing kernel for theta = {theta}: self-convolution diverges at |xi| = {radius}")]
    NotMajorizing { theta: f64, radius: f64 },

    #[error("lattice geometry mismatch: {0}")]
    Geometry(String),

    #[error("norm blow-up beyond overflow guard at iterate {iterate}: {norm}")]
    BlowUp { iterate: usize, norm: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
