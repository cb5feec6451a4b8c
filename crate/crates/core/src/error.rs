use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("class {0} has no members")]
    EmptyClass(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("factorization mismatch: |UU^T - M|_F = {0:e}")]
    FactorizationMismatch(f64),
    #[error("negative spectral code entry at ({row}, {col})")]
    NegativeCode { row: usize, col: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("wrong magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
