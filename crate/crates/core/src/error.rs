use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid sphere point: {0}")]
    InvalidPoint(String),
    #[error("singular Moebius matrix (det = {0:e})")]
    SingularMoebius(f64),
    #[error("line bundle degree must be nonzero")]
    ZeroDegree,
    #[error("target metric is not Hermitian positive definite")]
    NotPositiveDefinite,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("quadrature did not converge: estimate {estimate} with error {error:e}")]
    Quadrature { estimate: f64, error: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("no derivative blow-up near the point; run detection again")]
    NoBlowUp,
    #[error("tree error: {0}")]
    Tree(String),
}

pub type Result<T> = std::result::Result<T, Error>;
