use thiserror::Error;

use crate::mesh::MeshId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid flux parameters: p = {p}, kappa = {kappa} (need p > 1, kappa >= 0)")]
    InvalidFlux { p: f64, kappa: f64 },

    #[error("flux Jacobian is unbounded at a zero gradient (kappa = 0, p = {p} < 2)")]
    SingularJacobian { p: f64 },

    #[error("mesh mismatch: expected {expected:?}, found {found:?}")]
    MeshMismatch { expected: MeshId, found: MeshId },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("inverse iteration did not converge after {iterations} iterations")]
    EigenDiverged { iterations: usize },

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("line search found no descent (residual {residual:e})")]
    NoDescent { residual: f64 },

    #[error("{fine} fine steps are not divisible by coarsening ratio {ratio}")]
    Divisibility { fine: usize, ratio: usize },

    #[error("time grid or table shape mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigInvalid { key: String, message: String },

    #[error("i/o: {0}")]
    Io(String),

    #[error("sample {index} failed: {source}")]
    Sample { index: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
