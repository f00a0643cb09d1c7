use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("point ({delta}, {omega}) lies outside the grid")]
    OutOfBounds { delta: f64, omega: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no equilibrium: net power {net} exceeds transfer limit {limit}")]
    NoEquilibrium { net: f64, limit: f64 },

    #[error("CFL violation: dt {dt} exceeds stable bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("numerical blow-up at step {step} (backward time {time} s)")]
    Blowup { step: usize, time: f64 },

    #[error("unsupported dynamics: {0}")]
    Unsupported(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("timed out waiting for {0}")]
    Timeout(String),

    #[error("peer disconnected: {0}")]
    Disconnected(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
