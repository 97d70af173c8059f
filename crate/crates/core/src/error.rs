use thiserror::Error;

/// Errors raised by the model, equilibrium and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("state left validity region: {0}")]
    Domain(String),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("invalid mode for this operation: {0}")]
    InvalidMode(String),
    #[error("no stable equilibrium for mode {mode} at P_e = {p_e} W")]
    NoSep { mode: u8, p_e: f64 },
    #[error("expected SEP is ambiguous at P_e = {p_e} W: candidate modes {candidates:?}")]
    AmbiguousEsep { p_e: f64, candidates: Vec<u8> },
    #[error("expected SEP does not exist at P_e = {p_e} W")]
    NoEsep { p_e: f64 },
    #[error("no saddle equilibrium available: {0}")]
    NoSaddle(String),
    #[error("bracket does not straddle the stability transition: {0}")]
    InvalidBracket(String),
    #[error("response does not converge: {0}")]
    NotConverged(String),
    #[error("unknown case id `{0}`")]
    UnknownCase(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
