//! Error type shared by the library and the CLI.
//!
//! Variants map onto the process exit codes used by the command-line tool:
//! parse errors exit 2, infeasible requests exit 3, iteration failures exit
//! 4, and internal invariant violations exit 5.

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input: numbers, JSON payloads, CLI arguments.
    #[error("parse error: {0}")]
    Parse(String),
    /// The request is well-formed but cannot be satisfied: parameters out of
    /// the supported domain, budgets exceeded, no admissible object exists.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// An iterative solver hit its iteration cap before reaching its target
    /// accuracy.
    #[error("did not converge: {0}")]
    NonConvergence(String),
    /// A broken internal invariant; always a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) => 2,
            Error::Infeasible(_) => 3,
            Error::NonConvergence(_) => 4,
            Error::Internal(_) => 5,
        }
    }
}
