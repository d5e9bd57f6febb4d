use thiserror::Error;

/// Failure kinds shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no feasible point: {0}")]
    NoFeasiblePoint(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("step size too large: objective increased for {0} consecutive iterations")]
    StepSizeTooLarge(usize),
    #[error("locality breach: agent {reader} read a message from agent {sender}")]
    LocalityBreach { reader: usize, sender: usize },
    #[error("state corruption: {0}")]
    StateCorruption(String),
    #[error("integration step too large: Lyapunov value rose for {0} consecutive steps")]
    StepTooLarge(usize),
    #[error("infeasible or degenerate problem: {0}")]
    InfeasibleOrDegenerate(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
