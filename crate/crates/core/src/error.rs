use thiserror::Error;

/// Errors produced by the channel, CRB and optimization routines.
#[derive(Debug, Error)]
pub enum IsacError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    /// The echo-power requirement cannot be met even with all power on the
    /// sensing beam.
    #[error("sensing requirement infeasible: need {required:.6e}, at most {achievable:.6e} reachable")]
    Infeasible { required: f64, achievable: f64 },

    #[error("covariance is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("power budget exceeded: {used:.6e} W > {budget:.6e} W")]
    BudgetExceeded { used: f64, budget: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, IsacError>;
