//! Error taxonomy shared by every engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input, schema violations, dangling references, bad units.
    #[error("data error: {0}")]
    Data(String),

    /// Outage removed every non-slack bus from the network.
    #[error("degenerate topology: {0}")]
    DegenerateTopology(String),

    /// Newton iteration failed to reach the mismatch tolerance.
    #[error("power flow diverged after {iterations} iterations (last mismatch {last_mismatch:.3e} pu)")]
    Diverged { iterations: usize, last_mismatch: f64 },

    /// Jacobian or KKT system factorization broke down.
    #[error("singular system in iteration {iteration}")]
    SingularSystem { iteration: usize },

    /// The redispatch problem admits no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Optimizer stopped without a verified optimum for numerical reasons.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for errors caused by the input artifacts rather than the solvers.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}
