use thiserror::Error;

use crate::stats::EstimateReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no boundary-case solution: {0}")]
    NoBoundarySolution(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),

    #[error("node budget of {limit} expansions exceeded after {completed} complete replicates")]
    BudgetExceeded {
        limit: u64,
        completed: usize,
        partial: Option<Box<EstimateReport>>,
    },

    #[error("operation not supported for this family: {0}")]
    UnsupportedFamily(String),

    #[error("transfer matrix needs {states} states, limit is {limit}")]
    StateExplosion { states: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. })
    }
}
