use thiserror::Error;

use crate::abstraction::AbstractionError;
use crate::discretization::DiscretizationError;
use crate::dynamics::DynamicsError;
use crate::grid::GridError;
use crate::persistence::PersistenceError;
use crate::reach::ReachError;
use crate::scenario::ScenarioError;

/// Broad classes of failure, used to choose process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input documents or files.
    Config,
    /// The scenario admits no certified discretization with the current settings.
    Infeasible,
    /// A guarantee was checked and found violated.
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Scenario(_) | Error::Persistence(_) => ErrorClass::Config,
            Error::Reach(_) | Error::Discretization(_) => ErrorClass::Infeasible,
            Error::Grid(GridError::TooFine { .. }) => ErrorClass::Infeasible,
            Error::Grid(_) | Error::Dynamics(_) | Error::Abstraction(_) => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
