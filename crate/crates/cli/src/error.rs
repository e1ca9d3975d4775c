//! Error type and process exit codes shared by every subcommand.

use beamopt::search::SearchError;

/// Exit codes: 0 success, 2 config error, 3 environment failure,
/// 4 cap or budget violation, 1 anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("environment failure: {0}")]
    Environment(String),
    #[error("cap or budget violation: {0}")]
    Budget(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Environment(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match &e {
            SearchError::BudgetExceedsSpace { .. } => CliError::Budget(e.to_string()),
            SearchError::Space(beamopt::space::SpaceError::SpaceTooLarge { .. }) => {
                CliError::Budget(e.to_string())
            }
            SearchError::Environment { .. } | SearchError::ValueOutOfRange { .. } => {
                CliError::Environment(e.to_string())
            }
            SearchError::InvalidParams(_) => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<beamopt::locenv::LocEnvError> for CliError {
    fn from(e: beamopt::locenv::LocEnvError) -> Self {
        match &e {
            beamopt::locenv::LocEnvError::InvalidParams(_)
            | beamopt::locenv::LocEnvError::InvalidIds(_) => CliError::Config(e.to_string()),
            _ => CliError::Environment(e.to_string()),
        }
    }
}

impl From<beamopt::space::SpaceError> for CliError {
    fn from(e: beamopt::space::SpaceError) -> Self {
        match &e {
            beamopt::space::SpaceError::SpaceTooLarge { .. } => CliError::Budget(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
