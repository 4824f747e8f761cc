use csdp_core::data::DataError;
use csdp_core::numerics::NumericsError;
use csdp_core::simgraph::GraphError;
use csdp_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config, paths or data.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Train(e) if e.is_numeric() => 3,
            CliError::Train(_) => 2,
            CliError::GradCheck(_) => 4,
        }
    }
}

macro_rules! via_train {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Train(e.into())
            }
        })*
    };
}

via_train!(DataError, GraphError, NumericsError, std::io::Error, serde_json::Error);
