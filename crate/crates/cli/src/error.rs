use std::path::PathBuf;

use cnr::CnrError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input files or configuration.
    #[error("{0}")]
    Schema(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] CnrError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn schema(msg: impl Into<String>) -> Self {
        CliError::Schema(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2: schema or input error, 3: numerical failure, 4: degenerate data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Io { .. } => 2,
            CliError::Model(e) => match e {
                CnrError::InvalidParameter(_) | CnrError::InvalidCoordinate { .. } | CnrError::DimensionMismatch { .. } => 2,
                CnrError::DegenerateInput(_)
                | CnrError::RankDeficient { .. }
                | CnrError::DuplicateKnots { .. }
                | CnrError::DuplicateLocation(_)
                | CnrError::Empty(_) => 4,
                CnrError::NotPositiveDefinite { .. }
                | CnrError::NotSymmetric(_)
                | CnrError::BesselOverflow { .. }
                | CnrError::BesselUnderflow { .. }
                | CnrError::OptimizerFailure(_)
                | CnrError::ReplicateFailure { .. } => 3,
            },
        }
    }
}
