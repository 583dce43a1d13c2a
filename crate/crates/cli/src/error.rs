use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input, bad flags or configuration.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    /// A threshold setting left a regime or the candidate grid empty.
    #[error("{0}")]
    EmptyPartition(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::EmptyPartition(_) => 4,
        }
    }
}

impl From<threshold_factor::Error> for CliError {
    fn from(e: threshold_factor::Error) -> Self {
        use threshold_factor::Error as E;
        let msg = e.to_string();
        match e {
            E::EmptyGrid { .. } | E::EmptyPartition(_) => CliError::EmptyPartition(msg),
            E::NotSymmetric { .. } | E::ZeroOperator | E::Numerical(_) => CliError::Numerical(msg),
            E::Io(_)
            | E::Parse { .. }
            | E::RaggedRow { .. }
            | E::NonFinite { .. }
            | E::ColumnNotFound(_)
            | E::InvalidArgument(_)
            | E::DimensionMismatch { .. }
            | E::NonStationary(_) => CliError::Input(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
