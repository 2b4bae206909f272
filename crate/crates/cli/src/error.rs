use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration file does not match the schema.
    #[error("invalid configuration: {0}")]
    Schema(String),

    #[error(transparent)]
    Core(#[from] abrnet::Error),

    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

impl CliError {
    /// 2 configuration, 3 numeric failure, 4 i/o.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        use abrnet::Error as E;
        match self {
            CliError::Schema(_) => 2,
            CliError::Io(..) => 4,
            CliError::Core(e) => match e {
                E::NonFinite { .. } => 3,
                E::Io { .. } | E::Parse { .. } | E::Version { .. } => 4,
                E::Config { .. } | E::Contract(_) | E::LabelAccess | E::ConfigMismatch(_) => 2,
            },
        }
    }
}
