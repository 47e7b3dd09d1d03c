use thiserror::Error;

/// Errors reported by the command-line front end.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("UnknownKey: {0}")]
    UnknownKey(String),
    #[error("MissingRequired: {0}")]
    MissingRequired(String),
    #[error("TypeError: {0}")]
    TypeError(String),
    #[error("Usage: {0}")]
    Usage(String),
    #[error("Io: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] spfactor::Error),
}

impl CliError {
    /// 2 for configuration and usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey(_) | CliError::MissingRequired(_) | CliError::TypeError(_) | CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Model(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::UnknownKey(_) => "UnknownKey",
            CliError::MissingRequired(_) => "MissingRequired",
            CliError::TypeError(_) => "TypeError",
            CliError::Usage(_) => "Usage",
            CliError::Io(_) => "Io",
            CliError::Model(e) => e.kind(),
        }
    }

    /// `error: Kind: message` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: {msg}")
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
