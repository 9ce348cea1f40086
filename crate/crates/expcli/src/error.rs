use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: omm_core::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("output: {0}")]
    Output(String),
    #[error("{0} acceptance check(s) failed")]
    Acceptance(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Acceptance(_) => 4,
            CliError::Io { .. } | CliError::Output(_) => 1,
        }
    }

    /// Wraps a core error. Rejected inputs count as configuration errors.
    pub fn core(context: impl Into<String>, source: omm_core::Error) -> Self {
        use omm_core::Error as E;
        let context = context.into();
        match source {
            E::InvalidParameter(_) | E::InvalidDimension(_) | E::Domain(_) => CliError::Config(format!("{context}: {source}")),
            source => CliError::Numerical { context, source },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
