use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant failed: {0}")]
    Invariant(String),
    #[error("{context}: {source}")]
    Engine {
        context: &'static str,
        #[source]
        source: podgrad::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Artifacts(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            // numerical breakdown in the engine counts as an invariant failure
            CliError::Invariant(_) | CliError::Engine { .. } => 3,
            CliError::Io { .. } | CliError::Artifacts(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn engine(context: &'static str) -> impl FnOnce(podgrad::Error) -> Self {
        move |source| match source {
            podgrad::Error::InvalidParameter(msg) => CliError::Config(format!("{context}: {msg}")),
            source => CliError::Engine { context, source },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
