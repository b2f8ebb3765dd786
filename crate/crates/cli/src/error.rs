use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Design(#[from] relaythp::Error),

    #[error("{0}")]
    Validation(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(String),
}

impl CliError {
    pub fn config(e: impl std::fmt::Display) -> CliError {
        CliError::Config(e.to_string())
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Csv(_) | CliError::Io { .. } => 1,
            CliError::Design(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}
