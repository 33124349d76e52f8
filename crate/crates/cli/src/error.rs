use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config error at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("config error: kind `{0}` draws random instances and needs a `seed` (or --seed)")]
    MissingSeed(&'static str),
    #[error("config error: kind `{0}` needs a `[{0}]` block")]
    MissingBlock(&'static str),
    #[error("runtime error: {0}")]
    Runtime(#[from] fatou_core::Error),
}

impl CliError {
    pub fn invalid(path: &str, message: &str) -> Self {
        CliError::Invalid { path: path.to_string(), message: message.to_string() }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 for anything wrong with the config, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid { .. } | CliError::MissingSeed(_) | CliError::MissingBlock(_) => 2,
            CliError::Io { .. } | CliError::Runtime(_) => 3,
        }
    }
}
