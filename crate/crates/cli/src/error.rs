use specsplat_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.class(),
        }
    }

    /// 2 for usage and configuration problems, 4 for numeric failures,
    /// 3 for everything that comes from the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(CoreError::Config(_)) => 2,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(_) => 3,
        }
    }

    /// `error=<class> message=<text>` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error={} message={}", self.class(), msg)
    }
}
