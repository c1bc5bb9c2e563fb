use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("stage {stage} failed: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: distmap::Error,
    },

    #[error("validation failed: {0}")]
    ValidationFailed(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// Process exit code: 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Attaches a pipeline stage to core errors, keeping the stage the core
/// library already recorded when there is one.
pub trait AtStage<T> {
    fn at_stage(self, stage: &'static str) -> Result<T>;
}

impl<T> AtStage<T> for distmap::Result<T> {
    fn at_stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            distmap::Error::Stage { stage, source } => CliError::Pipeline { stage, source: *source },
            source => CliError::Pipeline { stage, source },
        })
    }
}
