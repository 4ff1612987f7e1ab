use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("no prediction for scene {scene} (expected {})", .path.display())]
    MissingPrediction { scene: String, path: PathBuf },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Core(#[from] gcspn_core::Error),
}

impl CliError {
    /// Stable category printed in the error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::NotFound(_) => "not-found",
            CliError::MissingPrediction { .. } => "unpaired",
            CliError::GradCheck(_) => "gradcheck",
            CliError::Core(gcspn_core::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                "not-found"
            }
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
