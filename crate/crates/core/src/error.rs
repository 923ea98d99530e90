use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used for CLI exit codes and machine-readable output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Config,
    Dependency,
    Oracle,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Input => "input",
            ErrorKind::Config => "config",
            ErrorKind::Dependency => "dependency",
            ErrorKind::Oracle => "oracle",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Io => "io",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("duplicate study id \"{id}\" at {location}")]
    DuplicateId { id: String, location: String },

    #[error("missing required column `{column}`")]
    MissingColumn { column: String },

    #[error("{location}: non-positive variance {value} for study \"{id}\"")]
    NonPositiveVariance {
        id: String,
        location: String,
        value: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact `{}`: run the `{stage}` stage first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("could not parse oracle reply after {attempts} attempt(s): {message}; raw reply: {raw}")]
    JudgmentParse {
        attempts: u32,
        message: String,
        raw: String,
    },

    #[error("oracle transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): {message}")]
    Divergence {
        epoch: usize,
        learning_rate: f64,
        message: String,
    },

    #[error("rank-deficient design matrix: column(s) {columns:?} are collinear with earlier columns")]
    RankDeficient { columns: Vec<String> },

    #[error("missing moderator values for studies {studies:?}")]
    MissingModerator { studies: Vec<String> },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::DuplicateId { .. }
            | Error::MissingColumn { .. }
            | Error::NonPositiveVariance { .. }
            | Error::InvalidInput(_)
            | Error::RankDeficient { .. }
            | Error::MissingModerator { .. } => ErrorKind::Input,
            Error::Config(_) => ErrorKind::Config,
            Error::MissingArtifact { .. } => ErrorKind::Dependency,
            Error::JudgmentParse { .. } | Error::Transport { .. } => ErrorKind::Oracle,
            Error::Divergence { .. } => ErrorKind::Numeric,
            Error::Io { .. } | Error::Json { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
