use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("unknown document id {0:?}")]
    DanglingId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incompatible signatures: {0}")]
    IncompatibleSignature(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("labeler failed in refinement round {round}: {message}")]
    Labeler { round: usize, message: String },

    #[error("unsatisfiable mixture: domain {domain:?} has positive weight but no tokens")]
    UnsatisfiableMixture { domain: String },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("value {0} outside the domain of the fitted curve (x must be > 0)")]
    Domain(f64),

    #[error("empty repository {0:?}")]
    EmptyRepository(String),

    #[error("file order does not match repository {repo:?}: {message}")]
    OrderMismatch { repo: String, message: String },

    #[error("invalid repository path {0:?}")]
    InvalidPath(String),

    #[error("stage statistics do not chain: {from} emits {tokens_out} tokens but {to} receives {tokens_in}")]
    InconsistentStats {
        from: String,
        to: String,
        tokens_out: u64,
        tokens_in: u64,
    },

    #[error("refusing to resume: {0}")]
    ResumeMismatch(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::UnsatisfiableMixture { .. } => 4,
            Error::InvalidConfig(_) | Error::ResumeMismatch(_) => 2,
            _ => 3,
        }
    }
}
