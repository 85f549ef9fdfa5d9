use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: rg_lattice_core::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to write into non-empty directory {0} without --overwrite")]
    Refused(PathBuf),
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl Error {
    /// Short machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownExperiment(_) => "unknown_experiment",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Numeric { .. } => "numeric_fault",
            Error::Io { .. } => "io",
            Error::Refused(_) => "overwrite_refused",
            Error::Serialize(_) => "serialize",
            Error::Pool(_) => "thread_pool",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownExperiment(_) | Error::InvalidConfig(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Io { .. } | Error::Refused(_) | Error::Serialize(_) => 4,
            Error::Pool(_) => 5,
        }
    }
}

/// Attaches a description of the failing computation to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for rg_lattice_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Numeric { context: what(), source })
    }
}
