use crate::sim::ServiceId;

/// Errors raised anywhere in the simulator, the learning agents and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown service {0}")]
    UnknownService(ServiceId),

    #[error("service {0} already exists")]
    DuplicateService(ServiceId),

    #[error("insufficient free capacity: {needed} mc needed, {free} mc free")]
    InsufficientCapacity { needed: i64, free: i64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid workload trace: {0}")]
    Trace(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, scenarios, checkpoints),
    /// as opposed to failures while a run is in progress.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Trace(_)
                | Error::Checkpoint(_)
                | Error::Usage(_)
                | Error::TomlDe(_)
                | Error::TomlSer(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
