//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure categories for LLM / embedding provider calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderErrorKind {
    Network,
    Auth,
    RateLimit,
    Malformed,
}

impl fmt::Display for ProviderErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProviderErrorKind::Network => "network",
            ProviderErrorKind::Auth => "auth",
            ProviderErrorKind::RateLimit => "rate-limit",
            ProviderErrorKind::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed timestamp: {0:?}")]
    MalformedTimestamp(String),

    #[error("invalid date: {0:?}")]
    InvalidDate(String),

    #[error("document {0:?} tokenizes to zero tokens")]
    EmptyDocument(String),

    #[error("corpus contains no documents")]
    EmptyCorpus,

    #[error("vector dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("vector index is empty")]
    EmptyIndex,

    #[error("query subgraph is empty")]
    EmptySubgraph,

    #[error("missing child report for time node {0}")]
    MissingChildReport(String),

    #[error("missing report for time node {0} (stale index?)")]
    MissingReport(String),

    #[error("provider error ({kind}): {message}")]
    Provider {
        kind: ProviderErrorKind,
        message: String,
    },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("snapshot version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("update already in progress")]
    UpdateInProgress,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn provider(kind: ProviderErrorKind, message: impl Into<String>) -> Self {
        Error::Provider {
            kind,
            message: message.into(),
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable code, used by the HTTP API and the FFI layer.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedTimestamp(_) => "malformed_timestamp",
            Error::InvalidDate(_) => "invalid_date",
            Error::EmptyDocument(_) => "empty_document",
            Error::EmptyCorpus => "empty_corpus",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroVector => "zero_vector",
            Error::EmptyIndex => "empty_index",
            Error::EmptySubgraph => "empty_subgraph",
            Error::MissingChildReport(_) => "missing_child_report",
            Error::MissingReport(_) => "missing_report",
            Error::Provider { .. } => "provider_error",
            Error::CorruptSnapshot(_) => "corrupt_snapshot",
            Error::Version { .. } => "version_mismatch",
            Error::Config(_) => "config_error",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UpdateInProgress => "update_in_progress",
            Error::Io(_) => "io_error",
            Error::Json { .. } => "json_error",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_kind_display() {
        assert_eq!(ProviderErrorKind::RateLimit.to_string(), "rate-limit");
        let err = Error::provider(ProviderErrorKind::Malformed, "bad key");
        assert!(err.to_string().contains("malformed"));
        assert_eq!(err.code(), "provider_error");
    }
}
