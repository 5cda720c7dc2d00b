use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("residual distribution is zero (p equals q pointwise)")]
    ZeroResidual,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("query shorter than n_min ({got} < {min})")]
    QueryTooShort { got: usize, min: usize },
    #[error("k out of range: {k} (vocab {vocab})")]
    BadK { k: usize, vocab: usize },
    #[error("root tokens differ: draft {draft}, retrieval {retrieval}")]
    RootMismatch { draft: u32, retrieval: u32 },
    #[error("verification invariant breached: {0}")]
    InvariantBreach(String),
    #[error("instance exceeds enumeration bounds: {0}")]
    TooLarge(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("datastore format version mismatch (got {0})")]
    FormatVersionMismatch(u32),
    #[error("datastore checksum mismatch")]
    ChecksumMismatch,
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
}

pub type Result<T> = std::result::Result<T, Error>;
