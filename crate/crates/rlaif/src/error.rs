use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape mismatch; carries the offending operation and shapes.
    #[error("shape error in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Index out of range (token ids, frame ranges, targets).
    #[error("index error: {0}")]
    Index(String),

    /// Invalid configuration value or invariant violation.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation needs a nonempty dataset.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Prompt template is missing a placeholder or is malformed.
    #[error("template error: {0}")]
    Template(String),

    /// Judge output without a parsable choice.
    #[error("unparseable judgment: {0}")]
    Unparseable(String),

    /// Judge output asserting both choices.
    #[error("ambiguous judgment: {0}")]
    Ambiguous(String),

    /// Violated call contract (empty response, zero-length generation, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Checkpoint container problems: bad magic, version, checksum, truncation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Pipeline stage dependency missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    /// Parsing structured text (config, dataset records).
    #[error("parse error: {0}")]
    Parse(String),

    /// Generation could not produce a usable sample.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error at `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
