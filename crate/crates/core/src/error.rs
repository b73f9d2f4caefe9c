//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by any pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A class / element index is out of range.
    #[error("index out of range: {index} >= {bound} ({what})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    /// Rank-one inverse update hit a (numerically) singular denominator.
    #[error("degenerate rank-one update: denominator {0:e}")]
    DegenerateUpdate(f64),

    /// Stream statistics collapsed (zero trace normalizer).
    #[error("degenerate stream: trace normalizer {0:e}")]
    DegenerateStream(f64),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Train-mode batch statistics need at least two samples.
    #[error("batch statistics require >= 2 samples, got {0}")]
    Statistics(usize),

    /// Requested parameter group cannot be frozen.
    #[error("group {0} cannot be frozen: only extractor and classifier freeze")]
    UnsupportedFreeze(&'static str),

    /// No parameter group left to differentiate.
    #[error("no trainable parameters: every group is frozen")]
    NoTrainableParameters,

    /// Not enough samples of a class to satisfy a request.
    #[error("class {class}: requested {requested} samples, only {available} available")]
    Scarcity {
        class: usize,
        requested: usize,
        available: usize,
    },

    /// Stratified split impossible.
    #[error("class {class} has {count} samples, stratified split needs >= 2")]
    Stratification { class: usize, count: usize },

    /// Stream ended before the support set reached balance.
    #[error("stream exhausted before balance: {0}")]
    StreamExhausted(String),

    /// Aggregation weights sum to zero.
    #[error("aggregation weights sum to zero")]
    ZeroWeight,

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// Protocol violation (unexpected message, missing baseline, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Serialized payload failed to parse.
    #[error("decode error: {0}")]
    Decode(String),

    /// Inference requested before prototypes exist.
    #[error("client not ready: {0}")]
    NotReady(&'static str),

    /// Invalid configuration; lists the offending keys.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
