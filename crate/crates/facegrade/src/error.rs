//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! kind of contract violated rather than by module, so callers can match on
//! what went wrong without caring where.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Shape mismatch in a matrix operation. Carries both operand shapes so
    /// the message alone is enough to locate the bad call.
    #[error("{op}: incompatible shapes {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    Shape {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A scalar argument was outside its documented range (temperature,
    /// dropout rate, bottleneck width, k for hardening, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed input file. `line` is 1-based and counts the header.
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    /// A record or id referenced something that does not exist (unknown
    /// subject, token id past the vocabulary, missing mesh for a patient).
    #[error("lookup failed: {0}")]
    Lookup(String),

    /// Invalid runtime input that is not a file-format problem: empty text,
    /// mismatched prediction/label lengths, fewer than two runs for a
    /// variance, an out-of-range class label.
    #[error("invalid input: {0}")]
    Input(String),

    /// Class-level problems during resampling or splitting (empty class,
    /// class too small to stratify).
    #[error("resampling: {0}")]
    Resample(String),

    /// A function that must be deterministic was observed not to be
    /// (two identical evaluations disagreed during gradient checking).
    #[error("non-deterministic evaluation: {0}")]
    Determinism(String),

    /// Training produced a non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// Checkpoint or embedding file is structurally valid but incompatible
    /// with the current configuration (dimension mismatch, unknown version).
    #[error("incompatible: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
