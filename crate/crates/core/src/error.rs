//! Error type shared across the library.
//!
//! Numerical failure modes carry enough context to locate the failure: the
//! time step at which a rollout blew up, the epoch at which training
//! diverged, the CSV row holding a non-finite value, and so on.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in a numeric operation. Both sides are reported.
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dim {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// Invalid model / run configuration (zero-sized layers, inconsistent
    /// window lengths, unsupported combinations, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Model-notation string could not be parsed. `pos` is a byte offset
    /// into the input.
    #[error("model notation error at position {pos}: {msg}")]
    Notation { pos: usize, msg: String },

    /// Layer-sweep sequencing violated (a layer was composed before the
    /// outputs it depends on were produced).
    #[error("layer sequencing error: {0}")]
    Sequencing(String),

    /// Dataset problem that is not tied to one cell (missing channel,
    /// role mismatch, empty series, ...).
    #[error("data error: {0}")]
    Data(String),

    /// CSV cell failed to parse or was non-finite. Row numbers are
    /// 1-based and count the header.
    #[error("bad value in CSV at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: String, msg: String },

    /// A closed-loop run (washout warm-up or prediction rollout) left the
    /// admissible region: some state or output became non-finite.
    #[error("closed-loop state became unstable at step {step}")]
    Instability { step: usize },

    /// A gradient computation hit a non-finite intermediate.
    #[error("gradient overflow at sequence step {step}")]
    GradOverflow { step: usize },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    /// The rigid-body motion model approached the pitch singularity of the
    /// Euler-rate transform.
    #[error("pitch angle {pitch:.4} rad at step {step} is outside the admissible range (|pitch| < pi/2); state: {state}")]
    PitchSingularity {
        step: usize,
        pitch: f64,
        state: String,
    },

    /// Checkpoint container is malformed or carries an unknown version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Checkpoint was produced by a model with a different parameter
    /// layout than the one configured.
    #[error("checkpoint layout hash {got:#018x} does not match configured model layout {expected:#018x}")]
    LayoutMismatch { expected: u64, got: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
