//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the numerical core and the experiment harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix was constructed with a zero row or column count.
    EmptyDims { rows: usize, cols: usize },
    /// Backing data length does not match `rows * cols`.
    DataLength { expected: usize, got: usize },
    /// A NaN or infinity was found at the given position.
    NonFinite {
        place: &'static str,
        row: usize,
        col: usize,
    },
    /// Two operands have incompatible matrix shapes.
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Two operands have incompatible vector lengths.
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// The Jacobi sweep limit was reached before the off-diagonal
    /// dot products fell below tolerance.
    SvdNoConvergence { sweeps: usize, off_norm: f64 },
    /// A column split index lies outside `1..cols`.
    SplitOutOfRange { left_cols: usize, cols: usize },
    /// Both class counts of a merge weighting were zero.
    NoClasses,
    /// A scalar parameter lies outside its allowed range.
    InvalidParam { name: &'static str, value: f64 },
    /// An operation requiring data was handed an empty collection.
    EmptyInput { what: &'static str },
    /// A label is not part of the current task's class set.
    UnknownLabel { label: usize },
    /// Training loss became non-finite or exploded.
    Diverged { epoch: usize, batch: usize, loss: f64 },
    /// Prediction was requested from a head with no classes.
    EmptyHead,
    /// Fewer classes than incremental steps.
    InsufficientClasses { classes: usize, steps: usize },
    /// A text payload (matrix file, checkpoint, config) failed to parse.
    Parse { line: usize, message: String },
    /// Filesystem failure, with the offending path.
    Io { path: String, message: String },
    /// An unrecognized ablation variant name.
    UnknownVariant(String),
    /// An unrecognized sweep parameter or config key.
    UnknownKey(String),
    /// A failure inside the continual loop, tagged with the step it hit.
    AtStep { step: usize, inner: Box<Error> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyDims { rows, cols } => {
                write!(f, "matrix dimensions must be positive, got {rows}x{cols}")
            }
            Error::DataLength { expected, got } => {
                write!(f, "data length mismatch: expected {expected}, got {got}")
            }
            Error::NonFinite { place, row, col } => {
                write!(f, "non-finite entry in {place} at ({row}, {col})")
            }
            Error::ShapeMismatch { op, expected, got } => write!(
                f,
                "{op}: shape mismatch, expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::LengthMismatch { op, expected, got } => {
                write!(f, "{op}: length mismatch, expected {expected}, got {got}")
            }
            Error::SvdNoConvergence { sweeps, off_norm } => write!(
                f,
                "svd failed to converge after {sweeps} sweeps (residual off-diagonal norm {off_norm:e})"
            ),
            Error::SplitOutOfRange { left_cols, cols } => {
                write!(f, "split index {left_cols} out of range for {cols} columns")
            }
            Error::NoClasses => write!(f, "class-count weights need at least one class"),
            Error::InvalidParam { name, value } => {
                write!(f, "parameter {name} out of range: {value}")
            }
            Error::EmptyInput { what } => write!(f, "{what} must be non-empty"),
            Error::UnknownLabel { label } => {
                write!(f, "label {label} is not in the current task's class set")
            }
            Error::Diverged { epoch, batch, loss } => write!(
                f,
                "training diverged at epoch {epoch}, batch {batch} (loss {loss:e})"
            ),
            Error::EmptyHead => write!(f, "classifier head has no classes"),
            Error::InsufficientClasses { classes, steps } => {
                write!(f, "{classes} classes cannot cover {steps} steps")
            }
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Io { path, message } => write!(f, "io error on {path}: {message}"),
            Error::UnknownVariant(name) => write!(f, "unknown variant: {name}"),
            Error::UnknownKey(name) => write!(f, "unknown key or parameter: {name}"),
            Error::AtStep { step, inner } => write!(f, "at step {step}: {inner}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
