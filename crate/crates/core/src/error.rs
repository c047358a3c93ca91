use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes violate an operation's contract.
    Shape { op: &'static str, detail: String },
    /// A convolution geometry produced an output extent below one.
    Extent {
        op: &'static str,
        axis: usize,
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Invalid configuration value.
    Config(String),
    /// `backward` was called on a tensor with more than one element.
    NotScalar { numel: usize },
    /// A function handed to the gradient oracle returned different values
    /// for the same input.
    NonDeterministic,
    /// A label volume holds a value outside `0..=4`.
    Label { index: usize, value: u8 },
    /// A loss evaluated to NaN or infinity.
    NonFinite { step: u64, what: &'static str },
    /// Invalid argument that is not a shape issue.
    Invalid(String),
    /// Failure reported by a training observer (I/O in the host crate).
    Observer(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { op, detail } => write!(f, "{op}: shape contract violated: {detail}"),
            Self::Extent {
                op,
                axis,
                input,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "{op}: axis {axis} output extent < 1 (input {input}, kernel {kernel}, stride {stride}, padding {padding})"
            ),
            Self::Config(msg) => write!(f, "configuration error: {msg}"),
            Self::NotScalar { numel } => {
                write!(f, "backward requires a single-element loss, got {numel} elements")
            }
            Self::NonDeterministic => write!(f, "function is not deterministic; gradient check invalid"),
            Self::Label { index, value } => {
                write!(f, "label value {value} at voxel {index} is outside 0..=4")
            }
            Self::NonFinite { step, what } => write!(f, "non-finite {what} at step {step}"),
            Self::Invalid(msg) => f.write_str(msg),
            Self::Observer(msg) => write!(f, "observer failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
