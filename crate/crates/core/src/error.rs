use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not agree.
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A caller violated an operation's precondition.
    Contract(String),
    /// Invalid configuration (bucket boundaries, network wiring, CLI values).
    Config(String),
    /// Malformed file contents.
    Format(String),
    /// A loss or gradient stopped being finite.
    Numerical(String),
    Io(std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Self::Shape {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected:?}, got {got:?}")
            }
            Self::Contract(msg) => write!(f, "contract violation: {msg}"),
            Self::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Self::Format(msg) => write!(f, "format error: {msg}"),
            Self::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Self::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err)
    }
}
