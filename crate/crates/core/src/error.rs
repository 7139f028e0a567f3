use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors emitted by the tensor kernel, the model, and the harness.
#[derive(Debug)]
pub enum CoreError {
    /// Two operands have incompatible shapes for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A precondition of the named operation was violated.
    Contract { op: &'static str, detail: String },
    /// A parameter lookup failed.
    MissingParam { name: String },
    /// Token decoding hit a special token in a coordinate slot.
    DegenerateDecode { token: u32 },
    /// File system failure.
    Io { path: PathBuf, source: std::io::Error },
    /// A file parsed but its contents are not what the format requires.
    Malformed { what: String, detail: String },
    /// The training loss became non-finite.
    Diverged { epoch: usize, detail: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch lhs={lhs:?} rhs={rhs:?}")
            }
            Self::Contract { op, detail } => write!(f, "{op}: contract violation: {detail}"),
            Self::MissingParam { name } => write!(f, "missing parameter {name:?}"),
            Self::DegenerateDecode { token } => {
                write!(f, "degenerate generation: special token {token} in coordinate slot")
            }
            Self::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Self::Malformed { what, detail } => write!(f, "malformed {what}: {detail}"),
            Self::Diverged { epoch, detail } => {
                write!(f, "training diverged at epoch {epoch}: {detail}")
            }
        }
    }
}

impl std::error::Error for CoreError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Contract { op, detail: detail.into() }
    }

    pub fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Malformed { what: what.into(), detail: detail.into() }
    }
}
