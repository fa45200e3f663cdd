//! Library error type. Variants are grouped by failure class: configuration
//! (caller passed an unusable description), numeric (a solver or
//! decomposition failed), and I/O (container parsing and file access).

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    // --- configuration ---
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("degenerate dipole set: {0}")]
    DegenerateDipoleSet(String),
    #[error("insufficient excitations: requested q={q} from {n_s} samples")]
    InsufficientExcitations { q: usize, n_s: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("zero map has no projection")]
    ZeroMap,

    // --- numeric ---
    #[error("SVD failed to converge")]
    SvdFailed,
    #[error("CG diverged: residual grew over {grew} consecutive iterations (last residuals {tail:?})")]
    CgDiverged { grew: usize, tail: Vec<f64> },

    // --- i/o ---
    #[error("not an MPIB file (bad magic)")]
    BadMagic,
    #[error("unsupported MPIB version {0}")]
    BadVersion(u16),
    #[error("unknown MPIB block tag {0:#04x}")]
    UnknownTag(u8),
    #[error("MPIB block failed CRC check (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("malformed MPIB block: {0}")]
    MalformedBlock(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metadata error: {0}")]
    Meta(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse failure class, used by callers that map errors to exit codes.
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidGrid(_) | DegenerateDipoleSet(_) | InsufficientExcitations { .. }
            | ShapeMismatch(_) | InvalidParameter(_) | ZeroMap => ErrorCategory::Config,
            SvdFailed | CgDiverged { .. } => ErrorCategory::Numeric,
            BadMagic | BadVersion(_) | UnknownTag(_) | CrcMismatch { .. }
            | MalformedBlock(_) | Io(_) | Meta(_) => ErrorCategory::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorCategory::Config => write!(f, "config"),
            ErrorCategory::Io => write!(f, "io"),
            ErrorCategory::Numeric => write!(f, "numeric"),
        }
    }
}
