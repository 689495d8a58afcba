use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Training produced a NaN/Inf loss or gradient.
    #[error("numeric failure at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("gradient check failed for {parameter}: max relative error {error:.3e} >= {tolerance:.1e}")]
    GradCheck {
        parameter: String,
        error: f64,
        tolerance: f64,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        expected: &'static [u8],
        found: Vec<u8>,
    },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    Version { expected: u32, found: u32 },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("header/length contradiction: {0}")]
    Layout(String),

    #[error("integrity check failed: stored crc32 {stored:#010x}, computed {computed:#010x}")]
    Integrity { stored: u32, computed: u32 },

    #[error("unsupported modulation {0:?}")]
    UnsupportedModulation(String),

    #[error(
        "timer resolution ({resolution_ns} ns) too coarse for a {duration_ns} ns measurement window; \
         use a longer duration per repetition"
    )]
    TimerResolution { resolution_ns: u128, duration_ns: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    /// True for failures caused by the numbers themselves (divergence,
    /// non-finite values, failed gradient checks) rather than by inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Divergence { .. } | Error::GradCheck { .. }
        )
    }
}
