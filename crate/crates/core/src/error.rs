use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("MTJ index {index} out of range for a group of {group_size}")]
    MtjIndexOutOfRange { index: usize, group_size: usize },

    #[error("program pulse on MTJ {index} which is already in the P state (no erase since last program)")]
    ProgramWithoutErase { index: usize },

    #[error("control signals do not match any operation pattern: {0}")]
    AmbiguousSignals(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("row {row} out of range ({limit} rows)")]
    RowOutOfRange { row: usize, limit: usize },

    #[error("buffer row {0} has not been loaded")]
    BufferRowEmpty(usize),

    #[error("buffer row {index} out of range (capacity {capacity})")]
    BufferIndexOutOfRange { index: usize, capacity: usize },

    #[error("bit-counter in column {column} overflowed its {width}-bit range")]
    CounterOverflow { column: usize, width: u32 },

    #[error("sense latch read before any sense operation")]
    LatchEmpty,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid stride: {0}")]
    StrideInvalid(String),

    #[error("insufficient result rows: {0}")]
    InsufficientResultRows(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("capacity exceeded in layer {layer} ({kind}): {reason}")]
    CapacityExceeded {
        layer: usize,
        kind: String,
        reason: String,
    },

    #[error("degenerate quantization range: qmin = qmax = {0}")]
    DegenerateRange(f64),

    #[error("unknown op kind `{0}`")]
    UnknownOpKind(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn capacity(layer: usize, kind: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::CapacityExceeded {
            layer,
            kind: kind.into(),
            reason: reason.into(),
        }
    }
}
