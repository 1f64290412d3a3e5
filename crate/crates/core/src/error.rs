use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported {field}: {value}")]
    Unsupported { field: &'static str, value: u64 },
    #[error("truncated {field}: expected {expected} bytes, found {found}")]
    Truncated {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("shape mismatch at layer `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("invalid format spec: {0}")]
    InvalidFormat(String),
    #[error("invalid code {code:#06x}: digit {digit} index {index} >= {limit}")]
    InvalidCode {
        code: u16,
        digit: usize,
        index: usize,
        limit: usize,
    },
    #[error("degenerate scale: weight tensor is all zero")]
    DegenerateScale,
    #[error("value {0} lies exactly on a level, no opposite neighbor")]
    OnLevel(f64),
    #[error("value {value} is beyond the table boundary level {boundary}")]
    OutsideTable { value: f64, boundary: f64 },
    #[error("accumulator value {value} exceeds {bits}-bit range")]
    AccumulatorOverflow { value: i128, bits: u32 },
    #[error("accumulator width {acc_bits} too narrow, at least {required} bits needed")]
    AccumulatorTooNarrow { acc_bits: u32, required: u32 },
    #[error("layer `{0}` has no quantized weights")]
    NotQuantized(String),
    #[error("layer `{0}` has no bias")]
    NoBias(String),
    #[error("tile of {rows}x{cols} does not fit a {array_rows}x{array_cols} array")]
    TileOverflow {
        rows: usize,
        cols: usize,
        array_rows: usize,
        array_cols: usize,
    },
    #[error("unknown design `{0}`")]
    UnknownDesign(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
