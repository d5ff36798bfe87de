use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("degenerate quaternion: norm {norm} below 1e-12")]
    DegenerateQuaternion { norm: f64 },
    #[error("degenerate similarity: vector norm {norm} below 1e-12")]
    DegenerateSimilarity { norm: f64 },
    #[error("zero-volume bounds: {0}")]
    ZeroVolumeBounds(String),
    #[error("image {h}x{w} smaller than the {window}x{window} window")]
    ImageTooSmall { h: usize, w: usize, window: usize },
    #[error("non-finite loss value encountered during gradient check")]
    NonFiniteLoss,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("bad magic bytes in {path}")]
    BadMagic { path: String },
    #[error("unsupported version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("file truncated: {path}")]
    Truncated { path: String },
    #[error("checksum mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        path: String,
        stored: u32,
        computed: u32,
    },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },
    #[error("array {name}: stored shape {stored:?} does not match expected {expected:?}")]
    ArrayShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("missing array {0} in checkpoint")]
    MissingArray(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid identity index {index} (stack holds {count})")]
    InvalidIdentity { index: usize, count: usize },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
