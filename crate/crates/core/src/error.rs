use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed key: {0}")]
    KeyFormat(String),

    #[error("cannot build a permutation over an empty domain")]
    EmptyDomain,

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("block size {block_size} does not match model patch size {patch_size}")]
    BlockPatchMismatch { block_size: usize, patch_size: usize },

    #[error(
        "channel-mixing shuffle requires channel-uniform normalization \
         (use the per-channel mode or equal mean/std for every channel)"
    )]
    NonUniformNormalization,

    #[error("bad magic: expected \"VTW1\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported weights format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape table error for tensor `{name}`: {reason}")]
    ShapeTable { name: String, reason: String },

    #[error("payload length mismatch: header declares {expected} bytes, file holds {actual}")]
    PayloadLength { expected: u64, actual: u64 },

    #[error("tensor `{name}` contains a non-finite value at index {index}")]
    NonFinite { name: String, index: usize },

    #[error("malformed weights header: {0}")]
    Header(String),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("no mapping rule matches source label `{0}`")]
    UnmatchedLabel(String),

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from malformed input values rather than a
    /// file, codec, or container problem.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Image(_)
                | Error::Json(_)
                | Error::Io { .. }
                | Error::BadMagic(_)
                | Error::VersionMismatch { .. }
                | Error::ShapeTable { .. }
                | Error::PayloadLength { .. }
                | Error::NonFinite { .. }
                | Error::Header(_)
                | Error::Manifest { .. }
        )
    }
}
