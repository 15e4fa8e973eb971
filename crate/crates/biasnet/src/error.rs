use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A scalar argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was called before its prerequisite state existed.
    #[error("invalid state: {0}")]
    State(String),

    /// Training diverged or produced non-finite values.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// IDX parsing: the magic number does not identify the expected record type.
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    /// IDX parsing: file ended before the declared payload.
    #[error("truncated IDX file {path}: need {needed} bytes, have {have}")]
    IdxTruncated {
        path: String,
        needed: usize,
        have: usize,
    },

    /// IDX parsing: image and label files disagree on the record count.
    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    /// Container parsing: not a container file at all.
    #[error("bad container magic in {0}")]
    ContainerBadMagic(String),

    /// Container parsing: unsupported format version.
    #[error("container version mismatch in {path}: supported {supported}, found {found}")]
    ContainerVersion {
        path: String,
        supported: u32,
        found: u32,
    },

    /// Container parsing: payload checksum does not match the manifest.
    #[error("container checksum mismatch in {0}: payload corrupted")]
    ContainerChecksum(String),

    /// Container parsing: payload shorter than the manifest declares.
    #[error("truncated container {path}: need {needed} payload bytes, have {have}")]
    ContainerTruncated {
        path: String,
        needed: usize,
        have: usize,
    },

    /// Container parsing: structural problem in the manifest text.
    #[error("container manifest error in {path}: {detail}")]
    ContainerManifest { path: String, detail: String },

    /// A bias bank was applied to parameters it was not trained against.
    #[error("bias bank anchor mismatch: bank anchored to {bank}, parameters are {params}")]
    AnchorMismatch { bank: String, params: String },

    /// CSV or other structured text failed to parse.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
