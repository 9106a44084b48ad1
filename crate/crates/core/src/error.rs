use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("label {label} at voxel {voxel:?} is outside [0, {classes})")]
    LabelOutOfRange { label: u32, voxel: [usize; 3], classes: usize },

    #[error("invalid probability map: class probabilities at voxel {voxel:?} sum to {sum}")]
    InvalidProbability { voxel: [usize; 3], sum: f64 },

    #[error("variable belongs to tape {found}, expected tape {expected}")]
    ForeignVar { expected: u64, found: u64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; re-run the forward pass first")]
    TapeConsumed,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no patch contains a target voxel; the volume is background-only")]
    NoTargetPatches,

    #[error("missing prediction for patch {0}")]
    MissingPatch(usize),

    #[error("NIfTI: {0}")]
    Nifti(#[from] NiftiError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (seed {seed}); patches (volume, start): {patches:?}")]
    NonFiniteLoss { epoch: usize, batch: usize, seed: u64, patches: Vec<(usize, [usize; 3])> },

    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum NiftiError {
    #[error("bad magic {0:?}, expected \"n+1\\0\"")]
    BadMagic([u8; 4]),
    #[error("sizeof_hdr is {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensionality dim[0] = {0}, expected 3")]
    UnsupportedDimensionality(i16),
    #[error("invalid extent {0} in dim[1..=3]")]
    BadExtent(i16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("vox_offset {0} is before the end of the header")]
    BadOffset(f32),
    #[error("value {0} is not a valid class id")]
    NotALabel(f64),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
