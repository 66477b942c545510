use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("feature width mismatch: {left} vs {right}")]
    FeatureWidthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache does not match the current parameters")]
    StaleCache,

    #[error("row {0} has (near) zero norm and cannot be normalized")]
    ZeroNorm(usize),

    #[error("no vehicle voxel has a partner in the fusion grid")]
    EmptyCorrespondence,

    #[error("contrastive loss needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),

    #[error("target distribution entry ({row}, {bin}) is not strictly positive")]
    NonPositiveTarget { row: usize, bin: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("class {0} is absent from the probe training split")]
    MissingClass(usize),

    #[error("{skipped} of {steps} steps had no usable correspondences")]
    TooManySkipped { skipped: usize, steps: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}
