use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the stage that raises them; the CLI maps all of
/// them to the "data error" exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // landmark ingestion
    #[error("line {line}: header does not match the landmark layout")]
    HeaderMismatch { line: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: cannot parse {value:?} as a number")]
    BadNumber { line: usize, field: usize, value: String },
    #[error("video {video_id:?} carries conflicting labels {first:?} and {second:?}")]
    InconsistentLabel { video_id: String, first: String, second: String },
    #[error("video {video_id:?} repeats frame index {frame_index}")]
    DuplicateFrame { video_id: String, frame_index: u64 },
    #[error("cannot sample from a clip with zero frames")]
    ZeroFrames,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),

    // tensor engine
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any tensor that requires a gradient")]
    DetachedLoss,
    #[error("dropout probability {0} outside [0, 1)")]
    BadProbability(f64),

    // model
    #[error("positional encoding needs an even width, got {0}")]
    OddDimension(usize),
    #[error("sequence length {len} exceeds model capacity {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("clip {0} has no attendable positions")]
    EmptyMask(usize),
    #[error("top-k requires 1 <= k <= {classes}, got {k}")]
    BadK { k: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // training
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {class} has {count} samples, needs at least {needed}")]
    ClassTooSmall { class: usize, count: usize, needed: usize },
    #[error("sample {0} has no label")]
    MissingLabel(usize),
    #[error("dataset is empty")]
    EmptyDataset,

    // checkpoints
    #[error("checkpoint payload failed its CRC check (stored {stored:08x}, computed {computed:08x})")]
    CorruptPayload { stored: u32, computed: u32 },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated: {0}")]
    TruncatedFile(String),
    #[error("checkpoint manifest is invalid: {0}")]
    BadManifest(String),

    // streaming
    #[error("motion signal needs at least two frames")]
    TooFewFrames,
    #[error("cannot classify an empty clip")]
    EmptyClip,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
