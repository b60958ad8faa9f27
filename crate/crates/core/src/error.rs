use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {message}")]
    Header { path: PathBuf, message: String },

    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("HU sample {value} at voxel {index} outside [-1024, 3071]")]
    HuRange { index: usize, value: i16 },

    #[error("label {0} present in grid but missing from legend")]
    LegendMissing(u16),

    #[error("vertebra label {label} is not a single 26-connected body ({components} components)")]
    Disconnected { label: u16, components: usize },

    #[error("label {0} not found")]
    LabelNotFound(u16),

    #[error("label {label} has {count} voxels, need at least {min}")]
    TooFewVoxels { label: u16, count: usize, min: usize },

    #[error("degenerate voxel cloud: {0}")]
    Degenerate(String),

    #[error("anterior hint is within 1 degree of the superior axis")]
    HintParallel,

    #[error("reference region {0} missing from label map")]
    MissingReference(&'static str),

    #[error("invalid normalization: muscle {muscle} HU must exceed fat {fat} HU")]
    Normalization { muscle: f64, fat: f64 },

    #[error("erosion of label {label} by {radius_mm} mm leaves an empty trabecular region")]
    ErosionEmpty { label: u16, radius_mm: f64 },

    #[error("all 17 compass cells are missing for label {0}")]
    AllCellsMissing(u16),

    #[error("empty mid-sagittal slab for label {0}")]
    EmptySagittal(u16),

    #[error("body exceeds grid bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid parameters: {0}")]
    Spec(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("feature table: {0}")]
    Table(String),

    #[error("{context}: {source}")]
    Instance {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid training data: {0}")]
    Training(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid evaluation input: {0}")]
    Evaluation(String),

    #[error("invalid fold request: {0}")]
    Folds(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Header {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Instance {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
