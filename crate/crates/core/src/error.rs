use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at {context}: got {got}, want {want}")]
    Dim {
        context: String,
        got: usize,
        want: usize,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("manifest violation at `{id}`: {reason}")]
    Manifest { id: String, reason: String },
    #[error("infeasible split: {0}")]
    Split(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("all-zero input vector cannot be sketched; use the presence flag")]
    MissingInput,
    #[error("sketches come from different hyperplane banks")]
    MixedBank,
    #[error("item `{item}` is missing modality `{modality}`")]
    MissingModality { item: String, modality: String },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("label arity mismatch: {0}")]
    LabelArity(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, got: usize, want: usize) -> Self {
        Error::Dim {
            context: context.into(),
            got,
            want,
        }
    }
}
