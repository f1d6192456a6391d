use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("missing log field `{0}`")]
    MissingLogField(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate spec: {0}")]
    DegenerateSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Stable machine-readable category, printed by the command-line tool.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidPlan(_) => "invalid_plan",
            Error::MissingLogField(_) => "missing_log_field",
            Error::Parse { .. } => "parse_error",
            Error::Schema(_) => "schema_error",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::DegenerateSpec(_) => "degenerate_spec",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidState(_) => "invalid_state",
            Error::Unsupported(_) => "unsupported",
            Error::Shape { .. } => "shape_error",
            Error::Numerical(_) => "numerical_error",
            Error::Checkpoint(_) => "checkpoint_error",
            Error::NotFound(_) => "not_found",
            Error::Io(_) => "io_error",
            Error::Json(_) => "parse_error",
        }
    }
}
