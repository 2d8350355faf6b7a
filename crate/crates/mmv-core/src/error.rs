use thiserror::Error;

/// Errors surfaced by measure operations, the coefficient DSL, the particle
/// engine and the experiment drivers.
#[derive(Error, Debug)]
pub enum MmvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty measure")]
    EmptyMeasure,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("degenerate binning: {0}")]
    DegenerateBinning(String),

    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("unknown identifier `{name}` at line {line}, column {col}")]
    UnknownIdentifier { name: String, line: usize, col: usize },

    #[error("index out of range: `{what}` (dimension is {dim})")]
    IndexOutOfRange { what: String, dim: usize },

    #[error("expression evaluation error: {0}")]
    Eval(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown builtin model `{0}`")]
    UnknownBuiltin(String),

    #[error("missing parameter `{0}` for builtin model")]
    MissingParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("blow-up at t = {t}: particle {particle}, |coordinate| > {guard}")]
    BlowUp { t: f64, particle: usize, guard: f64 },

    #[error("distribution flow does not cover t = {0}")]
    FlowGap(f64),

    #[error("centering condition violated: |integral| = {0} exceeds tolerance {1}")]
    CenteringViolated(f64, f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MmvError>;
