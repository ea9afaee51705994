use thiserror::Error;

/// Errors produced anywhere in the field, objective, training and graph pipeline.
#[derive(Debug, Error)]
pub enum DslpError {
    #[error("degenerate trajectory")]
    DegenerateTrajectory,

    #[error("insufficient angular resolution: {0} bins, need at least 4")]
    InsufficientResolution(usize),

    #[error("no directional supervision")]
    NoDirectionalSupervision,

    #[error("no supervision")]
    NoSupervision,

    #[error("empty evaluation mask")]
    EmptyMask,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("warp constraints unsatisfiable after {0} rejections")]
    WarpRejected(usize),

    #[error("template does not fit the grid: {0}")]
    TemplateOutOfBounds(String),

    #[error("unknown completion mode `{0}`")]
    UnknownMode(String),

    #[error("no valid path")]
    NoValidPath,

    #[error("degenerate endpoints: entry and exit coincide")]
    DegenerateEndpoints,

    #[error("channel mismatch: predictor expects {expected} input channels, world has {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DslpError>;
