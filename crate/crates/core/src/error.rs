use thiserror::Error;

/// Errors produced by the measure, transport, and experiment routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("mass mismatch: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not an epsilon-cover: point {point} is {distance} from the nearest center (eps = {eps})")]
    NotACover { point: usize, distance: f64, eps: f64 },

    #[error("support outside base cell: point {point} at distance {distance} > radius {radius}")]
    OutsideBaseCell { point: usize, distance: f64, radius: f64 },

    #[error("target measure is not absolutely continuous w.r.t. source: {0}")]
    NotAbsolutelyContinuous(String),

    #[error("proportionality precondition violated in cell {cell}: deviation {deviation}")]
    ProportionalityViolated { cell: usize, deviation: f64 },

    #[error("divergent series: {0}")]
    Divergent(String),

    #[error("budget exhausted after {draws} draws: found {found} of {target} points")]
    BudgetExhausted {
        draws: u64,
        found: usize,
        target: usize,
    },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("too large for brute force: n = {0} (max 8)")]
    TooLarge(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
