use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expression error: {0}")]
    Expression(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("pole condition violated at r = {at}: w = {w:.3e}, w' = {dw:.12}")]
    PoleCondition { at: f64, w: f64, dw: f64 },

    #[error("warp profile not positive at r = {at} (w = {w:.3e})")]
    NonPositiveWarp { at: f64, w: f64 },

    #[error("resolution {0} is below the minimum of 16 nodes per axis")]
    ResolutionTooSmall(usize),

    #[error("{what} = {value} is out of range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("operation needs a pole-centred geometry")]
    NoPole,

    #[error("potential has a negative entry {value:.3e} at node {node}")]
    NegativePotential { node: usize, value: f64 },

    #[error("field length {got} does not match node count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("time grids do not match")]
    TimeGridMismatch,

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("Neumann series stagnated: contraction factor {0:.6} >= 1")]
    SeriesStagnation(f64),

    #[error("operator is not positive definite (smallest eigenvalue {0:.6e})")]
    NotPositiveDefinite(f64),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
