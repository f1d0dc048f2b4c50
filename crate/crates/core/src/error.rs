use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("time ordering violated: {0}")]
    TimeOrder(String),

    #[error("time gap {gap:e} is below the degeneracy threshold {threshold:e}")]
    DegenerateTimeGap { gap: f64, threshold: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("quadrature order {order} below the minimum of {min} per axis")]
    QuadratureOrder { order: usize, min: usize },

    #[error("resolution underflow: radius {radius:e} is below the field resolution {resolution:e}")]
    ResolutionUnderflow { radius: f64, resolution: f64 },

    #[error("modulus is not Dini: {diagnostic}")]
    NonDini { diagnostic: String },

    #[error("horizon exceeded: t - tau = {span:e} > delta0^2 = {limit:e}")]
    HorizonExceeded { span: f64, limit: f64 },

    #[error("term table does not cover the integration domain: {0}")]
    GridCoverage(String),

    #[error(
        "contraction witness violated at level {level}: ratio {ratio:.4} > {limit:.4} \
         (horizon {horizon:e}, time nodes {time_nodes}, space nodes {space_nodes})"
    )]
    ContractionWitness {
        level: usize,
        ratio: f64,
        limit: f64,
        horizon: f64,
        time_nodes: usize,
        space_nodes: usize,
    },

    #[error("mass leakage {leakage:.3e} exceeds the limit {limit:.3e}")]
    MassLeakage { leakage: f64, limit: f64 },

    #[error("coverage {coverage:.6} below the required {required}")]
    Coverage { coverage: f64, required: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("source too close to the box boundary: distance {distance:.4} < margin {margin:.4}")]
    BoundaryMargin { distance: f64, margin: f64 },

    #[error("linear solver failed to converge: residual {residual:e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("stencil underflow: {0}")]
    Stencil(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
