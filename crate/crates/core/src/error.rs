use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),
    #[error("quadrature did not reach tolerance {tol:e} (last change {change:e})")]
    Quadrature { tol: f64, change: f64 },
    #[error("missing moment for instrument point {0}")]
    MissingMoment(usize),
    #[error("weight discontinuity at {0} is not a partition knot")]
    UnalignedDiscontinuity(f64),
    #[error("PRTE requires policy probabilities")]
    MissingPolicy,
    #[error("moments needed for {0} are unavailable")]
    MissingShapeMoments(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no grid point satisfies the moment equalities at resolution {0}")]
    NoGridSurvivor(usize),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("inference failure: {0}")]
    Inference(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Parse(String),
}

pub type Result<V, E = Error> = std::result::Result<V, E>;
