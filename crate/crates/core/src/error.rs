use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty point set")]
    EmptySet,
    #[error("enumeration size {required} exceeds budget {budget}; enable sampling")]
    BudgetExceeded { required: f64, budget: usize },
    #[error("point lies outside the convex hull at distance {distance:e}")]
    OutsideHull { distance: f64 },
    #[error("cell {cell}: weak limit lies outside the hull of its cluster points (distance {distance:e})")]
    HullFailure { cell: usize, distance: f64 },
    #[error("test functionals have rank {rank} < dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },
    #[error("degenerate demand in cell {cell}: zero income with a free good and no cap")]
    DegenerateDemand { cell: usize },
    #[error("no convergence: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
