use thiserror::Error;

use crate::bounds::RetrainOutcome;
use crate::plant::SteadyStateTarget;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no steady state: {0}")]
    NoSteadyState(String),

    /// The steady state was found but lies outside the operating region.
    #[error("steady state {:?} is outside the operating region", .0.x_bar.as_slice())]
    NotAdmissible(Box<SteadyStateTarget>),

    #[error("only {available} finite-loss cells for {requested} starting points")]
    InsufficientStarts { available: usize, requested: usize },

    #[error("start {start} diverged at epoch {epoch}")]
    DivergedStart { start: usize, epoch: usize },

    #[error("all {0} starting points diverged")]
    AllStartsDiverged(usize),

    #[error("grid of {points} points per round exceeds budget {budget}")]
    BudgetExceeded { points: u64, budget: u64 },

    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),

    #[error("no data: {0}")]
    NoData(String),

    #[error("theta {theta} does not exceed the required threshold {threshold}")]
    ThetaTooSmall { theta: f64, threshold: f64 },

    /// Carries the round that came closest to passing.
    #[error("theta threshold not met after {rounds} rounds (best theta {theta}, threshold {threshold})")]
    ThresholdNotMet {
        rounds: usize,
        theta: f64,
        threshold: f64,
        best: Box<RetrainOutcome>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
