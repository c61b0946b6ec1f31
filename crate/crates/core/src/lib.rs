//! Search-optimized linear merging of checkpoint pools.
//!
//! A pool of same-architecture checkpoints is merged with simplex weights
//! `θ = Σ αᵢ θᵢ`; CMA-ES searches the weights to maximize the macro-average
//! of held-in task scores.

pub mod analysis;
pub mod cmaes;
pub mod driver;
pub mod fitness;
pub mod merger;
pub mod tensorstore;
pub mod toylab;

/// Any failure surfaced by the library, with the CLI exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] tensorstore::StoreError),
    #[error(transparent)]
    Merge(#[from] merger::MergeError),
    #[error(transparent)]
    Cma(#[from] cmaes::CmaError),
    #[error(transparent)]
    Fitness(#[from] fitness::FitnessError),
    #[error(transparent)]
    Toy(#[from] toylab::ToyError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Driver(#[from] driver::DriverError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// 3 for evaluator failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        use fitness::FitnessError as F;
        match self {
            Error::Driver(d) if d.is_evaluator_failure() => 3,
            Error::Driver(driver::DriverError::Fitness(f)) | Error::Fitness(f) => match f {
                F::EvaluatorCrashed { .. } | F::EvaluatorTimeout(_) | F::ProtocolError(_) | F::Spawn { .. } => 3,
                _ => 2,
            },
            _ => 2,
        }
    }
}
