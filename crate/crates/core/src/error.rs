use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdmError {
    #[error("empty geometry")]
    EmptyGeometry,
    #[error("non-finite value in geometry")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid rotation")]
    InvalidRotation,
    #[error("invalid beta range")]
    InvalidBetaRange,
    #[error("step out of range: t = {t}, T = {steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("no posterior at t=1")]
    NoPosteriorAtFirstStep,
    #[error("coincident atoms in diffused state ({i}, {j})")]
    CoincidentDiffused { i: usize, j: usize },
    #[error("coincident atoms ({i}, {j})")]
    CoincidentAtoms { i: usize, j: usize },
    #[error("condition shape mismatch: expected {expected}, got {got}")]
    ConditionShape { expected: usize, got: usize },
    #[error("invalid sigma")]
    InvalidSigma,
    #[error("numerical divergence at molecule {index}")]
    NumericalDivergence { index: usize },
    #[error("sampler divergence at step {t}")]
    SamplerDivergence { t: usize },
    #[error("no size histogram in checkpoint")]
    NoSizeHistogram,
    #[error("model is unconditional / wrong property: {0}")]
    ConditionMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("regressor is untrained")]
    UntrainedRegressor,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint sink failed: {0}")]
    Sink(String),
}

pub type Result<T> = core::result::Result<T, MdmError>;
