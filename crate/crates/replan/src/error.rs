use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("variable `{0}` violates lower <= default <= upper")]
    BadVariableBounds(String),
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid horizon {0}")]
    BadHorizon(usize),
    #[error("config parse error: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),
    #[error("node {0} is not on the tape")]
    NotOnTape(usize),
    #[error("output dimension {0} is identically zero across the dataset")]
    ZeroOutputDimension(usize),
    #[error("standardization already folded")]
    AlreadyFolded,
    #[error("training diverged at epoch {epoch}: loss is non-finite")]
    Diverged { epoch: usize },
    #[error("dataset too small: {got} rows, need at least {need}")]
    DatasetTooSmall { got: usize, need: usize },
    #[error("dense-skip width law violated at layer {layer}: expected input width {expected}, got {got}")]
    BadLayerShape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("external solver failed: {0}")]
    ExternalSolver(String),
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("variable `{0}` has no finite bound at step {1}; big-M undefined")]
    UnboundedVariable(String, usize),
    #[error("network must be folded (accept raw inputs) before compilation")]
    NotFolded,
    #[error("reward term `{0}` has a positive coefficient on a nonlinear piece; not linearizable under maximization")]
    NonConcaveReward(String),
    #[error("bound preprocessing found the planning problem infeasible (variable `{0}`, step {1})")]
    Infeasible(String, usize),
    #[error("no incumbent in solve result; cannot extract a plan")]
    NoIncumbent,
    #[error("milp error: {0}")]
    Milp(#[from] MilpError),
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("constraint violated for {kind} at indices {indices:?}")]
    ConstraintViolation { kind: String, indices: Vec<usize> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum GradPlanError {
    #[error("all batch instances produced non-finite losses (last epoch {epoch})")]
    AllInstancesDead { epoch: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("nn error: {0}")]
    Nn(#[from] NnError),
}
