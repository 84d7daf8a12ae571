use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("matrix is not skew-symmetric (‖S+Sᵀ‖ = {0:e})")]
    NonSkewInput(f64),
    #[error("matrix is not a rotation (‖RᵀR−I‖ = {orthonormality:e}, det = {determinant})")]
    NotARotation { orthonormality: f64, determinant: f64 },
    #[error("non-finite matrix entry")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("allocation matrix A·W·Aᵀ is ill-conditioned (cond = {0:e})")]
    SingularAllocation(f64),
    #[error("invalid parameter `{0}`")]
    InvalidParameter(&'static str),
    #[error("shape matrix is not symmetric positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("gain `{0}` must be strictly positive")]
    NonPositiveGain(&'static str),
    #[error("time step must be positive")]
    NonPositiveStep,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NlpError {
    #[error("initial guess contains non-finite entries")]
    NonFiniteInitialGuess,
    #[error("problem dimensions are inconsistent: {0}")]
    Dimension(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("start configuration is in collision with obstacle {0}")]
    StartInCollision(usize),
    #[error("planning problem infeasible ({0})")]
    PlanInfeasible(&'static str),
    #[error("numerical failure in planner")]
    NumericalFailure,
    #[error("query time lies outside the plan horizon")]
    StalePlan,
    #[error("invalid planner input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("plant state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("telemetry is empty")]
    EmptyTelemetry,
    #[error(transparent)]
    Model(#[from] ModelError),
}
