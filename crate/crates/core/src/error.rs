use thiserror::Error;

/// Failures raised by the geometry, impact and engine layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("metric is singular or ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("metric is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("constraint one-forms are linearly dependent (singular value ratio {ratio:e})")]
    ConstraintDegeneracy { ratio: f64 },

    #[error("impact chart differential vanishes at the impact configuration")]
    DegenerateChart,

    #[error("pre-impact velocity violates constraint {index} (residual {residual:e})")]
    ConstraintViolation { index: usize, residual: f64 },

    #[error("impact leaves the boundary moving outward (dh(v+) = {dh_post:e}, dh(v-) = {dh_pre:e})")]
    NonPhysicalImpact { dh_pre: f64, dh_post: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("front and back contacts reach the boundary simultaneously at t = {time}")]
    SimultaneousContact { time: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
