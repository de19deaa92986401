use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not orthogonal: |RᵀR - 1|_F = {deviation:e}")]
    NotOrthogonal { deviation: f64 },

    #[error("matrix is not antisymmetric: |A + Aᵀ|_F = {deviation:e}")]
    NotAntisymmetric { deviation: f64 },

    #[error("matrix is singular or too ill-conditioned (σ_min/σ_max = {ratio:e})")]
    SingularInput { ratio: f64 },

    #[error("Gram matrix XXᵀ is singular (λ_min/λ_max = {ratio:e})")]
    SingularGram { ratio: f64 },

    #[error("layer range {from}..{to} is invalid for {layers} layers")]
    IndexRange { from: usize, to: usize, layers: usize },

    #[error("cluster {cluster} is empty")]
    EmptyCluster { cluster: usize },

    #[error("adaptive step shrank to {step:e} at s = {s}")]
    StepUnderflow { s: f64, step: f64 },

    #[error("points must be strictly increasing (violation at index {index})")]
    BadOrdering { index: usize },

    #[error("label {label} does not lie above every data point (max = {max})")]
    LabelInsideData { label: f64, max: f64 },

    #[error("point coordinate {value:e} lies within {threshold:e} of a sector boundary")]
    NearKink { value: f64, threshold: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
