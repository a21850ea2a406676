use thiserror::Error;

#[derive(Debug, Error)]
pub enum WfeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operator family {family} is not compatible with this state: {reason}")]
    IncompatibleFamily { family: String, reason: String },

    #[error("state is not permutation symmetric (max deviation {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("branches overlap: {0}")]
    BranchOverlap(String),

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("empty initial band: no apparatus configuration with |S| <= {center}")]
    EmptyBand { center: f64 },

    #[error("stage solver did not converge at t = {time}: residual {residual:.3e} after {iterations} iterations (contraction estimate {contraction:.3})")]
    StageDivergence {
        time: f64,
        iterations: usize,
        residual: f64,
        contraction: f64,
    },

    #[error("non-finite amplitudes at t = {time}")]
    NonFinite { time: f64 },

    #[error("operator calibration residual {residual:.3e} exceeds the limit {limit:.3e}")]
    Calibration { residual: f64, limit: f64 },

    #[error("commutator expectation `{check}` has a real part {real:.3e} (scale {scale:.3e})")]
    NotImaginary { check: String, real: f64, scale: f64 },

    #[error("state format: {0}")]
    Format(String),
}

impl WfeError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        WfeError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            WfeError::StageDivergence { .. }
                | WfeError::NonFinite { .. }
                | WfeError::Calibration { .. }
                | WfeError::NotImaginary { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, WfeError>;
