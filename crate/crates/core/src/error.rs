use thiserror::Error;

/// Errors raised by the ensemble optimal control library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A model was evaluated outside its valid region.
    #[error("sample {sample}: {reason}")]
    Domain { sample: usize, reason: String },

    /// Forward propagation produced a NaN or infinite state.
    #[error("propagation failure: non-finite state in sample {sample} at step {step}")]
    PropagationFailure { sample: usize, step: usize },

    #[error("point is outside the barrier domain: {0}")]
    BarrierInfeasible(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),

    #[error("initialization failed: {0}")]
    Initialization(String),
}

pub type Result<T, E = OcError> = std::result::Result<T, E>;

/// Reason a model rejected a state/control pair. Carries no sample index;
/// batch callers attach it when converting to [`OcError::Domain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainViolation(pub &'static str);

impl DomainViolation {
    pub(crate) fn at(self, sample: usize) -> OcError {
        OcError::Domain {
            sample,
            reason: self.0.to_string(),
        }
    }
}

impl std::fmt::Display for DomainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}
