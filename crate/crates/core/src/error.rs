use thiserror::Error;

/// Errors raised by the solvers, simulators and the trainer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The control-curvature matrix G_t is singular or not positive definite.
    #[error("singular gain matrix G at period t={period}: {detail}")]
    SingularGain { period: usize, detail: String },

    /// The risky-asset diffusion D vanishes where a closed form divides by it.
    #[error("degenerate diffusion: {0}")]
    DegenerateDiffusion(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Period index outside `0..=T`.
    #[error("period {t} out of range 0..={horizon}")]
    OutOfRange { t: usize, horizon: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// SGD kept leaving the parameter domain after repeated step halving.
    #[error("training diverged at episode {episode}: {detail}")]
    Divergence { episode: usize, detail: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularGain { .. } | Error::DegenerateDiffusion(_) | Error::Divergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
