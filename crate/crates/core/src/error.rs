use thiserror::Error;

/// Which user callback produced a bad value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Callback {
    InitState,
    Transition,
    MeasurementDensity,
    ObservationSampler,
}

impl std::fmt::Display for Callback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Callback::InitState => "init_state",
            Callback::Transition => "transition",
            Callback::MeasurementDensity => "measurement_density",
            Callback::ObservationSampler => "sample_observation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter `{name}` = {value} is outside the domain of its {transform} transform")]
    Domain {
        name: String,
        value: f64,
        transform: &'static str,
    },

    #[error("model callback `{callback}` returned a non-finite value at step {step}")]
    ModelEvaluation { step: usize, callback: Callback },

    #[error("the model does not provide an observation sampler")]
    NoObservationSampler,

    #[error("filtering failure at step {step}: no particle has positive weight (max log-weight {max_log_weight})")]
    Degeneracy { step: usize, max_log_weight: f64 },

    #[error("kernel rejection sampler exceeded {attempts} attempts")]
    KernelRejection { attempts: usize },

    #[error("prediction variance at step {step} is singular (condition number {condition:e})")]
    SingularVariance { step: usize, condition: f64 },

    #[error("parameter estimate became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("singular innovation covariance at step {step}")]
    SingularInnovation { step: usize },
}

impl Error {
    /// Numerical failures (as opposed to bad configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ModelEvaluation { .. }
                | Error::Degeneracy { .. }
                | Error::KernelRejection { .. }
                | Error::SingularVariance { .. }
                | Error::Diverged { .. }
                | Error::SingularInnovation { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
