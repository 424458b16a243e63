use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes: everything
/// except [`Error::Config`] and [`Error::Io`] is a numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("transversality violated: dH/dp_n = {rate:e} at p = {p:?}")]
    Transversality { rate: f64, p: Vec<f64> },

    #[error("level lift failed at h = {level}: {reason}")]
    LiftFailure { level: f64, reason: String },

    #[error("torus frequency vanishes; the flow is not transversal to any section")]
    VanishingFrequency,

    #[error("image manifold is not a graph over the angles (fold at q = {at}); amplitude too large")]
    AmplitudeTooLarge { at: f64 },

    #[error("fitted 1-form is not closed: curl defect {defect:e}")]
    NotClosed { defect: f64 },

    #[error("leaf label solve did not converge after {iterations} iterations (residual {residual:e}); leaves overlap")]
    FoliationOverlap { iterations: usize, residual: f64 },

    #[error("level gluing failed: {0}")]
    Gluing(String),

    #[error("generating-function solve failed: {0}")]
    GeneratingSolve(String),

    #[error("implicit step did not converge (residual {residual:e}); reduce the step size")]
    StepSize { residual: f64 },

    #[error("no section crossing within horizon t = {horizon}")]
    NoCrossing { horizon: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing stage `{0}` in artifact")]
    MissingStage(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps `self` with a description of the stage that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::Unsupported(_) | Error::MissingStage(_)
        )
    }
}
