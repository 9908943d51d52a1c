use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A density or gradient was requested at a non-finite state.
    #[error("invalid state: non-finite input")]
    InvalidState,

    /// A model or sampler configuration is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Reading or interpreting an input data file failed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Every particle carries zero weight.
    #[error("degenerate cloud: all log-weights are -inf")]
    DegenerateCloud,

    /// The pre-tuning median regression could not be fitted.
    #[error("pretune regression failed: {0}")]
    Pretune(String),

    /// The Laplace initializer did not reach a stationary point.
    #[error("laplace initialization did not converge after {iters} iterations (grad norm {grad_norm:.3e})")]
    LaplaceNoConvergence {
        iters: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// The exponent search could not advance the temperature.
    #[error("temperature selection failed: {0}")]
    Temperature(String),

    /// A metric was requested on data that cannot support it.
    #[error("metric error: {0}")]
    Metric(String),

    /// An error from a lower-level module, annotated with sampler context.
    #[error("{context}: {source}")]
    Step {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with sampler step context (temperature index etc.).
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Step {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
