use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("degenerate dynamics: {0}")]
    DegenerateDynamics(String),

    #[error("integral adaptation is singular at entry {index}: |A - 1| = {distance:e}")]
    Singular { index: usize, distance: f64 },

    #[error("adaptation rule {rule} cannot be applied to {variant} neurons")]
    IncompatibleRule { rule: String, variant: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn for_client(self, client: usize) -> Self {
        Error::Client {
            client,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
