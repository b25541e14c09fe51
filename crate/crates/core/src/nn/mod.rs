//! Classical encoder, optimizers, distance heads and checkpoints.

mod checkpoint;
mod distance;
mod mlp;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use distance::{distance, distance_with_grad, Metric};
pub use mlp::{ForwardCache, Layer, Mlp, MlpGrads};
pub use optim::{Optimizer, OptimizerKind};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid layer widths: {0}")]
    Widths(String),
    #[error("cache does not belong to the current parameters")]
    StaleCache,
    #[error("cosine distance of a zero vector")]
    ZeroVector,
    #[error("non-finite gradient {value} at index {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
