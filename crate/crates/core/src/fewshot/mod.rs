//! Episode losses, the hybrid training loop and few-shot evaluation.

mod config;
mod loss;
mod train;

pub use config::{DatasetSpec, HeadKind, TrainConfig};
pub use loss::{episode_loss, predict, EpisodeOutcome, LossMode};
pub use train::{
    build_dataset, evaluate, metrics_csv, train, train_with, EpochMetrics, EvalResult, TrainOutcome, TrainReport,
};

use rand::Rng;

use crate::data::DataError;
use crate::kernel::{KernelError, QuantumHead};
use crate::nn::{Metric, Mlp, NnError};

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("episode has all-zero prototype scores")]
    DegenerateEpisode,
    #[error("{skipped} of {episodes} episodes in epoch {epoch} were degenerate")]
    TooManyDegenerate {
        epoch: usize,
        skipped: usize,
        episodes: usize,
    },
    #[error("encoder output width {encoder} does not match head input {head}")]
    HeadMismatch { encoder: usize, head: usize },
}

#[derive(Clone, Debug)]
pub enum Head {
    Classical(Metric),
    Quantum { head: QuantumHead, loss_mode: LossMode },
}

/// Encoder plus distance head.
#[derive(Clone, Debug)]
pub struct FewShotModel {
    pub encoder: Mlp,
    pub head: Head,
}

impl FewShotModel {
    pub fn new(encoder: Mlp, head: Head) -> Result<Self, FewShotError> {
        if let Head::Quantum { head, .. } = &head {
            if encoder.output_dim() != head.n() {
                return Err(FewShotError::HeadMismatch {
                    encoder: encoder.output_dim(),
                    head: head.n(),
                });
            }
        }
        Ok(Self { encoder, head })
    }

    /// Fresh model with seeded encoder and theta initialization.
    pub fn init<R: Rng>(config: &TrainConfig, input_dim: usize, rng: &mut R) -> Result<Self, FewShotError> {
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        widths.push(config.n_qubits);
        let encoder = Mlp::new(&widths, rng)?;
        let head = match config.head {
            HeadKind::ClassicalEuclidean => Head::Classical(Metric::Euclidean),
            HeadKind::ClassicalCosine => Head::Classical(Metric::Cosine),
            HeadKind::Quantum => Head::Quantum {
                head: QuantumHead::with_random_theta(config.n_qubits, config.layers, config.theta_range, rng)?,
                loss_mode: config.loss_mode,
            },
        };
        Self::new(encoder, head)
    }

    pub fn theta(&self) -> Option<&[f64]> {
        match &self.head {
            Head::Quantum { head, .. } => Some(&head.theta),
            Head::Classical(_) => None,
        }
    }

    /// Encoder parameters followed by theta.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.encoder.flat_params();
        if let Some(t) = self.theta() {
            p.extend_from_slice(t);
        }
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), FewShotError> {
        let n = self.encoder.n_params();
        let extra = self.theta().map_or(0, |t| t.len());
        if params.len() != n + extra {
            return Err(NnError::Shape {
                what: "model parameters",
                expected: n + extra,
                got: params.len(),
            }
            .into());
        }
        self.encoder.set_flat_params(&params[..n])?;
        if let Head::Quantum { head, .. } = &mut self.head {
            head.theta.copy_from_slice(&params[n..]);
        }
        Ok(())
    }
}
