use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::LossMode;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    ClassicalEuclidean,
    ClassicalCosine,
    Quantum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        n_classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        n_test: usize,
        seed: u64,
    },
    Idx {
        manifest: PathBuf,
        n_test: usize,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![256, 128]
}
fn default_layers() -> usize {
    1
}
fn default_loss_mode() -> LossMode {
    LossMode::NegativeProbability
}
fn default_q_query() -> usize {
    5
}
fn default_episodes() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-3
}
fn default_eval_episodes() -> usize {
    100
}
fn default_five() -> usize {
    5
}

/// Training run description; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub head: HeadKind,
    /// Embedding width; the qubit count for the quantum head.
    pub n_qubits: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub theta_range: f64,
    #[serde(default = "default_loss_mode")]
    pub loss_mode: LossMode,
    pub n_way: usize,
    pub k_shot: usize,
    #[serde(default = "default_q_query")]
    pub q_query: usize,
    #[serde(default = "default_episodes")]
    pub episodes_per_epoch: usize,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
    /// Encoder hidden widths.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_five")]
    pub eval_n_way: usize,
    #[serde(default = "default_five")]
    pub eval_k_shot: usize,
    #[serde(default = "default_five")]
    pub eval_q_query: usize,
}

impl TrainConfig {
    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut e = Vec::new();
        let mut positive = |name: &str, v: usize| {
            if v == 0 {
                e.push(format!("{name} must be positive"));
            }
        };
        positive("n_qubits", self.n_qubits);
        positive("n_way", self.n_way);
        positive("k_shot", self.k_shot);
        positive("q_query", self.q_query);
        positive("episodes_per_epoch", self.episodes_per_epoch);
        positive("eval_episodes", self.eval_episodes);
        positive("eval_n_way", self.eval_n_way);
        positive("eval_k_shot", self.eval_k_shot);
        positive("eval_q_query", self.eval_q_query);
        if self.head == HeadKind::Quantum {
            positive("layers", self.layers);
            if self.n_qubits > 64 {
                e.push(format!("n_qubits {} exceeds 64", self.n_qubits));
            }
        }
        if !(0.0..=std::f64::consts::TAU).contains(&self.theta_range) {
            e.push(format!("theta_range {} must lie in [0, 2pi]", self.theta_range));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            e.push(format!("lr {} must be positive", self.lr));
        }
        if self.hidden.contains(&0) {
            e.push("hidden widths must be positive".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic {
                n_classes,
                per_class,
                dim,
                spread,
                n_test,
                ..
            } => {
                if !(*spread > 0.0) {
                    e.push(format!("dataset.spread {spread} must be positive"));
                }
                if *dim == 0 {
                    e.push("dataset.dim must be positive".into());
                }
                if n_test >= n_classes {
                    e.push(format!("dataset.n_test {n_test} leaves no training classes out of {n_classes}"));
                }
                if n_classes.saturating_sub(*n_test) < self.n_way {
                    e.push(format!("n_way {} exceeds the {} training classes", self.n_way, n_classes.saturating_sub(*n_test)));
                }
                if *n_test < self.eval_n_way {
                    e.push(format!("eval_n_way {} exceeds the {n_test} test classes", self.eval_n_way));
                }
                if *per_class < self.k_shot + self.q_query {
                    e.push(format!(
                        "dataset.per_class {per_class} is below k_shot + q_query = {}",
                        self.k_shot + self.q_query
                    ));
                }
                if *per_class < self.eval_k_shot + self.eval_q_query {
                    e.push(format!(
                        "dataset.per_class {per_class} is below eval_k_shot + eval_q_query = {}",
                        self.eval_k_shot + self.eval_q_query
                    ));
                }
            }
            DatasetSpec::Idx { manifest, .. } => {
                if !manifest.is_file() {
                    e.push(format!("dataset.manifest {} does not exist", manifest.display()));
                }
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }
}
