//! Datasets, class splits and n-way k-shot episodes.

mod episode;
mod idx;
mod synth;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use episode::{sample_episode, Episode};
pub use idx::{load_idx, load_manifest, write_idx, DatasetManifest, IMAGES_MAGIC, LABELS_MAGIC_I32, LABELS_MAGIC_U8};
pub use synth::synth_classes;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x} at offset 0")]
    Magic { path: PathBuf, found: u32 },
    #[error("{path}: truncated at offset {offset}, needed {needed} more bytes")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("split has {have} classes, episode needs {need}")]
    InsufficientClasses { need: usize, have: usize },
    #[error("class {class} has {have} samples, episode needs {need}")]
    InsufficientSamples { class: u32, need: usize, have: usize },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Partition of class ids into disjoint train and test sets.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

impl ClassSplit {
    pub fn classes(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Flattened real samples with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub dim: usize,
    /// Image shape for IDX data, `[dim]` otherwise.
    pub shape: Vec<usize>,
    class_index: BTreeMap<u32, Vec<usize>>,
    pub split: ClassSplit,
}

impl Dataset {
    /// Every class starts in the train split.
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<u32>, shape: Vec<usize>) -> Result<Self, DataError> {
        if samples.len() != labels.len() {
            return Err(DataError::LabelCount {
                images: samples.len(),
                labels: labels.len(),
            });
        }
        let dim: usize = shape.iter().product();
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(DataError::Argument(format!(
                "sample {i} has length {}, expected {dim}",
                samples[i].len()
            )));
        }
        let mut class_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            class_index.entry(l).or_default().push(i);
        }
        let split = ClassSplit {
            train: class_index.keys().copied().collect(),
            test: Vec::new(),
        };
        Ok(Self {
            samples,
            labels,
            dim,
            shape,
            class_index,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.class_index.keys().copied()
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn class_samples(&self, class: u32) -> &[usize] {
        self.class_index.get(&class).map_or(&[], |v| v.as_slice())
    }

    /// Moves exactly `n_test` classes to the test split, chosen by a seeded
    /// hash of the class id so the partition does not depend on load order.
    pub fn split_classes(&mut self, n_test: usize, seed: u64) -> Result<(), DataError> {
        let n = self.class_index.len();
        if n_test > n {
            return Err(DataError::Argument(format!(
                "cannot hold out {n_test} of {n} classes"
            )));
        }
        let mut keyed: Vec<(u64, u32)> = self
            .classes()
            .map(|c| (splitmix64(seed ^ splitmix64(u64::from(c))), c))
            .collect();
        keyed.sort_unstable();
        let mut test: Vec<u32> = keyed[..n_test].iter().map(|&(_, c)| c).collect();
        let mut train: Vec<u32> = keyed[n_test..].iter().map(|&(_, c)| c).collect();
        test.sort_unstable();
        train.sort_unstable();
        self.split = ClassSplit { train, test };
        Ok(())
    }

    /// Rows `indices` as a matrix.
    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((indices.len(), self.dim), |(r, c)| self.samples[indices[r]][c])
    }
}
