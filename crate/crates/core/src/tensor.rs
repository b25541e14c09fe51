//! Dense complex tensors over qubit legs with an optional leading batch axis.
//!
//! Every non-batch leg has dimension 2. Data is row-major: the first label is
//! the most significant bit of the flattened index. When a batch axis is
//! present it precedes all labelled legs, so element `e` of the batch occupies
//! the contiguous block `e * 2^rank .. (e + 1) * 2^rank`.

use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of one wire segment in a tensor network.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {got} does not match shape (batch {batch:?}, rank {rank}) = {expected}")]
    ShapeMismatch {
        got: usize,
        expected: usize,
        batch: Option<usize>,
        rank: usize,
    },
    #[error("label {0} appears twice in one tensor")]
    DuplicateLabel(Label),
    #[error("batch sizes differ between operands: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("summed label {0} is not present on any operand")]
    UnknownSumLabel(Label),
    #[error("contraction needs at least one operand")]
    NoOperands,
    #[error("rank {0} exceeds the supported maximum of {MAX_RANK}")]
    RankTooLarge(usize),
}

/// Largest rank a single tensor may carry (2^30 complex entries per batch element).
pub const MAX_RANK: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    labels: Vec<Label>,
    batch: Option<usize>,
    data: Vec<Complex64>,
}

impl Tensor {
    pub fn new(
        labels: Vec<Label>,
        batch: Option<usize>,
        data: Vec<Complex64>,
    ) -> Result<Self, TensorError> {
        if labels.len() > MAX_RANK {
            return Err(TensorError::RankTooLarge(labels.len()));
        }
        let mut seen = BTreeSet::new();
        for &l in &labels {
            if !seen.insert(l) {
                return Err(TensorError::DuplicateLabel(l));
            }
        }
        let expected = batch.unwrap_or(1) << labels.len();
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch {
                got: data.len(),
                expected,
                batch,
                rank: labels.len(),
            });
        }
        Ok(Self {
            labels,
            batch,
            data,
        })
    }

    pub fn scalar(value: Complex64) -> Self {
        Self {
            labels: Vec::new(),
            batch: None,
            data: vec![value],
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn batch(&self) -> Option<usize> {
        self.batch
    }

    pub fn rank(&self) -> usize {
        self.labels.len()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Number of entries per batch element.
    pub fn block_len(&self) -> usize {
        1 << self.labels.len()
    }

    /// Values of batch element `e`; unbatched tensors broadcast.
    pub fn block(&self, e: usize) -> &[Complex64] {
        let len = self.block_len();
        match self.batch {
            Some(_) => &self.data[e * len..(e + 1) * len],
            None => &self.data[..len],
        }
    }

    /// Entry at a multi-index given in label order.
    pub fn get(&self, batch_index: usize, bits: &[usize]) -> Complex64 {
        let flat = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1));
        self.block(batch_index)[flat]
    }

    /// Returns the tensor with its legs reordered to ascending label id.
    pub fn to_canonical(&self) -> Tensor {
        let mut sorted = self.labels.clone();
        sorted.sort();
        if sorted == self.labels {
            return self.clone();
        }
        self.permuted(&sorted)
    }

    pub fn into_canonical(self) -> Tensor {
        if self.labels.windows(2).all(|w| w[0] < w[1]) {
            self
        } else {
            self.to_canonical()
        }
    }

    /// Reorders the legs to `target`, which must be a permutation of the labels.
    pub fn permuted(&self, target: &[Label]) -> Tensor {
        let rank = self.rank();
        assert_eq!(target.len(), rank, "permutation must cover every label");
        let src_stride: Vec<usize> = target
            .iter()
            .map(|t| {
                let pos = self
                    .labels
                    .iter()
                    .position(|l| l == t)
                    .expect("target label missing from tensor");
                1 << (rank - 1 - pos)
            })
            .collect();
        let len = self.block_len();
        let offsets: Vec<usize> = (0..len)
            .map(|o| {
                (0..rank)
                    .filter(|&p| (o >> (rank - 1 - p)) & 1 == 1)
                    .map(|p| src_stride[p])
                    .sum()
            })
            .collect();
        let n_blocks = self.batch.unwrap_or(1);
        let mut data = Vec::with_capacity(self.data.len());
        for e in 0..n_blocks {
            let block = &self.data[e * len..(e + 1) * len];
            data.extend(offsets.iter().map(|&off| block[off]));
        }
        Tensor {
            labels: target.to_vec(),
            batch: self.batch,
            data,
        }
    }
}

/// Precomputed index arithmetic for one contraction of a fixed set of operand
/// label lists. Output legs are the union of operand legs minus the summed
/// ones, sorted by id. Legs shared between operands but not summed are
/// multiplied element-wise.
#[derive(Clone, Debug)]
pub struct ContractionSpec {
    out_labels: Vec<Label>,
    sum_labels: Vec<Label>,
    out_offsets: Vec<Vec<usize>>,
    sum_offsets: Vec<Vec<usize>>,
    operand_ranks: Vec<usize>,
}

impl ContractionSpec {
    pub fn new(operands: &[&[Label]], sum: &[Label]) -> Result<Self, TensorError> {
        if operands.is_empty() {
            return Err(TensorError::NoOperands);
        }
        let mut all = BTreeSet::new();
        for labels in operands {
            let mut own = BTreeSet::new();
            for &l in labels.iter() {
                if !own.insert(l) {
                    return Err(TensorError::DuplicateLabel(l));
                }
                all.insert(l);
            }
        }
        let sum_set: BTreeSet<Label> = sum.iter().copied().collect();
        if sum_set.len() != sum.len() {
            let dup = sum
                .iter()
                .find(|l| sum.iter().filter(|m| m == l).count() > 1)
                .copied()
                .unwrap_or(Label(0));
            return Err(TensorError::DuplicateLabel(dup));
        }
        if let Some(&missing) = sum_set.iter().find(|l| !all.contains(l)) {
            return Err(TensorError::UnknownSumLabel(missing));
        }
        let out_labels: Vec<Label> = all.difference(&sum_set).copied().collect();
        let sum_labels: Vec<Label> = sum_set.into_iter().collect();
        if out_labels.len() > MAX_RANK {
            return Err(TensorError::RankTooLarge(out_labels.len()));
        }

        let offsets_for = |axis: &[Label], labels: &[Label]| -> Vec<usize> {
            let rank = labels.len();
            let strides: Vec<usize> = axis
                .iter()
                .map(|a| match labels.iter().position(|l| l == a) {
                    Some(pos) => 1 << (rank - 1 - pos),
                    None => 0,
                })
                .collect();
            let r = axis.len();
            (0..1usize << r)
                .map(|idx| {
                    (0..r)
                        .filter(|&p| (idx >> (r - 1 - p)) & 1 == 1)
                        .map(|p| strides[p])
                        .sum()
                })
                .collect()
        };

        let out_offsets = operands
            .iter()
            .map(|labels| offsets_for(&out_labels, labels))
            .collect();
        let sum_offsets = operands
            .iter()
            .map(|labels| offsets_for(&sum_labels, labels))
            .collect();
        Ok(Self {
            out_labels,
            sum_labels,
            out_offsets,
            sum_offsets,
            operand_ranks: operands.iter().map(|l| l.len()).collect(),
        })
    }

    pub fn out_labels(&self) -> &[Label] {
        &self.out_labels
    }

    pub fn sum_labels(&self) -> &[Label] {
        &self.sum_labels
    }

    pub fn out_rank(&self) -> usize {
        self.out_labels.len()
    }

    fn batch_of(operands: &[&Tensor]) -> Result<Option<usize>, TensorError> {
        let mut batch = None;
        for t in operands {
            if let Some(b) = t.batch {
                match batch {
                    None => batch = Some(b),
                    Some(prev) if prev != b => return Err(TensorError::BatchMismatch(prev, b)),
                    _ => {}
                }
            }
        }
        Ok(batch)
    }

    fn check_operands(&self, operands: &[&Tensor]) {
        assert_eq!(operands.len(), self.operand_ranks.len(), "operand count");
        for (t, &r) in operands.iter().zip(&self.operand_ranks) {
            assert_eq!(t.rank(), r, "operand rank differs from the spec");
        }
    }

    /// Evaluates the contraction. Summation runs over ascending flattened
    /// summed-index order for every output entry and batch element.
    pub fn apply(&self, operands: &[&Tensor]) -> Result<Tensor, TensorError> {
        self.check_operands(operands);
        let batch = Self::batch_of(operands)?;
        let n_out = 1usize << self.out_rank();
        let n_sum = 1usize << self.sum_labels.len();
        let n_blocks = batch.unwrap_or(1);
        let mut data = Vec::with_capacity(n_blocks * n_out);
        let k = operands.len();
        let mut blocks: Vec<&[Complex64]> = Vec::with_capacity(k);
        for e in 0..n_blocks {
            blocks.clear();
            blocks.extend(operands.iter().map(|t| t.block(e)));
            for o in 0..n_out {
                let mut acc = Complex64::new(0.0, 0.0);
                for s in 0..n_sum {
                    let mut prod = blocks[0][self.out_offsets[0][o] + self.sum_offsets[0][s]];
                    for j in 1..k {
                        prod *= blocks[j][self.out_offsets[j][o] + self.sum_offsets[j][s]];
                    }
                    acc += prod;
                }
                data.push(acc);
            }
        }
        Ok(Tensor {
            labels: self.out_labels.clone(),
            batch,
            data,
        })
    }

    /// Reverse-mode pass: given the derivative of a holomorphic scalar with
    /// respect to the output entries, returns its derivative with respect to
    /// the entries of each operand flagged in `need`. Operands without a batch
    /// axis receive the sum over the batch.
    pub fn vjp(
        &self,
        operands: &[&Tensor],
        grad_out: &Tensor,
        need: &[bool],
    ) -> Result<Vec<Option<Tensor>>, TensorError> {
        self.check_operands(operands);
        let batch = Self::batch_of(operands)?;
        if grad_out.batch != batch {
            return Err(TensorError::BatchMismatch(
                grad_out.batch.unwrap_or(1),
                batch.unwrap_or(1),
            ));
        }
        let n_out = 1usize << self.out_rank();
        let n_sum = 1usize << self.sum_labels.len();
        let n_blocks = batch.unwrap_or(1);
        let k = operands.len();
        let mut grads: Vec<Option<Vec<Complex64>>> = operands
            .iter()
            .zip(need)
            .map(|(t, &n)| n.then(|| vec![Complex64::new(0.0, 0.0); t.data.len()]))
            .collect();
        let mut blocks: Vec<&[Complex64]> = Vec::with_capacity(k);
        for e in 0..n_blocks {
            blocks.clear();
            blocks.extend(operands.iter().map(|t| t.block(e)));
            let g_block = grad_out.block(e);
            for o in 0..n_out {
                let g = g_block[o];
                if g == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for s in 0..n_sum {
                    for j in 0..k {
                        let Some(gj) = grads[j].as_mut() else { continue };
                        let mut prod = g;
                        for (i, block) in blocks.iter().enumerate() {
                            if i != j {
                                prod *= block[self.out_offsets[i][o] + self.sum_offsets[i][s]];
                            }
                        }
                        let base = if operands[j].batch.is_some() {
                            e * operands[j].block_len()
                        } else {
                            0
                        };
                        gj[base + self.out_offsets[j][o] + self.sum_offsets[j][s]] += prod;
                    }
                }
            }
        }
        Ok(grads
            .into_iter()
            .zip(operands)
            .map(|(g, t)| {
                g.map(|data| Tensor {
                    labels: t.labels.clone(),
                    batch: t.batch,
                    data,
                })
            })
            .collect())
    }
}

/// Contracts any number of tensors, summing the listed labels.
pub fn contract(operands: &[&Tensor], sum: &[Label]) -> Result<Tensor, TensorError> {
    let label_lists: Vec<&[Label]> = operands.iter().map(|t| t.labels()).collect();
    ContractionSpec::new(&label_lists, sum)?.apply(operands)
}

/// Contracts two tensors over every label they share. The batch axis, when
/// present, is carried through element-wise.
pub fn contract_pair(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let shared: Vec<Label> = a
        .labels()
        .iter()
        .filter(|l| b.labels().contains(l))
        .copied()
        .collect();
    contract(&[a, b], &shared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn real(labels: &[u32], values: &[f64]) -> Tensor {
        Tensor::new(
            labels.iter().map(|&l| Label(l)).collect(),
            None,
            values.iter().map(|&v| c(v, 0.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_times_vector() {
        let id = real(&[0, 1], &[1.0, 0.0, 0.0, 1.0]);
        let v = real(&[0], &[1.0, 0.0]);
        let out = contract_pair(&id, &v).unwrap();
        assert_eq!(out.labels(), &[Label(1)]);
        assert_eq!(out.data(), &[c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn inner_product_of_zero_states_is_one() {
        let a = real(&[3], &[1.0, 0.0]);
        let b = real(&[3], &[1.0, 0.0]);
        let out = contract_pair(&a, &b).unwrap();
        assert_eq!(out.rank(), 0);
        assert_eq!(out.data(), &[c(1.0, 0.0)]);
    }

    #[test]
    fn hadamard_on_zero_matches_matrix_product() {
        // labels [in, out]; entry (i, o) = H[o][i]
        let h = [[FRAC_1_SQRT_2, FRAC_1_SQRT_2], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2]];
        let gate = real(&[0, 1], &[h[0][0], h[1][0], h[0][1], h[1][1]]);
        let v = [1.0, 0.0];
        let out = contract_pair(&gate, &real(&[0], &v)).unwrap();
        for o in 0..2 {
            let expected: f64 = (0..2).map(|i| h[o][i] * v[i]).sum();
            assert!((out.data()[o].re - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_and_label_errors() {
        assert!(matches!(
            Tensor::new(vec![Label(0)], None, vec![c(1.0, 0.0)]),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![Label(0), Label(0)], None, vec![c(0.0, 0.0); 4]),
            Err(TensorError::DuplicateLabel(_))
        ));
        let a = Tensor::new(vec![Label(0)], Some(2), vec![c(1.0, 0.0); 4]).unwrap();
        let b = Tensor::new(vec![Label(0)], Some(3), vec![c(1.0, 0.0); 6]).unwrap();
        assert!(matches!(
            contract_pair(&a, &b),
            Err(TensorError::BatchMismatch(2, 3))
        ));
    }

    #[test]
    fn retained_shared_label_is_elementwise() {
        let a = real(&[0, 1], &[1.0, 2.0, 3.0, 4.0]);
        let b = real(&[1], &[10.0, 100.0]);
        let out = contract(&[&a, &b], &[]).unwrap();
        assert_eq!(out.labels(), &[Label(0), Label(1)]);
        let re: Vec<f64> = out.data().iter().map(|z| z.re).collect();
        assert_eq!(re, vec![10.0, 200.0, 30.0, 400.0]);
    }

    #[test]
    fn vjp_matches_direct_derivative() {
        // f = sum_ij A_ij B_j  => df/dA_ij = B_j, df/dB_j = sum_i A_ij
        let a = real(&[0, 1], &[1.0, 2.0, 3.0, 4.0]);
        let b = real(&[1], &[5.0, 7.0]);
        let spec = ContractionSpec::new(&[a.labels(), b.labels()], &[Label(0), Label(1)]).unwrap();
        let g = Tensor::scalar(c(1.0, 0.0));
        let grads = spec.vjp(&[&a, &b], &g, &[true, true]).unwrap();
        let ga: Vec<f64> = grads[0].as_ref().unwrap().data().iter().map(|z| z.re).collect();
        let gb: Vec<f64> = grads[1].as_ref().unwrap().data().iter().map(|z| z.re).collect();
        assert_eq!(ga, vec![5.0, 7.0, 5.0, 7.0]);
        assert_eq!(gb, vec![4.0, 6.0]);
    }
}
