//! Embedding diagnostics: PCA explained variance, fidelity dissimilarity
//! matrices and CSV dumps for external projection tools.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::kernel::{KernelError, QuantumHead};
use crate::nn::{Mlp, NnError};

/// Fidelities below this are clamped before taking the log.
pub const FIDELITY_FLOOR: f64 = 1e-300;
/// Largest row count accepted by [`dissimilarity_matrix`].
pub const MAX_DISSIMILARITY_ROWS: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} rows exceed the pairwise limit of {limit}")]
    TooManyRows { rows: usize, limit: usize },
    #[error("embedding width {got} does not match the head's {expected} qubits")]
    Width { expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    Labels { rows: usize, labels: usize },
    #[error("non-finite embedding entry at row {0}")]
    NonFinite(usize),
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
}

/// Prequantum embeddings with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub matrix: Array2<f64>,
    pub labels: Vec<u32>,
    pub source: String,
}

impl EmbeddingRecord {
    pub fn new(matrix: Array2<f64>, labels: Vec<u32>, source: impl Into<String>) -> Result<Self, DiagnosticsError> {
        if matrix.nrows() != labels.len() {
            return Err(DiagnosticsError::Labels {
                rows: matrix.nrows(),
                labels: labels.len(),
            });
        }
        if let Some((r, _)) = matrix
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(DiagnosticsError::NonFinite(r));
        }
        Ok(Self {
            matrix,
            labels,
            source: source.into(),
        })
    }

    /// `label,phi_0,...,phi_{n-1}`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for j in 0..self.matrix.ncols() {
            write!(s, ",phi_{j}").unwrap();
        }
        s.push('\n');
        for (row, label) in self.matrix.rows().into_iter().zip(&self.labels) {
            write!(s, "{label}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Encoder outputs for every sample of one split, at most `limit` per class.
pub fn embed_split(
    encoder: &Mlp,
    dataset: &Dataset,
    split: Split,
    limit: Option<usize>,
    source: impl Into<String>,
) -> Result<EmbeddingRecord, DiagnosticsError> {
    let mut idx = Vec::new();
    for &c in dataset.split.classes(split) {
        let s = dataset.class_samples(c);
        idx.extend_from_slice(&s[..limit.unwrap_or(s.len()).min(s.len())]);
    }
    let x = dataset.gather(&idx);
    let matrix = encoder.apply(x.view())?;
    let labels = idx.iter().map(|&i| dataset.labels[i]).collect();
    EmbeddingRecord::new(matrix, labels, source)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, stopping
/// once the off-diagonal Frobenius norm falls below `tol` times the total.
pub fn symmetric_eigenvalues(a: ArrayView2<f64>, tol: f64) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let total: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if total == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= tol * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[[i, i]]).collect()
}

/// Explained-variance ratios of the mean-centered covariance, descending,
/// summing to 1.
pub fn pca_explained_variance(record: &EmbeddingRecord) -> Result<Vec<f64>, DiagnosticsError> {
    pca_ratios(record.matrix.view())
}

pub fn pca_ratios(matrix: ArrayView2<f64>) -> Result<Vec<f64>, DiagnosticsError> {
    let rows = matrix.nrows();
    if rows < 2 {
        return Err(DiagnosticsError::TooFewRows(rows));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("rows checked above");
    let centered = &matrix - &mean;
    let cov = centered.t().dot(&centered) / (rows - 1) as f64;
    let mut eig: Vec<f64> = symmetric_eigenvalues(cov.view(), 1e-12)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total == 0.0 {
        // a single point: all variance trivially in zero components
        let mut r = vec![0.0; eig.len()];
        r[0] = 1.0;
        return Ok(r);
    }
    Ok(eig.iter().map(|v| v / total).collect())
}

/// Smallest `k` whose cumulative ratio reaches `threshold`.
pub fn components_for_threshold(ratios: &[f64], threshold: f64) -> Result<usize, DiagnosticsError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DiagnosticsError::Threshold(threshold));
    }
    let mut acc = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        acc += r;
        // ratios sum to 1 only up to rounding
        if acc >= threshold - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(ratios.len())
}

/// `component,ratio,cumulative`
pub fn explained_variance_csv(ratios: &[f64]) -> String {
    let mut s = String::from("component,ratio,cumulative\n");
    let mut acc = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        acc += r;
        writeln!(s, "{},{r},{acc}", i + 1).unwrap();
    }
    s
}

/// `D[i][j] = -log(max(F_ij, 1e-300))` over all pairs, zero diagonal.
pub fn dissimilarity_matrix(head: &QuantumHead, record: &EmbeddingRecord) -> Result<Array2<f64>, DiagnosticsError> {
    let m = &record.matrix;
    let rows = m.nrows();
    if m.ncols() != head.n() {
        return Err(DiagnosticsError::Width {
            expected: head.n(),
            got: m.ncols(),
        });
    }
    if rows > MAX_DISSIMILARITY_ROWS {
        return Err(DiagnosticsError::TooManyRows {
            rows,
            limit: MAX_DISSIMILARITY_ROWS,
        });
    }
    let row = |i: usize| m.row(i).to_vec();
    // upper triangle, one batch per row
    let upper: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let left: Vec<Vec<f64>> = (i + 1..rows).map(|_| row(i)).collect();
            let right: Vec<Vec<f64>> = (i + 1..rows).map(row).collect();
            Ok(head
                .inner_products(&left, &right)?
                .fidelities
                .into_iter()
                .map(|f| -f.max(FIDELITY_FLOOR).min(1.0).ln())
                .collect())
        })
        .collect::<Result<_, KernelError>>()?;
    let mut d = Array2::zeros((rows, rows));
    for (i, vals) in upper.into_iter().enumerate() {
        for (off, v) in vals.into_iter().enumerate() {
            let j = i + 1 + off;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(d)
}

/// Square matrix with a header row of indices.
pub fn dissimilarity_csv(d: &Array2<f64>) -> String {
    let mut s = String::new();
    let header: Vec<String> = (0..d.ncols()).map(|i| i.to_string()).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for row in d.rows() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::closed_form_inner;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn record(m: Array2<f64>) -> EmbeddingRecord {
        let n = m.nrows();
        EmbeddingRecord::new(m, vec![0; n], "test").unwrap()
    }

    #[test]
    fn line_in_64_dims_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dir: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = Array2::from_shape_fn((30, 64), |(r, c)| (r as f64 * 0.37 - 2.0) * dir[c] + 0.5);
        let ratios = pca_explained_variance(&record(m)).unwrap();
        assert!((ratios[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_gaussian_splits_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Array2::from_shape_fn((10_000, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let r = pca_explained_variance(&record(m)).unwrap();
        assert!((r[0] - 0.5).abs() < 0.03 && (r[1] - 0.5).abs() < 0.03, "{r:?}");
    }

    #[test]
    fn ratios_sorted_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_fn((50, 6), |(_, c)| rng.gen_range(-1.0..1.0) * (c + 1) as f64);
        let r = pca_explained_variance(&record(m)).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
        assert!(matches!(
            pca_explained_variance(&record(array![[1.0, 2.0]])),
            Err(DiagnosticsError::TooFewRows(1))
        ));
    }

    #[test]
    fn threshold_counts() {
        assert_eq!(components_for_threshold(&[1.0], 0.9).unwrap(), 1);
        assert_eq!(components_for_threshold(&[0.5, 0.3, 0.2], 0.9).unwrap(), 3);
        assert_eq!(components_for_threshold(&[0.6, 0.35, 0.05], 0.9).unwrap(), 2);
        assert!(components_for_threshold(&[1.0], 0.0).is_err());
    }

    #[test]
    fn jacobi_matches_characteristic_polynomial_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut a = Array2::<f64>::zeros((3, 3));
            for i in 0..3 {
                for j in i..3 {
                    let v = rng.gen_range(-2.0..2.0);
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
            // trigonometric roots of the depressed cubic
            let q = (a[[0, 0]] + a[[1, 1]] + a[[2, 2]]) / 3.0;
            let p1 = a[[0, 1]].powi(2) + a[[0, 2]].powi(2) + a[[1, 2]].powi(2);
            let p2 = (a[[0, 0]] - q).powi(2) + (a[[1, 1]] - q).powi(2) + (a[[2, 2]] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = (&a - &(Array2::<f64>::eye(3) * q)) / p;
            let det = b[[0, 0]] * (b[[1, 1]] * b[[2, 2]] - b[[1, 2]] * b[[2, 1]])
                - b[[0, 1]] * (b[[1, 0]] * b[[2, 2]] - b[[1, 2]] * b[[2, 0]])
                + b[[0, 2]] * (b[[1, 0]] * b[[2, 1]] - b[[1, 1]] * b[[2, 0]]);
            let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let mut want = vec![e1, 3.0 * q - e1 - e3, e3];
            want.sort_by(|x, y| y.total_cmp(x));
            let mut got = symmetric_eigenvalues(a.view(), 1e-12);
            got.sort_by(|x, y| y.total_cmp(x));
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn pca_translation_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Array2::from_shape_fn((40, 3), |(_, c)| rng.gen_range(-1.0..1.0) * (c + 1) as f64);
        let base = pca_ratios(m.view()).unwrap();
        let shifted = &m + &array![5.0, -3.0, 100.0];
        // random orthogonal map via Gram-Schmidt
        let mut q = Array2::<f64>::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        for i in 0..3 {
            for j in 0..i {
                let d = q.row(i).dot(&q.row(j));
                let rj = q.row(j).to_owned();
                q.row_mut(i).scaled_add(-d, &rj);
            }
            let norm = q.row(i).dot(&q.row(i)).sqrt();
            q.row_mut(i).mapv_inplace(|v| v / norm);
        }
        let rotated = m.dot(&q.t());
        for other in [pca_ratios(shifted.view()).unwrap(), pca_ratios(rotated.view()).unwrap()] {
            for (a, b) in base.iter().zip(&other) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dissimilarity_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = QuantumHead::new(3, 1, vec![0.0; 5]).unwrap();
        let mut m = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let dup = m.row(0).to_owned();
        m.row_mut(5).assign(&dup);
        let rec = record(m.clone());
        let d = dissimilarity_matrix(&head, &rec).unwrap();
        assert!(d[[0, 5]].abs() < 1e-12);
        for i in 0..6 {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..6 {
                assert_eq!(d[[i, j]], d[[j, i]]);
                assert!(d[[i, j]] >= 0.0);
                let a = closed_form_inner(m.row(i).as_slice().unwrap(), m.row(j).as_slice().unwrap(), 1).unwrap();
                let want = -a.norm_sqr().max(FIDELITY_FLOOR).ln();
                if i != j {
                    assert!((d[[i, j]] - want).abs() < 1e-8);
                }
            }
        }
        let csv = dissimilarity_csv(&d);
        assert!(csv.starts_with("0,1,2,3,4,5\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn orthogonal_pair_hits_the_floor() {
        let head = QuantumHead::new(1, 1, vec![0.0]).unwrap();
        let rec = record(array![[0.0], [std::f64::consts::FRAC_PI_2]]);
        let d = dissimilarity_matrix(&head, &rec).unwrap();
        assert!(d[[0, 1]] > 60.0 && d[[0, 1]] <= 690.8 + 1e-9);
        // F = e^-2 gives exactly 2
        let x = (-1.0f64).exp().acos();
        let d = dissimilarity_matrix(&head, &record(array![[0.0], [x]])).unwrap();
        assert!((d[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn embed_split_covers_test_classes() {
        let mut d = crate::data::synth_classes(6, 4, 3, 0.1, 0).unwrap();
        d.split_classes(2, 0).unwrap();
        let enc = Mlp::new(&[3, 5], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = embed_split(&enc, &d, Split::Test, Some(3), "t").unwrap();
        assert_eq!(r.matrix.dim(), (6, 5));
        assert!(r.labels.iter().all(|l| d.split.test.contains(l)));
    }

    #[test]
    fn csv_dumps() {
        let rec = EmbeddingRecord::new(array![[0.5, 1.0]], vec![7], "x").unwrap();
        assert_eq!(rec.to_csv(), "label,phi_0,phi_1\n7,0.5,1\n");
        let csv = explained_variance_csv(&[0.75, 0.25]);
        assert_eq!(csv, "component,ratio,cumulative\n1,0.75,0.75\n2,0.25,1\n");
        assert!(EmbeddingRecord::new(array![[f64::NAN]], vec![0], "x").is_err());
    }
}
