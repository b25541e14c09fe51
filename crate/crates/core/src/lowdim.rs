//! Two-input classification and regression through two-qubit circuits, and
//! the feature-space maps used to inspect what the encoder learned.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{expectation_z, lowdim_template, Circuit, CircuitError, LOWDIM_PARAMS};
use crate::nn::{Mlp, NnError, Optimizer};

/// Target scale: `s * (x0 - x1)` stays inside `[-1, 1]` for inputs in `[-1, 1]^2`.
pub const TARGET_SCALE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum LowDimError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowDimKind {
    Classify,
    Regress1,
    Regress2,
}

impl LowDimKind {
    pub fn n_heads(self) -> usize {
        match self {
            LowDimKind::Regress2 => 2,
            _ => 1,
        }
    }

    pub fn target(self, x: [f64; 2]) -> Vec<f64> {
        match self {
            LowDimKind::Classify => vec![if x[0] > x[1] { 1.0 } else { -1.0 }],
            LowDimKind::Regress1 => vec![TARGET_SCALE * (x[0] - x[1])],
            LowDimKind::Regress2 => vec![TARGET_SCALE * (x[0] - x[1]), TARGET_SCALE * (x[0] + x[1])],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowDimSample {
    pub x: [f64; 2],
    pub y: Vec<f64>,
}

/// Inputs uniform on `[-1, 1]^2` with the task's targets.
pub fn make_lowdim_dataset(kind: LowDimKind, size: usize, seed: u64) -> Result<Vec<LowDimSample>, LowDimError> {
    if size == 0 {
        return Err(LowDimError::Config(vec!["size must be at least 1".into()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..size)
        .map(|_| {
            let x = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            LowDimSample { x, y: kind.target(x) }
        })
        .collect())
}

fn default_hidden() -> usize {
    32
}
fn default_depth() -> usize {
    8
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowDimConfig {
    pub task: LowDimKind,
    pub size: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Hidden width of the encoder.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Number of fully connected layers.
    #[serde(default = "default_depth")]
    pub depth: usize,
    pub seed: u64,
}

impl LowDimConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut e = Vec::new();
        for (name, v) in [
            ("size", self.size),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("depth", self.depth),
        ] {
            if v == 0 {
                e.push(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            e.push(format!("lr {} must be positive", self.lr));
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }
}

/// Shared encoder feeding one two-qubit circuit per output.
#[derive(Clone, Debug)]
pub struct LowDimModel {
    pub kind: LowDimKind,
    pub encoder: Mlp,
    /// Variational angles of each head.
    pub heads: Vec<Vec<f64>>,
    template: Circuit,
}

/// One head's `<Z_0>` and its derivatives with respect to the two embedding
/// angles and the head's variational angles.
fn head_value_and_grad(template: &Circuit, phi: [f64; 2], omega: &[f64]) -> Result<(f64, Vec<f64>), CircuitError> {
    let mut params = Vec::with_capacity(2 + LOWDIM_PARAMS);
    params.extend_from_slice(&phi);
    params.extend_from_slice(omega);
    let value = expectation_z(template, &params, 0)?;
    // every slot drives exactly one rotation, so the two-term shift rule is exact
    let mut grad = Vec::with_capacity(params.len());
    for s in 0..params.len() {
        let orig = params[s];
        params[s] = orig + FRAC_PI_2;
        let plus = expectation_z(template, &params, 0)?;
        params[s] = orig - FRAC_PI_2;
        let minus = expectation_z(template, &params, 0)?;
        params[s] = orig;
        grad.push((plus - minus) / 2.0);
    }
    Ok((value, grad))
}

impl LowDimModel {
    pub fn new<R: Rng>(kind: LowDimKind, hidden: usize, depth: usize, rng: &mut R) -> Result<Self, LowDimError> {
        let mut widths = vec![2];
        widths.extend(std::iter::repeat(hidden).take(depth.saturating_sub(1)));
        widths.push(2);
        let encoder = Mlp::new(&widths, rng)?;
        let heads = (0..kind.n_heads())
            .map(|_| (0..LOWDIM_PARAMS).map(|_| rng.gen_range(-PI..PI)).collect())
            .collect();
        Ok(Self {
            kind,
            encoder,
            heads,
            template: lowdim_template(),
        })
    }

    pub fn with_encoder(kind: LowDimKind, encoder: Mlp, heads: Vec<Vec<f64>>) -> Self {
        Self {
            kind,
            encoder,
            heads,
            template: lowdim_template(),
        }
    }

    /// Prequantum embeddings of `inputs`.
    pub fn embed(&self, inputs: &[[f64; 2]]) -> Result<Array2<f64>, LowDimError> {
        let x = Array2::from_shape_fn((inputs.len(), 2), |(r, c)| inputs[r][c]);
        Ok(self.encoder.apply(x.view())?)
    }

    /// `<Z_0>` of head `h` at a given embedding.
    pub fn head_value(&self, h: usize, phi: [f64; 2]) -> Result<f64, LowDimError> {
        let mut params = phi.to_vec();
        params.extend_from_slice(&self.heads[h]);
        Ok(expectation_z(&self.template, &params, 0)?)
    }

    /// Per input, one prediction per head.
    pub fn predict(&self, inputs: &[[f64; 2]]) -> Result<Vec<Vec<f64>>, LowDimError> {
        let emb = self.embed(inputs)?;
        emb.rows()
            .into_iter()
            .map(|r| {
                (0..self.heads.len())
                    .map(|h| self.head_value(h, [r[0], r[1]]))
                    .collect()
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.encoder.flat_params();
        for h in &self.heads {
            p.extend_from_slice(h);
        }
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<(), LowDimError> {
        let n = self.encoder.n_params();
        self.encoder.set_flat_params(&p[..n])?;
        for (h, chunk) in self.heads.iter_mut().zip(p[n..].chunks(LOWDIM_PARAMS)) {
            h.copy_from_slice(chunk);
        }
        Ok(())
    }

    /// Mean squared error over samples and heads, and its gradient in
    /// [`LowDimModel::flat_params`] order.
    pub fn loss_and_grad(&self, batch: &[LowDimSample]) -> Result<(f64, Vec<f64>), LowDimError> {
        let inputs: Vec<[f64; 2]> = batch.iter().map(|s| s.x).collect();
        let x = Array2::from_shape_fn((inputs.len(), 2), |(r, c)| inputs[r][c]);
        let (emb, cache) = self.encoder.forward(x.view())?;
        let n_heads = self.heads.len();
        let norm = (batch.len() * n_heads) as f64;
        let per_sample: Vec<Vec<(f64, Vec<f64>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(b, s)| {
                (0..n_heads)
                    .map(|h| {
                        let (v, g) = head_value_and_grad(&self.template, [emb[[b, 0]], emb[[b, 1]]], &self.heads[h])?;
                        Ok((v - s.y[h], g))
                    })
                    .collect::<Result<Vec<_>, CircuitError>>()
            })
            .collect::<Result<_, _>>()?;
        let mut loss = 0.0;
        let mut upstream = Array2::zeros((batch.len(), 2));
        let mut head_grads = vec![vec![0.0; LOWDIM_PARAMS]; n_heads];
        for (b, heads) in per_sample.iter().enumerate() {
            for (h, (err, g)) in heads.iter().enumerate() {
                loss += err * err;
                let w = 2.0 * err / norm;
                upstream[[b, 0]] += w * g[0];
                upstream[[b, 1]] += w * g[1];
                for (acc, gi) in head_grads[h].iter_mut().zip(&g[2..]) {
                    *acc += w * gi;
                }
            }
        }
        let (enc, _) = self.encoder.backward(&cache, upstream.view())?;
        let mut grad = enc.flatten();
        for h in head_grads {
            grad.extend(h);
        }
        Ok((loss / norm, grad))
    }

    /// Sign accuracy for classification, otherwise mean squared error.
    pub fn score(&self, data: &[LowDimSample]) -> Result<f64, LowDimError> {
        let inputs: Vec<[f64; 2]> = data.iter().map(|s| s.x).collect();
        let pred = self.predict(&inputs)?;
        Ok(match self.kind {
            LowDimKind::Classify => {
                let hits = pred
                    .iter()
                    .zip(data)
                    .filter(|(p, s)| (p[0] >= 0.0) == (s.y[0] > 0.0))
                    .count();
                hits as f64 / data.len() as f64
            }
            _ => {
                let mut se = 0.0;
                for (p, s) in pred.iter().zip(data) {
                    for (a, b) in p.iter().zip(&s.y) {
                        se += (a - b).powi(2);
                    }
                }
                se / (data.len() * self.heads.len()) as f64
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowDimEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Sign accuracy (classify) or MSE (regression) on the training set.
    pub score: f64,
}

pub struct LowDimOutcome {
    pub model: LowDimModel,
    pub history: Vec<LowDimEpoch>,
}

/// Minibatch Adam on MSE; batches are reshuffled each epoch from the seed.
pub fn train_lowdim(config: &LowDimConfig) -> Result<LowDimOutcome, LowDimError> {
    config.validate().map_err(LowDimError::Config)?;
    let data = make_lowdim_dataset(config.task, config.size, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut model = LowDimModel::new(config.task, config.hidden, config.depth, &mut rng)?;
    let mut params = model.flat_params();
    let mut opt = Optimizer::adam(config.lr, params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<LowDimSample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grad) = model.loss_and_grad(&batch)?;
            opt.step(&mut params, &grad)?;
            model.set_flat_params(&params)?;
            total += loss * chunk.len() as f64;
        }
        history.push(LowDimEpoch {
            epoch,
            loss: total / data.len() as f64,
            score: model.score(&data)?,
        });
    }
    Ok(LowDimOutcome { model, history })
}

/// `<Z_0>` of head `h` over an `r x r` grid of embeddings spanning
/// `[-pi, pi]^2`, rows `(phi0, phi1, expectation)`.
pub fn feature_map(model: &LowDimModel, h: usize, resolution: usize) -> Result<Vec<[f64; 3]>, LowDimError> {
    let coord = |i: usize| {
        if resolution == 1 {
            0.0
        } else {
            -PI + 2.0 * PI * i as f64 / (resolution - 1) as f64
        }
    };
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let phi = [coord(i), coord(j)];
            rows.push([phi[0], phi[1], model.head_value(h, phi)?]);
        }
    }
    Ok(rows)
}

/// Embeddings of a fresh uniform input sample.
pub fn scatter(model: &LowDimModel, size: usize, seed: u64) -> Result<Array2<f64>, LowDimError> {
    let inputs: Vec<[f64; 2]> = make_lowdim_dataset(model.kind, size, seed)?
        .into_iter()
        .map(|s| s.x)
        .collect();
    model.embed(&inputs)
}

pub fn feature_map_csv(rows: &[[f64; 3]]) -> String {
    let mut s = String::from("phi0,phi1,expectation\n");
    for r in rows {
        writeln!(s, "{},{},{}", r[0], r[1], r[2]).unwrap();
    }
    s
}

pub fn scatter_csv(points: &Array2<f64>) -> String {
    let mut s = String::from("phi0,phi1\n");
    for r in points.rows() {
        writeln!(s, "{},{}", r[0], r[1]).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use ndarray::Array1;

    #[test]
    fn targets() {
        assert_eq!(LowDimKind::Classify.target([0.7, 0.2]), vec![1.0]);
        assert_eq!(LowDimKind::Classify.target([0.1, 0.5]), vec![-1.0]);
        assert!((LowDimKind::Regress1.target([0.7, 0.2])[0] - 0.25).abs() < 1e-15);
        let d = make_lowdim_dataset(LowDimKind::Regress2, 200, 3).unwrap();
        assert!(d.iter().all(|s| s.y.len() == 2 && s.y.iter().all(|v| v.abs() <= 1.0)));
        assert!(d.iter().all(|s| s.x.iter().all(|v| v.abs() <= 1.0)));
        assert!(make_lowdim_dataset(LowDimKind::Classify, 0, 0).is_err());
    }

    #[test]
    fn shift_rule_matches_finite_differences() {
        let t = lowdim_template();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let phi = [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)];
            let omega: Vec<f64> = (0..LOWDIM_PARAMS).map(|_| rng.gen_range(-PI..PI)).collect();
            let (_, g) = head_value_and_grad(&t, phi, &omega).unwrap();
            let mut p = phi.to_vec();
            p.extend(&omega);
            let h = 1e-5;
            for s in 0..p.len() {
                let mut a = p.clone();
                a[s] += h;
                let mut b = p.clone();
                b[s] -= h;
                let fd = (expectation_z(&t, &a, 0).unwrap() - expectation_z(&t, &b, 0).unwrap()) / (2.0 * h);
                assert!((g[s] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "slot {s}: {} vs {fd}", g[s]);
            }
        }
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = LowDimModel::new(LowDimKind::Regress2, 6, 3, &mut rng).unwrap();
        let data = make_lowdim_dataset(LowDimKind::Regress2, 5, 1).unwrap();
        let (_, g) = m.loss_and_grad(&data).unwrap();
        let p = m.flat_params();
        let h = 1e-6;
        for i in (0..p.len()).step_by(7).chain(p.len() - 12..p.len()) {
            let mut q = p.clone();
            q[i] += h;
            m.set_flat_params(&q).unwrap();
            let plus = m.loss_and_grad(&data).unwrap().0;
            q[i] -= 2.0 * h;
            m.set_flat_params(&q).unwrap();
            let minus = m.loss_and_grad(&data).unwrap().0;
            let fd = (plus - minus) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn grid_and_scatter_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = LowDimModel::new(LowDimKind::Classify, 8, 8, &mut rng).unwrap();
        let grid = feature_map(&m, 0, 7).unwrap();
        assert_eq!(grid.len(), 49);
        assert!(grid.iter().all(|r| r[2].abs() <= 1.0 + 1e-12));
        assert_eq!(grid[0][0], -PI);
        assert_eq!(grid[48][1], PI);
        assert_eq!(feature_map_csv(&grid).lines().count(), 50);
        assert_eq!(scatter(&m, 10, 0).unwrap().dim(), (10, 2));
    }

    #[test]
    fn constant_encoder_collapses_scatter() {
        let zero = Mlp::from_layers(vec![Layer {
            weight: Array2::zeros((2, 2)),
            bias: Array1::from(vec![0.3, -0.2]),
        }])
        .unwrap();
        let m = LowDimModel::with_encoder(LowDimKind::Classify, zero, vec![vec![0.0; LOWDIM_PARAMS]]);
        let s = scatter(&m, 20, 1).unwrap();
        assert!(s.rows().into_iter().all(|r| r[0] == 0.3 && r[1] == -0.2));
    }

    #[test]
    fn constant_targets_fit_to_zero_loss() {
        // a target the circuit can produce from any input: zero weights on
        // the last layer make every embedding the bias, which trains to fit
        let data: Vec<LowDimSample> = (0..16)
            .map(|i| LowDimSample {
                x: [i as f64 / 16.0, -0.5],
                y: vec![0.4],
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = LowDimModel::new(LowDimKind::Regress1, 8, 2, &mut rng).unwrap();
        let mut p = m.flat_params();
        let mut opt = Optimizer::adam(2e-2, p.len());
        for _ in 0..600 {
            let (_, g) = m.loss_and_grad(&data).unwrap();
            opt.step(&mut p, &g).unwrap();
            m.set_flat_params(&p).unwrap();
        }
        assert!(m.loss_and_grad(&data).unwrap().0 < 1e-4);
    }
}
