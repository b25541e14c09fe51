use ndarray::{concatenate, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FewShotError, FewShotModel, Head};
use crate::data::{Dataset, Episode};
use crate::kernel::{QuantumHead, DEGENERATE_SCORE_FLOOR};
use crate::nn::{distance_with_grad, Metric, MlpGrads};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `-p_true` with `p_c = |s_c|^2 / sum |s|^2`.
    NegativeProbability,
    /// `-log softmax(|s|^2)_true`.
    SoftmaxLog,
}

/// Loss and gradients of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub loss: f64,
    /// Fraction of queries classified correctly by the same forward pass.
    pub accuracy: f64,
    pub encoder_grads: MlpGrads,
    pub theta_grads: Vec<f64>,
}

impl EpisodeOutcome {
    /// Same ordering as [`FewShotModel::flat_params`].
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut g = self.encoder_grads.flatten();
        g.extend_from_slice(&self.theta_grads);
        g
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Prototype of each slot: mean support embedding.
fn prototypes(support: ArrayView2<f64>, n_way: usize, k: usize) -> Array2<f64> {
    let mut p = Array2::zeros((n_way, support.ncols()));
    for c in 0..n_way {
        for s in 0..k {
            p.row_mut(c).scaled_add(1.0 / k as f64, &support.row(c * k + s));
        }
    }
    p
}

struct HeadOutput {
    loss: f64,
    correct: usize,
    /// dL/d(embedding) rows: support then query.
    grad: Array2<f64>,
    theta: Vec<f64>,
}

fn classical_head(
    metric: Metric,
    support: ArrayView2<f64>,
    query: ArrayView2<f64>,
    episode: &Episode,
) -> Result<HeadOutput, FewShotError> {
    let (n_way, k) = (episode.n_way, episode.k_shot);
    let protos = prototypes(support, n_way, k);
    let nq = query.nrows();
    let mut grad = Array2::zeros((support.nrows() + nq, support.ncols()));
    let mut proto_grad = Array2::<f64>::zeros(protos.dim());
    let mut loss = 0.0;
    let mut correct = 0;
    for (qi, &truth) in episode.query_slots.iter().enumerate() {
        let q = query.row(qi).to_vec();
        let mut d = Vec::with_capacity(n_way);
        let mut gp = Vec::with_capacity(n_way);
        let mut gq = Vec::with_capacity(n_way);
        for c in 0..n_way {
            let (dist, dp, dq) = distance_with_grad(protos.row(c).as_slice().unwrap(), &q, metric)?;
            d.push(dist);
            gp.push(dp);
            gq.push(dq);
        }
        let logits: Vec<f64> = d.iter().map(|v| -v).collect();
        if argmax_lowest(&logits) == truth {
            correct += 1;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
        loss += -(logits[truth] - m - z.ln());
        for c in 0..n_way {
            // dL/dd_c = delta_ct - p_c
            let w = (if c == truth { 1.0 } else { 0.0 } - p[c]) / nq as f64;
            for j in 0..q.len() {
                proto_grad[[c, j]] += w * gp[c][j];
                grad[[support.nrows() + qi, j]] += w * gq[c][j];
            }
        }
    }
    for c in 0..n_way {
        for s in 0..k {
            grad.row_mut(c * k + s).scaled_add(1.0 / k as f64, &proto_grad.row(c));
        }
    }
    Ok(HeadOutput {
        loss: loss / nq as f64,
        correct,
        grad,
        theta: Vec::new(),
    })
}

/// Support x query pair rows: for each query, every support in slot order.
fn pair_rows<'a>(support: &'a ArrayView2<f64>, query: &'a ArrayView2<f64>) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    let ns = support.nrows();
    let mut left = Vec::with_capacity(ns * query.nrows());
    let mut right = Vec::with_capacity(ns * query.nrows());
    for q in query.rows() {
        for s in support.rows() {
            left.push(s.to_slice().expect("standard layout"));
            right.push(q.to_slice().expect("standard layout"));
        }
    }
    (left, right)
}

fn quantum_head(
    head: &QuantumHead,
    mode: LossMode,
    support: ArrayView2<f64>,
    query: ArrayView2<f64>,
    episode: &Episode,
) -> Result<HeadOutput, FewShotError> {
    let (n_way, k) = (episode.n_way, episode.k_shot);
    let ns = support.nrows();
    let nq = query.nrows();
    let (left, right) = pair_rows(&support, &query);
    let jac = head.pair_jacobian(&left, &right)?;
    let amps = &jac.batch.amps;
    let mut adjoint = vec![Complex64::new(0.0, 0.0); amps.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (qi, &truth) in episode.query_slots.iter().enumerate() {
        let row = &amps[qi * ns..(qi + 1) * ns];
        let scores: Vec<Complex64> = row
            .chunks(k)
            .map(|c| c.iter().sum::<Complex64>() / k as f64)
            .collect();
        let mag: Vec<f64> = scores.iter().map(|s| s.norm_sqr()).collect();
        if argmax_lowest(&mag) == truth {
            correct += 1;
        }
        // dL/d|s_c|^2 per class
        let dmag: Vec<f64> = match mode {
            LossMode::NegativeProbability => {
                let z: f64 = mag.iter().sum();
                if !(z > DEGENERATE_SCORE_FLOOR) {
                    return Err(FewShotError::DegenerateEpisode);
                }
                let pt = mag[truth] / z;
                loss += -pt;
                (0..n_way)
                    .map(|c| -((if c == truth { 1.0 } else { 0.0 }) - pt) / z)
                    .collect()
            }
            LossMode::SoftmaxLog => {
                let m = mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = mag.iter().map(|v| (v - m).exp()).sum();
                loss += -(mag[truth] - m - z.ln());
                (0..n_way)
                    .map(|c| (mag[c] - m).exp() / z - if c == truth { 1.0 } else { 0.0 })
                    .collect()
            }
        };
        for c in 0..n_way {
            // d|s|^2 adjoint is 2 s; each amplitude enters s with weight 1/k
            let g = scores[c] * (2.0 * dmag[c] / (k as f64 * nq as f64));
            for s in 0..k {
                adjoint[qi * ns + c * k + s] = g;
            }
        }
    }
    let pg = jac.chain(&adjoint)?;
    let mut grad = Array2::zeros((ns + nq, support.ncols()));
    for qi in 0..nq {
        for si in 0..ns {
            let r = qi * ns + si;
            for j in 0..support.ncols() {
                grad[[si, j]] += pg.left[r][j];
                grad[[ns + qi, j]] += pg.right[r][j];
            }
        }
    }
    Ok(HeadOutput {
        loss: loss / nq as f64,
        correct,
        grad,
        theta: pg.theta,
    })
}

fn embed(model: &FewShotModel, dataset: &Dataset, episode: &Episode) -> Result<(Array2<f64>, crate::nn::ForwardCache), FewShotError> {
    let x = concatenate(
        Axis(0),
        &[dataset.gather(&episode.support).view(), dataset.gather(&episode.query).view()],
    )
    .expect("support and query share the sample width");
    Ok(model.encoder.forward(x.view())?)
}

/// Episode loss with gradients for the encoder and, for the quantum head,
/// theta.
pub fn episode_loss(model: &FewShotModel, dataset: &Dataset, episode: &Episode) -> Result<EpisodeOutcome, FewShotError> {
    let (emb, cache) = embed(model, dataset, episode)?;
    let ns = episode.support.len();
    let support = emb.slice(ndarray::s![..ns, ..]);
    let query = emb.slice(ndarray::s![ns.., ..]);
    let out = match &model.head {
        Head::Classical(metric) => classical_head(*metric, support, query, episode)?,
        Head::Quantum { head, loss_mode } => quantum_head(head, *loss_mode, support, query, episode)?,
    };
    let (encoder_grads, _) = model.encoder.backward(&cache, out.grad.view())?;
    Ok(EpisodeOutcome {
        loss: out.loss,
        accuracy: out.correct as f64 / episode.query.len().max(1) as f64,
        encoder_grads,
        theta_grads: out.theta,
    })
}

/// Predicted slot per query; ties go to the lowest slot.
pub fn predict(model: &FewShotModel, dataset: &Dataset, episode: &Episode) -> Result<Vec<usize>, FewShotError> {
    let emb = model
        .encoder
        .apply(dataset.gather(&episode.support).view())?;
    let q = model.encoder.apply(dataset.gather(&episode.query).view())?;
    let (n_way, k) = (episode.n_way, episode.k_shot);
    match &model.head {
        Head::Classical(metric) => {
            let protos = prototypes(emb.view(), n_way, k);
            q.rows()
                .into_iter()
                .map(|qr| {
                    let qv = qr.to_vec();
                    let neg: Vec<f64> = (0..n_way)
                        .map(|c| {
                            distance_with_grad(protos.row(c).as_slice().unwrap(), &qv, *metric).map(|d| -d.0)
                        })
                        .collect::<Result<_, _>>()?;
                    Ok(argmax_lowest(&neg))
                })
                .collect()
        }
        Head::Quantum { head, .. } => {
            let sv = emb.view();
            let qv = q.view();
            let (left, right) = pair_rows(&sv, &qv);
            let amps = head.inner_products(&left, &right)?.amps;
            let ns = sv.nrows();
            Ok(amps
                .chunks(ns)
                .map(|row| {
                    let mag: Vec<f64> = row
                        .chunks(k)
                        .map(|c| (c.iter().sum::<Complex64>() / k as f64).norm_sqr())
                        .collect();
                    argmax_lowest(&mag)
                })
                .collect())
        }
    }
}
