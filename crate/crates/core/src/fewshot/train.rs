use std::fmt::Write as _;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_loss, predict, DatasetSpec, FewShotError, FewShotModel, TrainConfig};
use crate::data::{load_manifest, sample_episode, synth_classes, Dataset, Split};
use crate::nn::Optimizer;

/// Separate ChaCha streams so evaluation never perturbs training draws.
const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Half-width of the 95% interval, `1.96 * stderr` over episodes.
    pub ci: f64,
    pub per_episode: Vec<f64>,
}

/// Mean query accuracy over `n_episodes` test-split episodes.
pub fn evaluate(
    model: &FewShotModel,
    dataset: &Dataset,
    n_episodes: usize,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
) -> Result<EvalResult, FewShotError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_EVAL);
    let mut per_episode = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let e = sample_episode(dataset, Split::Test, n_way, k_shot, q_query, &mut rng)?;
        let pred = predict(model, dataset, &e)?;
        let correct = pred.iter().zip(&e.query_slots).filter(|(p, t)| p == t).count();
        per_episode.push(correct as f64 / pred.len().max(1) as f64);
    }
    let n = per_episode.len() as f64;
    let accuracy = if n > 0.0 { per_episode.iter().sum::<f64>() / n } else { 0.0 };
    let ci = if per_episode.len() > 1 {
        let var = per_episode.iter().map(|a| (a - accuracy).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(EvalResult {
        accuracy,
        ci,
        per_episode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub ci: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub episode_losses: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
    pub best_acc: Option<f64>,
    pub best_ci: Option<f64>,
    pub best_epoch: Option<usize>,
    pub skipped_episodes: usize,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Model at the best evaluation; `None` when nothing was evaluated.
    pub best_model: Option<FewShotModel>,
    pub final_model: FewShotModel,
    pub dataset: Dataset,
}

/// Builds the dataset named by the config, with its class split applied.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset, FewShotError> {
    Ok(match spec {
        DatasetSpec::Synthetic {
            n_classes,
            per_class,
            dim,
            spread,
            n_test,
            seed,
        } => {
            let mut d = synth_classes(*n_classes, *per_class, *dim, *spread, *seed)?;
            d.split_classes(*n_test, *seed)?;
            d
        }
        DatasetSpec::Idx {
            manifest,
            n_test,
            split_seed,
        } => {
            let mut d = load_manifest(manifest)?;
            d.split_classes(*n_test, *split_seed)?;
            d
        }
    })
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome, FewShotError> {
    train_with(config, |_, _, _| {})
}

/// Trains with one optimizer step per episode; `on_epoch` sees the metrics,
/// the model and the dataset after every evaluation.
pub fn train_with<F>(config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome, FewShotError>
where
    F: FnMut(&EpochMetrics, &FewShotModel, &Dataset),
{
    config.validate().map_err(FewShotError::Config)?;
    let dataset = build_dataset(&config.dataset)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = FewShotModel::init(config, dataset.dim, &mut init_rng)?;
    let mut params = model.flat_params();
    let mut opt = Optimizer::adam(config.lr, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_TRAIN);

    let mut report = TrainReport {
        config: config.clone(),
        seed: config.seed,
        episode_losses: Vec::new(),
        epochs: Vec::new(),
        best_acc: None,
        best_ci: None,
        best_epoch: None,
        skipped_episodes: 0,
    };
    let mut best_model = None;
    for epoch in 0..config.epochs {
        let mut skipped = 0;
        let mut losses = Vec::with_capacity(config.episodes_per_epoch);
        for _ in 0..config.episodes_per_epoch {
            let e = sample_episode(&dataset, Split::Train, config.n_way, config.k_shot, config.q_query, &mut rng)?;
            let out = match episode_loss(&model, &dataset, &e) {
                Err(FewShotError::DegenerateEpisode) => {
                    skipped += 1;
                    warn!("epoch {epoch}: skipping episode with all-zero prototype scores");
                    if skipped * 100 > config.episodes_per_epoch {
                        return Err(FewShotError::TooManyDegenerate {
                            epoch,
                            skipped,
                            episodes: config.episodes_per_epoch,
                        });
                    }
                    continue;
                }
                other => other?,
            };
            opt.step(&mut params, &out.flat_grads())?;
            model.set_flat_params(&params)?;
            losses.push(out.loss);
        }
        let eval = evaluate(
            &model,
            &dataset,
            config.eval_episodes,
            config.eval_n_way,
            config.eval_k_shot,
            config.eval_q_query,
            config.seed,
        )?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            test_acc: eval.accuracy,
            ci: eval.ci,
            skipped,
        };
        if report.best_acc.map_or(true, |b| eval.accuracy > b) {
            report.best_acc = Some(eval.accuracy);
            report.best_ci = Some(eval.ci);
            report.best_epoch = Some(epoch);
            best_model = Some(model.clone());
        }
        on_epoch(&metrics, &model, &dataset);
        report.skipped_episodes += skipped;
        report.episode_losses.extend(losses);
        report.epochs.push(metrics);
    }
    Ok(TrainOutcome {
        report,
        best_model,
        final_model: model,
        dataset,
    })
}

/// `epoch,train_loss,test_acc,ci` with shortest round-trip float formatting.
pub fn metrics_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,train_loss,test_acc,ci\n");
    for m in &report.epochs {
        writeln!(s, "{},{},{},{}", m.epoch, m.train_loss, m.test_acc, m.ci).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fewshot::{Head, HeadKind, LossMode};
    use crate::nn::{Layer, Metric, Mlp};
    use ndarray::{Array1, Array2};

    fn config(head: HeadKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            dataset: DatasetSpec::Synthetic {
                n_classes: 30,
                per_class: 12,
                dim: 8,
                spread: 0.05,
                n_test: 10,
                seed: 5,
            },
            head,
            n_qubits: 4,
            layers: 1,
            theta_range: 0.0,
            loss_mode: LossMode::NegativeProbability,
            n_way: 5,
            k_shot: 2,
            q_query: 3,
            episodes_per_epoch: 10,
            epochs,
            lr: 1e-2,
            seed: 3,
            hidden: vec![16],
            eval_episodes: 10,
            eval_n_way: 5,
            eval_k_shot: 5,
            eval_q_query: 5,
        }
    }

    #[test]
    fn zero_epochs_gives_empty_report() {
        let out = train(&config(HeadKind::ClassicalEuclidean, 0)).unwrap();
        assert!(out.report.episode_losses.is_empty());
        assert!(out.report.epochs.is_empty());
        assert!(out.best_model.is_none());
        assert_eq!(metrics_csv(&out.report), "epoch,train_loss,test_acc,ci\n");
    }

    #[test]
    fn runs_are_bit_identical() {
        for head in [HeadKind::ClassicalCosine, HeadKind::Quantum] {
            let a = train(&config(head, 2)).unwrap().report;
            let b = train(&config(head, 2)).unwrap().report;
            assert_eq!(a, b);
            assert_eq!(a.episode_losses.len(), 20);
            assert_eq!(a.best_acc, a.epochs.iter().map(|e| e.test_acc).reduce(f64::max));
        }
    }

    #[test]
    fn invalid_config_rejected_before_work() {
        let mut c = config(HeadKind::Quantum, 1);
        c.n_way = 0;
        c.lr = 0.0;
        match train(&c) {
            Err(FewShotError::Config(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn identity_encoder_on_separable_data_is_perfect() {
        let c = config(HeadKind::ClassicalEuclidean, 0);
        let d = build_dataset(&c.dataset).unwrap();
        let m = FewShotModel::new(
            Mlp::from_layers(vec![Layer {
                weight: Array2::eye(8),
                bias: Array1::zeros(8),
            }])
            .unwrap(),
            Head::Classical(Metric::Euclidean),
        )
        .unwrap();
        let r = evaluate(&m, &d, 20, 5, 5, 5, 0).unwrap();
        assert_eq!(r.accuracy, 1.0);
        let one = evaluate(&m, &d, 1, 5, 5, 1, 0).unwrap();
        assert!(one.accuracy == 0.0 || one.accuracy == 1.0 || one.per_episode.len() == 1);
    }

    #[test]
    fn uniform_scores_are_at_chance() {
        // a zero encoder makes every prototype identical; ties go to slot 0,
        // which is a uniformly random class
        let c = config(HeadKind::ClassicalEuclidean, 0);
        let d = build_dataset(&c.dataset).unwrap();
        let m = FewShotModel::new(Mlp::zeros(&[8, 4]).unwrap(), Head::Classical(Metric::Euclidean)).unwrap();
        let r = evaluate(&m, &d, 400, 5, 1, 1, 4).unwrap();
        assert!((r.accuracy - 0.2).abs() <= 2.0 * r.ci.max(0.02), "{r:?}");
    }
}
