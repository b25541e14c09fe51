//! Subcommands that train or inspect models.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use qproto::data::{Dataset, DatasetManifest, Split};
use qproto::diagnostics::{
    components_for_threshold, dissimilarity_csv, dissimilarity_matrix, embed_split, explained_variance_csv,
    pca_explained_variance, MAX_DISSIMILARITY_ROWS,
};
use qproto::fewshot::{
    build_dataset, evaluate, metrics_csv, train_with, DatasetSpec, FewShotError, FewShotModel, Head, HeadKind,
    LossMode, TrainConfig, TrainReport,
};
use qproto::kernel::QuantumHead;
use qproto::lowdim::{feature_map, feature_map_csv, scatter, scatter_csv, train_lowdim, LowDimConfig, LowDimError};
use qproto::nn::{read_checkpoint, write_checkpoint, Metric};

use crate::run::{content_hash, load_config, read_file, resolve_out_dir, CliError, CliResult, Globals, RunDir};

fn fewshot_err(e: FewShotError) -> CliError {
    match e {
        FewShotError::Config(errs) => CliError::Config(format!("invalid configuration:\n  {}", errs.join("\n  "))),
        other => CliError::Runtime(other.to_string()),
    }
}

fn lowdim_err(e: LowDimError) -> CliError {
    match e {
        LowDimError::Config(errs) => CliError::Config(format!("invalid configuration:\n  {}", errs.join("\n  "))),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Bytes of every input file the dataset spec refers to, checked up front.
fn dataset_inputs(spec: &DatasetSpec) -> CliResult<Vec<(String, Vec<u8>)>> {
    let DatasetSpec::Idx { manifest, .. } = spec else {
        return Ok(Vec::new());
    };
    let bytes = read_file(manifest, "dataset manifest")?;
    let m: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: invalid manifest: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let images = base.join(&m.path_images);
    let labels = base.join(&m.path_labels);
    Ok(vec![
        ("manifest".into(), bytes),
        ("images".into(), read_file(&images, "image file")?),
        ("labels".into(), read_file(&labels, "label file")?),
    ])
}

fn train_hash(command: &str, config: &TrainConfig, extra: &[(&str, &[u8])]) -> CliResult<String> {
    let canonical = serde_json::to_vec(config).map_err(CliError::runtime)?;
    let inputs = dataset_inputs(&config.dataset)?;
    let mut parts: Vec<(&str, &[u8])> = vec![("command", command.as_bytes()), ("config", &canonical)];
    parts.extend(inputs.iter().map(|(n, b)| (n.as_str(), b.as_slice())));
    parts.extend_from_slice(extra);
    Ok(content_hash(&parts))
}

fn checked_train_config(config: TrainConfig) -> CliResult<TrainConfig> {
    config.validate().map_err(|e| fewshot_err(FewShotError::Config(e)))?;
    Ok(config)
}

/// Head description saved next to each encoder checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadFile {
    pub head: HeadKind,
    pub n_qubits: usize,
    pub layers: usize,
    pub loss_mode: LossMode,
    pub theta: Option<Vec<f64>>,
}

fn save_model(run: &RunDir, stem: &str, config: &TrainConfig, model: &FewShotModel) -> CliResult<()> {
    let mut buf = Vec::new();
    write_checkpoint(&model.encoder, &mut buf).map_err(CliError::runtime)?;
    run.write(&format!("{stem}.ckpt"), buf)?;
    run.write_json(
        &format!("{stem}_head.json"),
        &HeadFile {
            head: config.head,
            n_qubits: config.n_qubits,
            layers: config.layers,
            loss_mode: config.loss_mode,
            theta: model.theta().map(<[f64]>::to_vec),
        },
    )?;
    Ok(())
}

/// Config, model and raw checkpoint bytes from a training run directory.
pub fn load_model(dir: &Path, which: &str) -> CliResult<(TrainConfig, FewShotModel, Vec<u8>)> {
    let config_path = dir.join("config.json");
    let config: TrainConfig = load_config::<TrainConfig>(&config_path)?.config;
    let ckpt_path = dir.join(format!("{which}.ckpt"));
    let ckpt = read_file(&ckpt_path, "checkpoint")?;
    let encoder =
        read_checkpoint(ckpt.as_slice()).map_err(|e| CliError::Config(format!("{}: {e}", ckpt_path.display())))?;
    let head_path = dir.join(format!("{which}_head.json"));
    let head_file: HeadFile = serde_json::from_slice(&read_file(&head_path, "head file")?)
        .map_err(|e| CliError::Config(format!("{}: {e}", head_path.display())))?;
    let head = match head_file.head {
        HeadKind::ClassicalEuclidean => Head::Classical(Metric::Euclidean),
        HeadKind::ClassicalCosine => Head::Classical(Metric::Cosine),
        HeadKind::Quantum => {
            let theta = head_file
                .theta
                .ok_or_else(|| CliError::Config(format!("{}: quantum head without theta", head_path.display())))?;
            Head::Quantum {
                head: QuantumHead::new(head_file.n_qubits, head_file.layers, theta)
                    .map_err(|e| CliError::Config(format!("{}: {e}", head_path.display())))?,
                loss_mode: head_file.loss_mode,
            }
        }
    };
    let model = FewShotModel::new(encoder, head).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    Ok((config, model, ckpt))
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub out_dir: Option<PathBuf>,
}

/// Runs one training job into a fresh run directory and returns its report.
pub fn run_training(config: &TrainConfig, globals: &Globals, out_flag: Option<&Path>, command: &str) -> CliResult<(RunDir, TrainReport)> {
    let hash = train_hash(command, config, &[])?;
    let out_dir = resolve_out_dir(out_flag, globals.out_dir.as_deref());
    let run = RunDir::create(&out_dir, &hash)?;
    run.snapshot(command, config, config.seed)?;
    info!("run directory {}", run.path.display());

    let mut dump_err = None;
    let outcome = train_with(config, |m, model, dataset| {
        if dump_err.is_none() {
            dump_err = dump_epoch(&run, dataset, m.epoch, model).err();
        }
        info!(
            "epoch {} loss {:.6} acc {:.4} ± {:.4}",
            m.epoch, m.train_loss, m.test_acc, m.ci
        );
    })
    .map_err(fewshot_err)?;
    if let Some(e) = dump_err {
        return Err(e);
    }
    run.write("metrics.csv", metrics_csv(&outcome.report))?;
    run.write_json("report.json", &outcome.report)?;
    save_model(&run, "final", config, &outcome.final_model)?;
    if let Some(best) = &outcome.best_model {
        save_model(&run, "best", config, best)?;
    }
    Ok((run, outcome.report))
}

fn dump_epoch(run: &RunDir, dataset: &Dataset, epoch: usize, model: &FewShotModel) -> CliResult<()> {
    let rec = embed_split(&model.encoder, dataset, Split::Test, None, format!("epoch {epoch}"))
        .map_err(CliError::runtime)?;
    run.write(&format!("embeddings/epoch_{epoch:03}.csv"), rec.to_csv())?;
    Ok(())
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let loaded = load_config::<TrainConfig>(&args.config)?;
    let config = checked_train_config(loaded.config)?;
    let (run, report) = run_training(&config, &loaded.globals, args.out_dir.as_deref(), "train")?;
    match (report.best_acc, report.best_ci, report.best_epoch) {
        (Some(acc), Some(ci), Some(epoch)) => {
            println!("best test accuracy {:.2}% ± {:.2} at epoch {epoch}", 100.0 * acc, 100.0 * ci)
        }
        _ => println!("no epochs run"),
    }
    println!("{}", run.path.display());
    Ok(())
}

pub struct EvalArgs {
    pub run: PathBuf,
    pub which: String,
    pub episodes: Option<usize>,
    pub n_way: Option<usize>,
    pub k_shot: Option<usize>,
    pub q_query: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    source: &'a Path,
    which: &'a str,
    episodes: usize,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let (config, model, ckpt) = load_model(&args.run, &args.which)?;
    let snap = EvalSnapshot {
        source: &args.run,
        which: &args.which,
        episodes: args.episodes.unwrap_or(config.eval_episodes),
        n_way: args.n_way.unwrap_or(config.eval_n_way),
        k_shot: args.k_shot.unwrap_or(config.eval_k_shot),
        q_query: args.q_query.unwrap_or(config.eval_q_query),
        seed: args.seed.unwrap_or(config.seed),
    };
    if snap.episodes == 0 || snap.n_way == 0 || snap.k_shot == 0 || snap.q_query == 0 {
        return Err(CliError::Config("episodes, n-way, k-shot and q-query must be positive".into()));
    }
    let snap_bytes = serde_json::to_vec(&snap).map_err(CliError::runtime)?;
    let hash = train_hash("eval", &config, &[("eval", &snap_bytes), ("checkpoint", &ckpt)])?;
    let dataset = build_dataset(&config.dataset).map_err(fewshot_err)?;
    let result = evaluate(&model, &dataset, snap.episodes, snap.n_way, snap.k_shot, snap.q_query, snap.seed)
        .map_err(fewshot_err)?;
    let run = RunDir::create(&resolve_out_dir(args.out_dir.as_deref(), None), &hash)?;
    run.snapshot("eval", &snap, snap.seed)?;
    run.write_json("eval.json", &result)?;
    println!(
        "{}-way {}-shot accuracy {:.2}% ± {:.2} over {} episodes",
        snap.n_way,
        snap.k_shot,
        100.0 * result.accuracy,
        100.0 * result.ci,
        snap.episodes
    );
    println!("{}", run.path.display());
    Ok(())
}

pub struct DiagnoseArgs {
    pub run: PathBuf,
    pub which: String,
    pub split: Split,
    pub per_class: Option<usize>,
    pub threshold: f64,
    pub max_rows: usize,
    pub out_dir: Option<PathBuf>,
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(CliError::Config(format!("threshold {} must lie in (0, 1]", args.threshold)));
    }
    if args.max_rows > MAX_DISSIMILARITY_ROWS {
        return Err(CliError::Config(format!(
            "max-rows {} exceeds the limit of {MAX_DISSIMILARITY_ROWS}",
            args.max_rows
        )));
    }
    let (config, model, ckpt) = load_model(&args.run, &args.which)?;
    let params = format!("{:?} {:?} {:?} {} {}", args.which, args.split, args.per_class, args.threshold, args.max_rows);
    let hash = train_hash("diagnose", &config, &[("params", params.as_bytes()), ("checkpoint", &ckpt)])?;
    let dataset = build_dataset(&config.dataset).map_err(fewshot_err)?;
    let source = format!("{} ({})", args.run.display(), args.which);
    let rec = embed_split(&model.encoder, &dataset, args.split, args.per_class, source).map_err(CliError::runtime)?;
    let ratios = pca_explained_variance(&rec).map_err(CliError::runtime)?;
    let k = components_for_threshold(&ratios, args.threshold).map_err(CliError::runtime)?;

    let run = RunDir::create(&resolve_out_dir(args.out_dir.as_deref(), None), &hash)?;
    run.snapshot(
        "diagnose",
        &serde_json::json!({
            "source": args.run,
            "which": args.which,
            "split": args.split,
            "per_class": args.per_class,
            "threshold": args.threshold,
            "max_rows": args.max_rows,
        }),
        config.seed,
    )?;
    run.write("embeddings.csv", rec.to_csv())?;
    run.write("explained_variance.csv", explained_variance_csv(&ratios))?;
    let mut dissimilarity = false;
    if let Head::Quantum { head, .. } = &model.head {
        if rec.matrix.nrows() <= args.max_rows {
            let d = dissimilarity_matrix(head, &rec).map_err(CliError::runtime)?;
            run.write("dissimilarity.csv", dissimilarity_csv(&d))?;
            dissimilarity = true;
        } else {
            log::warn!(
                "{} rows exceed max-rows {}; skipping the dissimilarity matrix (use --per-class)",
                rec.matrix.nrows(),
                args.max_rows
            );
        }
    }
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "rows": rec.matrix.nrows(),
            "dim": rec.matrix.ncols(),
            "threshold": args.threshold,
            "components": k,
            "ratios": ratios,
            "dissimilarity": dissimilarity,
        }),
    )?;
    println!("{k} of {} components explain {:.0}% of the variance", ratios.len(), 100.0 * args.threshold);
    println!("{}", run.path.display());
    Ok(())
}

pub struct LowDimArgs {
    pub config: PathBuf,
    pub resolution: usize,
    pub scatter: usize,
    pub out_dir: Option<PathBuf>,
}

pub fn lowdim(args: &LowDimArgs) -> CliResult<()> {
    if args.resolution == 0 || args.scatter < 2 {
        return Err(CliError::Config("resolution must be positive and scatter at least 2".into()));
    }
    let loaded = load_config::<LowDimConfig>(&args.config)?;
    let config = loaded.config;
    config.validate().map_err(|e| lowdim_err(LowDimError::Config(e)))?;
    let canonical = serde_json::to_vec(&config).map_err(CliError::runtime)?;
    let extra = format!("{} {}", args.resolution, args.scatter);
    let hash = content_hash(&[("command", b"lowdim"), ("config", &canonical), ("params", extra.as_bytes())]);
    let run = RunDir::create(&resolve_out_dir(args.out_dir.as_deref(), loaded.globals.out_dir.as_deref()), &hash)?;
    run.snapshot("lowdim", &config, config.seed)?;

    let out = train_lowdim(&config).map_err(lowdim_err)?;
    let mut history = String::from("epoch,loss,score\n");
    for e in &out.history {
        writeln!(history, "{},{},{}", e.epoch, e.loss, e.score).unwrap();
    }
    run.write("history.csv", history)?;
    let heads = out.model.heads.len();
    for h in 0..heads {
        let name = if heads == 1 { "map.csv".to_string() } else { format!("map_head{h}.csv") };
        run.write(&name, feature_map_csv(&feature_map(&out.model, h, args.resolution).map_err(lowdim_err)?))?;
    }
    // held-out inputs, seeded apart from the training sample
    let points = scatter(&out.model, args.scatter, config.seed.wrapping_add(1)).map_err(lowdim_err)?;
    run.write("scatter.csv", scatter_csv(&points))?;
    let ratios = qproto::diagnostics::pca_ratios(points.view()).map_err(CliError::runtime)?;
    let k = components_for_threshold(&ratios, 0.9).map_err(CliError::runtime)?;
    run.write("explained_variance.csv", explained_variance_csv(&ratios))?;
    let mut buf = Vec::new();
    write_checkpoint(&out.model.encoder, &mut buf).map_err(CliError::runtime)?;
    run.write("encoder.ckpt", buf)?;
    run.write_json("heads.json", &out.model.heads)?;
    let last = out.history.last();
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "task": config.task,
            "final_loss": last.map(|e| e.loss),
            "final_score": last.map(|e| e.score),
            "components_90": k,
            "ratios": ratios,
        }),
    )?;
    if let Some(e) = last {
        println!("final loss {:.6} score {:.4}; scatter needs {k} component(s) for 90%", e.loss, e.score);
    }
    println!("{}", run.path.display());
    Ok(())
}

pub struct SweepArgs {
    pub config: PathBuf,
    pub ranges: Vec<f64>,
    pub out_dir: Option<PathBuf>,
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    if args.ranges.is_empty() {
        return Err(CliError::Config("no ranges given".into()));
    }
    if let Some(r) = args.ranges.iter().find(|r| !(0.0..=std::f64::consts::TAU).contains(*r)) {
        return Err(CliError::Config(format!("range {r} must lie in [0, 2pi]")));
    }
    let loaded = load_config::<TrainConfig>(&args.config)?;
    let base = checked_train_config(loaded.config)?;
    if base.head != HeadKind::Quantum {
        return Err(CliError::Config("sweep needs a quantum head".into()));
    }
    let canonical = serde_json::to_vec(&base).map_err(CliError::runtime)?;
    let ranges = format!("{:?}", args.ranges);
    let hash = content_hash(&[("command", b"sweep"), ("config", &canonical), ("ranges", ranges.as_bytes())]);
    let out_dir = resolve_out_dir(args.out_dir.as_deref(), loaded.globals.out_dir.as_deref());
    let run = RunDir::create(&out_dir, &hash)?;
    run.snapshot("sweep", &serde_json::json!({ "config": base, "ranges": args.ranges }), base.seed)?;
    let mut csv = String::from("range,best_acc,ci\n");
    let runs_dir = run.file("runs");
    for &r in &args.ranges {
        let config = TrainConfig {
            theta_range: r,
            ..base.clone()
        };
        let (sub, report) = run_training(&config, &Globals::default(), Some(&runs_dir), "train")?;
        let (acc, ci) = (report.best_acc.unwrap_or(f64::NAN), report.best_ci.unwrap_or(f64::NAN));
        writeln!(csv, "{r},{acc},{ci}").unwrap();
        println!("range {r}: {:.2}% ± {:.2} ({})", 100.0 * acc, 100.0 * ci, sub.id);
    }
    run.write("sweep.csv", &csv)?;
    println!("{}", run.path.display());
    Ok(())
}
