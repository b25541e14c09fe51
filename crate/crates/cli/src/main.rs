mod bench;
mod commands;
mod run;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qproto::data::Split;

use run::{load_config, CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "qproto", version, about = "Hybrid quantum-classical few-shot experiments")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Parent directory for run directories (overrides QPROTO_OUT).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an encoder and distance head on few-shot episodes.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a trained run on fresh test episodes.
    Eval(EvalCmd),
    /// Train a two-qubit model on a low-dimensional task and export its maps.
    Lowdim {
        #[arg(long)]
        config: PathBuf,
        /// Grid points per axis of the feature map.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Number of fresh inputs in the embedding scatter.
        #[arg(long, default_value_t = 1000)]
        scatter: usize,
    },
    /// PCA and dissimilarity diagnostics of a trained run's embeddings.
    Diagnose(DiagnoseCmd),
    /// Time batched amplitudes and report contraction widths.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        l: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-check the simulator and gradients against independent oracles.
    Verify {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train once per initial theta range and summarize best accuracies.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ranges: Vec<f64>,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Which {
    Best,
    Final,
}

impl Which {
    fn stem(self) -> &'static str {
        match self {
            Which::Best => "best",
            Which::Final => "final",
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct EvalCmd {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    which: Which,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    q_query: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DiagnoseCmd {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    which: Which,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Samples kept per class.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Largest row count for the pairwise dissimilarity matrix.
    #[arg(long, default_value_t = 2000)]
    max_rows: usize,
}

/// Thread count from the flag, else from the config's `threads` key.
fn thread_count(flag: Option<usize>, config: Option<&Path>) -> CliResult<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match config {
        Some(p) => Ok(load_config::<serde_json::Value>(p)?.globals.threads),
        None => Ok(None),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let out = cli.out_dir;
    match cli.command {
        Command::Train { config } => commands::train(&commands::TrainArgs { config, out_dir: out }),
        Command::Eval(e) => commands::eval(&commands::EvalArgs {
            run: e.run,
            which: e.which.stem().into(),
            episodes: e.episodes,
            n_way: e.n_way,
            k_shot: e.k_shot,
            q_query: e.q_query,
            seed: e.seed,
            out_dir: out,
        }),
        Command::Lowdim {
            config,
            resolution,
            scatter,
        } => commands::lowdim(&commands::LowDimArgs {
            config,
            resolution,
            scatter,
            out_dir: out,
        }),
        Command::Diagnose(d) => commands::diagnose(&commands::DiagnoseArgs {
            run: d.run,
            which: d.which.stem().into(),
            split: match d.split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            },
            per_class: d.per_class,
            threshold: d.threshold,
            max_rows: d.max_rows,
            out_dir: out,
        }),
        Command::Bench { n, l, batch, reps, seed } => bench::bench(&bench::BenchArgs {
            n,
            l,
            batch,
            reps,
            seed,
            out_dir: out,
        }),
        Command::Verify { n, trials, seed } => verify::verify(&verify::VerifyArgs {
            n,
            trials,
            seed,
            out_dir: out,
        }),
        Command::Sweep { config, ranges } => commands::sweep(&commands::SweepArgs {
            config,
            ranges,
            out_dir: out,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match &cli.command {
        Command::Train { config } | Command::Lowdim { config, .. } | Command::Sweep { config, .. } => Some(config.clone()),
        _ => None,
    };
    let result = thread_count(cli.threads, config.as_deref()).and_then(|threads| match threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(CliError::runtime)
            .and_then(|pool| pool.install(|| dispatch(cli))),
        None => dispatch(cli),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
