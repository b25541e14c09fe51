use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qproto::kernel::QuantumHead;

use crate::run::{content_hash, resolve_out_dir, CliError, CliResult, RunDir};

pub struct BenchArgs {
    pub n: Vec<usize>,
    pub l: Vec<usize>,
    pub batch: usize,
    pub reps: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub l: usize,
    pub width: usize,
    pub ms_per_amplitude: f64,
}

/// Times batched inversion-test amplitudes with random embeddings and theta.
pub fn measure(n: usize, l: usize, batch: usize, reps: usize, seed: u64) -> CliResult<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = QuantumHead::with_random_theta(n, l, std::f64::consts::PI, &mut rng).map_err(CliError::runtime)?;
    let mut draw = || -> Vec<Vec<f64>> {
        (0..batch)
            .map(|_| (0..n).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect())
            .collect()
    };
    let (left, right) = (draw(), draw());
    // warm-up run, not timed
    head.inner_products(&left, &right).map_err(CliError::runtime)?;
    let start = Instant::now();
    for _ in 0..reps {
        head.inner_products(&left, &right).map_err(CliError::runtime)?;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchRow {
        n,
        l,
        width: head.plan().width,
        ms_per_amplitude: ms / (reps * batch) as f64,
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,l,width,ms_per_amplitude\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.n, r.l, r.width, r.ms_per_amplitude).unwrap();
    }
    s
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    if args.n.is_empty() || args.l.is_empty() {
        return Err(CliError::Config("--n and --l need at least one value".into()));
    }
    if args.n.contains(&0) || args.l.contains(&0) || args.batch == 0 || args.reps == 0 {
        return Err(CliError::Config("qubit counts, layers, batch and reps must be positive".into()));
    }
    let params = format!("{:?} {:?} {} {} {}", args.n, args.l, args.batch, args.reps, args.seed);
    let hash = content_hash(&[("command", b"bench"), ("params", params.as_bytes())]);
    let mut rows = Vec::new();
    println!("{:>4} {:>3} {:>6} {:>16}", "n", "l", "width", "ms/amplitude");
    for &l in &args.l {
        for &n in &args.n {
            let row = measure(n, l, args.batch, args.reps, args.seed)?;
            println!("{:>4} {:>3} {:>6} {:>16.6}", row.n, row.l, row.width, row.ms_per_amplitude);
            rows.push(row);
        }
    }
    let run = RunDir::create(&resolve_out_dir(args.out_dir.as_deref(), None), &hash)?;
    run.snapshot(
        "bench",
        &serde_json::json!({ "n": args.n, "l": args.l, "batch": args.batch, "reps": args.reps }),
        args.seed,
    )?;
    run.write("bench.csv", bench_csv(&rows))?;
    println!("{}", run.path.display());
    Ok(())
}
