//! Oracle cross-checks: tensor network against statevector and the
//! unentangled product, shift-rule gradients against finite differences.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qproto::circuit::{
    ancilla_bias, build_hadamard_test, build_metric_ansatz, inversion_test_template, metric_theta_count,
    statevector_amplitude, statevector_simulate, HadamardPart, StateVector,
};
use qproto::contraction::{amplitude_jacobian, amplitude_jacobian_reexecuted, build_network, plan_order, Heuristic, ParamBatch};
use qproto::data::{sample_episode, synth_classes, Split};
use qproto::fewshot::{episode_loss, FewShotModel, Head, LossMode};
use qproto::kernel::QuantumHead;
use qproto::nn::Mlp;

use crate::run::{content_hash, resolve_out_dir, CliError, CliResult, RunDir};

pub const AMPLITUDE_TOL: f64 = 1e-10;
pub const QUANTUM_GRAD_TOL: f64 = 1e-6;
pub const CLASSICAL_GRAD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

struct Check {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN must fail
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            cases: self.cases,
            max_error: self.worst,
            tolerance: self.tolerance,
        }
    }
}

fn angles(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-PI..PI)).collect()
}

/// `|g - fd| / max(|fd|, 1)` in the Euclidean norm.
fn rel_error(g: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = g.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1.0)
}

fn encoded_state(n: usize, l: usize, phi: &[f64], theta: &[f64]) -> CliResult<StateVector> {
    let c = build_metric_ansatz(n, l).map_err(CliError::runtime)?;
    let mut p = phi.to_vec();
    p.extend_from_slice(theta);
    statevector_simulate(&c, &p).map_err(CliError::runtime)
}

pub fn run_checks(n: usize, trials: usize, seed: u64) -> CliResult<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sv = Check::new("tn_vs_statevector", AMPLITUDE_TOL);
    let mut overlap = Check::new("tn_vs_state_overlap", AMPLITUDE_TOL);
    let mut closed = Check::new("tn_vs_closed_form", AMPLITUDE_TOL);
    let mut reexec = Check::new("jacobian_vs_reexecution", AMPLITUDE_TOL);
    let mut qgrad = Check::new("quantum_grad_vs_fd", QUANTUM_GRAD_TOL);
    let mut proto = Check::new("prototype_linearity", AMPLITUDE_TOL);
    let mut hadamard = Check::new("hadamard_exact", AMPLITUDE_TOL);
    let mut mlp = Check::new("mlp_grad_vs_fd", CLASSICAL_GRAD_TOL);
    let mut hybrid = Check::new("hybrid_grad_vs_fd", CLASSICAL_GRAD_TOL);

    for trial in 0..trials {
        let l = 1 + trial % 2;
        let theta = angles(&mut rng, metric_theta_count(n, l));
        let head = QuantumHead::new(n, l, theta.clone()).map_err(CliError::runtime)?;
        let (phi_i, phi_j) = (angles(&mut rng, n), angles(&mut rng, n));

        let amp = head.inner_products(&[&phi_i], &[&phi_j]).map_err(CliError::runtime)?.amps[0];
        let template = inversion_test_template(n, l).map_err(CliError::runtime)?;
        let mut params = phi_j.clone();
        params.extend_from_slice(&phi_i);
        params.extend_from_slice(&theta);
        let want = statevector_amplitude(&template, &params).map_err(CliError::runtime)?;
        sv.record((amp - want).norm());
        let direct = encoded_state(n, l, &phi_i, &theta)?.inner(&encoded_state(n, l, &phi_j, &theta)?);
        overlap.record((amp - direct).norm());

        let flat = QuantumHead::new(n, l, vec![0.0; theta.len()]).map_err(CliError::runtime)?;
        let a0 = flat.inner_products(&[&phi_i], &[&phi_j]).map_err(CliError::runtime)?.amps[0];
        let product: f64 = phi_i
            .iter()
            .zip(&phi_j)
            .map(|(a, b)| ((l + 1) as f64 * (a - b) / 2.0).cos())
            .product();
        closed.record((a0 - Complex64::new(product, 0.0)).norm());

        let network = build_network(&template).map_err(CliError::runtime)?;
        let plan = plan_order(&network, Heuristic::GreedyMinFill).map_err(CliError::runtime)?;
        let batch = ParamBatch::from_rows(params.len(), &[&params]).map_err(CliError::runtime)?;
        let j = amplitude_jacobian(&plan, &network, &batch).map_err(CliError::runtime)?;
        let r = amplitude_jacobian_reexecuted(&plan, &network, &batch).map_err(CliError::runtime)?;
        let worst = j.jacobian.iter().zip(&r.jacobian).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        reexec.record(worst);

        let adjoint = [Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))];
        let g = head.grad(&[&phi_i], &[&phi_j], &adjoint).map_err(CliError::runtime)?;
        let fd = head
            .grad_finite_difference(&[&phi_i], &[&phi_j], &adjoint, FD_STEP)
            .map_err(CliError::runtime)?;
        let flatten = |p: &qproto::kernel::PairGradients| -> Vec<f64> {
            p.left[0].iter().chain(&p.right[0]).chain(&p.theta).copied().collect()
        };
        qgrad.record(rel_error(&flatten(&g), &flatten(&fd)));

        // two classes, three shots each
        let support: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..3).map(|_| angles(&mut rng, n)).collect()).collect();
        let scores = head.prototypical_scores(&support, &phi_j).map_err(CliError::runtime)?;
        let query = encoded_state(n, l, &phi_j, &theta)?;
        for (c, class) in support.iter().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for shot in class {
                s += encoded_state(n, l, shot, &theta)?.inner(&query);
            }
            proto.record((scores.scores[c] - s / class.len() as f64).norm());
        }

        for (part, value) in [(HadamardPart::Real, want.re), (HadamardPart::Imag, want.im)] {
            let (c, p) = build_hadamard_test(n, l, &phi_i, &phi_j, &theta, part).map_err(CliError::runtime)?;
            let bias = ancilla_bias(&c, &p, n).map_err(CliError::runtime)?;
            hadamard.record((bias - value).abs());
        }

        mlp.record(mlp_check(&mut rng)?);
        hybrid.record(hybrid_check(n, l, trial, &mut rng)?);
    }
    Ok([sv, overlap, closed, reexec, qgrad, proto, hadamard, mlp, hybrid]
        .into_iter()
        .map(Check::finish)
        .collect())
}

/// Fresh networks have zero biases, so a row of dead units leaves the next
/// pre-activation exactly on the ReLU kink where differences are one-sided.
fn jittered(mut net: Mlp, rng: &mut ChaCha8Rng) -> CliResult<Mlp> {
    let p: Vec<f64> = net.flat_params().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
    net.set_flat_params(&p).map_err(CliError::runtime)?;
    Ok(net)
}

/// Backprop of `sum(upstream * f(x))` against central differences.
fn mlp_check(rng: &mut ChaCha8Rng) -> CliResult<f64> {
    let mut net = jittered(Mlp::new(&[4, 6, 5, 3], rng).map_err(CliError::runtime)?, rng)?;
    let x = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
    let up = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
    let (_, cache) = net.forward(x.view()).map_err(CliError::runtime)?;
    let (grads, _) = net.backward(&cache, up.view()).map_err(CliError::runtime)?;
    let g = grads.flatten();
    let mut p = net.flat_params();
    let mut fd = vec![0.0; p.len()];
    for i in 0..p.len() {
        let x0 = p[i];
        let eval = |v: f64, net: &mut Mlp, p: &mut Vec<f64>| -> CliResult<f64> {
            p[i] = v;
            net.set_flat_params(p).map_err(CliError::runtime)?;
            Ok((net.apply(x.view()).map_err(CliError::runtime)? * &up).sum())
        };
        let plus = eval(x0 + FD_STEP, &mut net, &mut p)?;
        let minus = eval(x0 - FD_STEP, &mut net, &mut p)?;
        p[i] = x0;
        fd[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(rel_error(&g, &fd))
}

/// Full episode loss through encoder and quantum head.
fn hybrid_check(n: usize, l: usize, trial: usize, rng: &mut ChaCha8Rng) -> CliResult<f64> {
    let dataset = synth_classes(5, 4, 5, 0.3, rng.gen()).map_err(CliError::runtime)?;
    let episode = sample_episode(&dataset, Split::Train, 3, 2, 2, rng).map_err(CliError::runtime)?;
    let encoder = jittered(Mlp::new(&[5, 7, n], rng).map_err(CliError::runtime)?, rng)?;
    let head = QuantumHead::with_random_theta(n, l, PI, rng).map_err(CliError::runtime)?;
    let loss_mode = if trial % 4 < 2 { LossMode::NegativeProbability } else { LossMode::SoftmaxLog };
    let mut model = FewShotModel::new(encoder, Head::Quantum { head, loss_mode }).map_err(CliError::runtime)?;
    let g = episode_loss(&model, &dataset, &episode).map_err(CliError::runtime)?.flat_grads();
    let mut p = model.flat_params();
    let mut fd = vec![0.0; p.len()];
    for i in 0..p.len() {
        let x0 = p[i];
        let mut at = |v: f64| -> CliResult<f64> {
            p[i] = v;
            model.set_flat_params(&p).map_err(CliError::runtime)?;
            Ok(episode_loss(&model, &dataset, &episode).map_err(CliError::runtime)?.loss)
        };
        let plus = at(x0 + FD_STEP)?;
        let minus = at(x0 - FD_STEP)?;
        p[i] = x0;
        fd[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(rel_error(&g, &fd))
}

pub fn table(results: &[CheckResult]) -> String {
    let mut s = format!("{:<24} {:>6} {:>12} {:>10}  status\n", "check", "cases", "max_error", "tolerance");
    for r in results {
        writeln!(
            s,
            "{:<24} {:>6} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.cases,
            r.max_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        )
        .unwrap();
    }
    s
}

pub struct VerifyArgs {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

pub fn verify(args: &VerifyArgs) -> CliResult<()> {
    if !(1..=12).contains(&args.n) {
        return Err(CliError::Config(format!("--n {} must lie in 1..=12", args.n)));
    }
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be positive".into()));
    }
    let results = run_checks(args.n, args.trials, args.seed)?;
    let text = table(&results);
    print!("{text}");
    let params = format!("{} {} {}", args.n, args.trials, args.seed);
    let hash = content_hash(&[("command", b"verify"), ("params", params.as_bytes())]);
    let run = RunDir::create(&resolve_out_dir(args.out_dir.as_deref(), None), &hash)?;
    run.snapshot(
        "verify",
        &serde_json::json!({ "n": args.n, "trials": args.trials }),
        args.seed,
    )?;
    let mut csv = String::from("check,cases,max_error,tolerance,passed\n");
    for r in &results {
        writeln!(csv, "{},{},{},{},{}", r.name, r.cases, r.max_error, r.tolerance, r.passed()).unwrap();
    }
    run.write("verify.csv", csv)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} check(s) failed")));
    }
    println!("{}", run.path.display());
    Ok(())
}
