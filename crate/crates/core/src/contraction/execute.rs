//! Plan execution over parameter batches, plus exact amplitude derivatives.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::planner::MAX_EXECUTION_WIDTH;
use super::{ContractionError, ContractionPlan, ParamBatch, TensorNetwork};
use crate::tensor::Tensor;

/// Rows per parallel work item. Each row is reduced in a fixed order, so
/// chunking never changes the numbers.
const CHUNK_ROWS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub amplitudes: Vec<Complex64>,
    /// Largest rank of any tensor produced while contracting.
    pub peak_rank: usize,
}

/// Amplitudes and their derivatives with respect to every parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeJacobian {
    pub amplitudes: Vec<Complex64>,
    /// Row-major `rows x n_params`: `d amplitude[row] / d params[row][slot]`.
    pub jacobian: Vec<Complex64>,
    pub n_params: usize,
}

impl AmplitudeJacobian {
    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.jacobian[r * self.n_params..(r + 1) * self.n_params]
    }
}

fn check_inputs(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<(), ContractionError> {
    if plan.n_inputs != network.stubs.len() {
        return Err(ContractionError::TopologyMismatch {
            plan_inputs: plan.n_inputs,
            network_inputs: network.stubs.len(),
        });
    }
    if network.n_params > 0 && bindings.n_params() != network.n_params {
        return Err(ContractionError::Binding {
            expected: network.n_params,
            got: bindings.n_params(),
        });
    }
    if plan.width > MAX_EXECUTION_WIDTH {
        return Err(ContractionError::WidthExceeded {
            width: plan.width,
            limit: MAX_EXECUTION_WIDTH,
        });
    }
    Ok(())
}

fn scalar_rows(t: &Tensor, rows: usize) -> Vec<Complex64> {
    match t.batch() {
        Some(_) => t.data().to_vec(),
        None => vec![t.data()[0]; rows],
    }
}

/// Forward pass on one chunk, keeping every slot when `keep` is set. The
/// input at index `shifted`, if any, has its angle advanced by pi.
fn forward(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
    keep: bool,
    shifted: Option<usize>,
) -> Result<(Vec<Option<Tensor>>, usize), ContractionError> {
    let mut slots: Vec<Option<Tensor>> = network
        .stubs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let shift = if shifted == Some(i) { PI } else { 0.0 };
            Some(s.materialize(bindings, shift))
        })
        .collect();
    slots.reserve(plan.steps.len());
    let mut peak = 0;
    for step in &plan.steps {
        let out = {
            let operands: Vec<&Tensor> = step
                .operands
                .iter()
                .map(|&s| slots[s].as_ref().expect("slot consumed once"))
                .collect();
            step.spec.apply(&operands)?
        };
        peak = peak.max(out.rank());
        if !keep {
            for &s in &step.operands {
                slots[s] = None;
            }
        }
        slots.push(Some(out));
    }
    Ok((slots, peak))
}

fn execute_chunk(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<(Vec<Complex64>, usize), ContractionError> {
    let rows = bindings.rows();
    let Some(result) = plan.result_slot() else {
        return Ok((vec![Complex64::new(1.0, 0.0); rows], 0));
    };
    let (slots, peak) = forward(plan, network, bindings, false, None)?;
    let t = slots[result].as_ref().expect("result slot filled");
    Ok((scalar_rows(t, rows), peak))
}

fn chunk_bounds(rows: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(CHUNK_ROWS)
        .map(|s| (s, (s + CHUNK_ROWS).min(rows)))
        .collect()
}

fn bindings_for(network: &TensorNetwork, bindings: &ParamBatch, start: usize, end: usize) -> ParamBatch {
    if network.n_params == 0 {
        ParamBatch::empty(end - start)
    } else {
        bindings.slice(start, end)
    }
}

/// Runs a cached plan for every row of `bindings`; each row's amplitude is
/// identical to executing that row alone.
pub fn execute_plan_traced(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<Execution, ContractionError> {
    check_inputs(plan, network, bindings)?;
    let parts: Vec<(Vec<Complex64>, usize)> = chunk_bounds(bindings.rows())
        .into_par_iter()
        .map(|(s, e)| execute_chunk(plan, network, &bindings_for(network, bindings, s, e)))
        .collect::<Result<_, _>>()?;
    let mut amplitudes = Vec::with_capacity(bindings.rows());
    let mut peak_rank = 0;
    for (a, p) in parts {
        amplitudes.extend(a);
        peak_rank = peak_rank.max(p);
    }
    Ok(Execution {
        amplitudes,
        peak_rank,
    })
}

pub fn execute_plan(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<Vec<Complex64>, ContractionError> {
    Ok(execute_plan_traced(plan, network, bindings)?.amplitudes)
}

fn check_differentiable(network: &TensorNetwork) -> Result<(), ContractionError> {
    for (_, stub) in network.parameterized_stubs() {
        let kind = stub.gate_kind().expect("parameterized stubs are gates");
        if !kind.has_involutory_generator() {
            return Err(ContractionError::UnsupportedGradient(kind));
        }
    }
    Ok(())
}

fn jacobian_chunk(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<(Vec<Complex64>, Vec<Complex64>), ContractionError> {
    let rows = bindings.rows();
    let n_params = network.n_params;
    let mut jac = vec![Complex64::new(0.0, 0.0); rows * n_params];
    let Some(result) = plan.result_slot() else {
        return Ok((vec![Complex64::new(1.0, 0.0); rows], jac));
    };
    let (slots, _) = forward(plan, network, bindings, true, None)?;
    let amplitudes = scalar_rows(slots[result].as_ref().unwrap(), rows);
    if network.n_params == 0 {
        return Ok((amplitudes, jac));
    }

    // a slot needs an environment when a parameterized input feeds it
    let mut depends = vec![false; slots.len()];
    for (i, stub) in network.stubs.iter().enumerate() {
        depends[i] = stub.param().is_some();
    }
    for (k, step) in plan.steps.iter().enumerate() {
        depends[plan.n_inputs + k] = step.operands.iter().any(|&s| depends[s]);
    }

    let mut env: Vec<Option<Tensor>> = vec![None; slots.len()];
    if depends[result] {
        env[result] = Some(
            Tensor::new(Vec::new(), Some(rows), vec![Complex64::new(1.0, 0.0); rows])
                .expect("scalar batch"),
        );
    }
    for (k, step) in plan.steps.iter().enumerate().rev() {
        let out_slot = plan.n_inputs + k;
        let Some(grad_out) = env[out_slot].take() else { continue };
        let operands: Vec<&Tensor> = step
            .operands
            .iter()
            .map(|&s| slots[s].as_ref().unwrap())
            .collect();
        let need: Vec<bool> = step.operands.iter().map(|&s| depends[s]).collect();
        let grads = step.spec.vjp(&operands, &grad_out, &need)?;
        for (&s, g) in step.operands.iter().zip(grads) {
            if g.is_some() {
                env[s] = g;
            }
        }
    }

    // d amplitude / d angle = <environment, gate(angle + pi)> / 2
    for (i, stub) in network.parameterized_stubs() {
        let (slot, scale) = stub.param().unwrap();
        let environment = env[i].as_ref().expect("parameterized input has an environment");
        let shifted = stub.materialize(bindings, PI);
        for r in 0..rows {
            let d: Complex64 = environment
                .block(r)
                .iter()
                .zip(shifted.block(r))
                .map(|(e, g)| e * g)
                .sum();
            jac[r * n_params + slot] += d * (0.5 * scale);
        }
    }
    Ok((amplitudes, jac))
}

/// Exact derivatives of every amplitude with respect to every parameter
/// slot, from the amplitude shift rule `da/dx = a(x + pi) / 2` applied per
/// gate occurrence. The shifted amplitudes are read off the environment
/// tensors of a single reverse sweep instead of re-contracting the network
/// once per occurrence.
pub fn amplitude_jacobian(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<AmplitudeJacobian, ContractionError> {
    check_inputs(plan, network, bindings)?;
    check_differentiable(network)?;
    let parts: Vec<(Vec<Complex64>, Vec<Complex64>)> = chunk_bounds(bindings.rows())
        .into_par_iter()
        .map(|(s, e)| jacobian_chunk(plan, network, &bindings_for(network, bindings, s, e)))
        .collect::<Result<_, _>>()?;
    let mut amplitudes = Vec::with_capacity(bindings.rows());
    let mut jacobian = Vec::with_capacity(bindings.rows() * network.n_params);
    for (a, j) in parts {
        amplitudes.extend(a);
        jacobian.extend(j);
    }
    Ok(AmplitudeJacobian {
        amplitudes,
        jacobian,
        n_params: network.n_params,
    })
}

/// The shift rule evaluated literally: one extra contraction per gate
/// occurrence with that occurrence's angle advanced by pi. Slow; kept as an
/// independent check on [`amplitude_jacobian`].
pub fn amplitude_jacobian_reexecuted(
    plan: &ContractionPlan,
    network: &TensorNetwork,
    bindings: &ParamBatch,
) -> Result<AmplitudeJacobian, ContractionError> {
    check_inputs(plan, network, bindings)?;
    check_differentiable(network)?;
    let rows = bindings.rows();
    let n_params = network.n_params;
    let amplitudes = execute_plan(plan, network, bindings)?;
    let mut jacobian = vec![Complex64::new(0.0, 0.0); rows * n_params];
    let Some(result) = plan.result_slot() else {
        return Ok(AmplitudeJacobian {
            amplitudes,
            jacobian,
            n_params,
        });
    };
    for (i, stub) in network.parameterized_stubs() {
        let (slot, scale) = stub.param().unwrap();
        let (slots, _) = forward(plan, network, bindings, false, Some(i))?;
        let shifted = scalar_rows(slots[result].as_ref().unwrap(), rows);
        for r in 0..rows {
            jacobian[r * n_params + slot] += shifted[r] * (0.5 * scale);
        }
    }
    Ok(AmplitudeJacobian {
        amplitudes,
        jacobian,
        n_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{
        build_hadamard_test, inversion_test_params, inversion_test_template, statevector_amplitude,
        HadamardPart,
    };
    use crate::contraction::{build_network, plan_order, Heuristic};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, l: usize, rows: usize, seed: u64) -> ParamBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = inversion_test_template(n, l).unwrap();
        let values = (0..rows * t.n_params()).map(|_| rng.gen_range(-PI..PI)).collect();
        ParamBatch::new(t.n_params(), values).unwrap()
    }

    #[test]
    fn matches_statevector_on_inversion_test() {
        for (n, l) in [(1, 1), (2, 1), (3, 2), (4, 1)] {
            let c = inversion_test_template(n, l).unwrap();
            let net = build_network(&c).unwrap();
            let plan = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
            let batch = random_rows(n, l, 5, 7);
            let exec = execute_plan_traced(&plan, &net, &batch).unwrap();
            assert!(exec.peak_rank <= plan.width);
            for r in 0..5 {
                let want = statevector_amplitude(&c, batch.row(r)).unwrap();
                assert!((exec.amplitudes[r] - want).norm() < 1e-12, "n={n} l={l}");
            }
        }
    }

    #[test]
    fn batched_rows_equal_single_rows_bitwise() {
        let c = inversion_test_template(3, 1).unwrap();
        let net = build_network(&c).unwrap();
        let plan = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        let batch = random_rows(3, 1, 150, 9);
        let all = execute_plan(&plan, &net, &batch).unwrap();
        for r in [0, 63, 64, 149] {
            let one = execute_plan(&plan, &net, &batch.slice(r, r + 1)).unwrap();
            assert_eq!(one[0], all[r]);
        }
    }

    #[test]
    fn jacobian_agrees_with_reexecution_and_differences() {
        let (n, l) = (2, 2);
        let c = inversion_test_template(n, l).unwrap();
        let net = build_network(&c).unwrap();
        let plan = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        let batch = random_rows(n, l, 3, 21);
        let fast = amplitude_jacobian(&plan, &net, &batch).unwrap();
        let slow = amplitude_jacobian_reexecuted(&plan, &net, &batch).unwrap();
        assert_eq!(fast.amplitudes, slow.amplitudes);
        for (a, b) in fast.jacobian.iter().zip(&slow.jacobian) {
            assert!((a - b).norm() < 1e-12);
        }
        let h = 1e-6;
        for r in 0..3 {
            for p in 0..net.n_params {
                let mut plus = batch.slice(r, r + 1);
                plus.row_mut(0)[p] += h;
                let mut minus = batch.slice(r, r + 1);
                minus.row_mut(0)[p] -= h;
                let fd = (execute_plan(&plan, &net, &plus).unwrap()[0]
                    - execute_plan(&plan, &net, &minus).unwrap()[0])
                    / (2.0 * h);
                assert!((fast.row(r)[p] - fd).norm() < 1e-7, "row {r} param {p}");
            }
        }
    }

    #[test]
    fn controlled_rotation_has_no_gradient() {
        let (c, p) = build_hadamard_test(1, 1, &[0.1], &[0.2], &[0.3], HadamardPart::Real).unwrap();
        let net = build_network(&c).unwrap();
        let plan = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        let batch = ParamBatch::new(p.len(), p).unwrap();
        assert!(execute_plan(&plan, &net, &batch).is_ok());
        assert!(matches!(
            amplitude_jacobian(&plan, &net, &batch),
            Err(ContractionError::UnsupportedGradient(_))
        ));
    }

    #[test]
    fn refuses_wrong_bindings_and_wide_plans() {
        let c = inversion_test_template(2, 1).unwrap();
        let net = build_network(&c).unwrap();
        let mut plan = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        let bad = ParamBatch::new(3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            execute_plan(&plan, &net, &bad),
            Err(ContractionError::Binding { .. })
        ));
        let ok = ParamBatch::new(net.n_params, inversion_test_params(2, 1, &[0.0; 2], &[0.0; 2], &[0.0; 3]).unwrap()).unwrap();
        plan.width = MAX_EXECUTION_WIDTH + 1;
        assert!(matches!(
            execute_plan(&plan, &net, &ok),
            Err(ContractionError::WidthExceeded { .. })
        ));
    }
}
