use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{Angle, Circuit, CircuitError, Gate, GateKind};

/// Number of circuit-owned parameters of the metric-learning ansatz:
/// `n - 1` ZZ angles and `n` Ry angles per layer.
pub fn metric_theta_count(n: usize, layers: usize) -> usize {
    layers * (2 * n - 1)
}

fn check_size(n: usize, layers: usize) -> Result<(), CircuitError> {
    if n == 0 {
        return Err(CircuitError::InvalidSize("qubit count must be at least 1".into()));
    }
    if layers == 0 {
        return Err(CircuitError::InvalidSize("layer count must be at least 1".into()));
    }
    Ok(())
}

/// Gates of U(phi, theta) with phi read from slots `phi_offset..phi_offset+n`
/// and theta from `theta_offset..`.
fn metric_gates(n: usize, layers: usize, phi_offset: usize, theta_offset: usize) -> Vec<Gate> {
    let mut gates = Vec::with_capacity((layers + 1) * n + layers * (2 * n - 1));
    let per_layer = 2 * n - 1;
    for layer in 0..layers {
        gates.extend((0..n).map(|q| Gate::rx(q, Angle::param(phi_offset + q))));
        let base = theta_offset + layer * per_layer;
        gates.extend((0..n - 1).map(|q| Gate::zz(q, q + 1, Angle::param(base + q))));
        gates.extend((0..n).map(|q| Gate::ry(q, Angle::param(base + n - 1 + q))));
    }
    gates.extend((0..n).map(|q| Gate::rx(q, Angle::param(phi_offset + q))));
    gates
}

/// Metric-learning ansatz: `layers` repetitions of [Rx(phi) on every qubit,
/// nearest-neighbour ZZ(theta) chain, Ry(theta) on every qubit], followed by a
/// final Rx(phi) layer. Slots: phi first, then theta layer by layer.
pub fn build_metric_ansatz(n: usize, layers: usize) -> Result<Circuit, CircuitError> {
    check_size(n, layers)?;
    let mut circuit = Circuit::new(n, n, metric_theta_count(n, layers));
    circuit.gates = metric_gates(n, layers, 0, n);
    Ok(circuit)
}

/// Symbolic inversion test U†(phi_i, theta) U(phi_j, theta).
///
/// Slot layout: `phi_j` in `0..n`, `phi_i` in `n..2n`, theta in `2n..`.
pub fn inversion_test_template(n: usize, layers: usize) -> Result<Circuit, CircuitError> {
    check_size(n, layers)?;
    let theta = metric_theta_count(n, layers);
    let mut circuit = Circuit::new(n, 2 * n, theta);
    let forward = metric_gates(n, layers, 0, 2 * n);
    let backward = metric_gates(n, layers, n, 2 * n);
    circuit.gates = forward;
    circuit.gates.extend(
        backward
            .iter()
            .rev()
            .map(|g| g.inverse().expect("metric ansatz gates are invertible")),
    );
    Ok(circuit)
}

/// Parameter vector matching [`inversion_test_template`].
pub fn inversion_test_params(
    n: usize,
    layers: usize,
    phi_i: &[f64],
    phi_j: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>, CircuitError> {
    for (what, v) in [("phi_i", phi_i), ("phi_j", phi_j)] {
        if v.len() != n {
            return Err(CircuitError::Binding {
                what,
                expected: n,
                got: v.len(),
            });
        }
    }
    let expected = metric_theta_count(n, layers);
    if theta.len() != expected {
        return Err(CircuitError::Binding {
            what: "theta",
            expected,
            got: theta.len(),
        });
    }
    let mut params = Vec::with_capacity(2 * n + expected);
    params.extend_from_slice(phi_j);
    params.extend_from_slice(phi_i);
    params.extend_from_slice(theta);
    Ok(params)
}

/// Inversion-test circuit together with its bound parameters.
pub fn build_inversion_test(
    n: usize,
    layers: usize,
    phi_i: &[f64],
    phi_j: &[f64],
    theta: &[f64],
) -> Result<(Circuit, Vec<f64>), CircuitError> {
    let circuit = inversion_test_template(n, layers)?;
    let params = inversion_test_params(n, layers, phi_i, phi_j, theta)?;
    Ok((circuit, params))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HadamardPart {
    Real,
    Imag,
}

/// Hadamard test of the inversion-test unitary on `n + 1` qubits; the ancilla
/// is the last qubit. Embedding-dependent Rx gates become controlled; theta
/// gates stay uncontrolled because they cancel pairwise when the ancilla is
/// |0>. Same parameter layout as [`inversion_test_template`].
pub fn hadamard_test_template(
    n: usize,
    layers: usize,
    part: HadamardPart,
) -> Result<Circuit, CircuitError> {
    let inner = inversion_test_template(n, layers)?;
    let ancilla = n;
    let mut circuit = Circuit::new(n + 1, inner.phi_slots, inner.theta_slots);
    circuit.push(Gate::h(ancilla));
    if part == HadamardPart::Imag {
        circuit.push(Gate::s_dagger(ancilla));
    }
    for gate in inner.gates {
        let is_phi = gate
            .angle
            .and_then(|a| a.slot())
            .is_some_and(|slot| slot < inner.phi_slots);
        if gate.kind == GateKind::Rx && is_phi {
            circuit.push(Gate::crx(ancilla, gate.qubits[0], gate.angle.unwrap()));
        } else {
            circuit.push(gate);
        }
    }
    circuit.push(Gate::h(ancilla));
    Ok(circuit)
}

pub fn build_hadamard_test(
    n: usize,
    layers: usize,
    phi_i: &[f64],
    phi_j: &[f64],
    theta: &[f64],
    part: HadamardPart,
) -> Result<(Circuit, Vec<f64>), CircuitError> {
    let circuit = hadamard_test_template(n, layers, part)?;
    let params = inversion_test_params(n, layers, phi_i, phi_j, theta)?;
    Ok((circuit, params))
}

pub const LOWDIM_LAYERS: usize = 3;
/// Variational parameters of the two-qubit head: one Ry angle per qubit per layer.
pub const LOWDIM_PARAMS: usize = 2 * LOWDIM_LAYERS;

/// Two-qubit encode-process circuit: Rx(x0), Rx(x1), ZZ(pi/2), then three
/// layers of [Ry, Ry, ZZ(pi/2)]. Slots: inputs 0..2, variational 2..8.
pub fn lowdim_template() -> Circuit {
    let entangler = || Gate::zz(0, 1, Angle::Fixed(FRAC_PI_2));
    let mut circuit = Circuit::new(2, 2, LOWDIM_PARAMS);
    circuit
        .push(Gate::rx(0, Angle::param(0)))
        .push(Gate::rx(1, Angle::param(1)))
        .push(entangler());
    for layer in 0..LOWDIM_LAYERS {
        circuit
            .push(Gate::ry(0, Angle::param(2 + 2 * layer)))
            .push(Gate::ry(1, Angle::param(3 + 2 * layer)))
            .push(entangler());
    }
    circuit
}

pub fn build_lowdim_ansatz(x: &[f64], omega: &[f64]) -> Result<(Circuit, Vec<f64>), CircuitError> {
    if x.len() != 2 {
        return Err(CircuitError::Binding {
            what: "low-dimensional input",
            expected: 2,
            got: x.len(),
        });
    }
    if omega.len() != LOWDIM_PARAMS {
        return Err(CircuitError::Binding {
            what: "variational parameters",
            expected: LOWDIM_PARAMS,
            got: omega.len(),
        });
    }
    let mut params = x.to_vec();
    params.extend_from_slice(omega);
    Ok((lowdim_template(), params))
}
