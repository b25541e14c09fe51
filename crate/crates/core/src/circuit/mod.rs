//! Gate set, circuit IR and ansatz builders.
//!
//! Rotation conventions: `Rx(a) = exp(-i a X / 2)`, `Ry(a) = exp(-i a Y / 2)`,
//! `ZZ(a) = exp(-i a Z⊗Z / 2)`. Qubit 0 is the most significant bit of a
//! computational basis index.

mod ansatz;
mod statevector;

pub use ansatz::{
    build_hadamard_test, build_inversion_test, build_lowdim_ansatz, build_metric_ansatz,
    hadamard_test_template, inversion_test_params, inversion_test_template, lowdim_template,
    metric_theta_count, HadamardPart, LOWDIM_LAYERS, LOWDIM_PARAMS,
};
pub use statevector::{
    ancilla_bias, expectation_z, statevector_amplitude, statevector_simulate, StateVector,
    MAX_STATEVECTOR_QUBITS,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("gate {index} ({kind:?}) addresses qubit {qubit} but the circuit has {n_qubits}")]
    QubitOutOfRange {
        index: usize,
        kind: GateKind,
        qubit: usize,
        n_qubits: usize,
    },
    #[error("gate {index} ({kind:?}) expects {expected} qubit indices, got {got}")]
    Arity {
        index: usize,
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("gate {index} ({kind:?}) acts twice on qubit {qubit}")]
    RepeatedQubit {
        index: usize,
        kind: GateKind,
        qubit: usize,
    },
    #[error("gate {index} ({kind:?}) angle binding is inconsistent with its kind")]
    AngleKind { index: usize, kind: GateKind },
    #[error("gate {index} references parameter slot {slot} but only {n_params} exist")]
    SlotOutOfRange {
        index: usize,
        slot: usize,
        n_params: usize,
    },
    #[error("invalid ansatz size: {0}")]
    InvalidSize(String),
    #[error("binding length mismatch for {what}: expected {expected}, got {got}")]
    Binding {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("statevector simulation limited to {MAX_STATEVECTOR_QUBITS} qubits, circuit has {0}")]
    TooManyQubits(usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Rx,
    Ry,
    #[serde(rename = "ZZ")]
    Zz,
    H,
    #[serde(rename = "Sdg")]
    SDagger,
    /// Controlled Rx; qubits are `[control, target]`.
    #[serde(rename = "CRx")]
    CRx,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Zz | GateKind::CRx => 2,
            _ => 1,
        }
    }

    pub fn takes_angle(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Zz | GateKind::CRx)
    }

    /// Diagonal gates share their wire labels in a tensor network.
    pub fn is_diagonal(self) -> bool {
        matches!(self, GateKind::Zz | GateKind::SDagger)
    }

    /// Whether the generator squares to the identity, so that
    /// `dG/da = G(a + pi) / 2` holds exactly.
    pub fn has_involutory_generator(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Zz)
    }
}

/// Angle source of a rotation gate.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Angle {
    Fixed(f64),
    /// `scale * params[slot]`; the scale is -1 inside inverted circuits.
    Param { slot: usize, scale: f64 },
}

impl Angle {
    pub fn param(slot: usize) -> Self {
        Angle::Param { slot, scale: 1.0 }
    }

    pub fn negated(self) -> Self {
        match self {
            Angle::Fixed(a) => Angle::Fixed(-a),
            Angle::Param { slot, scale } => Angle::Param {
                slot,
                scale: -scale,
            },
        }
    }

    pub fn resolve(&self, params: &[f64]) -> f64 {
        match *self {
            Angle::Fixed(a) => a,
            Angle::Param { slot, scale } => scale * params[slot],
        }
    }

    pub fn slot(&self) -> Option<usize> {
        match *self {
            Angle::Fixed(_) => None,
            Angle::Param { slot, .. } => Some(slot),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<Angle>,
}

impl Gate {
    pub fn rx(q: usize, angle: Angle) -> Self {
        Gate {
            kind: GateKind::Rx,
            qubits: vec![q],
            angle: Some(angle),
        }
    }

    pub fn ry(q: usize, angle: Angle) -> Self {
        Gate {
            kind: GateKind::Ry,
            qubits: vec![q],
            angle: Some(angle),
        }
    }

    pub fn zz(a: usize, b: usize, angle: Angle) -> Self {
        Gate {
            kind: GateKind::Zz,
            qubits: vec![a, b],
            angle: Some(angle),
        }
    }

    pub fn h(q: usize) -> Self {
        Gate {
            kind: GateKind::H,
            qubits: vec![q],
            angle: None,
        }
    }

    pub fn s_dagger(q: usize) -> Self {
        Gate {
            kind: GateKind::SDagger,
            qubits: vec![q],
            angle: None,
        }
    }

    pub fn crx(control: usize, target: usize, angle: Angle) -> Self {
        Gate {
            kind: GateKind::CRx,
            qubits: vec![control, target],
            angle: Some(angle),
        }
    }

    /// Inverse gate. Exact for every gate in the set: rotations negate their
    /// angle, H is self-inverse, and S† inverts to S which is not in the set,
    /// hence `None`.
    pub fn inverse(&self) -> Option<Gate> {
        match self.kind {
            GateKind::SDagger => None,
            GateKind::H => Some(self.clone()),
            _ => Some(Gate {
                kind: self.kind,
                qubits: self.qubits.clone(),
                angle: self.angle.map(Angle::negated),
            }),
        }
    }
}

/// Dense matrix of a one-qubit gate, `m[row][col]`.
pub type Mat2 = [[Complex64; 2]; 2];

pub fn rx_matrix(a: f64) -> Mat2 {
    let (s, c) = (a / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
        [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
    ]
}

pub fn ry_matrix(a: f64) -> Mat2 {
    let (s, c) = (a / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

pub fn h_matrix() -> Mat2 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [
        [Complex64::new(r, 0.0), Complex64::new(r, 0.0)],
        [Complex64::new(r, 0.0), Complex64::new(-r, 0.0)],
    ]
}

/// Diagonal of S† = diag(1, -i).
pub fn s_dagger_diagonal() -> [Complex64; 2] {
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0)]
}

/// Diagonal of ZZ(a) over basis |00>, |01>, |10>, |11>.
pub fn zz_diagonal(a: f64) -> [Complex64; 4] {
    let minus = Complex64::from_polar(1.0, -a / 2.0);
    let plus = Complex64::from_polar(1.0, a / 2.0);
    [minus, plus, plus, minus]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
    /// Leading parameter slots holding prequantum embedding angles.
    pub phi_slots: usize,
    /// Trailing parameter slots owned by the circuit.
    pub theta_slots: usize,
}

impl Circuit {
    pub fn new(n_qubits: usize, phi_slots: usize, theta_slots: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
            phi_slots,
            theta_slots,
        }
    }

    pub fn n_params(&self) -> usize {
        self.phi_slots + self.theta_slots
    }

    pub fn push(&mut self, gate: Gate) -> &mut Self {
        self.gates.push(gate);
        self
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        for (index, gate) in self.gates.iter().enumerate() {
            let kind = gate.kind;
            if gate.qubits.len() != kind.arity() {
                return Err(CircuitError::Arity {
                    index,
                    kind,
                    expected: kind.arity(),
                    got: gate.qubits.len(),
                });
            }
            for (i, &q) in gate.qubits.iter().enumerate() {
                if q >= self.n_qubits {
                    return Err(CircuitError::QubitOutOfRange {
                        index,
                        kind,
                        qubit: q,
                        n_qubits: self.n_qubits,
                    });
                }
                if gate.qubits[..i].contains(&q) {
                    return Err(CircuitError::RepeatedQubit {
                        index,
                        kind,
                        qubit: q,
                    });
                }
            }
            if kind.takes_angle() != gate.angle.is_some() {
                return Err(CircuitError::AngleKind { index, kind });
            }
            if let Some(slot) = gate.angle.and_then(|a| a.slot()) {
                if slot >= self.n_params() {
                    return Err(CircuitError::SlotOutOfRange {
                        index,
                        slot,
                        n_params: self.n_params(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn check_params(&self, params: &[f64]) -> Result<(), CircuitError> {
        if params.len() != self.n_params() {
            return Err(CircuitError::Binding {
                what: "circuit parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Reversed gate list with negated angles.
    pub fn inverse(&self) -> Option<Circuit> {
        let gates = self
            .gates
            .iter()
            .rev()
            .map(Gate::inverse)
            .collect::<Option<Vec<_>>>()?;
        Some(Circuit {
            gates,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&self.gates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_gates() {
        let mut c = Circuit::new(2, 1, 0);
        c.push(Gate::rx(2, Angle::Fixed(0.1)));
        assert!(matches!(
            c.validate(),
            Err(CircuitError::QubitOutOfRange { qubit: 2, .. })
        ));

        let mut c = Circuit::new(2, 1, 0);
        c.push(Gate::zz(1, 1, Angle::Fixed(0.1)));
        assert!(matches!(c.validate(), Err(CircuitError::RepeatedQubit { .. })));

        let mut c = Circuit::new(2, 1, 0);
        c.push(Gate::rx(0, Angle::param(3)));
        assert!(matches!(c.validate(), Err(CircuitError::SlotOutOfRange { .. })));
    }

    #[test]
    fn json_dump_uses_kind_names() {
        let mut c = Circuit::new(2, 1, 1);
        c.push(Gate::rx(0, Angle::param(0)))
            .push(Gate::zz(0, 1, Angle::param(1)))
            .push(Gate::h(1));
        let json = c.to_json().unwrap();
        assert!(json.contains("\"ZZ\""));
        assert!(json.contains("\"slot\": 1"));
        let back: Vec<Gate> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c.gates);
    }
}
