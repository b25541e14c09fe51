//! Brute-force statevector simulation, the reference every faster path is
//! checked against.

use num_complex::Complex64;

use super::{
    h_matrix, rx_matrix, ry_matrix, s_dagger_diagonal, zz_diagonal, Circuit, CircuitError,
    GateKind, Mat2,
};

pub const MAX_STATEVECTOR_QUBITS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub n_qubits: usize,
    pub amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zero(n_qubits: usize) -> Result<Self, CircuitError> {
        if n_qubits > MAX_STATEVECTOR_QUBITS {
            return Err(CircuitError::TooManyQubits(n_qubits));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    fn mask(&self, q: usize) -> usize {
        1 << (self.n_qubits - 1 - q)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn apply_1q(&mut self, q: usize, m: &Mat2) {
        let mask = self.mask(q);
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | mask]);
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | mask] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    fn apply_controlled_1q(&mut self, control: usize, target: usize, m: &Mat2) {
        let cmask = self.mask(control);
        let tmask = self.mask(target);
        for i in 0..self.amps.len() {
            if i & cmask != 0 && i & tmask == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | tmask]);
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | tmask] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    fn apply_diag_1q(&mut self, q: usize, d: &[Complex64; 2]) {
        let mask = self.mask(q);
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= d[usize::from(i & mask != 0)];
        }
    }

    fn apply_diag_2q(&mut self, qa: usize, qb: usize, d: &[Complex64; 4]) {
        let (ma, mb) = (self.mask(qa), self.mask(qb));
        for (i, a) in self.amps.iter_mut().enumerate() {
            let idx = (usize::from(i & ma != 0) << 1) | usize::from(i & mb != 0);
            *a *= d[idx];
        }
    }

    /// Probability that qubit `q` reads 0.
    pub fn prob_zero(&self, q: usize) -> f64 {
        let mask = self.mask(q);
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }
}

pub fn statevector_simulate(circuit: &Circuit, params: &[f64]) -> Result<StateVector, CircuitError> {
    circuit.validate()?;
    circuit.check_params(params)?;
    let mut state = StateVector::zero(circuit.n_qubits)?;
    for gate in &circuit.gates {
        let angle = gate.angle.map(|a| a.resolve(params)).unwrap_or(0.0);
        let q = &gate.qubits;
        match gate.kind {
            GateKind::Rx => state.apply_1q(q[0], &rx_matrix(angle)),
            GateKind::Ry => state.apply_1q(q[0], &ry_matrix(angle)),
            GateKind::H => state.apply_1q(q[0], &h_matrix()),
            GateKind::SDagger => state.apply_diag_1q(q[0], &s_dagger_diagonal()),
            GateKind::Zz => state.apply_diag_2q(q[0], q[1], &zz_diagonal(angle)),
            GateKind::CRx => state.apply_controlled_1q(q[0], q[1], &rx_matrix(angle)),
        }
    }
    Ok(state)
}

/// `<0...0| C |0...0>`
pub fn statevector_amplitude(circuit: &Circuit, params: &[f64]) -> Result<Complex64, CircuitError> {
    Ok(statevector_simulate(circuit, params)?.amps[0])
}

/// `<Z_q>` of the state prepared by the circuit.
pub fn expectation_z(circuit: &Circuit, params: &[f64], qubit: usize) -> Result<f64, CircuitError> {
    let state = statevector_simulate(circuit, params)?;
    Ok(2.0 * state.prob_zero(qubit) - 1.0)
}

/// Exact `P(0) - P(1)` of the given ancilla qubit.
pub fn ancilla_bias(circuit: &Circuit, params: &[f64], ancilla: usize) -> Result<f64, CircuitError> {
    let state = statevector_simulate(circuit, params)?;
    Ok(2.0 * state.prob_zero(ancilla) - 1.0)
}
