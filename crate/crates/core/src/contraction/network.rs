use num_complex::Complex64;

use super::ContractionError;
use crate::circuit::{
    h_matrix, rx_matrix, ry_matrix, s_dagger_diagonal, zz_diagonal, Angle, Circuit, GateKind,
    Mat2,
};
use crate::tensor::{Label, Tensor};

/// Row-major batch of parameter vectors, one row per amplitude to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBatch {
    n_params: usize,
    rows: usize,
    values: Vec<f64>,
}

impl ParamBatch {
    pub fn new(n_params: usize, values: Vec<f64>) -> Result<Self, ContractionError> {
        if n_params == 0 {
            return Err(ContractionError::Binding {
                expected: 0,
                got: values.len(),
            });
        }
        if values.len() % n_params != 0 {
            return Err(ContractionError::Binding {
                expected: n_params,
                got: values.len() % n_params,
            });
        }
        Ok(Self {
            n_params,
            rows: values.len() / n_params,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(n_params: usize, rows: &[R]) -> Result<Self, ContractionError> {
        let mut values = Vec::with_capacity(rows.len() * n_params);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_params {
                return Err(ContractionError::Binding {
                    expected: n_params,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            n_params,
            rows: rows.len(),
            values,
        })
    }

    /// `rows` empty bindings for parameter-free circuits.
    pub fn empty(rows: usize) -> Self {
        Self {
            n_params: 0,
            rows,
            values: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_params..(i + 1) * self.n_params]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_params..(i + 1) * self.n_params]
    }

    /// Sub-batch of rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> ParamBatch {
        ParamBatch {
            n_params: self.n_params,
            rows: end - start,
            values: self.values[start * self.n_params..end * self.n_params].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StubPayload {
    /// `|0>` initial state or `<0|` final projection.
    ZeroCap,
    Gate { kind: GateKind, angle: Option<Angle> },
}

/// A network node: its legs plus the recipe that produces its values from a
/// parameter binding.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorStub {
    pub labels: Vec<Label>,
    pub payload: StubPayload,
}

fn one_qubit_entries(m: &Mat2) -> [Complex64; 4] {
    // legs [in, out]
    [m[0][0], m[1][0], m[0][1], m[1][1]]
}

fn gate_entries(kind: GateKind, angle: f64) -> Vec<Complex64> {
    match kind {
        GateKind::Rx => one_qubit_entries(&rx_matrix(angle)).to_vec(),
        GateKind::Ry => one_qubit_entries(&ry_matrix(angle)).to_vec(),
        GateKind::H => one_qubit_entries(&h_matrix()).to_vec(),
        GateKind::SDagger => s_dagger_diagonal().to_vec(),
        GateKind::Zz => zz_diagonal(angle).to_vec(),
        GateKind::CRx => {
            // legs [control, in, out]
            let one = Complex64::new(1.0, 0.0);
            let zero = Complex64::new(0.0, 0.0);
            let mut v = vec![one, zero, zero, one];
            v.extend_from_slice(&one_qubit_entries(&rx_matrix(angle)));
            v
        }
    }
}

impl TensorStub {
    /// `(slot, scale)` of the bound parameter, if any.
    pub fn param(&self) -> Option<(usize, f64)> {
        match &self.payload {
            StubPayload::Gate {
                angle: Some(Angle::Param { slot, scale }),
                ..
            } => Some((*slot, *scale)),
            _ => None,
        }
    }

    pub fn gate_kind(&self) -> Option<GateKind> {
        match &self.payload {
            StubPayload::Gate { kind, .. } => Some(*kind),
            StubPayload::ZeroCap => None,
        }
    }

    /// Produces the tensor values with legs in ascending label order. Parameter-bound gates get one block per
    /// batch row; every other stub is unbatched and broadcasts. `shift` is
    /// added to the resolved gate angle.
    pub fn materialize(&self, params: &ParamBatch, shift: f64) -> Tensor {
        let labels = self.labels.clone();
        let data = match &self.payload {
            StubPayload::ZeroCap => {
                vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
            }
            StubPayload::Gate { kind, angle } => match angle {
                Some(Angle::Param { .. }) => {
                    let angle = angle.unwrap();
                    let rows = params.rows();
                    let mut data = Vec::with_capacity(rows << labels.len());
                    for r in 0..rows {
                        data.extend(gate_entries(*kind, angle.resolve(params.row(r)) + shift));
                    }
                    return Tensor::new(labels, Some(rows), data)
                        .expect("stub layout is consistent by construction")
                        .into_canonical();
                }
                Some(Angle::Fixed(a)) => gate_entries(*kind, a + shift),
                None => gate_entries(*kind, 0.0),
            },
        };
        Tensor::new(labels, None, data)
            .expect("stub layout is consistent by construction")
            .into_canonical()
    }
}

/// Closed tensor network for `<0...0| C |0...0>`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorNetwork {
    pub n_qubits: usize,
    pub n_params: usize,
    pub stubs: Vec<TensorStub>,
    pub n_labels: usize,
    /// Always empty for amplitude networks.
    pub open_labels: Vec<Label>,
}

impl TensorNetwork {
    pub fn labels(&self) -> impl Iterator<Item = Label> {
        (0..self.n_labels as u32).map(Label)
    }

    pub fn parameterized_stubs(&self) -> impl Iterator<Item = (usize, &TensorStub)> {
        self.stubs.iter().enumerate().filter(|(_, s)| s.param().is_some())
    }
}

/// Converts a circuit into its amplitude network. Each wire segment between
/// non-diagonal gates gets a fresh label in creation order; diagonal gates
/// reuse the labels of the wires they touch; a controlled rotation keeps the
/// control wire label and opens a new target segment.
pub fn build_network(circuit: &Circuit) -> Result<TensorNetwork, ContractionError> {
    circuit.validate()?;
    let n = circuit.n_qubits;
    let mut next = 0u32;
    let mut fresh = || {
        let l = Label(next);
        next += 1;
        l
    };
    let mut wires: Vec<Label> = Vec::with_capacity(n);
    let mut stubs = Vec::with_capacity(circuit.gates.len() + 2 * n);
    for _ in 0..n {
        let l = fresh();
        wires.push(l);
        stubs.push(TensorStub {
            labels: vec![l],
            payload: StubPayload::ZeroCap,
        });
    }
    for gate in &circuit.gates {
        let payload = StubPayload::Gate {
            kind: gate.kind,
            angle: gate.angle,
        };
        let labels = match gate.kind {
            GateKind::Zz => vec![wires[gate.qubits[0]], wires[gate.qubits[1]]],
            GateKind::SDagger => vec![wires[gate.qubits[0]]],
            GateKind::CRx => {
                let (c, t) = (gate.qubits[0], gate.qubits[1]);
                let out = fresh();
                let labels = vec![wires[c], wires[t], out];
                wires[t] = out;
                labels
            }
            GateKind::Rx | GateKind::Ry | GateKind::H => {
                let q = gate.qubits[0];
                let out = fresh();
                let labels = vec![wires[q], out];
                wires[q] = out;
                labels
            }
        };
        stubs.push(TensorStub { labels, payload });
    }
    for &w in &wires {
        stubs.push(TensorStub {
            labels: vec![w],
            payload: StubPayload::ZeroCap,
        });
    }
    Ok(TensorNetwork {
        n_qubits: n,
        n_params: circuit.n_params(),
        stubs,
        n_labels: next as usize,
        open_labels: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{inversion_test_template, Gate};

    #[test]
    fn single_rx_network() {
        let mut c = Circuit::new(1, 1, 0);
        c.push(Gate::rx(0, Angle::param(0)));
        let net = build_network(&c).unwrap();
        assert_eq!(net.stubs.len(), 3);
        assert_eq!(net.n_labels, 2);
        assert!(net.open_labels.is_empty());
    }

    #[test]
    fn zz_is_one_diagonal_stub() {
        let mut c = Circuit::new(2, 2, 1);
        c.push(Gate::rx(0, Angle::param(0)))
            .push(Gate::rx(1, Angle::param(1)))
            .push(Gate::zz(0, 1, Angle::param(2)));
        let net = build_network(&c).unwrap();
        // two caps, two Rx, one ZZ, two caps
        assert_eq!(net.stubs.len(), 7);
        assert_eq!(net.n_labels, 4);
        let zz = &net.stubs[4];
        assert_eq!(zz.gate_kind(), Some(GateKind::Zz));
        assert_eq!(zz.labels, vec![Label(2), Label(3)]);
        // the ZZ legs are exactly the wires' current segments, shared with the final caps
        assert_eq!(net.stubs[5].labels, vec![Label(2)]);
        assert_eq!(net.stubs[6].labels, vec![Label(3)]);
    }

    #[test]
    fn inversion_test_label_count_matches_hand_count() {
        // n = 4, l = 1, one wire drawn by hand:
        // |0> -Rx- [ZZ] -Ry- Rx - Rx' - Ry' - [ZZ'] - Rx' - <0|
        // six non-diagonal gates cut the wire into seven segments
        let per_wire = 7;
        let net = build_network(&inversion_test_template(4, 1).unwrap()).unwrap();
        assert_eq!(net.n_labels, 4 * per_wire);
        for l in net.labels() {
            let uses = net.stubs.iter().filter(|s| s.labels.contains(&l)).count();
            assert!(uses >= 2, "label {l} used {uses} times");
        }
    }

    #[test]
    fn out_of_range_gate_rejected() {
        let mut c = Circuit::new(1, 0, 0);
        c.push(Gate::h(1));
        assert!(matches!(build_network(&c), Err(ContractionError::Circuit(_))));
    }

    #[test]
    fn param_batch_shapes() {
        assert!(ParamBatch::new(3, vec![0.0; 7]).is_err());
        assert_eq!(ParamBatch::new(3, vec![0.0; 6]).unwrap().rows(), 2);
        let b = ParamBatch::from_rows(2, &[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(b.rows(), 2);
        assert_eq!(b.row(1), &[3.0, 4.0]);
        assert_eq!(b.slice(1, 2).row(0), &[3.0, 4.0]);
        assert_eq!(ParamBatch::empty(5).rows(), 5);
    }
}
