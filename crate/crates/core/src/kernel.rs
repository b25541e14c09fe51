//! Fidelity kernel over encoded states: batched inner products, prototype
//! scores, exact gradients and the sampled Hadamard-test estimator.

use num_complex::Complex64;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;

use crate::circuit::{
    ancilla_bias, inversion_test_template, metric_theta_count, Circuit, CircuitError,
};
use crate::contraction::{
    amplitude_jacobian, build_network, execute_plan, plan_order, ContractionError,
    ContractionPlan, Heuristic, ParamBatch, TensorNetwork,
};

/// Slack allowed above 1 before a fidelity counts as a simulator bug.
pub const FIDELITY_TOLERANCE: f64 = 1e-9;
/// Prototype scores whose squared magnitudes sum below this are roundoff
/// noise (every score under ~1e-14 in magnitude) and treated as zero.
pub const DEGENERATE_SCORE_FLOOR: f64 = 1e-28;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Contraction(#[from] ContractionError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("left batch has {left} rows but right batch has {right}")]
    BatchMismatch { left: usize, right: usize },
    #[error("{total} support amplitudes cannot be split into classes of {k}")]
    ShotsPerClass { k: usize, total: usize },
    #[error("every prototype score is zero; class probabilities are undefined")]
    DegenerateScores,
    #[error("fidelity {value} at pair {index} is outside [0, 1]")]
    FidelityOutOfRange { index: usize, value: f64 },
    #[error("shot count must be positive")]
    ZeroShots,
}

/// Complex amplitudes `<psi(left)|psi(right)>` and their squared magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerProductBatch {
    pub amps: Vec<Complex64>,
    pub fidelities: Vec<f64>,
}

impl InnerProductBatch {
    fn from_amps(amps: Vec<Complex64>) -> Result<Self, KernelError> {
        let fidelities: Vec<f64> = amps.iter().map(|a| a.norm_sqr()).collect();
        if let Some((index, &value)) = fidelities
            .iter()
            .enumerate()
            .find(|(_, f)| !(**f <= 1.0 + FIDELITY_TOLERANCE))
        {
            return Err(KernelError::FidelityOutOfRange { index, value });
        }
        Ok(Self { amps, fidelities })
    }

    /// Fidelities clipped into `[0, 1]`; only meaningful after the range check.
    pub fn clamped_fidelities(&self) -> Vec<f64> {
        self.fidelities.iter().map(|f| f.min(1.0)).collect()
    }
}

/// Derivatives of a real loss with respect to every input of a pair batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradients {
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
}

/// Amplitudes of a pair batch together with their parameter jacobian, ready
/// to be chained with a loss adjoint.
#[derive(Clone, Debug)]
pub struct PairJacobian {
    pub batch: InnerProductBatch,
    n: usize,
    n_params: usize,
    jacobian: Vec<Complex64>,
}

impl PairJacobian {
    /// Chains with `adjoint[k] = dL/dRe(a_k) + i dL/dIm(a_k)`.
    pub fn chain(&self, adjoint: &[Complex64]) -> Result<PairGradients, KernelError> {
        let rows = self.batch.amps.len();
        if adjoint.len() != rows {
            return Err(KernelError::Length {
                what: "adjoint",
                expected: rows,
                got: adjoint.len(),
            });
        }
        let n = self.n;
        let mut left = vec![vec![0.0; n]; rows];
        let mut right = vec![vec![0.0; n]; rows];
        let mut theta = vec![0.0; self.n_params - 2 * n];
        for (r, g) in adjoint.iter().enumerate() {
            let row = &self.jacobian[r * self.n_params..(r + 1) * self.n_params];
            let d = |da: &Complex64| (g.conj() * da).re;
            for q in 0..n {
                right[r][q] = d(&row[q]);
                left[r][q] = d(&row[n + q]);
            }
            for (t, da) in theta.iter_mut().zip(&row[2 * n..]) {
                *t += d(da);
            }
        }
        Ok(PairGradients { left, right, theta })
    }
}

/// Per-class prototype scores (mean complex amplitude) and the normalized
/// class probabilities `|s_c|^2 / sum |s|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeScores {
    pub scores: Vec<Complex64>,
    pub probabilities: Vec<f64>,
}

/// Averages `amps` (class-major, `k` per class) into prototype scores.
pub fn scores_from_amplitudes(amps: &[Complex64], k: usize) -> Result<PrototypeScores, KernelError> {
    if k == 0 || amps.len() % k != 0 {
        return Err(KernelError::ShotsPerClass {
            k,
            total: amps.len(),
        });
    }
    let scores: Vec<Complex64> = amps
        .chunks(k)
        .map(|c| c.iter().sum::<Complex64>() / k as f64)
        .collect();
    let total: f64 = scores.iter().map(|s| s.norm_sqr()).sum();
    if !(total > DEGENERATE_SCORE_FLOOR) {
        return Err(KernelError::DegenerateScores);
    }
    let probabilities = scores.iter().map(|s| s.norm_sqr() / total).collect();
    Ok(PrototypeScores {
        scores,
        probabilities,
    })
}

/// `prod_mu cos((l + 1)(phi_i - phi_j) / 2)`: the inversion-test amplitude at
/// `theta = 0`, where every qubit only sees `l + 1` stacked Rx rotations.
pub fn closed_form_inner(phi_i: &[f64], phi_j: &[f64], layers: usize) -> Result<Complex64, KernelError> {
    if phi_i.len() != phi_j.len() {
        return Err(KernelError::Length {
            what: "phi_j",
            expected: phi_i.len(),
            got: phi_j.len(),
        });
    }
    let scale = (layers + 1) as f64 / 2.0;
    let re = phi_i
        .iter()
        .zip(phi_j)
        .map(|(a, b)| (scale * (a - b)).cos())
        .product();
    Ok(Complex64::new(re, 0.0))
}

/// The quantum head: circuit parameters plus the contraction plan of the
/// inversion test, built once and reused for every binding.
#[derive(Clone, Debug)]
pub struct QuantumHead {
    n: usize,
    layers: usize,
    pub theta: Vec<f64>,
    network: TensorNetwork,
    plan: ContractionPlan,
}

impl QuantumHead {
    pub fn new(n: usize, layers: usize, theta: Vec<f64>) -> Result<Self, KernelError> {
        let circuit = inversion_test_template(n, layers)?;
        let expected = metric_theta_count(n, layers);
        if theta.len() != expected {
            return Err(KernelError::Length {
                what: "theta",
                expected,
                got: theta.len(),
            });
        }
        let network = build_network(&circuit)?;
        let plan = plan_order(&network, Heuristic::GreedyMinFill)?;
        Ok(Self {
            n,
            layers,
            theta,
            network,
            plan,
        })
    }

    /// Theta drawn uniformly from `[0, range]`; `range = 0` gives the
    /// unentangled circuit.
    pub fn with_random_theta<R: Rng>(n: usize, layers: usize, range: f64, rng: &mut R) -> Result<Self, KernelError> {
        let count = metric_theta_count(n, layers);
        let theta = if range > 0.0 {
            (0..count).map(|_| rng.gen_range(0.0..=range)).collect()
        } else {
            vec![0.0; count]
        };
        Self::new(n, layers, theta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn plan(&self) -> &ContractionPlan {
        &self.plan
    }

    fn bindings<L: AsRef<[f64]>, R: AsRef<[f64]>>(&self, left: &[L], right: &[R]) -> Result<ParamBatch, KernelError> {
        if left.len() != right.len() {
            return Err(KernelError::BatchMismatch {
                left: left.len(),
                right: right.len(),
            });
        }
        let width = 2 * self.n + self.theta.len();
        let mut values = Vec::with_capacity(left.len() * width);
        for (l, r) in left.iter().zip(right) {
            let (l, r) = (l.as_ref(), r.as_ref());
            for (what, v) in [("left embedding", l), ("right embedding", r)] {
                if v.len() != self.n {
                    return Err(KernelError::Length {
                        what,
                        expected: self.n,
                        got: v.len(),
                    });
                }
            }
            values.extend_from_slice(r);
            values.extend_from_slice(l);
            values.extend_from_slice(&self.theta);
        }
        Ok(ParamBatch::new(width, values)?)
    }

    /// Pairwise `<psi(left[k])|psi(right[k])>` in one batched contraction.
    pub fn inner_products<L: AsRef<[f64]>, R: AsRef<[f64]>>(
        &self,
        left: &[L],
        right: &[R],
    ) -> Result<InnerProductBatch, KernelError> {
        if left.is_empty() && right.is_empty() {
            return InnerProductBatch::from_amps(Vec::new());
        }
        let batch = self.bindings(left, right)?;
        InnerProductBatch::from_amps(execute_plan(&self.plan, &self.network, &batch)?)
    }

    /// Amplitudes plus their exact derivatives for later chaining.
    pub fn pair_jacobian<L: AsRef<[f64]>, R: AsRef<[f64]>>(
        &self,
        left: &[L],
        right: &[R],
    ) -> Result<PairJacobian, KernelError> {
        let n_params = 2 * self.n + self.theta.len();
        if left.is_empty() && right.is_empty() {
            return Ok(PairJacobian {
                batch: InnerProductBatch::from_amps(Vec::new())?,
                n: self.n,
                n_params,
                jacobian: Vec::new(),
            });
        }
        let batch = self.bindings(left, right)?;
        let j = amplitude_jacobian(&self.plan, &self.network, &batch)?;
        Ok(PairJacobian {
            batch: InnerProductBatch::from_amps(j.amplitudes)?,
            n: self.n,
            n_params,
            jacobian: j.jacobian,
        })
    }

    /// Gradient of `L` given its adjoint over the pair amplitudes.
    pub fn grad<L: AsRef<[f64]>, R: AsRef<[f64]>>(
        &self,
        left: &[L],
        right: &[R],
        adjoint: &[Complex64],
    ) -> Result<PairGradients, KernelError> {
        self.pair_jacobian(left, right)?.chain(adjoint)
    }

    /// Central finite differences of `sum_k Re(conj(adjoint_k) a_k)`, the
    /// linear functional whose gradient [`QuantumHead::grad`] returns.
    pub fn grad_finite_difference<L: AsRef<[f64]>, R: AsRef<[f64]>>(
        &self,
        left: &[L],
        right: &[R],
        adjoint: &[Complex64],
        h: f64,
    ) -> Result<PairGradients, KernelError> {
        let mut left: Vec<Vec<f64>> = left.iter().map(|v| v.as_ref().to_vec()).collect();
        let mut right: Vec<Vec<f64>> = right.iter().map(|v| v.as_ref().to_vec()).collect();
        if adjoint.len() != left.len() {
            return Err(KernelError::Length {
                what: "adjoint",
                expected: left.len(),
                got: adjoint.len(),
            });
        }
        let functional = |head: &QuantumHead, l: &[Vec<f64>], r: &[Vec<f64>]| -> Result<f64, KernelError> {
            let amps = head.inner_products(l, r)?.amps;
            Ok(amps.iter().zip(adjoint).map(|(a, g)| (g.conj() * a).re).sum())
        };
        let mut out = PairGradients {
            left: vec![vec![0.0; self.n]; left.len()],
            right: vec![vec![0.0; self.n]; left.len()],
            theta: vec![0.0; self.theta.len()],
        };
        for r in 0..left.len() {
            for q in 0..self.n {
                let x = left[r][q];
                left[r][q] = x + h;
                let plus = functional(self, &left, &right)?;
                left[r][q] = x - h;
                let minus = functional(self, &left, &right)?;
                left[r][q] = x;
                out.left[r][q] = (plus - minus) / (2.0 * h);

                let x = right[r][q];
                right[r][q] = x + h;
                let plus = functional(self, &left, &right)?;
                right[r][q] = x - h;
                let minus = functional(self, &left, &right)?;
                right[r][q] = x;
                out.right[r][q] = (plus - minus) / (2.0 * h);
            }
        }
        let mut head = self.clone();
        for t in 0..self.theta.len() {
            let x = self.theta[t];
            head.theta[t] = x + h;
            let plus = functional(&head, &left, &right)?;
            head.theta[t] = x - h;
            let minus = functional(&head, &left, &right)?;
            head.theta[t] = x;
            out.theta[t] = (plus - minus) / (2.0 * h);
        }
        Ok(out)
    }

    /// Prototype scores of one query against `support[c][s]`, `k` shots per
    /// class.
    pub fn prototypical_scores<S: AsRef<[f64]>>(
        &self,
        support: &[Vec<S>],
        query: &[f64],
    ) -> Result<PrototypeScores, KernelError> {
        let k = support.first().map_or(0, |c| c.len());
        let mut left: Vec<&[f64]> = Vec::with_capacity(support.len() * k);
        for class in support {
            if class.len() != k {
                return Err(KernelError::Length {
                    what: "support class",
                    expected: k,
                    got: class.len(),
                });
            }
            left.extend(class.iter().map(|s| s.as_ref()));
        }
        let right = vec![query; left.len()];
        let amps = self.inner_products(&left, &right)?.amps;
        scores_from_amplitudes(&amps, k)
    }

    /// Fidelity of the query with each support sample, no averaging.
    pub fn matching_scores<S: AsRef<[f64]>>(&self, support: &[S], query: &[f64]) -> Result<Vec<f64>, KernelError> {
        let right = vec![query; support.len()];
        Ok(self.inner_products(support, &right)?.fidelities)
    }
}

/// Samples `shots` ancilla readouts of a Hadamard-test circuit (ancilla is
/// the last qubit) and returns `(count0 - count1) / shots`.
pub fn hadamard_estimate(circuit: &Circuit, params: &[f64], shots: u64, seed: u64) -> Result<f64, KernelError> {
    if shots == 0 {
        return Err(KernelError::ZeroShots);
    }
    let ancilla = circuit.n_qubits - 1;
    let bias = ancilla_bias(circuit, params, ancilla)?;
    let p0 = ((1.0 + bias) / 2.0).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count0 = Binomial::new(shots, p0)
        .expect("p0 is clamped into [0, 1]")
        .sample(&mut rng);
    Ok((2.0 * count0 as f64 - shots as f64) / shots as f64)
}
