use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::NnError;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected network, ReLU after every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    version: u64,
}

/// Activations recorded by [`Mlp::forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    /// Same ordering as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl Mlp {
    /// He-style uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// zero biases.
    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Result<Self, NnError> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((w[1], w[0]), |_| rng.gen_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self, NnError> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Widths("at least one layer is required".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(NnError::Widths(format!("layer {i}: bias does not match weight rows")));
            }
            if i > 0 && l.weight.ncols() != layers[i - 1].weight.nrows() {
                return Err(NnError::Widths(format!("layer {i}: input width does not match previous output")));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    fn check_widths(widths: &[usize]) -> Result<(), NnError> {
        if widths.len() < 2 {
            return Err(NnError::Widths("need an input and an output width".into()));
        }
        if widths.contains(&0) {
            return Err(NnError::Widths("widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.ncols()];
        w.extend(self.layers.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights then bias of each layer, row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.n_params() {
            return Err(NnError::Shape {
                what: "flat parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = params[at];
                at += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[at];
                at += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Shape {
                what: "input width",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight.t()) + &l.bias;
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok((
            h,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Output only.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward(x)?.0)
    }

    /// Reverse pass; returns parameter gradients and the gradient with
    /// respect to the input rows.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>), NnError> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        let rows = cache.inputs[0].nrows();
        if upstream.dim() != (rows, self.output_dim()) {
            return Err(NnError::Shape {
                what: "upstream gradient",
                expected: rows * self.output_dim(),
                got: upstream.len(),
            });
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut g = upstream.to_owned();
        for i in (0..n).rev() {
            if i + 1 < n {
                // ReLU subgradient taken as 0 at 0
                g.zip_mut_with(&cache.pre[i], |gv, &z| {
                    if z <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            weights.push(g.t().dot(&cache.inputs[i]));
            biases.push(g.sum_axis(Axis(0)));
            g = g.dot(&self.layers[i].weight);
        }
        weights.reverse();
        biases.reverse();
        Ok((MlpGrads { weights, biases }, g))
    }
}
