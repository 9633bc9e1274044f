//! Fully connected ReLU classifier with a scalar logit.
//!
//! `x_l = relu(W_l x_{l-1} + b_l)` for `l = 1..=L`, and
//! `f(x) = W_{L+1} x_L + b_{L+1}`. Negative logits predict the inner class.

use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::numerics;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    context: "dense matrix row",
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| numerics::dot(self.row(i), x)).collect()
    }

    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(i)) {
                    *o += yi * w;
                }
            }
        }
        out
    }

    pub fn spectral_norm(&self) -> f64 {
        numerics::spectral_norm(self.rows, self.cols, &self.data)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Dense,
    pub bias: Vec<f64>,
}

/// Weights and biases of an `L`-hidden-layer network of uniform width.
///
/// `layers[0]` is `h x d`, `layers[1..L]` are `h x h`, and `layers[L]` is the
/// `1 x h` output layer. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub layers: Vec<Layer>,
}

/// Pre- and post-activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub preacts: Vec<Vec<f64>>,
    pub postacts: Vec<Vec<f64>>,
    pub logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub recall_inner: f64,
    pub max_inner_logit: f64,
}

impl NetworkParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, hidden_layers: usize) -> Self {
        let layers = (0..=hidden_layers)
            .map(|l| {
                let (rows, cols) = layer_shape(input_dim, hidden_dim, hidden_layers, l);
                Layer {
                    weight: Dense::zeros(rows, cols),
                    bias: vec![0.0; rows],
                }
            })
            .collect();
        Self {
            input_dim,
            hidden_dim,
            hidden_layers,
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim, self.hidden_layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.hidden_layers == 0 {
            return Err(Error::config("network dimensions must be at least 1"));
        }
        if self.layers.len() != self.hidden_layers + 1 {
            return Err(Error::DimensionMismatch {
                context: "layer count",
                expected: self.hidden_layers + 1,
                got: self.layers.len(),
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = layer_shape(self.input_dim, self.hidden_dim, self.hidden_layers, l);
            if layer.weight.rows != rows || layer.weight.data.len() != rows * cols {
                return Err(Error::DimensionMismatch {
                    context: "weight shape",
                    expected: rows * cols,
                    got: layer.weight.data.len(),
                });
            }
            if layer.weight.cols != cols || layer.bias.len() != rows {
                return Err(Error::DimensionMismatch {
                    context: "bias length",
                    expected: rows,
                    got: layer.bias.len(),
                });
            }
        }
        if !self.values().all(f64::is_finite) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(())
    }

    pub fn output(&self) -> &Layer {
        &self.layers[self.hidden_layers]
    }

    pub fn output_mut(&mut self) -> &mut Layer {
        let l = self.hidden_layers;
        &mut self.layers[l]
    }

    /// All parameters in layer order: weights row-major, then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.data.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        for (v, &f) in self.values_mut().zip(flat) {
            *v = f;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &NetworkParams) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values_mut().for_each(|v| *v *= alpha);
    }

    pub fn dot(&self, other: &NetworkParams) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        for layer in &self.layers[..self.hidden_layers] {
            act = layer
                .weight
                .matvec(&act)
                .into_iter()
                .zip(&layer.bias)
                .map(|(z, b)| (z + b).max(0.0))
                .collect();
        }
        let out = self.output();
        numerics::dot(out.weight.row(0), &act) + out.bias[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut preacts = Vec::with_capacity(self.hidden_layers);
        let mut postacts = Vec::with_capacity(self.hidden_layers);
        let mut act = x.to_vec();
        for layer in &self.layers[..self.hidden_layers] {
            let pre: Vec<f64> = layer
                .weight
                .matvec(&act)
                .into_iter()
                .zip(&layer.bias)
                .map(|(z, b)| z + b)
                .collect();
            act = pre.iter().map(|&z| z.max(0.0)).collect();
            preacts.push(pre);
            postacts.push(act.clone());
        }
        let out = self.output();
        let logit = numerics::dot(out.weight.row(0), &act) + out.bias[0];
        Ok(ForwardTrace {
            input: x.to_vec(),
            preacts,
            postacts,
            logit,
        })
    }

    /// Backpropagates `dlogit` through a trace, accumulating parameter
    /// gradients into `grad`. Returns the gradient with respect to the input.
    fn backward(
        &self,
        trace: &ForwardTrace,
        dlogit: f64,
        mut grad: Option<&mut NetworkParams>,
    ) -> Vec<f64> {
        let last = self.hidden_layers;
        let prev = &trace.postacts[last - 1];
        if let Some(grad) = grad.as_deref_mut() {
            let g = &mut grad.layers[last];
            for (gw, &a) in g.weight.data.iter_mut().zip(prev) {
                *gw += dlogit * a;
            }
            g.bias[0] += dlogit;
        }
        // gradient w.r.t. the post-activation of the current layer
        let mut dpost: Vec<f64> = self.output().weight.row(0).iter().map(|w| w * dlogit).collect();
        for l in (0..last).rev() {
            let dpre: Vec<f64> = dpost
                .iter()
                .zip(&trace.preacts[l])
                .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
            if let Some(grad) = grad.as_deref_mut() {
                let input = if l == 0 { &trace.input } else { &trace.postacts[l - 1] };
                let g = &mut grad.layers[l];
                for (i, &dz) in dpre.iter().enumerate() {
                    if dz != 0.0 {
                        for (gw, &a) in g.weight.row_mut(i).iter_mut().zip(input) {
                            *gw += dz * a;
                        }
                        g.bias[i] += dz;
                    }
                }
            }
            dpost = self.layers[l].weight.matvec_t(&dpre);
        }
        dpost
    }

    /// Logit and its gradient with respect to the input point.
    pub fn input_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward(x)?;
        let g = self.backward(&trace, 1.0, None);
        Ok((trace.logit, g))
    }

    /// Mean binary cross-entropy with logits and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &[LabeledSample]) -> Result<(f64, NetworkParams)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let trace = self.forward(&s.x)?;
            let z = trace.logit;
            let y = f64::from(s.y);
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            let dz = (sigmoid(z) - y) * scale;
            self.backward(&trace, dz, Some(&mut grad));
        }
        Ok((loss * scale, grad))
    }

    pub fn evaluate(&self, samples: &[LabeledSample]) -> Evaluation {
        let mut correct = 0usize;
        let mut inner = 0usize;
        let mut inner_hit = 0usize;
        let mut max_inner = f64::NEG_INFINITY;
        for s in samples {
            let z = self.logit(&s.x);
            let predicted_outer = z > 0.0;
            if predicted_outer == s.is_outer() {
                correct += 1;
            }
            if !s.is_outer() {
                inner += 1;
                max_inner = max_inner.max(z);
                if z <= 0.0 {
                    inner_hit += 1;
                }
            }
        }
        Evaluation {
            accuracy: if samples.is_empty() {
                0.0
            } else {
                correct as f64 / samples.len() as f64
            },
            recall_inner: if inner == 0 { 1.0 } else { inner_hit as f64 / inner as f64 },
            max_inner_logit: max_inner,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn layer_shape(d: usize, h: usize, hidden_layers: usize, l: usize) -> (usize, usize) {
    let rows = if l == hidden_layers { 1 } else { h };
    let cols = if l == 0 { d } else { h };
    (rows, cols)
}

/// Every entry of a `b x a` weight and of its bias drawn from
/// `Uniform[-1/sqrt(a), 1/sqrt(a)]`, with `a` the fan-in.
pub fn init_xavier(d: usize, h: usize, hidden_layers: usize, seed: u64) -> NetworkParams {
    assert!(d >= 1 && h >= 1 && hidden_layers >= 1);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(d, h, hidden_layers);
    for layer in &mut params.layers {
        let bound = 1.0 / (layer.weight.cols as f64).sqrt();
        for v in layer.weight.data.iter_mut().chain(layer.bias.iter_mut()) {
            *v = rng.random_range(-bound..=bound);
        }
    }
    params
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<ForwardTrace> {
    params.forward(x)
}

pub fn loss_and_grad(params: &NetworkParams, batch: &[LabeledSample]) -> Result<(f64, NetworkParams)> {
    params.loss_and_grad(batch)
}

pub fn evaluate(params: &NetworkParams, samples: &[LabeledSample]) -> Evaluation {
    params.evaluate(samples)
}

/// On-disk checkpoint layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub h: usize,
    #[serde(rename = "L")]
    pub hidden_layers: usize,
    #[serde(rename = "W")]
    pub weights: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params(params: &NetworkParams, seed: Option<u64>, meta: serde_json::Value) -> Self {
        Self {
            d: params.input_dim,
            h: params.hidden_dim,
            hidden_layers: params.hidden_layers,
            weights: params.layers.iter().map(|l| l.weight.to_rows()).collect(),
            b: params.layers.iter().map(|l| l.bias.clone()).collect(),
            seed,
            meta,
        }
    }

    pub fn to_params(&self) -> Result<NetworkParams> {
        if self.weights.len() != self.b.len() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint layers",
                expected: self.weights.len(),
                got: self.b.len(),
            });
        }
        let layers = self
            .weights
            .iter()
            .zip(&self.b)
            .map(|(w, b)| {
                Ok(Layer {
                    weight: Dense::from_rows(w)?,
                    bias: b.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = NetworkParams {
            input_dim: self.d,
            hidden_dim: self.h,
            hidden_layers: self.hidden_layers,
            layers,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
