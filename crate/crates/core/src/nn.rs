//! Dense multilayer perceptrons with hand-derived backpropagation.
//!
//! Hidden layers use `tanh`, the output layer is linear. Inputs are batches
//! laid out as `(batch, features)` matrices.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `(in, out)`
    weights: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        if r.sizes.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output sizes".into()));
        }
        let mut net = Mlp::zeros(&r.sizes);
        net.set_params(&r.params)?;
        Ok(net)
    }
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        MlpRepr {
            sizes: m.sizes(),
            params: m.params(),
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Random initialization, uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.bias.len()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Mutable access to the output layer, e.g. to zero a policy head.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.mapv_inplace(|w| w * factor);
        last.bias.mapv_inplace(|b| b * factor);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weights) + &l.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weights) + &l.bias;
            inputs.push(h);
            h = if i < last { z.mapv(f64::tanh) } else { z };
        }
        Ok((h, ForwardCache { inputs }))
    }

    /// Backpropagates `upstream = dL/d(output)` through a cached forward pass,
    /// returning parameter gradients and `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if upstream.ncols() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                actual: upstream.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push((gw, gb));
            let mut d_in = delta.dot(&l.weights.t());
            if i > 0 {
                // input[i] = tanh(z_{i-1})
                d_in.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
            }
            delta = d_in;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    /// Forward then backward in one call.
    pub fn gradient(&self, x: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward(&cache, upstream)
    }

    /// `self ← τ·source + (1−τ)·self`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weights.zip_mut_with(&src.weights, |d, &s| *d = tau * s + (1.0 - tau) * *d);
            dst.bias.zip_mut_with(&src.bias, |d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Applies one step to a network's parameters.
    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        let mut p = net.params();
        self.step(&mut p, &grads.flatten());
        net.set_params(&p).expect("gradient layout matches network");
    }
}
