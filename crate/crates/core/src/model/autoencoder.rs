use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, MlpGrads};
use crate::tabular::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Hidden layer widths; `None` picks `(⌈d/2⌉, ⌈d/4⌉)`.
    pub hidden_dims: Option<Vec<usize>>,
    pub noise_sigma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: None,
            noise_sigma: 0.1,
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Denoising autoencoder over normalized feature vectors. The hidden
/// layers form the encoder; the final linear layer is the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    net: Mlp,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderFit {
    pub model: Autoencoder,
    /// Mean noisy-input training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean clean reconstruction error over the training rows.
    pub final_error: f64,
}

impl Autoencoder {
    pub fn from_network(net: Mlp, noise_sigma: f64) -> Result<Self> {
        if net.input_dim() != net.output_dim() {
            return Err(Error::Shape {
                expected: net.input_dim(),
                actual: net.output_dim(),
            });
        }
        Ok(Self { net, noise_sigma })
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward_one(x)
    }

    /// `‖x − x̂‖²`
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        let r = self.reconstruct(x)?;
        Ok(x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

/// Plausibility of a normalized counterfactual: squared reconstruction error.
pub fn plausibility(ae: &Autoencoder, x_cf: &[f64]) -> Result<f64> {
    if x_cf.len() != ae.dim() {
        return Err(Error::Shape {
            expected: ae.dim(),
            actual: x_cf.len(),
        });
    }
    ae.reconstruction_error(x_cf)
}

/// Mean squared reconstruction error of `net` on `noisy` against `clean`,
/// averaged over batch and features, with its parameter gradient.
pub fn autoencoder_loss_and_grad(net: &Mlp, clean: ArrayView2<f64>, noisy: ArrayView2<f64>) -> Result<(f64, MlpGrads)> {
    let (out, cache) = net.forward_cached(noisy)?;
    let diff = &out - &clean;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let upstream = diff.mapv(|d| 2.0 * d / n);
    let (grads, _) = net.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

/// Minibatch Adam on Gaussian-noised inputs.
pub fn train_autoencoder(train: &[Instance], config: &AutoencoderConfig) -> Result<AutoencoderFit> {
    if train.is_empty() {
        return Err(Error::EmptyPopulation("autoencoder training set is empty".into()));
    }
    let d = train[0].len();
    if let Some(row) = train.iter().find(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: d,
            actual: row.len(),
        });
    }
    if config.batch_size == 0 || config.noise_sigma < 0.0 {
        return Err(Error::Config("autoencoder needs batch_size ≥ 1 and noise_sigma ≥ 0".into()));
    }
    let hidden = config
        .hidden_dims
        .clone()
        .unwrap_or_else(|| vec![d.div_ceil(2), d.div_ceil(4)]);
    let mut sizes = vec![d];
    sizes.extend(hidden.iter().map(|&h| h.max(1)));
    sizes.push(d);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut opt = Adam::new(net.num_params(), config.lr);
    let noise = Normal::new(0.0, config.noise_sigma.max(0.0)).expect("finite sigma");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let clean = Array2::from_shape_fn((chunk.len(), d), |(i, j)| train[chunk[i]][j]);
            let noisy = if config.noise_sigma > 0.0 {
                clean.mapv(|v| v + noise.sample(&mut rng))
            } else {
                clean.clone()
            };
            let (loss, grads) = autoencoder_loss_and_grad(&net, clean.view(), noisy.view())?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence(format!(
                    "autoencoder loss became {loss} in epoch {epoch}; try a smaller learning rate"
                )));
            }
            opt.step_mlp(&mut net, &grads);
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / train.len() as f64);
    }

    let model = Autoencoder {
        net,
        noise_sigma: config.noise_sigma,
    };
    let mut final_error = 0.0;
    for x in train {
        final_error += model.reconstruction_error(x)?;
    }
    final_error /= train.len() as f64;
    if !final_error.is_finite() {
        return Err(Error::Divergence(
            "autoencoder reconstruction error is not finite; try a smaller learning rate".into(),
        ));
    }
    Ok(AutoencoderFit {
        model,
        epoch_losses,
        final_error,
    })
}
