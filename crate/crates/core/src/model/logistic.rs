use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::tabular::{Dataset, FeatureSchema, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            epochs: 1000,
            l2: 1e-4,
        }
    }
}

/// L2-regularized logistic regression over normalized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticRegression {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            weights,
            bias,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn save(&self, path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<()> {
        let file = ModelFile {
            kind: "logistic_regression".into(),
            schema_fingerprint: schema.fingerprint(),
            model: self.clone(),
        };
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    /// Loads a persisted model, refusing it if it was fitted for another schema.
    pub fn load(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        let actual = schema.fingerprint();
        if file.schema_fingerprint != actual {
            return Err(Error::Fingerprint {
                expected: file.schema_fingerprint,
                actual,
            });
        }
        if file.model.weights.len() != schema.dim() {
            return Err(Error::Shape {
                expected: schema.dim(),
                actual: file.model.weights.len(),
            });
        }
        Ok(file.model)
    }
}

impl Classifier for LogisticRegression {
    fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kind: String,
    schema_fingerprint: String,
    model: LogisticRegression,
}

/// Mean binary cross-entropy plus `l2/2 · |w|²`, and its gradient.
/// `params` is `[w_0, …, w_{d-1}, b]`.
pub fn logistic_loss_and_grad(params: &[f64], x: &[Instance], y: &[u8], l2: f64) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let m = x.len() as f64;
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z = params[..d].iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + params[d];
        let t = label as f64;
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        for (g, v) in grad[..d].iter_mut().zip(row) {
            *g += r * v;
        }
        grad[d] += r;
    }
    loss /= m;
    grad.iter_mut().for_each(|g| *g /= m);
    let sq: f64 = params[..d].iter().map(|w| w * w).sum();
    loss += 0.5 * l2 * sq;
    for (g, w) in grad[..d].iter_mut().zip(&params[..d]) {
        *g += l2 * w;
    }
    (loss, grad)
}

/// Full-batch gradient descent. Weight and bias steps are capped by a
/// block-diagonal smoothness bound of the loss, so the loss sequence is
/// non-increasing for any `l2`.
/// Returns the model and the loss before each epoch plus the final loss.
pub fn fit_logistic(x: &[Instance], y: &[u8], config: &LogisticConfig) -> Result<(LogisticRegression, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::EmptyPopulation("training set is empty".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 {
        return Err(Error::DegenerateLabels(0));
    }
    if positives == y.len() {
        return Err(Error::DegenerateLabels(1));
    }
    let d = x[0].len();
    // Hessian ⪯ diag((|x|²_max/2 + l2)·I, 1/2)
    let max_sq = x
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let weight_step = config.lr.min(1.0 / (0.5 * max_sq + config.l2));
    let bias_step = config.lr.min(2.0);

    let mut params = vec![0.0; d + 1];
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, grad) = logistic_loss_and_grad(&params, x, y, config.l2);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "logistic loss became {loss}; try a smaller learning rate"
            )));
        }
        losses.push(loss);
        for (p, g) in params[..d].iter_mut().zip(&grad) {
            *p -= weight_step * g;
        }
        params[d] -= bias_step * grad[d];
    }
    losses.push(logistic_loss_and_grad(&params, x, y, config.l2).0);
    let bias = params.pop().expect("bias");
    Ok((LogisticRegression::new(params, bias), losses))
}

pub fn train_classifier(train: &Dataset, config: &LogisticConfig) -> Result<LogisticRegression> {
    fit_logistic(&train.normalized(), train.labels(), config).map(|(m, _)| m)
}
