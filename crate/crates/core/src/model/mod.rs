//! The classifier under explanation, its fairness audit, and the
//! plausibility autoencoder.

mod audit;
mod autoencoder;
mod logistic;
mod scores;

pub use audit::{audit_fairness, audit_predictions, ModelFairnessAudit};
pub use autoencoder::{
    autoencoder_loss_and_grad, plausibility, train_autoencoder, Autoencoder, AutoencoderConfig, AutoencoderFit,
};
pub use logistic::{fit_logistic, logistic_loss_and_grad, train_classifier, LogisticConfig, LogisticRegression};
pub use scores::ScoreTable;

/// Default decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A binary classifier over normalized instances. The engine only ever
/// calls `score` and `predict`, so any model can sit behind this trait.
pub trait Classifier: Send + Sync {
    /// Probability-like score in `[0, 1]`.
    fn score(&self, x: &[f64]) -> f64;

    fn threshold(&self) -> f64 {
        DEFAULT_THRESHOLD
    }

    /// `1` iff `score(x) >= threshold`.
    fn predict(&self, x: &[f64]) -> u8 {
        (self.score(x) >= self.threshold()) as u8
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }

    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }

    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

impl<C: Classifier + ?Sized> Classifier for std::sync::Arc<C> {
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }

    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}
