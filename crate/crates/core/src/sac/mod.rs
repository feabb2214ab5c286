//! Soft actor-critic with a tanh-squashed Gaussian policy, twin Q-networks
//! and automatic temperature tuning.

mod replay;
mod train;

pub use replay::{Batch, ReplayBuffer};
pub use train::{train, Environment, ToyLineEnv, TraceRow, TrainingOutcome, TrainingTrace, Transition};

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, MlpGrads};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub episodes: usize,
    pub initial_temperature: f64,
    /// Defaults to `−action_dim`.
    pub target_entropy: Option<f64>,
    /// Deterministic rollouts after training, also considered for the best result.
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            updates_per_step: 1,
            episodes: 100,
            initial_temperature: 1.0,
            target_entropy: None,
            eval_episodes: 1,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive");
        }
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return bad("initial_temperature must be positive");
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Mean and clamped log-std of the policy for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    /// 1.0 where the raw log-std lies inside the clamp range.
    pub unclamped: Array2<f64>,
}

fn split_head(out: &Array2<f64>, act_dim: usize) -> PolicyHead {
    let mean = out.slice(s![.., ..act_dim]).to_owned();
    let raw = out.slice(s![.., act_dim..]);
    let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let unclamped = raw.mapv(|v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 });
    PolicyHead {
        mean,
        log_std,
        unclamped,
    }
}

/// `ln(1 − tanh²u)`, stable for large `|u|`.
fn log1m_tanh2(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Squashed sample for given noise: returns `(u, tanh u, log π(a|s))`.
fn squash(head: &PolicyHead, noise: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let std = head.log_std.mapv(f64::exp);
    let u = &head.mean + &(&std * &noise);
    let a = u.mapv(f64::tanh);
    let logp = (0..u.nrows())
        .map(|i| {
            (0..u.ncols())
                .map(|j| {
                    let e = noise[[i, j]];
                    -0.5 * e * e - head.log_std[[i, j]] - HALF_LN_2PI - log1m_tanh2(u[[i, j]])
                })
                .sum()
        })
        .collect();
    (u, a, logp)
}

fn join(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("matching row counts")
}

/// `r + γ(1 − done)(min(Q̄₁, Q̄₂)(s′, a′) − α log π(a′|s′))` with `a′`
/// drawn from the policy using `noise`.
#[allow(clippy::too_many_arguments)]
pub fn critic_targets(
    policy: &Mlp,
    q1_target: &Mlp,
    q2_target: &Mlp,
    alpha: f64,
    gamma: f64,
    batch: &Batch,
    noise: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let act_dim = noise.ncols();
    let head = split_head(&policy.forward(batch.next_states.view())?, act_dim);
    let (_, a_next, logp) = squash(&head, noise);
    let x = join(batch.next_states.view(), a_next.view());
    let t1 = q1_target.forward(x.view())?;
    let t2 = q2_target.forward(x.view())?;
    Ok((0..batch.len())
        .map(|i| {
            let soft = t1[[i, 0]].min(t2[[i, 0]]) - alpha * logp[i];
            batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * soft
        })
        .collect())
}

/// `mean((Q(s, a) − y)²)` and its parameter gradient.
pub fn critic_loss(q: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, MlpGrads)> {
    let x = join(states, actions);
    let (out, cache) = q.forward_cached(x.view())?;
    let b = targets.len() as f64;
    let diff: Vec<f64> = out.column(0).iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
    let upstream = Array2::from_shape_fn((diff.len(), 1), |(i, _)| 2.0 * diff[i] / b);
    let (grads, _) = q.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grads: MlpGrads,
    /// `log π(a|s)` per row, treated as a constant by the temperature loss.
    pub log_probs: Vec<f64>,
}

/// `mean(α log π(a|s) − min(Q₁, Q₂)(s, a))` with `a` reparameterized
/// through `noise`, and its gradient with respect to the policy.
pub fn policy_loss(
    policy: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    alpha: f64,
    states: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<PolicyLoss> {
    let act_dim = noise.ncols();
    let (out, cache) = policy.forward_cached(states)?;
    let head = split_head(&out, act_dim);
    let (_, a, log_probs) = squash(&head, noise);
    let x = join(states, a.view());
    let (v1, c1) = q1.forward_cached(x.view())?;
    let (v2, c2) = q2.forward_cached(x.view())?;
    let n = states.nrows();
    let b = n as f64;
    let pick1: Vec<bool> = (0..n).map(|i| v1[[i, 0]] <= v2[[i, 0]]).collect();
    let qmin: Vec<f64> = (0..n).map(|i| if pick1[i] { v1[[i, 0]] } else { v2[[i, 0]] }).collect();
    let loss = (0..n).map(|i| alpha * log_probs[i] - qmin[i]).sum::<f64>() / b;

    let m1 = Array2::from_shape_fn((n, 1), |(i, _)| if pick1[i] { 1.0 } else { 0.0 });
    let m2 = m1.mapv(|v| 1.0 - v);
    let (_, d1) = q1.backward(&c1, m1.view())?;
    let (_, d2) = q2.backward(&c2, m2.view())?;
    let sdim = states.ncols();
    let dq_da = &d1.slice(s![.., sdim..]) + &d2.slice(s![.., sdim..]);

    let mut upstream = Array2::zeros((n, 2 * act_dim));
    for i in 0..n {
        for j in 0..act_dim {
            let aj = a[[i, j]];
            let sigma_eps = head.log_std[[i, j]].exp() * noise[[i, j]];
            let jac = 1.0 - aj * aj;
            let g = dq_da[[i, j]];
            upstream[[i, j]] = (alpha * 2.0 * aj - g * jac) / b;
            upstream[[i, act_dim + j]] =
                head.unclamped[[i, j]] * (alpha * (-1.0 + 2.0 * aj * sigma_eps) - g * jac * sigma_eps) / b;
        }
    }
    let (grads, _) = policy.backward(&cache, upstream.view())?;
    Ok(PolicyLoss { loss, grads, log_probs })
}

/// `−mean(log α · (log π + H̄))` and its derivative in `log α`.
pub fn temperature_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64) -> (f64, f64) {
    let m = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len() as f64;
    (-log_alpha * m, -m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLosses {
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
    pub temperature: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    state_dim: usize,
    action_dim: usize,
    target_entropy: f64,
    policy: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_alpha: f64,
    policy_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    rng: ChaCha8Rng,
}

/// JSON parameter dump. Optimizer moments are not saved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacCheckpoint {
    pub config_fingerprint: String,
    pub config: SacConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
}

impl SacAgent {
    pub fn new(state_dim: usize, action_dim: usize, config: SacConfig) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Config("state and action dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend(&config.hidden);
            v.push(output);
            v
        };
        let mut policy = Mlp::new(&sizes(state_dim, 2 * action_dim), &mut rng);
        policy.scale_output_layer(0.1);
        let q1 = Mlp::new(&sizes(state_dim + action_dim, 1), &mut rng);
        let q2 = Mlp::new(&sizes(state_dim + action_dim, 1), &mut rng);
        Ok(Self::assemble(
            config.clone(),
            state_dim,
            action_dim,
            policy,
            q1.clone(),
            q2.clone(),
            q1,
            q2,
            config.initial_temperature.ln(),
            rng,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: SacConfig,
        state_dim: usize,
        action_dim: usize,
        policy: Mlp,
        q1: Mlp,
        q2: Mlp,
        q1_target: Mlp,
        q2_target: Mlp,
        log_alpha: f64,
        rng: ChaCha8Rng,
    ) -> Self {
        let lr = config.lr;
        Self {
            target_entropy: config.target_entropy.unwrap_or(-(action_dim as f64)),
            policy_opt: Adam::new(policy.num_params(), lr),
            q1_opt: Adam::new(q1.num_params(), lr),
            q2_opt: Adam::new(q2.num_params(), lr),
            alpha_opt: Adam::new(1, lr),
            config,
            state_dim,
            action_dim,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha,
            rng,
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// Entropy temperature `α = exp(log α)`.
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Mlp {
        &mut self.policy
    }

    pub fn critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn target_critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1_target, &self.q2_target)
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn policy_head(&self, state: &[f64]) -> Result<PolicyHead> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("contiguous slice");
        Ok(split_head(&self.policy.forward(x)?, self.action_dim))
    }

    pub fn sample(&mut self, state: &[f64], deterministic: bool) -> Result<PolicySample> {
        let head = self.policy_head(state)?;
        let noise = if deterministic {
            Array2::zeros((1, self.action_dim))
        } else {
            Array2::from_shape_fn((1, self.action_dim), |_| StandardNormal.sample(&mut self.rng))
        };
        let (u, a, logp) = squash(&head, noise.view());
        Ok(PolicySample {
            action: a.into_raw_vec_and_offset().0,
            pre_squash: u.into_raw_vec_and_offset().0,
            log_prob: logp[0],
        })
    }

    /// Action in `[−1, 1]^d` and its log-probability. The deterministic
    /// action is `tanh(mean)`.
    pub fn sample_action(&mut self, state: &[f64], deterministic: bool) -> Result<(Vec<f64>, f64)> {
        let s = self.sample(state, deterministic)?;
        Ok((s.action, s.log_prob))
    }

    fn noise(&mut self, rows: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, self.action_dim), |_| StandardNormal.sample(&mut self.rng))
    }

    /// One gradient step on both critics, the policy and the temperature,
    /// then a polyak update of the target critics.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateLosses> {
        if batch.is_empty() {
            return Err(Error::Contract("update needs at least one transition".into()));
        }
        let alpha = self.alpha();
        let noise_next = self.noise(batch.len());
        let targets = critic_targets(
            &self.policy,
            &self.q1_target,
            &self.q2_target,
            alpha,
            self.config.gamma,
            batch,
            noise_next.view(),
        )?;
        let (l1, g1) = critic_loss(&self.q1, batch.states.view(), batch.actions.view(), &targets)?;
        let (l2, g2) = critic_loss(&self.q2, batch.states.view(), batch.actions.view(), &targets)?;
        check_finite("q1", l1, &g1)?;
        check_finite("q2", l2, &g2)?;
        self.q1_opt.step_mlp(&mut self.q1, &g1);
        self.q2_opt.step_mlp(&mut self.q2, &g2);

        let noise = self.noise(batch.len());
        let pl = policy_loss(&self.policy, &self.q1, &self.q2, alpha, batch.states.view(), noise.view())?;
        check_finite("policy", pl.loss, &pl.grads)?;
        self.policy_opt.step_mlp(&mut self.policy, &pl.grads);

        let (tl, tg) = temperature_loss(self.log_alpha, &pl.log_probs, self.target_entropy);
        if !(tl.is_finite() && tg.is_finite()) {
            return Err(Error::Divergence(format!(
                "temperature loss became {tl} (log_alpha {}); try a smaller learning rate",
                self.log_alpha
            )));
        }
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[tg]);
        self.log_alpha = la[0];

        self.q1_target.polyak_from(&self.q1, self.config.tau);
        self.q2_target.polyak_from(&self.q2, self.config.tau);
        Ok(UpdateLosses {
            q1: l1,
            q2: l2,
            policy: pl.loss,
            temperature: tl,
            alpha: self.alpha(),
        })
    }

    pub fn checkpoint(&self) -> SacCheckpoint {
        SacCheckpoint {
            config_fingerprint: self.config.fingerprint(),
            config: self.config.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            policy: self.policy.clone(),
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            q1_target: self.q1_target.clone(),
            q2_target: self.q2_target.clone(),
            log_alpha: self.log_alpha,
        }
    }

    pub fn from_checkpoint(ck: SacCheckpoint) -> Result<Self> {
        let actual = ck.config.fingerprint();
        if actual != ck.config_fingerprint {
            return Err(Error::Fingerprint {
                expected: ck.config_fingerprint,
                actual,
            });
        }
        let policy_shape = (ck.policy.input_dim(), ck.policy.output_dim());
        if policy_shape != (ck.state_dim, 2 * ck.action_dim) {
            return Err(Error::Shape {
                expected: 2 * ck.action_dim,
                actual: ck.policy.output_dim(),
            });
        }
        let rng = ChaCha8Rng::seed_from_u64(ck.config.seed);
        Ok(Self::assemble(
            ck.config,
            ck.state_dim,
            ck.action_dim,
            ck.policy,
            ck.q1,
            ck.q2,
            ck.q1_target,
            ck.q2_target,
            ck.log_alpha,
            rng,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(&self.checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_slice(&text)?)
    }
}

fn check_finite(what: &str, loss: f64, grads: &MlpGrads) -> Result<()> {
    if loss.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "{what} loss became {loss} (gradients finite: {}); try a smaller learning rate or reward scale",
            grads.is_finite()
        )))
    }
}
