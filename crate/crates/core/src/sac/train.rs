use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ReplayBuffer, SacAgent};
use crate::error::{Error, Result};
use crate::rl_env::{AgentAction, EpisodeResult, RecourseEnv};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// An episodic environment with continuous actions in `[−1, 1]^d`.
pub trait Environment {
    /// What gets remembered about an episode's final state.
    type Summary: Clone;

    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
    fn summary(&self) -> Self::Summary;
    /// Whether `candidate` should replace `incumbent` as the best result.
    fn prefer(candidate: &Self::Summary, incumbent: &Self::Summary) -> bool;
}

impl Environment for RecourseEnv {
    type Summary = EpisodeResult;

    fn state_dim(&self) -> usize {
        self.state_len()
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        Ok(RecourseEnv::reset(self).deltas)
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if action.len() != 2 {
            return Err(Error::Shape {
                expected: 2,
                actual: action.len(),
            });
        }
        let out = RecourseEnv::step(self, AgentAction {
            a1: action[0],
            a2: action[1],
        })?;
        Ok(Transition {
            next_state: out.state,
            reward: out.reward,
            terminated: out.terminated,
            truncated: out.truncated,
        })
    }

    fn summary(&self) -> EpisodeResult {
        self.episode_result()
    }

    fn prefer(candidate: &EpisodeResult, incumbent: &EpisodeResult) -> bool {
        candidate.is_better_than(incumbent)
    }
}

/// Point on a line: `s ← s + 0.1·a`, reward `−|s − 0.5|`, fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLineEnv {
    pub horizon: usize,
    state: f64,
    steps: usize,
}

impl ToyLineEnv {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            state: 0.0,
            steps: 0,
        }
    }

    pub fn position(&self) -> f64 {
        self.state
    }
}

impl Default for ToyLineEnv {
    fn default() -> Self {
        Self::new(20)
    }
}

impl Environment for ToyLineEnv {
    type Summary = f64;

    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.state = 0.0;
        self.steps = 0;
        Ok(vec![self.state])
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let a = action.first().copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        self.state += 0.1 * a;
        self.steps += 1;
        Ok(Transition {
            next_state: vec![self.state],
            reward: -(self.state - 0.5).abs(),
            terminated: false,
            truncated: self.steps >= self.horizon,
        })
    }

    fn summary(&self) -> f64 {
        self.state
    }

    fn prefer(candidate: &f64, incumbent: &f64) -> bool {
        (candidate - 0.5).abs() < (incumbent - 0.5).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Environment steps taken when the episode ended.
    pub step: usize,
    /// Mean per-step reward over the episode.
    pub episode_reward_mean: f64,
    /// Temperature at the end of the episode.
    pub entropy_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.episode_reward_mean).collect()
    }

    /// Mean episode reward over the last `frac` of episodes minus the
    /// mean over the first `frac`.
    pub fn improvement(&self, frac: f64) -> f64 {
        let n = self.rows.len();
        let k = ((n as f64 * frac).round() as usize).clamp(1, n.max(1));
        if n == 0 {
            return 0.0;
        }
        let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.episode_reward_mean).sum::<f64>() / rows.len() as f64;
        mean(&self.rows[n - k..]) - mean(&self.rows[..k])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io("trace", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<S> {
    pub trace: TrainingTrace,
    pub best: Option<S>,
    pub total_steps: usize,
    pub replay_len: usize,
}

/// Runs `config.episodes` training episodes followed by
/// `config.eval_episodes` deterministic rollouts. The first
/// `warmup_steps` actions are uniform in `[−1, 1]`.
pub fn train<E: Environment>(agent: &mut SacAgent, env: &mut E) -> Result<TrainingOutcome<E::Summary>> {
    if env.state_dim() != agent.state_dim() || env.action_dim() != agent.action_dim() {
        return Err(Error::Shape {
            expected: agent.state_dim(),
            actual: env.state_dim(),
        });
    }
    let cfg = agent.config().clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, env.state_dim(), env.action_dim());
    let mut trace = TrainingTrace::default();
    let mut best: Option<E::Summary> = None;
    let consider = |s: E::Summary, best: &mut Option<E::Summary>| {
        if best.as_ref().is_none_or(|b| E::prefer(&s, b)) {
            *best = Some(s);
        }
    };
    let mut global = 0usize;

    for episode in 0..cfg.episodes {
        let mut state = env.reset()?;
        let (mut total, mut len) = (0.0, 0usize);
        loop {
            let action: Vec<f64> = if global < cfg.warmup_steps {
                let rng = agent.rng();
                (0..env.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
            } else {
                agent.sample_action(&state, false)?.0
            };
            let t = env.step(&action)?;
            buffer.push(&state, &action, t.reward, &t.next_state, t.terminated)?;
            global += 1;
            total += t.reward;
            len += 1;
            if global >= cfg.warmup_steps {
                let size = cfg.batch_size.min(buffer.len());
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer.sample(size, agent.rng())?;
                    agent.update(&batch).map_err(|e| match e {
                        Error::Divergence(m) => Error::Divergence(format!("episode {episode}, step {global}: {m}")),
                        other => other,
                    })?;
                }
            }
            state = t.next_state;
            if t.terminated || t.truncated {
                break;
            }
        }
        trace.rows.push(TraceRow {
            step: global,
            episode_reward_mean: total / len as f64,
            entropy_coefficient: agent.alpha(),
        });
        log::debug!("episode {episode}: mean reward {:.4}, alpha {:.4}", total / len as f64, agent.alpha());
        consider(env.summary(), &mut best);
    }

    for _ in 0..cfg.eval_episodes {
        let mut state = env.reset()?;
        loop {
            let (action, _) = agent.sample_action(&state, true)?;
            let t = env.step(&action)?;
            state = t.next_state;
            if t.terminated || t.truncated {
                break;
            }
        }
        consider(env.summary(), &mut best);
    }

    Ok(TrainingOutcome {
        trace,
        best,
        total_steps: global,
        replay_len: buffer.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::SacConfig;

    fn toy_config(seed: u64) -> SacConfig {
        SacConfig {
            episodes: 60,
            warmup_steps: 200,
            batch_size: 64,
            lr: 3e-3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn warmup_fills_buffer_exactly() {
        let cfg = SacConfig {
            episodes: 5,
            warmup_steps: 100,
            eval_episodes: 0,
            ..toy_config(1)
        };
        let mut agent = SacAgent::new(1, 1, cfg).unwrap();
        let out = train(&mut agent, &mut ToyLineEnv::default()).unwrap();
        assert_eq!(out.total_steps, 100);
        assert_eq!(out.replay_len, 100);
        assert_eq!(out.trace.len(), 5);
        // the first update follows the final warmup step
        assert!(out.trace.rows[..4].iter().all(|r| r.entropy_coefficient == 1.0));
        assert!(out.trace.rows[4].entropy_coefficient != 1.0);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let run = || {
            let cfg = SacConfig {
                episodes: 15,
                ..toy_config(4)
            };
            let mut agent = SacAgent::new(1, 1, cfg).unwrap();
            let out = train(&mut agent, &mut ToyLineEnv::default()).unwrap();
            let mut buf = Vec::new();
            out.trace.write_csv(&mut buf).unwrap();
            (buf, agent.checkpoint())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn toy_reward_improves() {
        let mut agent = SacAgent::new(1, 1, toy_config(0)).unwrap();
        let out = train(&mut agent, &mut ToyLineEnv::default()).unwrap();
        assert!(out.trace.improvement(0.1) > 0.0, "{:?}", out.trace.rewards());
        assert!(out.best.is_some());
    }

    #[test]
    fn trace_csv_roundtrip() {
        let t = TrainingTrace {
            rows: vec![
                TraceRow {
                    step: 20,
                    episode_reward_mean: -0.5,
                    entropy_coefficient: 1.0,
                },
                TraceRow {
                    step: 40,
                    episode_reward_mean: -0.25,
                    entropy_coefficient: 0.9,
                },
            ],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,episode_reward_mean,entropy_coefficient\n"));
        assert_eq!(TrainingTrace::read_csv(buf.as_slice()).unwrap(), t);
        assert!((t.improvement(0.5) - 0.25).abs() < 1e-12);
    }
}
