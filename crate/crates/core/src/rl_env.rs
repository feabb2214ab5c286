//! The recourse MDP.
//!
//! The state is the flattened `n × l` delta matrix of the candidate action
//! set. Each agent action picks one (slot, feature) cell and increments its
//! delta. Rewards are the absolute scenario reward of the resulting state.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{ActionOutcome, FairnessSnapshot, SnapshotParams, SuccessMode};
use crate::model::Classifier;
use crate::recourse::{Action, ActionSet};
use crate::tabular::{FeatureSchema, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    IndividualEe,
    GroupEe,
    GroupEcr,
    #[serde(alias = "hybrid-ee-ecr")]
    Hybrid,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::IndividualEe,
        Scenario::GroupEe,
        Scenario::GroupEcr,
        Scenario::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::IndividualEe => "individual-ee",
            Scenario::GroupEe => "group-ee",
            Scenario::GroupEcr => "group-ecr",
            Scenario::Hybrid => "hybrid",
        }
    }

    /// Group-EE measures success with the best single shared action.
    pub fn success_mode(self) -> SuccessMode {
        match self {
            Scenario::GroupEe => SuccessMode::Macro,
            _ => SuccessMode::Micro,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual-ee" => Ok(Scenario::IndividualEe),
            "group-ee" => Ok(Scenario::GroupEe),
            "group-ecr" => Ok(Scenario::GroupEcr),
            "hybrid" | "hybrid-ee-ecr" => Ok(Scenario::Hybrid),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Weights of the equal-effectiveness reward:
/// `ASR·C₀ + Act·C₁ − PD·C₂ − Sim·C₃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EeCoefficients {
    pub asr: f64,
    pub act: f64,
    pub pd: f64,
    pub sim: f64,
}

impl Default for EeCoefficients {
    fn default() -> Self {
        Self {
            asr: 1.0,
            act: 1.0,
            pd: 1.0,
            sim: 1.0,
        }
    }
}

impl EeCoefficients {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            asr: self.asr * k,
            act: self.act * k,
            pd: self.pd * k,
            sim: self.sim * k,
        }
    }
}

/// Whether active actions are rewarded or penalized in the ECR reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActSign {
    #[default]
    Reward,
    Penalty,
}

/// Weights of the equal-choice reward:
/// `A₀·C₀ + A₁·C₁ − AD·C₂ ± Act·C₃ − Sim·C₄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcrCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub ad: f64,
    pub act: f64,
    pub sim: f64,
    pub act_sign: ActSign,
}

impl Default for EcrCoefficients {
    fn default() -> Self {
        Self {
            a0: 1.0,
            a1: 1.0,
            ad: 1.0,
            act: 1.0,
            sim: 1.0,
            act_sign: ActSign::Reward,
        }
    }
}

impl EcrCoefficients {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            a0: self.a0 * k,
            a1: self.a1 * k,
            ad: self.ad * k,
            act: self.act * k,
            sim: self.sim * k,
            act_sign: self.act_sign,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Targets {
    pub success_rate: f64,
    pub pd: f64,
    pub min_actions_per_group: usize,
    pub ad: usize,
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            success_rate: 0.85,
            pd: 0.10,
            min_actions_per_group: 1,
            ad: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub max_actions: usize,
    pub ee: EeCoefficients,
    pub ecr: EcrCoefficients,
    /// Coverage an action needs over the population to count as active.
    pub alpha: f64,
    /// Coverage an action needs within a group to count for that group.
    pub phi: f64,
    pub targets: Targets,
    pub max_steps: usize,
    /// Per-group coverage the best shared action must reach in Group-EE.
    pub group_ee_threshold: f64,
    /// Multiplier applied to the agent's delta increment.
    pub delta_scale: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::Hybrid,
            max_actions: 5,
            ee: EeCoefficients::default(),
            ecr: EcrCoefficients::default(),
            alpha: 0.1,
            phi: 0.6,
            targets: Targets::default(),
            max_steps: 100,
            group_ee_threshold: 0.75,
            delta_scale: 1.0,
        }
    }
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let ee = [self.ee.asr, self.ee.act, self.ee.pd, self.ee.sim];
        let ecr = [self.ecr.a0, self.ecr.a1, self.ecr.ad, self.ecr.act, self.ecr.sim];
        if ee.iter().chain(&ecr).any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("reward coefficients must be finite and non-negative".into());
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("phi", self.phi),
            ("targets.success_rate", self.targets.success_rate),
            ("targets.pd", self.targets.pd),
            ("group_ee_threshold", self.group_ee_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if self.max_actions == 0 {
            return bad("max_actions must be at least 1".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        if !(self.delta_scale > 0.0 && self.delta_scale.is_finite()) {
            return bad("delta_scale must be positive".into());
        }
        Ok(())
    }

    pub fn snapshot_params(&self) -> SnapshotParams {
        SnapshotParams {
            alpha: self.alpha,
            phi: self.phi,
            mode: self.scenario.success_mode(),
        }
    }
}

/// Reward inputs. Counts are divided by `n` so coefficients stay
/// comparable across action-set sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub asr: f64,
    pub pd: f64,
    pub sim: f64,
    pub act: f64,
    pub a0: f64,
    pub a1: f64,
    pub ad: f64,
}

impl RewardTerms {
    pub fn from_snapshot(s: &FairnessSnapshot, n: usize) -> Self {
        let n = n as f64;
        Self {
            asr: s.asr,
            pd: s.pd,
            sim: s.mean_gower,
            act: s.active_count as f64 / n,
            a0: s.a0_count as f64 / n,
            a1: s.a1_count as f64 / n,
            ad: s.ad as f64 / n,
        }
    }
}

pub fn reward_ee(t: &RewardTerms, c: &EeCoefficients) -> f64 {
    t.asr * c.asr + t.act * c.act - t.pd * c.pd - t.sim * c.sim
}

pub fn reward_ecr(t: &RewardTerms, c: &EcrCoefficients) -> f64 {
    let act = match c.act_sign {
        ActSign::Reward => t.act * c.act,
        ActSign::Penalty => -t.act * c.act,
    };
    t.a0 * c.a0 + t.a1 * c.a1 - t.ad * c.ad + act - t.sim * c.sim
}

pub fn reward_hybrid(t: &RewardTerms, ee: &EeCoefficients, ecr: &EcrCoefficients) -> f64 {
    reward_ee(t, ee) + reward_ecr(t, ecr)
}

/// Scenario reward of a snapshot.
pub fn reward(spec: &ScenarioSpec, s: &FairnessSnapshot) -> f64 {
    let t = RewardTerms::from_snapshot(s, spec.max_actions);
    match spec.scenario {
        Scenario::IndividualEe | Scenario::GroupEe => reward_ee(&t, &spec.ee),
        Scenario::GroupEcr => reward_ecr(&t, &spec.ecr),
        Scenario::Hybrid => reward_hybrid(&t, &spec.ee, &spec.ecr),
    }
}

/// Success and disparity targets for the EE scenarios.
pub fn ee_satisfied(s: &FairnessSnapshot, spec: &ScenarioSpec) -> bool {
    let within_pd = s.pd <= spec.targets.pd;
    match spec.scenario {
        Scenario::GroupEe => within_pd && s.sr0 >= spec.group_ee_threshold && s.sr1 >= spec.group_ee_threshold,
        _ => within_pd && s.asr >= spec.targets.success_rate,
    }
}

pub fn ecr_satisfied(s: &FairnessSnapshot, spec: &ScenarioSpec) -> bool {
    let min = spec.targets.min_actions_per_group;
    s.a0_count >= min && s.a1_count >= min && s.ad <= spec.targets.ad
}

/// Episode-stopping condition for the configured scenario.
pub fn stopping(s: &FairnessSnapshot, spec: &ScenarioSpec) -> bool {
    match spec.scenario {
        Scenario::IndividualEe | Scenario::GroupEe => ee_satisfied(s, spec),
        Scenario::GroupEcr => ecr_satisfied(s, spec),
        Scenario::Hybrid => ee_satisfied(s, spec) && ecr_satisfied(s, spec),
    }
}

/// Continuous two-component agent action: `a1` selects the state cell,
/// `a2` is the delta increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub a1: f64,
    pub a2: f64,
}

impl AgentAction {
    /// `floor((a1 + 1)/2 · N)`, clamped into `[0, N)`.
    pub fn cell(&self, state_len: usize) -> usize {
        let a1 = if self.a1.is_nan() { 0.0 } else { self.a1 };
        let raw = ((a1 + 1.0) / 2.0 * state_len as f64).floor();
        (raw.max(0.0) as usize).min(state_len - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Row-major `n × l` deltas.
    pub deltas: Vec<f64>,
    pub step_count: usize,
    pub snapshot: FairnessSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Stopping criteria met.
    pub terminated: bool,
    /// Step budget exhausted.
    pub truncated: bool,
    pub info: FairnessSnapshot,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// One line of the JSON-lines trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub asr: f64,
    pub pd: f64,
    pub a0: usize,
    pub a1: usize,
    pub ad: usize,
    pub act: usize,
    pub sim: f64,
}

pub fn write_trajectory<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("trajectory", e))?;
    }
    Ok(())
}

/// Summary of an episode's final state, used to pick the emitted action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub actions: ActionSet,
    pub snapshot: FairnessSnapshot,
    pub satisfied: bool,
}

impl EpisodeResult {
    /// Satisfied beats unsatisfied, then higher ASR, then lower Gower cost.
    pub fn is_better_than(&self, other: &EpisodeResult) -> bool {
        if self.satisfied != other.satisfied {
            return self.satisfied;
        }
        if self.snapshot.asr != other.snapshot.asr {
            return self.snapshot.asr > other.snapshot.asr;
        }
        self.snapshot.mean_gower < other.snapshot.mean_gower
    }
}

/// Recourse environment bound to one affected population.
pub struct RecourseEnv {
    schema: FeatureSchema,
    classifier: Arc<dyn Classifier>,
    group0: Vec<Instance>,
    group1: Vec<Instance>,
    spec: ScenarioSpec,
    deltas: Vec<f64>,
    step_count: usize,
    done: bool,
    outcomes0: Vec<ActionOutcome>,
    outcomes1: Vec<ActionOutcome>,
    snapshot: FairnessSnapshot,
    episode: usize,
    trajectory: Vec<TrajectoryRecord>,
    record_trajectory: bool,
}

impl RecourseEnv {
    pub fn new(
        schema: FeatureSchema,
        classifier: Arc<dyn Classifier>,
        group0: Vec<Instance>,
        group1: Vec<Instance>,
        spec: ScenarioSpec,
    ) -> Result<Self> {
        spec.validate()?;
        if group0.is_empty() {
            return Err(Error::EmptyGroup("G0".into()));
        }
        if group1.is_empty() {
            return Err(Error::EmptyGroup("G1".into()));
        }
        for x in group0.iter().chain(&group1) {
            if x.len() != schema.dim() {
                return Err(Error::Shape {
                    expected: schema.dim(),
                    actual: x.len(),
                });
            }
        }
        let l = schema.actionable_indices().len();
        let zero = Action::zeros(l);
        let o0 = ActionOutcome::evaluate(&schema, classifier.as_ref(), &zero, &group0);
        let o1 = ActionOutcome::evaluate(&schema, classifier.as_ref(), &zero, &group1);
        let n = spec.max_actions;
        let outcomes0 = vec![o0; n];
        let outcomes1 = vec![o1; n];
        let actions = ActionSet::new(vec![zero; n]);
        let snapshot = FairnessSnapshot::from_outcomes(&actions, &outcomes0, &outcomes1, &spec.snapshot_params());
        Ok(Self {
            deltas: vec![0.0; n * l],
            schema,
            classifier,
            group0,
            group1,
            spec,
            step_count: 0,
            done: false,
            outcomes0,
            outcomes1,
            snapshot,
            episode: 0,
            trajectory: Vec::new(),
            record_trajectory: true,
        })
    }

    pub fn with_trajectory_recording(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn classifier(&self) -> &Arc<dyn Classifier> {
        &self.classifier
    }

    pub fn groups(&self) -> (&[Instance], &[Instance]) {
        (&self.group0, &self.group1)
    }

    /// Number of actionable features `l`.
    pub fn action_width(&self) -> usize {
        self.schema.actionable_indices().len()
    }

    /// `N = n × l`
    pub fn state_len(&self) -> usize {
        self.deltas.len()
    }

    pub fn state(&self) -> EnvState {
        EnvState {
            deltas: self.deltas.clone(),
            step_count: self.step_count,
            snapshot: self.snapshot.clone(),
        }
    }

    pub fn state_vector(&self) -> &[f64] {
        &self.deltas
    }

    pub fn snapshot(&self) -> &FairnessSnapshot {
        &self.snapshot
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn action_set(&self) -> ActionSet {
        ActionSet::from_flat(&self.deltas, self.spec.max_actions, self.action_width()).expect("state length is n × l")
    }

    pub fn current_reward(&self) -> f64 {
        reward(&self.spec, &self.snapshot)
    }

    pub fn trajectory(&self) -> &[TrajectoryRecord] {
        &self.trajectory
    }

    pub fn take_trajectory(&mut self) -> Vec<TrajectoryRecord> {
        std::mem::take(&mut self.trajectory)
    }

    pub fn reset(&mut self) -> EnvState {
        if self.step_count > 0 || self.done {
            self.episode += 1;
        }
        let l = self.action_width();
        let zero = Action::zeros(l);
        let o0 = ActionOutcome::evaluate(&self.schema, self.classifier.as_ref(), &zero, &self.group0);
        let o1 = ActionOutcome::evaluate(&self.schema, self.classifier.as_ref(), &zero, &self.group1);
        self.outcomes0 = vec![o0; self.spec.max_actions];
        self.outcomes1 = vec![o1; self.spec.max_actions];
        self.deltas.iter_mut().for_each(|d| *d = 0.0);
        self.step_count = 0;
        self.done = false;
        self.refresh_snapshot();
        self.state()
    }

    fn refresh_snapshot(&mut self) {
        let actions = self.action_set();
        self.snapshot =
            FairnessSnapshot::from_outcomes(&actions, &self.outcomes0, &self.outcomes1, &self.spec.snapshot_params());
    }

    pub fn step(&mut self, action: AgentAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode; call reset first".into()));
        }
        let l = self.action_width();
        let cell = action.cell(self.state_len());
        let slot = cell / l;
        let increment = if action.a2.is_nan() { 0.0 } else { action.a2.clamp(-1.0, 1.0) };
        let old = self.deltas[cell];
        self.deltas[cell] = (old + increment * self.spec.delta_scale).clamp(-1.0, 1.0);
        if self.deltas[cell] != old {
            let a = Action::new(self.deltas[slot * l..(slot + 1) * l].to_vec());
            let h = self.classifier.as_ref();
            self.outcomes0[slot] = ActionOutcome::evaluate(&self.schema, h, &a, &self.group0);
            self.outcomes1[slot] = ActionOutcome::evaluate(&self.schema, h, &a, &self.group1);
            self.refresh_snapshot();
        }
        self.step_count += 1;
        let r = self.current_reward();
        let terminated = stopping(&self.snapshot, &self.spec);
        let truncated = !terminated && self.step_count >= self.spec.max_steps;
        self.done = terminated || truncated;
        if self.record_trajectory {
            let s = &self.snapshot;
            self.trajectory.push(TrajectoryRecord {
                episode: self.episode,
                step: self.step_count,
                reward: r,
                asr: s.asr,
                pd: s.pd,
                a0: s.a0_count,
                a1: s.a1_count,
                ad: s.ad,
                act: s.active_count,
                sim: s.mean_gower,
            });
        }
        Ok(StepOutcome {
            state: self.deltas.clone(),
            reward: r,
            terminated,
            truncated,
            info: self.snapshot.clone(),
        })
    }

    pub fn episode_result(&self) -> EpisodeResult {
        EpisodeResult {
            episode: self.episode,
            actions: self.action_set(),
            snapshot: self.snapshot.clone(),
            satisfied: stopping(&self.snapshot, &self.spec),
        }
    }
}
