//! Counterfactual fairness metrics over the two protected groups of an
//! affected population: action effectiveness, individual (micro) and group
//! (macro) effectiveness, equal-effectiveness gaps, equal choice of recourse
//! and the per-state snapshot that feeds the RL reward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::recourse::{apply_action, gower_unchecked, Action, ActionSet};
use crate::tabular::{FeatureSchema, Instance};

/// Populations at least this large are evaluated on the rayon pool.
pub(crate) const PARALLEL_MIN: usize = 512;

fn non_empty(group: &[Instance], name: &str) -> Result<()> {
    if group.is_empty() {
        Err(Error::EmptyGroup(name.to_string()))
    } else {
        Ok(())
    }
}

/// Per-individual outcome of one action: `h(a(x)) = 1` and the Gower cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub valid: Vec<bool>,
    pub gower: Vec<f64>,
}

impl ActionOutcome {
    pub fn evaluate(schema: &FeatureSchema, h: &dyn Classifier, action: &Action, group: &[Instance]) -> Self {
        let one = |x: &Instance| {
            let cf = apply_action(schema, x, action);
            (h.predict(&cf) == 1, gower_unchecked(schema, x, &cf))
        };
        let pairs: Vec<(bool, f64)> = if group.len() >= PARALLEL_MIN {
            group.par_iter().map(one).collect()
        } else {
            group.iter().map(one).collect()
        };
        let (valid, gower) = pairs.into_iter().unzip();
        Self { valid, gower }
    }

    pub fn successes(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn effectiveness(&self) -> f64 {
        self.successes() as f64 / self.valid.len() as f64
    }
}

/// `eff(a, G)`: share of `G` flipped to the favorable label by `a`.
pub fn effectiveness(a: &Action, group: &[Instance], h: &dyn Classifier, schema: &FeatureSchema) -> Result<f64> {
    non_empty(group, "G")?;
    Ok(ActionOutcome::evaluate(schema, h, a, group).effectiveness())
}

fn outcomes(set: &ActionSet, group: &[Instance], h: &dyn Classifier, schema: &FeatureSchema) -> Vec<ActionOutcome> {
    set.iter().map(|a| ActionOutcome::evaluate(schema, h, a, group)).collect()
}

fn micro_of(outs: &[ActionOutcome], size: usize) -> f64 {
    let covered = (0..size).filter(|&i| outs.iter().any(|o| o.valid[i])).count();
    covered as f64 / size as f64
}

fn macro_of(outs: &[ActionOutcome]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, o) in outs.iter().enumerate() {
        let e = o.effectiveness();
        if e > best.0 {
            best = (e, i);
        }
    }
    if outs.is_empty() {
        (0.0, 0)
    } else {
        best
    }
}

/// `aeff_μ(A, G)`: share of `G` for whom some action in `A` gives recourse.
pub fn micro_effectiveness(set: &ActionSet, group: &[Instance], h: &dyn Classifier, schema: &FeatureSchema) -> Result<f64> {
    non_empty(group, "G")?;
    Ok(micro_of(&outcomes(set, group, h, schema), group.len()))
}

/// `aeff_M(A, G)`: best single-action effectiveness and its index
/// (lowest index on ties).
pub fn macro_effectiveness(
    set: &ActionSet,
    group: &[Instance],
    h: &dyn Classifier,
    schema: &FeatureSchema,
) -> Result<(f64, usize)> {
    non_empty(group, "G")?;
    if set.is_empty() {
        return Err(Error::Contract("macro effectiveness of an empty action set".into()));
    }
    Ok(macro_of(&outcomes(set, group, h, schema)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeGaps {
    pub micro_gap: f64,
    pub macro_gap: f64,
}

impl EeGaps {
    /// `(micro satisfied, macro satisfied)` at tolerance `eps`.
    pub fn satisfied(&self, eps: f64) -> (bool, bool) {
        (self.micro_gap <= eps, self.macro_gap <= eps)
    }
}

/// Equal-effectiveness gaps between the two groups.
pub fn ee_gaps(
    set: &ActionSet,
    g0: &[Instance],
    g1: &[Instance],
    h: &dyn Classifier,
    schema: &FeatureSchema,
) -> Result<EeGaps> {
    non_empty(g0, "G0")?;
    non_empty(g1, "G1")?;
    let o0 = outcomes(set, g0, h, schema);
    let o1 = outcomes(set, g1, h, schema);
    Ok(EeGaps {
        micro_gap: (micro_of(&o0, g0.len()) - micro_of(&o1, g1.len())).abs(),
        macro_gap: (macro_of(&o0).0 - macro_of(&o1).0).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub a0: usize,
    pub a1: usize,
    pub ad: usize,
}

impl ActionCounts {
    pub fn new(a0: usize, a1: usize) -> Self {
        Self {
            a0,
            a1,
            ad: a0.abs_diff(a1),
        }
    }

    /// Equal choice of recourse with at least `min_actions` per group.
    pub fn ecr_satisfied(&self, min_actions: usize) -> bool {
        self.ad == 0 && self.a0 >= min_actions && self.a1 >= min_actions
    }
}

/// Number of actions reaching coverage `φ` in each group.
pub fn effective_action_counts(
    set: &ActionSet,
    g0: &[Instance],
    g1: &[Instance],
    h: &dyn Classifier,
    schema: &FeatureSchema,
    phi: f64,
) -> Result<ActionCounts> {
    non_empty(g0, "G0")?;
    non_empty(g1, "G1")?;
    check_threshold("phi", phi)?;
    let count = |g: &[Instance]| {
        outcomes(set, g, h, schema)
            .iter()
            .filter(|o| o.effectiveness() >= phi)
            .count()
    };
    Ok(ActionCounts::new(count(g0), count(g1)))
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
    }
}

/// Non-zero actions whose effectiveness over `all` reaches `alpha`.
pub fn active_actions(set: &ActionSet, all: &[Instance], h: &dyn Classifier, schema: &FeatureSchema, alpha: f64) -> usize {
    if all.is_empty() {
        return 0;
    }
    set.iter()
        .filter(|a| !a.is_zero())
        .filter(|a| ActionOutcome::evaluate(schema, h, a, all).effectiveness() >= alpha)
        .count()
}

/// How a group's success rate is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SuccessMode {
    /// Any action in the set gives recourse.
    #[default]
    Micro,
    /// The single best shared action gives recourse.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotParams {
    pub alpha: f64,
    pub phi: f64,
    pub mode: SuccessMode,
}

impl Default for SnapshotParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            phi: 0.6,
            mode: SuccessMode::Micro,
        }
    }
}

/// All fairness quantities of one action set on one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSnapshot {
    pub sr0: f64,
    pub sr1: f64,
    pub asr: f64,
    pub pd: f64,
    pub micro_eff0: f64,
    pub micro_eff1: f64,
    pub macro_eff0: f64,
    pub macro_eff1: f64,
    pub active_count: usize,
    pub a0_count: usize,
    pub a1_count: usize,
    pub ad: usize,
    /// Mean Gower cost of each recoursed individual's cheapest valid action.
    pub mean_gower: f64,
    /// `(eff(a, G₀), eff(a, G₁))` per action.
    pub action_effectiveness: Vec<(f64, f64)>,
}

impl FairnessSnapshot {
    /// Assembles a snapshot from per-action outcomes on each group.
    pub fn from_outcomes(actions: &ActionSet, o0: &[ActionOutcome], o1: &[ActionOutcome], params: &SnapshotParams) -> Self {
        let n0 = o0.first().map_or(0, |o| o.valid.len());
        let n1 = o1.first().map_or(0, |o| o.valid.len());
        let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };

        let micro = |outs: &[ActionOutcome], n: usize| if n == 0 { 0.0 } else { micro_of(outs, n) };
        let micro_eff0 = micro(o0, n0);
        let micro_eff1 = micro(o1, n1);
        let macro_eff0 = if n0 == 0 { 0.0 } else { macro_of(o0).0 };
        let macro_eff1 = if n1 == 0 { 0.0 } else { macro_of(o1).0 };
        let (sr0, sr1) = match params.mode {
            SuccessMode::Micro => (micro_eff0, micro_eff1),
            SuccessMode::Macro => (macro_eff0, macro_eff1),
        };

        let action_effectiveness: Vec<(f64, f64)> = o0
            .iter()
            .zip(o1)
            .map(|(a, b)| (rate(a.successes(), n0), rate(b.successes(), n1)))
            .collect();
        let a0_count = action_effectiveness.iter().filter(|e| n0 > 0 && e.0 >= params.phi).count();
        let a1_count = action_effectiveness.iter().filter(|e| n1 > 0 && e.1 >= params.phi).count();
        let active_count = actions
            .iter()
            .zip(o0.iter().zip(o1))
            .filter(|(a, (x, y))| !a.is_zero() && rate(x.successes() + y.successes(), n0 + n1) >= params.alpha)
            .count();

        let mut cost = 0.0;
        let mut recoursed = 0usize;
        for (outs, n) in [(o0, n0), (o1, n1)] {
            for i in 0..n {
                let best = outs
                    .iter()
                    .filter(|o| o.valid[i])
                    .map(|o| o.gower[i])
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    cost += best;
                    recoursed += 1;
                }
            }
        }
        let mean_gower = if recoursed == 0 { 0.0 } else { cost / recoursed as f64 };

        Self {
            sr0,
            sr1,
            asr: (sr0 + sr1) / 2.0,
            pd: (sr0 - sr1).abs(),
            micro_eff0,
            micro_eff1,
            macro_eff0,
            macro_eff1,
            active_count,
            a0_count,
            a1_count,
            ad: a0_count.abs_diff(a1_count),
            mean_gower,
            action_effectiveness,
        }
    }

    pub fn counts(&self) -> ActionCounts {
        ActionCounts::new(self.a0_count, self.a1_count)
    }
}

/// Computes the snapshot from scratch.
pub fn snapshot(
    set: &ActionSet,
    g0: &[Instance],
    g1: &[Instance],
    h: &dyn Classifier,
    schema: &FeatureSchema,
    params: &SnapshotParams,
) -> Result<FairnessSnapshot> {
    non_empty(g0, "G0")?;
    non_empty(g1, "G1")?;
    check_threshold("alpha", params.alpha)?;
    check_threshold("phi", params.phi)?;
    let o0 = outcomes(set, g0, h, schema);
    let o1 = outcomes(set, g1, h, schema);
    Ok(FairnessSnapshot::from_outcomes(set, &o0, &o1, params))
}
