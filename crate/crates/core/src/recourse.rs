//! Actions (shared counterfactual recipes), their application under range
//! bounds, Gower distance, per-individual best-CF selection and CF quality.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{plausibility, Autoencoder, Classifier};
use crate::tabular::{FeatureKind, FeatureSchema, Instance};

/// Normalized deltas below this magnitude are exactly zero.
pub const ZERO_DELTA: f64 = 1e-6;

/// Delta vector over the actionable features, in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    deltas: Vec<f64>,
}

impl Action {
    pub fn new(deltas: Vec<f64>) -> Self {
        Self { deltas }
    }

    pub fn zeros(len: usize) -> Self {
        Self { deltas: vec![0.0; len] }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Delta with sub-threshold noise flushed to zero.
    pub fn delta(&self, k: usize) -> f64 {
        let d = self.deltas[k];
        if d.abs() < ZERO_DELTA {
            0.0
        } else {
            d
        }
    }

    pub fn is_zero(&self) -> bool {
        (0..self.len()).all(|k| self.delta(k) == 0.0)
    }

    /// Raw-unit deltas keyed by feature name.
    pub fn raw_deltas(&self, schema: &FeatureSchema) -> BTreeMap<String, f64> {
        schema
            .actionable_indices()
            .iter()
            .enumerate()
            .map(|(k, &f)| (schema.feature(f).name.clone(), schema.delta_to_raw(f, self.delta(k))))
            .collect()
    }
}

/// An ordered set of `n` actions; flattening it row-major yields the RL state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions }
    }

    /// Rebuilds `n` actions of `l` deltas each from a flat state vector.
    pub fn from_flat(state: &[f64], n: usize, l: usize) -> Result<Self> {
        if state.len() != n * l {
            return Err(Error::Shape {
                expected: n * l,
                actual: state.len(),
            });
        }
        Ok(Self {
            actions: state.chunks(l.max(1)).take(n).map(|c| Action::new(c.to_vec())).collect(),
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.actions.iter().flat_map(|a| a.deltas.iter().copied()).collect()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.actions.iter()
    }
}

/// `x′ = a(x)` in normalized space. Continuous features are clipped into
/// `[0, 1]`; ordinal features are clipped, then rounded half away from zero
/// onto an integer level in raw units.
pub fn apply_action(schema: &FeatureSchema, x: &[f64], a: &Action) -> Instance {
    let mut out = x.to_vec();
    for (k, &f) in schema.actionable_indices().iter().enumerate() {
        let d = a.delta(k);
        if d == 0.0 {
            continue;
        }
        let v = (x[f] + d).clamp(0.0, 1.0);
        out[f] = match schema.feature(f).kind {
            FeatureKind::Ordinal => {
                let feat = schema.feature(f);
                let raw = (feat.min + v * feat.range()).round();
                let raw = raw.clamp(feat.min.ceil(), feat.max.floor());
                schema.normalize_value(f, raw)
            }
            _ => v,
        };
    }
    out
}

/// Gower distance between two normalized instances.
pub fn gower(schema: &FeatureSchema, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = schema.dim();
    for len in [x.len(), y.len()] {
        if len != d {
            return Err(Error::Shape {
                expected: d,
                actual: len,
            });
        }
    }
    Ok(gower_unchecked(schema, x, y))
}

/// Gower term of feature `j` for normalized values `a` and `b`.
pub fn feature_distance(schema: &FeatureSchema, j: usize, a: f64, b: f64) -> f64 {
    let f = schema.feature(j);
    if f.is_constant() {
        0.0
    } else if f.kind == FeatureKind::Nominal {
        (a != b) as u8 as f64
    } else {
        (a - b).abs()
    }
}

pub(crate) fn gower_unchecked(schema: &FeatureSchema, x: &[f64], y: &[f64]) -> f64 {
    let total: f64 = (0..schema.dim()).map(|j| feature_distance(schema, j, x[j], y[j])).sum();
    total / schema.dim() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCf {
    pub action: usize,
    pub cf: Instance,
    pub gower: f64,
}

/// Lowest-Gower valid action for `x`, ties to the lowest index.
pub fn select_best(schema: &FeatureSchema, x: &[f64], set: &ActionSet, h: &dyn Classifier) -> Option<BestCf> {
    let mut best: Option<BestCf> = None;
    for (i, a) in set.iter().enumerate() {
        let cf = apply_action(schema, x, a);
        if h.predict(&cf) != 1 {
            continue;
        }
        let g = gower_unchecked(schema, x, &cf);
        if best.as_ref().is_none_or(|b| g < b.gower) {
            best = Some(BestCf {
                action: i,
                cf,
                gower: g,
            });
        }
    }
    best
}

/// Aggregate counterfactual quality over `(x, x′)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfQuality {
    pub count: usize,
    pub validity: f64,
    pub plausibility: f64,
    pub similarity: f64,
    pub minimality: f64,
    pub actionability: bool,
}

/// Number of features whose raw value differs between `x` and `x′`.
pub fn changed_features(schema: &FeatureSchema, x: &[f64], cf: &[f64]) -> usize {
    (0..schema.dim())
        .filter(|&i| schema.denormalize_value(i, x[i]) != schema.denormalize_value(i, cf[i]))
        .count()
}

/// True when every changed feature is actionable.
pub fn is_actionable(schema: &FeatureSchema, x: &[f64], cf: &[f64]) -> bool {
    (0..schema.dim()).all(|i| schema.feature(i).actionable || x[i] == cf[i])
}

pub fn cf_quality(
    schema: &FeatureSchema,
    pairs: &[(Instance, Instance)],
    h: &dyn Classifier,
    ae: &Autoencoder,
    target: u8,
) -> Result<CfQuality> {
    if pairs.is_empty() {
        return Err(Error::EmptyPopulation("no counterfactual pairs to evaluate".into()));
    }
    let n = pairs.len() as f64;
    let mut valid = 0usize;
    let mut plaus = 0.0;
    let mut sim = 0.0;
    let mut changed = 0usize;
    let mut actionable = true;
    for (x, cf) in pairs {
        if h.predict(cf) == target {
            valid += 1;
        }
        plaus += plausibility(ae, cf)?;
        sim += gower(schema, x, cf)?;
        changed += changed_features(schema, x, cf);
        actionable &= is_actionable(schema, x, cf);
    }
    Ok(CfQuality {
        count: pairs.len(),
        validity: valid as f64 / n,
        plausibility: plaus / n,
        similarity: sim / n,
        minimality: changed as f64 / n,
        actionability: actionable,
    })
}

/// One exported action: raw-unit deltas plus its coverage of each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionExport {
    pub deltas: BTreeMap<String, f64>,
    pub effectiveness: GroupPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPair {
    pub group0: f64,
    pub group1: f64,
}

pub fn export_actions(schema: &FeatureSchema, set: &ActionSet, effectiveness: &[(f64, f64)]) -> Vec<ActionExport> {
    set.iter()
        .zip(effectiveness)
        .map(|(a, &(e0, e1))| ActionExport {
            deltas: a.raw_deltas(schema),
            effectiveness: GroupPair { group0: e0, group1: e1 },
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::LogisticRegression;
    use crate::nn::Mlp;
    use crate::tabular::Feature;
    use proptest::prelude::*;

    pub(crate) fn feature(name: &str, kind: FeatureKind, min: f64, max: f64, actionable: bool) -> Feature {
        Feature {
            name: name.into(),
            kind,
            min,
            max,
            actionable,
        }
    }

    /// Two actionable unit-range features plus a binary protected one.
    pub(crate) fn unit_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                feature("x1", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("x2", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("p", FeatureKind::Nominal, 0.0, 1.0, false),
            ],
            "p",
            "y",
        )
        .unwrap()
    }

    fn income_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                feature("credit", FeatureKind::Ordinal, 300.0, 850.0, true),
                feature("income", FeatureKind::Continuous, 0.0, 10_000.0, true),
                feature("race", FeatureKind::Nominal, 0.0, 1.0, false),
            ],
            "race",
            "y",
        )
        .unwrap()
    }

    #[test]
    fn income_plus_one_thousand() {
        let s = income_schema();
        let x = s.normalize_row(&[600.0, 2000.0, 1.0]);
        let delta = s.normalize(1000.0, "income").unwrap() - s.normalize(0.0, "income").unwrap();
        let a = Action::new(vec![0.0, delta]);
        let cf = apply_action(&s, &x, &a);
        let raw = s.denormalize_row(&cf);
        assert!((raw[1] - 3000.0).abs() < 1e-9);
        assert_eq!(raw[0], 600.0);
        assert_eq!(a.raw_deltas(&s)["income"], 1000.0);
    }

    #[test]
    fn zero_action_is_identity() {
        let s = income_schema();
        let x = s.normalize_row(&[600.0, 2000.0, 1.0]);
        assert_eq!(apply_action(&s, &x, &Action::zeros(2)), x);
        assert_eq!(apply_action(&s, &x, &Action::new(vec![5e-7, -5e-7])), x);
    }

    #[test]
    fn clipping_saturates() {
        let s = unit_schema();
        let cf = apply_action(&s, &[0.9, 0.2, 0.0], &Action::new(vec![0.5, 0.0]));
        assert_eq!(cf[0], 1.0);
    }

    #[test]
    fn ordinal_rounds_to_level() {
        let s = FeatureSchema::new(
            vec![
                feature("edu", FeatureKind::Ordinal, 1.0, 16.0, true),
                feature("p", FeatureKind::Nominal, 0.0, 1.0, false),
            ],
            "p",
            "y",
        )
        .unwrap();
        let x = s.normalize_row(&[9.0, 0.0]);
        // +2.5 levels rounds half away from zero to +3 (9 + 2.5 = 11.5 → 12)
        let cf = apply_action(&s, &x, &Action::new(vec![2.5 / 15.0]));
        assert_eq!(s.denormalize_row(&cf)[0], 12.0);
        // a tiny delta rounds away and is not counted as a change
        let cf = apply_action(&s, &x, &Action::new(vec![0.2 / 15.0]));
        assert_eq!(changed_features(&s, &x, &cf), 0);
    }

    #[test]
    fn gower_worked_examples() {
        let s = unit_schema();
        let x = [0.2, 0.4, 0.0];
        assert_eq!(gower(&s, &x, &x).unwrap(), 0.0);

        let two = FeatureSchema::new(
            vec![
                feature("a", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("b", FeatureKind::Continuous, 0.0, 1.0, false),
            ],
            "b",
            "y",
        )
        .unwrap();
        let g = gower(&two, &[0.1, 0.2], &[0.4, 0.5]).unwrap();
        let oracle = ((0.4f64 - 0.1).abs() + (0.5f64 - 0.2).abs()) / 2.0;
        assert_eq!(g, oracle);
        assert!((g - 0.3).abs() < 1e-12);

        let mixed = FeatureSchema::new(
            vec![
                feature("c", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("n", FeatureKind::Nominal, 0.0, 1.0, false),
            ],
            "n",
            "y",
        )
        .unwrap();
        assert_eq!(gower(&mixed, &[0.3, 0.0], &[0.3, 1.0]).unwrap(), 0.5);
        assert!(gower(&mixed, &[0.3], &[0.3, 1.0]).is_err());
    }

    /// h(x) = 1 iff x1 + x2 ≥ 1
    pub(crate) fn sum_classifier() -> LogisticRegression {
        LogisticRegression::new(vec![1.0, 1.0, 0.0], -1.0)
    }

    #[test]
    fn select_best_examples() {
        let s = unit_schema();
        let h = sum_classifier();
        let x = [0.3, 0.3, 0.0];
        let big = Action::new(vec![0.6, 0.3]);
        let small = Action::new(vec![0.45, 0.0]);
        let set = ActionSet::new(vec![big.clone(), small.clone()]);
        let g_big = gower(&s, &x, &apply_action(&s, &x, &big)).unwrap();
        let g_small = gower(&s, &x, &apply_action(&s, &x, &small)).unwrap();
        assert!(g_small < g_big);
        let best = select_best(&s, &x, &set, &h).unwrap();
        assert_eq!(best.action, 1);
        assert_eq!(best.gower, g_small);

        let none = ActionSet::new(vec![Action::zeros(2), Action::new(vec![0.1, 0.0])]);
        assert!(select_best(&s, &x, &none, &h).is_none());

        let tie = ActionSet::new(vec![
            Action::zeros(2),
            Action::new(vec![0.45, 0.0]),
            Action::zeros(2),
            Action::new(vec![0.0, 0.45]),
        ]);
        assert_eq!(select_best(&s, &x, &tie, &h).unwrap().action, 1);
    }

    #[test]
    fn cf_quality_examples() {
        let s = FeatureSchema::new(
            vec![
                feature("a", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("b", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("c", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("p", FeatureKind::Nominal, 0.0, 1.0, false),
            ],
            "p",
            "y",
        )
        .unwrap();
        let h = LogisticRegression::new(vec![1.0, 1.0, 1.0, 0.0], -1.0);
        let ae = Autoencoder::from_network(Mlp::zeros(&[4, 2, 4]), 0.1).unwrap();
        let pairs = vec![
            (vec![0.2, 0.2, 0.2, 0.0], vec![0.5, 0.5, 0.2, 0.0]),
            (vec![0.1, 0.3, 0.2, 1.0], vec![0.1, 0.6, 0.6, 1.0]),
        ];
        let q = cf_quality(&s, &pairs, &h, &ae, 1).unwrap();
        let oracle_l0: f64 = pairs
            .iter()
            .map(|(x, c)| x.iter().zip(c).filter(|(a, b)| a != b).count() as f64)
            .sum::<f64>()
            / 2.0;
        assert_eq!(q.minimality, oracle_l0);
        assert_eq!(q.minimality, 2.0);
        assert_eq!(q.validity, 1.0);
        assert!(q.actionability);
        assert!(q.minimality <= 3.0);
        assert!(cf_quality(&s, &[], &h, &ae, 1).is_err());

        let bad = vec![(vec![0.2, 0.2, 0.2, 0.0], vec![0.9, 0.2, 0.2, 1.0])];
        assert!(!cf_quality(&s, &bad, &h, &ae, 1).unwrap().actionability);
    }

    #[test]
    fn flatten_round_trip() {
        let set = ActionSet::new(vec![Action::new(vec![0.1, 0.2]), Action::new(vec![0.3, 0.4])]);
        let flat = set.flatten();
        assert_eq!(flat, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(ActionSet::from_flat(&flat, 2, 2).unwrap(), set);
        assert!(ActionSet::from_flat(&flat, 3, 2).is_err());
    }

    fn mixed_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                feature("a", FeatureKind::Continuous, 0.0, 1.0, true),
                feature("o", FeatureKind::Ordinal, 0.0, 10.0, true),
                feature("n", FeatureKind::Nominal, 0.0, 3.0, false),
                feature("k", FeatureKind::Continuous, 2.0, 2.0, false),
                feature("p", FeatureKind::Nominal, 0.0, 1.0, false),
            ],
            "p",
            "y",
        )
        .unwrap()
    }

    fn instance() -> impl Strategy<Value = Instance> {
        (0.0f64..=1.0, 0u8..=10, 0u8..=3, 0u8..=1)
            .prop_map(|(a, o, n, p)| vec![a, o as f64 / 10.0, n as f64 / 3.0, 0.0, p as f64])
    }

    proptest! {
        #[test]
        fn gower_is_a_pseudometric(x in instance(), y in instance(), z in instance()) {
            let s = mixed_schema();
            let xy = gower(&s, &x, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&xy));
            prop_assert_eq!(xy, gower(&s, &y, &x).unwrap());
            prop_assert_eq!(gower(&s, &x, &x).unwrap(), 0.0);
            let xz = gower(&s, &x, &z).unwrap();
            let yz = gower(&s, &y, &z).unwrap();
            prop_assert!(xz <= xy + yz + 1e-12);
        }

        #[test]
        fn apply_is_monotone_and_actionable(x in instance(), d in 0.0f64..1.0, extra in 0.0f64..1.0, k in 0usize..2) {
            let s = mixed_schema();
            let mut small = vec![0.0; 2];
            small[k] = d;
            let mut large = small.clone();
            large[k] = d + extra;
            let f = s.actionable_indices()[k];
            let a = apply_action(&s, &x, &Action::new(small));
            let b = apply_action(&s, &x, &Action::new(large));
            prop_assert!(b[f] >= a[f]);
            prop_assert!(is_actionable(&s, &x, &b));
            prop_assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn select_best_matches_enumeration(
            x in (0.0f64..0.5, 0.0f64..0.5),
            deltas in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..=5),
        ) {
            let s = unit_schema();
            let h = sum_classifier();
            let x = vec![x.0, x.1, 0.0];
            let set = ActionSet::new(deltas.iter().map(|&(a, b)| Action::new(vec![a, b])).collect());
            let mut oracle: Option<(usize, f64)> = None;
            for (i, a) in set.iter().enumerate() {
                let cf = apply_action(&s, &x, a);
                if h.predict(&cf) == 1 {
                    let g = gower(&s, &x, &cf).unwrap();
                    if oracle.is_none_or(|(_, bg)| g < bg) {
                        oracle = Some((i, g));
                    }
                }
            }
            let got = select_best(&s, &x, &set, &h).map(|b| (b.action, b.gower));
            prop_assert_eq!(got, oracle);
        }
    }
}
