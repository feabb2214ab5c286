//! Nearest-unlike-neighbour counterfactual baseline.
//!
//! Finds the closest favorably classified instance (Gower distance over the
//! actionable features) and copies its actionable values into `x` one at a
//! time, always taking the copy that raises the model score the most.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::PARALLEL_MIN;
use crate::model::Classifier;
use crate::recourse::{feature_distance, is_actionable};
use crate::tabular::{FeatureSchema, Instance};

/// Favorably classified instances to borrow feature values from.
#[derive(Debug, Clone, PartialEq)]
pub struct NunIndex {
    schema: FeatureSchema,
    pool: Vec<Instance>,
}

impl NunIndex {
    /// Keeps the candidates that `h` classifies favorably.
    pub fn build(schema: &FeatureSchema, candidates: &[Instance], h: &dyn Classifier) -> Result<Self> {
        let pool: Vec<Instance> = candidates.iter().filter(|x| h.predict(x) == 1).cloned().collect();
        if pool.is_empty() {
            return Err(Error::EmptyPopulation("no favorably classified instance to use as a neighbour".into()));
        }
        Ok(Self {
            schema: schema.clone(),
            pool,
        })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn pool(&self) -> &[Instance] {
        &self.pool
    }

    /// Gower distance restricted to the actionable features.
    pub fn actionable_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let idx = self.schema.actionable_indices();
        let total: f64 = idx.iter().map(|&j| feature_distance(&self.schema, j, x[j], y[j])).sum();
        total / idx.len() as f64
    }

    /// Index of the nearest pool member; lowest index on ties.
    pub fn nearest(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.schema.dim() {
            return Err(Error::Shape {
                expected: self.schema.dim(),
                actual: x.len(),
            });
        }
        let mut best = (0, f64::INFINITY);
        for (i, y) in self.pool.iter().enumerate() {
            let d = self.actionable_distance(x, y);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NunOutcome {
    Counterfactual {
        cf: Instance,
        /// Number of feature values copied from the neighbour.
        changed: usize,
        neighbour: usize,
    },
    /// Copying every actionable value still leaves `h(x′) = 0`.
    NoCounterfactual { neighbour: usize },
}

impl NunOutcome {
    pub fn cf(&self) -> Option<&Instance> {
        match self {
            NunOutcome::Counterfactual { cf, .. } => Some(cf),
            NunOutcome::NoCounterfactual { .. } => None,
        }
    }
}

pub fn nun_counterfactual(x: &[f64], index: &NunIndex, h: &dyn Classifier) -> Result<NunOutcome> {
    let neighbour = index.nearest(x)?;
    if h.predict(x) == 1 {
        return Err(Error::Contract("nun_counterfactual expects an affected instance".into()));
    }
    let target = &index.pool[neighbour];
    let mut cur = x.to_vec();
    let mut remaining: Vec<usize> = index
        .schema
        .actionable_indices()
        .iter()
        .copied()
        .filter(|&j| cur[j] != target[j])
        .collect();
    let mut changed = 0;
    while h.predict(&cur) == 0 {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in remaining.iter().enumerate() {
            let old = cur[j];
            cur[j] = target[j];
            let s = h.score(&cur);
            cur[j] = old;
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((pos, s));
            }
        }
        let Some((pos, _)) = best else {
            return Ok(NunOutcome::NoCounterfactual { neighbour });
        };
        let j = remaining.remove(pos);
        cur[j] = target[j];
        changed += 1;
    }
    debug_assert!(is_actionable(&index.schema, x, &cur));
    Ok(NunOutcome::Counterfactual {
        cf: cur,
        changed,
        neighbour,
    })
}

pub fn nun_batch(xs: &[Instance], index: &NunIndex, h: &dyn Classifier) -> Result<Vec<NunOutcome>> {
    if xs.len() >= PARALLEL_MIN {
        xs.par_iter().map(|x| nun_counterfactual(x, index, h)).collect()
    } else {
        xs.iter().map(|x| nun_counterfactual(x, index, h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogisticRegression;
    use crate::recourse::tests::{sum_classifier, unit_schema};
    use crate::recourse::gower;
    use proptest::prelude::*;

    #[test]
    fn single_feature_copy_flips() {
        let h = sum_classifier();
        let pool = vec![vec![0.8, 0.3, 1.0], vec![0.9, 0.9, 0.0]];
        let idx = NunIndex::build(&unit_schema(), &pool, &h).unwrap();
        assert_eq!(idx.len(), 2);
        let x = vec![0.5, 0.3, 0.0];
        let out = nun_counterfactual(&x, &idx, &h).unwrap();
        assert_eq!(
            out,
            NunOutcome::Counterfactual {
                cf: vec![0.8, 0.3, 0.0],
                changed: 1,
                neighbour: 0
            }
        );
    }

    #[test]
    fn exhausted_copies_give_no_cf() {
        // favorable only through the protected column
        let h = LogisticRegression::new(vec![0.1, 0.1, 5.0], -2.0);
        let pool = vec![vec![0.4, 0.4, 1.0]];
        let idx = NunIndex::build(&unit_schema(), &pool, &h).unwrap();
        let x = vec![0.4, 0.4, 0.0];
        assert_eq!(
            nun_counterfactual(&x, &idx, &h).unwrap(),
            NunOutcome::NoCounterfactual { neighbour: 0 }
        );
    }

    #[test]
    fn empty_pool_is_error() {
        let h = sum_classifier();
        assert!(NunIndex::build(&unit_schema(), &[vec![0.1, 0.1, 0.0]], &h).is_err());
    }

    #[test]
    fn favorable_input_is_rejected() {
        let h = sum_classifier();
        let idx = NunIndex::build(&unit_schema(), &[vec![0.9, 0.9, 0.0]], &h).unwrap();
        assert!(matches!(nun_counterfactual(&[0.8, 0.8, 0.0], &idx, &h), Err(Error::Contract(_))));
    }

    #[test]
    fn nearest_uses_actionable_features_only() {
        let h = sum_classifier();
        let pool = vec![vec![0.7, 0.7, 0.0], vec![0.6, 0.6, 1.0]];
        let idx = NunIndex::build(&unit_schema(), &pool, &h).unwrap();
        // protected value matches pool[0], but pool[1] is closer on x1, x2
        assert_eq!(idx.nearest(&[0.5, 0.5, 0.0]).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn baseline_properties(
            pool in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0u8..2), 1..15),
            x in (0.0f64..1.0, 0.0f64..1.0, 0u8..2),
            w in (0.1f64..2.0, 0.1f64..2.0, -1.0f64..1.0),
        ) {
            let schema = unit_schema();
            let h = LogisticRegression::new(vec![w.0, w.1, w.2], -1.0);
            let pool: Vec<Instance> = pool.into_iter().map(|(a, b, p)| vec![a, b, p as f64]).collect();
            let x = vec![x.0, x.1, x.2 as f64];
            prop_assume!(h.predict(&x) == 0);
            let Ok(idx) = NunIndex::build(&schema, &pool, &h) else { return Ok(()); };
            let out = nun_counterfactual(&x, &idx, &h).unwrap();
            let nb = &idx.pool()[idx.nearest(&x).unwrap()];
            // oracle: copying every actionable value at once
            let mut full = x.clone();
            for &j in schema.actionable_indices() {
                full[j] = nb[j];
            }
            match &out {
                NunOutcome::Counterfactual { cf, changed, .. } => {
                    prop_assert_eq!(h.predict(cf), 1);
                    prop_assert!(is_actionable(&schema, &x, cf));
                    for j in 0..3 {
                        prop_assert!(cf[j] == x[j] || cf[j] == nb[j]);
                    }
                    prop_assert!(*changed <= schema.actionable_indices().len());
                }
                NunOutcome::NoCounterfactual { .. } => prop_assert_eq!(h.predict(&full), 0),
            }
            // brute-force nearest neighbour
            let d = |y: &Instance| {
                let ax: Vec<f64> = vec![x[0], x[1], 0.0];
                let ay: Vec<f64> = vec![y[0], y[1], 0.0];
                gower(&schema, &ax, &ay).unwrap() * 3.0 / 2.0
            };
            let best = idx.pool().iter().map(d).fold(f64::INFINITY, f64::min);
            prop_assert!((d(nb) - best).abs() < 1e-12);
        }
    }
}
