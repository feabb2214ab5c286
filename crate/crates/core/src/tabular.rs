//! Typed tabular data: feature schema, CSV loading, range fitting,
//! normalization and the affected population.
//!
//! All engine computations run in the normalized space, where every
//! feature with a non-degenerate range is mapped affinely onto `[0, 1]`.
//! Nominal codes are mapped with the same affine rule so that equality
//! between codes is preserved; they are never treated as magnitudes.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Classifier;

/// A normalized instance: one value per schema feature, target excluded.
pub type Instance = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Ordinal,
    Nominal,
}

impl FeatureKind {
    /// Ordinal and nominal values are integer codes.
    pub fn is_discrete(self) -> bool {
        !matches!(self, FeatureKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
    pub actionable: bool,
}

impl Feature {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_constant(&self) -> bool {
        self.max == self.min
    }
}

/// Declarative schema document, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub features: Vec<FeatureConfig>,
    pub protected: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub actionable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl SchemaConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, f) in self.features.iter().enumerate() {
            if seen.insert(f.name.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate feature '{}'", f.name)));
            }
        }
        if seen.contains_key(self.target.as_str()) {
            return Err(Error::Schema(format!(
                "target '{}' must not be listed among the features",
                self.target
            )));
        }
        if !seen.contains_key(self.protected.as_str()) {
            return Err(Error::Schema(format!(
                "protected feature '{}' is not declared",
                self.protected
            )));
        }
        Ok(())
    }
}

/// Fitted feature schema. Construction validates every schema invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct FeatureSchema {
    features: Vec<Feature>,
    protected: usize,
    target: String,
    actionable: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    features: Vec<Feature>,
    protected: String,
    target: String,
}

impl TryFrom<SchemaRepr> for FeatureSchema {
    type Error = Error;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        FeatureSchema::new(r.features, &r.protected, r.target)
    }
}

impl From<FeatureSchema> for SchemaRepr {
    fn from(s: FeatureSchema) -> Self {
        SchemaRepr {
            protected: s.features[s.protected].name.clone(),
            features: s.features,
            target: s.target,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>, protected: &str, target: impl Into<String>) -> Result<Self> {
        let target = target.into();
        let protected_idx = features
            .iter()
            .position(|f| f.name == protected)
            .ok_or_else(|| Error::Schema(format!("protected feature '{protected}' is not declared")))?;
        if features.iter().any(|f| f.name == target) {
            return Err(Error::Schema(format!(
                "target '{target}' must not be listed among the features"
            )));
        }
        for f in &features {
            let invalid = |message: &str| Error::Validation {
                feature: f.name.clone(),
                message: message.to_string(),
            };
            if !f.min.is_finite() || !f.max.is_finite() {
                return Err(invalid("range bounds must be finite"));
            }
            if f.min > f.max {
                return Err(invalid("observed_min exceeds observed_max"));
            }
            if f.actionable && f.is_constant() {
                return Err(invalid("constant feature cannot be actionable"));
            }
            if f.actionable && f.kind == FeatureKind::Nominal {
                return Err(invalid("nominal features are not actionable"));
            }
        }
        let p = &features[protected_idx];
        if p.actionable {
            return Err(Error::Validation {
                feature: p.name.clone(),
                message: "protected feature cannot be actionable".into(),
            });
        }
        if p.min < 0.0 || p.max > 1.0 {
            return Err(Error::Validation {
                feature: p.name.clone(),
                message: "protected feature must be binary (0/1)".into(),
            });
        }
        let actionable: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.actionable)
            .map(|(i, _)| i)
            .collect();
        if actionable.is_empty() {
            return Err(Error::Schema("at least one feature must be actionable".into()));
        }
        Ok(Self {
            features,
            protected: protected_idx,
            target,
            actionable,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, idx: usize) -> &Feature {
        &self.features[idx]
    }

    /// Number of features (target excluded).
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn protected_index(&self) -> usize {
        self.protected
    }

    pub fn protected_name(&self) -> &str {
        &self.features[self.protected].name
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// Indices of actionable features, in schema order.
    pub fn actionable_indices(&self) -> &[usize] {
        &self.actionable
    }

    pub fn actionable_names(&self) -> Vec<&str> {
        self.actionable
            .iter()
            .map(|&i| self.features[i].name.as_str())
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn normalize_value(&self, idx: usize, value: f64) -> f64 {
        let f = &self.features[idx];
        if f.is_constant() {
            0.0
        } else {
            (value - f.min) / f.range()
        }
    }

    /// Inverse of [`normalize_value`](Self::normalize_value). Discrete
    /// features are snapped back onto their integer code.
    pub fn denormalize_value(&self, idx: usize, value: f64) -> f64 {
        let f = &self.features[idx];
        let raw = if f.is_constant() {
            f.min
        } else {
            f.min + value * f.range()
        };
        if f.kind.is_discrete() {
            raw.round()
        } else {
            raw
        }
    }

    pub fn normalize(&self, value: f64, feature: &str) -> Result<f64> {
        Ok(self.normalize_value(self.index_of(feature)?, value))
    }

    pub fn denormalize(&self, value: f64, feature: &str) -> Result<f64> {
        Ok(self.denormalize_value(self.index_of(feature)?, value))
    }

    pub fn normalize_row(&self, row: &[f64]) -> Instance {
        row.iter()
            .enumerate()
            .map(|(i, &v)| self.normalize_value(i, v))
            .collect()
    }

    pub fn denormalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value(i, v))
            .collect()
    }

    /// Normalized-space delta to raw units.
    pub fn delta_to_raw(&self, idx: usize, delta: f64) -> f64 {
        delta * self.features[idx].range()
    }

    /// Stable hex digest identifying names, kinds, ranges and flags.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for f in &self.features {
            hasher.update(
                format!(
                    "{}|{:?}|{:e}|{:e}|{};",
                    f.name, f.kind, f.min, f.max, f.actionable
                )
                .as_bytes(),
            );
        }
        hasher.update(format!("protected={};target={}", self.protected_name(), self.target).as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Raw tabular data with its fitted schema. Rows hold raw (denormalized)
/// values in schema feature order; labels are 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset, fitting ranges from the rows (explicit `min`/`max`
    /// in the config override the fitted values).
    pub fn from_rows(config: &SchemaConfig, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        config.check_names()?;
        if rows.len() != labels.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyPopulation("dataset has no rows".into()));
        }
        let dim = config.features.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    actual: row.len(),
                });
            }
            for (c, v) in row.iter().enumerate() {
                let fc = &config.features[c];
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: r,
                        column: fc.name.clone(),
                        message: "value is not finite".into(),
                    });
                }
                if fc.kind.is_discrete() && v.fract() != 0.0 {
                    return Err(Error::Parse {
                        row: r,
                        column: fc.name.clone(),
                        message: format!("{:?} feature expects an integer code, got {v}", fc.kind),
                    });
                }
            }
        }
        for (r, &y) in labels.iter().enumerate() {
            if y > 1 {
                return Err(Error::Validation {
                    feature: config.target.clone(),
                    message: format!("label {y} at row {r} is not 0/1"),
                });
            }
        }
        let protected_col = config
            .features
            .iter()
            .position(|f| f.name == config.protected)
            .expect("checked by check_names");
        if let Some((r, v)) = rows
            .iter()
            .enumerate()
            .map(|(r, row)| (r, row[protected_col]))
            .find(|&(_, v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::Validation {
                feature: config.protected.clone(),
                message: format!("protected feature must be binary (0/1), found {v} at row {r}"),
            });
        }

        let mut features = Vec::with_capacity(dim);
        for (c, fc) in config.features.iter().enumerate() {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| {
                (lo.min(row[c]), hi.max(row[c]))
            });
            let min = fc.min.unwrap_or(lo);
            let max = fc.max.unwrap_or(hi);
            if lo < min || hi > max {
                return Err(Error::Validation {
                    feature: fc.name.clone(),
                    message: format!("data range [{lo}, {hi}] exceeds declared range [{min}, {max}]"),
                });
            }
            features.push(Feature {
                name: fc.name.clone(),
                kind: fc.kind,
                min,
                max,
                actionable: fc.actionable,
            });
        }
        let schema = FeatureSchema::new(features, &config.protected, config.target.clone())?;
        Ok(Self {
            schema,
            rows,
            labels,
        })
    }

    /// Parses CSV text with a header row.
    pub fn from_csv_reader<R: Read>(config: &SchemaConfig, reader: R) -> Result<Self> {
        config.check_names()?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
        };
        let feature_cols = config
            .features
            .iter()
            .map(|f| column(&f.name))
            .collect::<Result<Vec<_>>>()?;
        let target_col = column(&config.target)?;

        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let cell = |col: usize, name: &str| -> Result<f64> {
                let text = record.get(col).map(str::trim).unwrap_or("");
                if text.is_empty() {
                    return Err(Error::Parse {
                        row: r,
                        column: name.to_string(),
                        message: "missing value".into(),
                    });
                }
                text.parse::<f64>().map_err(|_| Error::Parse {
                    row: r,
                    column: name.to_string(),
                    message: format!("'{text}' is not numeric"),
                })
            };
            let row = config
                .features
                .iter()
                .zip(&feature_cols)
                .map(|(f, &col)| cell(col, &f.name))
                .collect::<Result<Vec<_>>>()?;
            let y = cell(target_col, &config.target)?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::Validation {
                    feature: config.target.clone(),
                    message: format!("label {y} at row {r} is not 0/1"),
                });
            }
            rows.push(row);
            labels.push(y as u8);
        }
        Self::from_rows(config, rows, labels)
    }

    pub fn load_csv(path: impl AsRef<Path>, schema_config: impl AsRef<Path>) -> Result<Self> {
        let config = SchemaConfig::from_path(schema_config)?;
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(&config, file)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn protected_value(&self, row: usize) -> u8 {
        self.rows[row][self.schema.protected] as u8
    }

    pub fn normalized_row(&self, row: usize) -> Instance {
        self.schema.normalize_row(&self.rows[row])
    }

    /// Normalized view of every row.
    pub fn normalized(&self) -> Vec<Instance> {
        self.rows.iter().map(|r| self.schema.normalize_row(r)).collect()
    }

    /// Subset sharing this dataset's fitted schema.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Deterministic 80/20 split by seeded shuffle. Both halves keep the
    /// ranges fitted on the full data.
    pub fn train_test_split(&self, seed: u64) -> (Dataset, Dataset) {
        self.split(seed, 0.8)
    }

    pub fn split(&self, seed: u64, train_fraction: f64) -> (Dataset, Dataset) {
        let (train, test) = self.split_indices(seed, train_fraction);
        (self.subset(&train), self.subset(&test))
    }

    /// Row indices of the train and test halves used by [`Dataset::split`].
    pub fn split_indices(&self, seed: u64, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        let test = idx.split_off(cut.min(self.len()));
        (idx, test)
    }
}

/// Rows the classifier assigns the unfavorable label, split by protected value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectedSet {
    pub indices: Vec<usize>,
    pub group0: Vec<usize>,
    pub group1: Vec<usize>,
}

impl AffectedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Restricts to a subset of row indices (e.g. one cluster), keeping order.
    pub fn restrict(&self, keep: &[usize]) -> AffectedSet {
        let keep: std::collections::HashSet<usize> = keep.iter().copied().collect();
        let filter = |v: &[usize]| v.iter().copied().filter(|i| keep.contains(i)).collect::<Vec<_>>();
        AffectedSet {
            indices: filter(&self.indices),
            group0: filter(&self.group0),
            group1: filter(&self.group1),
        }
    }
}

/// Collects rows with `h(x) = 0`.
pub fn affected_subset(ds: &Dataset, h: &dyn Classifier) -> Result<AffectedSet> {
    let preds: Vec<u8> = ds.normalized().iter().map(|x| h.predict(x)).collect();
    affected_from_predictions(ds, &preds)
}

/// Same as [`affected_subset`] for precomputed predictions.
pub fn affected_from_predictions(ds: &Dataset, predictions: &[u8]) -> Result<AffectedSet> {
    if predictions.len() != ds.len() {
        return Err(Error::Shape {
            expected: ds.len(),
            actual: predictions.len(),
        });
    }
    let mut set = AffectedSet {
        indices: Vec::new(),
        group0: Vec::new(),
        group1: Vec::new(),
    };
    for (i, &p) in predictions.iter().enumerate() {
        if p == 0 {
            set.indices.push(i);
            if ds.protected_value(i) == 0 {
                set.group0.push(i);
            } else {
                set.group1.push(i);
            }
        }
    }
    if set.is_empty() {
        return Err(Error::EmptyPopulation(
            "the classifier predicts the favorable label for every row".into(),
        ));
    }
    Ok(set)
}
