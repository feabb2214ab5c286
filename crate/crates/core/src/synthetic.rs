//! Seeded two-group demo population.
//!
//! Each group is a mixture of two Gaussian blobs over `income` and
//! `savings`. Group 1's blobs sit further from the decision boundary and it
//! draws from the low blob more often.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tabular::{Dataset, SchemaConfig};

pub const SCHEMA_JSON: &str = r#"{
  "features": [
    {"name": "income", "kind": "continuous", "actionable": true, "min": 0, "max": 100},
    {"name": "savings", "kind": "continuous", "actionable": true, "min": 0, "max": 100},
    {"name": "age", "kind": "ordinal", "min": 18, "max": 80},
    {"name": "group", "kind": "nominal"}
  ],
  "protected": "group",
  "target": "approved"
}
"#;

pub fn schema_config() -> SchemaConfig {
    SchemaConfig::from_json_str(SCHEMA_JSON).expect("built-in schema is valid")
}

const LOW_BLOB_SHARE: [f64; 2] = [0.4, 0.65];

/// Raw rows `[income, savings, age, group]` and labels.
pub fn population(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 7.0).expect("valid sigma");
    let label_noise = Normal::new(0.0, 0.4).expect("valid sigma");
    let centres: [[[f64; 2]; 2]; 2] = [[[62.0, 48.0], [36.0, 28.0]], [[55.0, 40.0], [28.0, 20.0]]];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % 2;
        let low = rng.random_bool(LOW_BLOB_SHARE[g]);
        let c = centres[g][low as usize];
        let income: f64 = (c[0] + noise.sample(&mut rng)).clamp(0.0, 100.0);
        let savings: f64 = (c[1] + noise.sample(&mut rng)).clamp(0.0, 100.0);
        let age = rng.random_range(20..=70) as f64;
        let z = 0.08 * income + 0.1 * savings + 0.01 * age - 7.6 + label_noise.sample(&mut rng);
        rows.push(vec![income, savings, age, g as f64]);
        labels.push((z > 0.0) as u8);
    }
    (rows, labels)
}

pub fn dataset(n: usize, seed: u64) -> Result<Dataset> {
    let (rows, labels) = population(n, seed);
    Dataset::from_rows(&schema_config(), rows, labels)
}

/// Writes `data.csv` and `schema.json` into `dir`.
pub fn write_files(dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema_path = dir.join("schema.json");
    std::fs::write(&schema_path, SCHEMA_JSON).map_err(|e| Error::io(&schema_path, e))?;
    let data_path = dir.join("data.csv");
    let file = std::fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["income", "savings", "age", "group", "approved"])?;
    let (rows, labels) = population(n, seed);
    for (r, y) in rows.iter().zip(&labels) {
        w.write_record([
            format!("{:.2}", r[0]),
            format!("{:.2}", r[1]),
            format!("{}", r[2]),
            format!("{}", r[3]),
            y.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&data_path, e))?;
    w.into_inner()
        .map_err(|e| Error::io(&data_path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(&data_path, e))
}
