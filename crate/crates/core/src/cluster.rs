//! k-means over normalized instances.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::PARALLEL_MIN;
use crate::tabular::{FeatureSchema, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per input point.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    /// Indices of the points in cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// `(row_index, cluster_id)` CSV where `row_index[i]` labels point `i`.
    pub fn write_assignments<W: Write>(&self, w: W, row_index: &[usize]) -> Result<()> {
        if row_index.len() != self.assignment.len() {
            return Err(Error::Shape {
                expected: self.assignment.len(),
                actual: row_index.len(),
            });
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row_index", "cluster_id"])?;
        for (r, c) in row_index.iter().zip(&self.assignment) {
            wtr.write_record([r.to_string(), c.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("cluster assignments", e))?;
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    if points.len() >= PARALLEL_MIN {
        points.par_iter().map(|x| nearest(x, centroids)).collect()
    } else {
        points.iter().map(|x| nearest(x, centroids)).collect()
    }
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            // every point coincides with a chosen centre
            (0..n).find(|i| !chosen.contains(i)).expect("n ≥ k")
        };
        chosen.push(next);
        for (i, x) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or `max_iter` is reached. An empty cluster is re-seeded
/// at the point farthest from its current centroid.
pub fn kmeans_fit(points: &[Vec<f64>], config: &KMeansConfig) -> Result<Clustering> {
    let k = config.k;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::EmptyPopulation(format!(
            "k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Shape {
            expected: d,
            actual: p.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut current = assign(points, &centroids);
    let mut history = vec![current.iter().map(|a| a.1).sum::<f64>()];
    let mut converged = false;

    for _ in 0..config.max_iter {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &(c, _)) in points.iter().zip(&current) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut taken = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .fold(None::<(usize, f64)>, |best, i| {
                        let dist = current[i].1;
                        match best {
                            Some((_, bd)) if bd >= dist => best,
                            _ => Some((i, dist)),
                        }
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.push(far);
                log::debug!("k-means: cluster {c} empty, re-seeding at point {far}");
                centroids[c] = points[far].clone();
            }
        }
        let next = assign(points, &centroids);
        history.push(next.iter().map(|a| a.1).sum());
        let unchanged = next.iter().zip(&current).all(|(a, b)| a.0 == b.0);
        current = next;
        if unchanged {
            converged = true;
            break;
        }
    }

    Ok(Clustering {
        k,
        centroids,
        assignment: current.iter().map(|a| a.0).collect(),
        inertia: *history.last().expect("non-empty history"),
        inertia_history: history,
        converged,
    })
}

/// Drops the protected column so clusters mix both groups.
pub fn clustering_space(schema: &FeatureSchema, population: &[Instance]) -> Vec<Vec<f64>> {
    let p = schema.protected_index();
    population
        .iter()
        .map(|x| x.iter().enumerate().filter(|(j, _)| *j != p).map(|(_, v)| *v).collect())
        .collect()
}

pub fn cluster_population(schema: &FeatureSchema, population: &[Instance], config: &KMeansConfig) -> Result<Clustering> {
    kmeans_fit(&clustering_space(schema, population), config)
}
