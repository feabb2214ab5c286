//! End-to-end runs: load, classify, audit, search for fair actions, report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{nun_batch, NunIndex, NunOutcome};
use crate::cluster::{cluster_population, Clustering, KMeansConfig};
use crate::error::{Error, Result};
use crate::fairness::snapshot;
use crate::model::{
    audit_fairness, audit_predictions, train_autoencoder, train_classifier, Autoencoder, AutoencoderConfig,
    Classifier, LogisticConfig, LogisticRegression, ModelFairnessAudit, ScoreTable,
};
use crate::recourse::{cf_quality, export_actions, select_best, ActionSet, CfQuality};
use crate::report::{
    to_rounded_json, trace_svg, FairnessReport, GroupCounts, ModelSummary, PopulationReport, PopulationResult,
    TrainingSummary,
};
use crate::rl_env::{write_trajectory, RecourseEnv, ScenarioSpec, TrajectoryRecord};
use crate::sac::{train, SacAgent, SacConfig, TrainingTrace};
use crate::tabular::{affected_subset, AffectedSet, Dataset, FeatureSchema, Instance, SchemaConfig};

/// dp or eo above this is flagged by the audit.
pub const AUDIT_WARN_LIMIT: f64 = 0.10;
pub const TRAIN_FRACTION: f64 = 0.8;

fn default_clusters() -> usize {
    3
}

fn default_kmeans_iter() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    /// Persisted logistic model to use instead of training one.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub sac: SacConfig,
    /// Number of k-means clusters evaluated besides the whole population; 0 disables clustering.
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_kmeans_iter")]
    pub kmeans_max_iter: usize,
    #[serde(default)]
    pub logistic: LogisticConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>, schema: impl Into<PathBuf>, seed: u64, out: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            schema: schema.into(),
            model: None,
            scenario: ScenarioSpec::default(),
            sac: SacConfig::default(),
            clusters: default_clusters(),
            kmeans_max_iter: default_kmeans_iter(),
            logistic: LogisticConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            seed,
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sac.validate()?;
        if self.kmeans_max_iter == 0 {
            return Err(Error::Config("kmeans_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Error tagged with the pipeline stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: String,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: &str) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: &str) -> StageResult<T> {
        self.map_err(|source| StageError {
            stage: stage.to_string(),
            source,
        })
    }
}

/// Output directory written under a staging name and renamed into place
/// on success. On failure the staging directory becomes `<out>.incomplete`
/// with an `INCOMPLETE` file naming the failed stage.
pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "out".into());
    name.push(suffix);
    path.with_file_name(name)
}

impl OutputDir {
    pub fn create(target: impl Into<PathBuf>) -> Result<Self> {
        let target = target.into();
        if target.exists() {
            return Err(Error::Config(format!(
                "output directory {} already exists",
                target.display()
            )));
        }
        let staging = sibling(&target, ".staging");
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Self { target, staging })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.staging.join(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    pub fn commit(self) -> Result<PathBuf> {
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target)
    }

    /// Moves partial output aside; returns the `.incomplete` path.
    pub fn abandon(self, stage: &str, err: &Error) -> PathBuf {
        let incomplete = sibling(&self.target, ".incomplete");
        let _ = fs::remove_dir_all(&incomplete);
        let _ = fs::write(
            self.staging.join("INCOMPLETE"),
            format!("stage: {stage}\nerror: {err}\n"),
        );
        if fs::rename(&self.staging, &incomplete).is_err() {
            return self.staging;
        }
        incomplete
    }
}

/// One engine counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRecord {
    pub row_index: usize,
    pub group: u8,
    pub action: usize,
    pub gower: f64,
    /// Normalized counterfactual.
    pub cf: Instance,
}

/// Everything produced for one population.
#[derive(Debug, Clone)]
pub struct PopulationOutcome {
    pub report: PopulationReport,
    pub actions: Option<ActionSet>,
    pub counterfactuals: Vec<CfRecord>,
    pub trace: TrainingTrace,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Data, models and populations shared by every population run.
pub struct Prepared {
    pub dataset: Dataset,
    pub classifier: Arc<LogisticRegression>,
    pub model_source: String,
    pub audit: ModelFairnessAudit,
    pub affected: AffectedSet,
    pub autoencoder: Autoencoder,
    pub autoencoder_error: f64,
    pub clustering: Option<Clustering>,
}

fn load_or_train(config_model: Option<&Path>, train: &Dataset, cfg: &LogisticConfig) -> Result<(LogisticRegression, String)> {
    match config_model {
        Some(p) => Ok((LogisticRegression::load(p, train.schema())?, "loaded".into())),
        None => Ok((train_classifier(train, cfg)?, "trained".into())),
    }
}

pub fn prepare(config: &RunConfig) -> StageResult<Prepared> {
    config.validate().at("config")?;
    let dataset = Dataset::load_csv(&config.data, &config.schema).at("load")?;
    let (train_ds, test_ds) = dataset.split(config.seed, TRAIN_FRACTION);
    if train_ds.is_empty() || test_ds.is_empty() {
        return Err(Error::EmptyPopulation("dataset too small for an 80/20 split".into())).at("split");
    }
    let (model, model_source) = load_or_train(config.model.as_deref(), &train_ds, &config.logistic).at("classifier")?;
    let audit = audit_fairness(&model, &test_ds).at("audit")?;
    warn_on_audit(&audit);
    let affected = affected_subset(&dataset, &model).at("affected set")?;
    let ae_cfg = AutoencoderConfig {
        seed: config.seed,
        ..config.autoencoder.clone()
    };
    let fit = train_autoencoder(&train_ds.normalized(), &ae_cfg).at("autoencoder")?;
    let clustering = if config.clusters > 0 {
        let pop: Vec<Instance> = affected.indices.iter().map(|&i| dataset.normalized_row(i)).collect();
        let km = KMeansConfig {
            k: config.clusters,
            max_iter: config.kmeans_max_iter,
            seed: config.seed,
        };
        Some(cluster_population(dataset.schema(), &pop, &km).at("cluster")?)
    } else {
        None
    };
    Ok(Prepared {
        dataset,
        classifier: Arc::new(model),
        model_source,
        audit,
        affected,
        autoencoder: fit.model,
        autoencoder_error: fit.final_error,
        clustering,
    })
}

pub fn audit_warnings(audit: &ModelFairnessAudit) -> Vec<String> {
    let mut w = Vec::new();
    if audit.dp_difference > AUDIT_WARN_LIMIT {
        w.push(format!(
            "demographic parity difference {:.4} exceeds {AUDIT_WARN_LIMIT}",
            audit.dp_difference
        ));
    }
    if audit.eo_difference > AUDIT_WARN_LIMIT {
        w.push(format!(
            "equalized odds difference {:.4} exceeds {AUDIT_WARN_LIMIT}",
            audit.eo_difference
        ));
    }
    w
}

fn warn_on_audit(audit: &ModelFairnessAudit) {
    for w in audit_warnings(audit) {
        log::warn!("model audit: {w}");
    }
}

/// `(name, affected subset)` for Whole and each cluster.
pub fn populations(prep: &Prepared) -> Vec<(String, AffectedSet)> {
    let mut out = vec![("Whole".to_string(), prep.affected.clone())];
    if let Some(c) = &prep.clustering {
        for k in 0..c.k {
            let rows: Vec<usize> = c.members(k).into_iter().map(|m| prep.affected.indices[m]).collect();
            out.push((format!("C{}", k + 1), prep.affected.restrict(&rows)));
        }
    }
    out
}

/// Trains one agent on `subset` and evaluates its best action set.
pub fn run_population(
    prep: &Prepared,
    name: &str,
    subset: &AffectedSet,
    spec: &ScenarioSpec,
    sac: &SacConfig,
) -> Result<PopulationOutcome> {
    let ds = &prep.dataset;
    let schema = ds.schema();
    let mut report = PopulationReport {
        name: name.to_string(),
        size: subset.len(),
        group_sizes: [subset.group0.len(), subset.group1.len()],
        skipped: None,
        result: None,
    };
    let empty = |report: PopulationReport| PopulationOutcome {
        report,
        actions: None,
        counterfactuals: Vec::new(),
        trace: TrainingTrace::default(),
        trajectory: Vec::new(),
    };
    for (g, members) in [(0, &subset.group0), (1, &subset.group1)] {
        if members.is_empty() {
            let reason = format!("no affected members of group {g}");
            log::warn!("population {name} skipped for fairness optimization: {reason}");
            report.skipped = Some(reason);
            return Ok(empty(report));
        }
    }
    let g0: Vec<Instance> = subset.group0.iter().map(|&i| ds.normalized_row(i)).collect();
    let g1: Vec<Instance> = subset.group1.iter().map(|&i| ds.normalized_row(i)).collect();
    let h: Arc<dyn Classifier> = prep.classifier.clone();
    let mut env = RecourseEnv::new(schema.clone(), h.clone(), g0.clone(), g1.clone(), spec.clone())?;
    let mut agent = SacAgent::new(env.state_len(), 2, sac.clone())?;
    let outcome = train(&mut agent, &mut env)?;
    let best = outcome
        .best
        .ok_or_else(|| Error::Contract(format!("{name}: training ran no episodes")))?;
    let actions = best.actions.clone();

    let snap = snapshot(&actions, &g0, &g1, h.as_ref(), schema, &spec.snapshot_params())?;
    let mut counterfactuals = Vec::new();
    let mut quality: [Option<CfQuality>; 2] = [None, None];
    for (g, (rows, xs)) in [(&subset.group0, &g0), (&subset.group1, &g1)].into_iter().enumerate() {
        let mut pairs = Vec::new();
        for (&row, x) in rows.iter().zip(xs) {
            if let Some(b) = select_best(schema, x, &actions, h.as_ref()) {
                pairs.push((x.clone(), b.cf.clone()));
                counterfactuals.push(CfRecord {
                    row_index: row,
                    group: g as u8,
                    action: b.action,
                    gower: b.gower,
                    cf: b.cf,
                });
            }
        }
        if !pairs.is_empty() {
            quality[g] = Some(cf_quality(schema, &pairs, h.as_ref(), &prep.autoencoder, 1)?);
        }
    }
    let trace = outcome.trace;
    let last = trace.rows.last().copied();
    let result = PopulationResult {
        sr: [0.0; 2],
        pd: 0.0,
        asr: 0.0,
        action_counts: [snap.a0_count, snap.a1_count],
        ad: snap.ad,
        active_actions: snap.active_count,
        mean_gower: snap.mean_gower,
        stopping_met: crate::rl_env::stopping(&snap, spec),
        cf_quality: quality,
        actions: export_actions(schema, &actions, &snap.action_effectiveness),
        training: TrainingSummary {
            episodes: trace.len(),
            total_steps: outcome.total_steps,
            best_episode: best.episode,
            final_entropy_coefficient: last.map_or(agent.alpha(), |r| r.entropy_coefficient),
            final_episode_reward_mean: last.map_or(0.0, |r| r.episode_reward_mean),
        },
    }
    .with_rates(snap.sr0, snap.sr1);
    report.result = Some(result);
    Ok(PopulationOutcome {
        report,
        actions: Some(actions),
        counterfactuals,
        trace,
        trajectory: env.take_trajectory(),
    })
}

/// Runs every population and assembles the report.
pub fn evaluate(config: &RunConfig, prep: &Prepared) -> StageResult<(FairnessReport, Vec<PopulationOutcome>)> {
    let pops = populations(prep);
    let outcomes: Vec<StageResult<PopulationOutcome>> = pops
        .par_iter()
        .enumerate()
        .map(|(i, (name, subset))| {
            let sac = SacConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.sac.clone()
            };
            run_population(prep, name, subset, &config.scenario, &sac).at(&format!("train {name}"))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<StageResult<Vec<_>>>()?;
    let report = FairnessReport {
        scenario: config.scenario.clone(),
        seed: config.seed,
        model: ModelSummary {
            kind: "logistic".into(),
            source: prep.model_source.clone(),
            schema_fingerprint: prep.dataset.schema().fingerprint(),
        },
        audit: prep.audit.clone(),
        affected: GroupCounts {
            total: prep.affected.len(),
            group0: prep.affected.group0.len(),
            group1: prep.affected.group1.len(),
        },
        autoencoder_error: prep.autoencoder_error,
        populations: outcomes.iter().map(|o| o.report.clone()).collect(),
    };
    Ok((report, outcomes))
}

fn file_stem(name: &str) -> String {
    name.to_lowercase()
}

fn counterfactual_csv(schema: &FeatureSchema, records: &[CfRecord]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row_index".to_string(), "group".into(), "action".into(), "gower".into()];
    header.extend(schema.features().iter().map(|f| f.name.clone()));
    wtr.write_record(&header)?;
    for r in records {
        let mut rec = vec![
            r.row_index.to_string(),
            r.group.to_string(),
            r.action.to_string(),
            crate::report::round_sig(r.gower, crate::report::SIG_DIGITS).to_string(),
        ];
        rec.extend(
            schema
                .denormalize_row(&r.cf)
                .iter()
                .map(|v| crate::report::round_sig(*v, crate::report::SIG_DIGITS).to_string()),
        );
        wtr.write_record(&rec)?;
    }
    wtr.into_inner().map_err(|e| Error::io("counterfactuals", e.into_error()))
}

fn write_outputs(
    dir: &OutputDir,
    config: &RunConfig,
    prep: &Prepared,
    report: &FairnessReport,
    outcomes: &[PopulationOutcome],
) -> Result<()> {
    report.check_consistency()?;
    dir.write("report.json", report.to_json()?)?;
    dir.write("report.txt", report.text_table())?;
    dir.write("audit.json", to_rounded_json(&prep.audit)?)?;
    dir.write("config.json", serde_json::to_string_pretty(config)? + "\n")?;
    prep.classifier.save(dir.path().join("model.json"), prep.dataset.schema())?;
    if let Some(c) = &prep.clustering {
        let mut buf = Vec::new();
        c.write_assignments(&mut buf, &prep.affected.indices)?;
        dir.write("clusters.csv", buf)?;
    }
    for o in outcomes {
        if o.report.result.is_none() {
            continue;
        }
        let stem = file_stem(&o.report.name);
        let mut buf = Vec::new();
        o.trace.write_csv(&mut buf)?;
        dir.write(&format!("trace_{stem}.csv"), buf)?;
        dir.write(
            &format!("trace_{stem}.svg"),
            trace_svg(&o.trace, &format!("{} ({})", o.report.name, config.scenario.scenario.name())),
        )?;
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &o.trajectory)?;
        dir.write(&format!("trajectory_{stem}.jsonl"), buf)?;
        dir.write(
            &format!("counterfactuals_{stem}.csv"),
            counterfactual_csv(prep.dataset.schema(), &o.counterfactuals)?,
        )?;
    }
    Ok(())
}

/// Full run writing its outputs to `config.out`.
pub fn cmd_run(config: &RunConfig) -> StageResult<FairnessReport> {
    config.validate().at("config")?;
    let dir = OutputDir::create(&config.out).at("output")?;
    let result = prepare(config).and_then(|prep| {
        let (report, outcomes) = evaluate(config, &prep)?;
        write_outputs(&dir, config, &prep, &report, &outcomes).at("write")?;
        Ok(report)
    });
    match result {
        Ok(report) => {
            dir.commit().at("output")?;
            Ok(report)
        }
        Err(e) => {
            let path = dir.abandon(&e.stage, &e.source);
            log::error!("run failed at stage '{}'; partial output in {}", e.stage, path.display());
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// `(row_index, score)` CSV from an external model.
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    #[serde(default)]
    pub logistic: LogisticConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub audit: ModelFairnessAudit,
    pub warnings: Vec<String>,
    pub test_rows: usize,
}

/// Audits the classifier on the held-out split.
pub fn cmd_audit(config: &AuditConfig) -> StageResult<AuditOutcome> {
    let dataset = Dataset::load_csv(&config.data, &config.schema).at("load")?;
    let (train_idx, test_idx) = dataset.split_indices(config.seed, TRAIN_FRACTION);
    let test = dataset.subset(&test_idx);
    let audit = match &config.predictions {
        Some(p) => {
            if config.model.is_some() {
                return Err(Error::Config("give either a model or a predictions file, not both".into())).at("config");
            }
            let table = ScoreTable::load(p, &dataset).at("predictions")?;
            let preds = table.predictions();
            let test_preds: Vec<u8> = test_idx.iter().map(|&i| preds[i]).collect();
            let protected: Vec<u8> = (0..test.len()).map(|i| test.protected_value(i)).collect();
            audit_predictions(&test_preds, test.labels(), &protected).at("audit")?
        }
        None => {
            let train_ds = dataset.subset(&train_idx);
            let (model, _) = load_or_train(config.model.as_deref(), &train_ds, &config.logistic).at("classifier")?;
            audit_fairness(&model, &test).at("audit")?
        }
    };
    let warnings = audit_warnings(&audit);
    warn_on_audit(&audit);
    Ok(AuditOutcome {
        audit,
        warnings,
        test_rows: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub logistic: LogisticConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGroup {
    pub affected: usize,
    /// Fraction of the group that received a counterfactual.
    pub coverage: f64,
    pub cf_quality: Option<CfQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub method: String,
    pub seed: u64,
    pub groups: [BaselineGroup; 2],
}

impl BaselineReport {
    pub fn text_table(&self) -> String {
        let mut s = format!("Method: {}  Seed: {}\n\n", self.method, self.seed);
        s += &format!(
            "{:<5} {:>8} {:>9} {:>9} {:>13} {:>11} {:>11} {:>11}\n",
            "Group", "Affected", "Coverage", "Validity", "Plausibility", "Similarity", "Minimality", "Actionable"
        );
        for (g, b) in self.groups.iter().enumerate() {
            match &b.cf_quality {
                Some(q) => s.push_str(&format!(
                    "{:<5} {:>8} {:>9.4} {:>9.4} {:>13.4} {:>11.4} {:>11.2} {:>11}\n",
                    format!("G{g}"),
                    b.affected,
                    b.coverage,
                    q.validity,
                    q.plausibility,
                    q.similarity,
                    q.minimality,
                    if q.actionability { "yes" } else { "no" }
                )),
                None => s.push_str(&format!(
                    "{:<5} {:>8} {:>9.4}  no counterfactuals\n",
                    format!("G{g}"),
                    b.affected,
                    b.coverage
                )),
            }
        }
        s
    }
}

/// Nearest-unlike-neighbour counterfactuals for the whole affected set.
pub fn cmd_baseline(config: &BaselineConfig) -> StageResult<BaselineReport> {
    let dataset = Dataset::load_csv(&config.data, &config.schema).at("load")?;
    let (train_ds, _) = dataset.split(config.seed, TRAIN_FRACTION);
    let (model, _) = load_or_train(config.model.as_deref(), &train_ds, &config.logistic).at("classifier")?;
    let affected = affected_subset(&dataset, &model).at("affected set")?;
    let ae_cfg = AutoencoderConfig {
        seed: config.seed,
        ..config.autoencoder.clone()
    };
    let ae = train_autoencoder(&train_ds.normalized(), &ae_cfg).at("autoencoder")?.model;
    let all = dataset.normalized();
    let index = NunIndex::build(dataset.schema(), &all, &model).at("baseline")?;
    let mut groups = Vec::new();
    for rows in [&affected.group0, &affected.group1] {
        let xs: Vec<Instance> = rows.iter().map(|&i| all[i].clone()).collect();
        let outs = nun_batch(&xs, &index, &model).at("baseline")?;
        let pairs: Vec<(Instance, Instance)> = xs
            .iter()
            .zip(&outs)
            .filter_map(|(x, o)| match o {
                NunOutcome::Counterfactual { cf, .. } => Some((x.clone(), cf.clone())),
                NunOutcome::NoCounterfactual { .. } => None,
            })
            .collect();
        let q = if pairs.is_empty() {
            None
        } else {
            Some(cf_quality(dataset.schema(), &pairs, &model, &ae, 1).at("baseline")?)
        };
        groups.push(BaselineGroup {
            affected: xs.len(),
            coverage: if xs.is_empty() {
                0.0
            } else {
                pairs.len() as f64 / xs.len() as f64
            },
            cf_quality: q,
        });
    }
    let groups: [BaselineGroup; 2] = groups.try_into().expect("two groups");
    Ok(BaselineReport {
        method: "nearest-unlike-neighbour".into(),
        seed: config.seed,
        groups,
    })
}

/// Reads a schema config without loading data, for validation.
pub fn check_schema(path: impl AsRef<Path>) -> Result<SchemaConfig> {
    SchemaConfig::from_path(path)
}
