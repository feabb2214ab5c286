//! Run reports: JSON, plain-text tables and trace plots.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelFairnessAudit;
use crate::recourse::{ActionExport, CfQuality};
use crate::rl_env::ScenarioSpec;
use crate::sac::TrainingTrace;

/// `x` rounded to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().expect("formatted float parses")
}

/// `x` rounded to `places` decimal places.
pub fn round_dp(x: f64, places: usize) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.places$}").parse().expect("formatted float parses")
}

pub const SIG_DIGITS: usize = 6;
pub const RATE_PLACES: usize = 6;
/// Slack allowed when recomputing derived fields from rounded primaries.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Rounds every non-integer number in a JSON tree to [`SIG_DIGITS`].
pub fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64 number"), SIG_DIGITS);
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Serializes with fixed precision, pretty-printed, trailing newline.
pub fn to_rounded_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub total: usize,
    pub group0: usize,
    pub group1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: String,
    /// `trained` or `loaded`.
    pub source: String,
    pub schema_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes: usize,
    pub total_steps: usize,
    pub best_episode: usize,
    pub final_entropy_coefficient: f64,
    pub final_episode_reward_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationResult {
    /// Success rate per group.
    pub sr: [f64; 2],
    /// `|SR₀ − SR₁|`
    pub pd: f64,
    /// `(SR₀ + SR₁) / 2`
    pub asr: f64,
    pub action_counts: [usize; 2],
    /// `|A₀ − A₁|`
    pub ad: usize,
    pub active_actions: usize,
    pub mean_gower: f64,
    pub stopping_met: bool,
    pub cf_quality: [Option<CfQuality>; 2],
    pub actions: Vec<ActionExport>,
    pub training: TrainingSummary,
}

impl PopulationResult {
    /// Rounds the success rates and derives PD and ASR from the rounded values.
    pub fn with_rates(mut self, sr0: f64, sr1: f64) -> Self {
        let (a, b) = (round_dp(sr0, RATE_PLACES), round_dp(sr1, RATE_PLACES));
        self.sr = [a, b];
        self.pd = round_dp((a - b).abs(), RATE_PLACES);
        self.asr = round_dp((a + b) / 2.0, RATE_PLACES);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    /// `Whole`, `C1`, `C2`, …
    pub name: String,
    pub size: usize,
    pub group_sizes: [usize; 2],
    pub skipped: Option<String>,
    pub result: Option<PopulationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub scenario: ScenarioSpec,
    pub seed: u64,
    pub model: ModelSummary,
    pub audit: ModelFairnessAudit,
    pub affected: GroupCounts,
    pub autoencoder_error: f64,
    pub populations: Vec<PopulationReport>,
}

impl FairnessReport {
    pub fn population(&self, name: &str) -> Option<&PopulationReport> {
        self.populations.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        to_rounded_json(self)
    }

    /// Recomputes PD, ASR and AD from the primaries stored in the report.
    pub fn check_consistency(&self) -> Result<()> {
        for p in &self.populations {
            let Some(r) = &p.result else { continue };
            let bad = |what: &str| Err(Error::Contract(format!("{}: {what} does not match its primaries", p.name)));
            if (round_dp((r.sr[0] - r.sr[1]).abs(), RATE_PLACES) - r.pd).abs() > CONSISTENCY_TOL {
                return bad("PD");
            }
            if (round_dp((r.sr[0] + r.sr[1]) / 2.0, RATE_PLACES) - r.asr).abs() > CONSISTENCY_TOL {
                return bad("ASR");
            }
            if r.action_counts[0].abs_diff(r.action_counts[1]) != r.ad {
                return bad("AD");
            }
        }
        Ok(())
    }

    /// Success rates in the `[G₀, G₁] (PD)` percentage format.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        let a = &self.audit;
        let _ = writeln!(s, "Scenario: {}  Seed: {}", self.scenario.scenario.name(), self.seed);
        let _ = writeln!(
            s,
            "Model audit: DP {:.4}  EO {:.4}  accuracy {:.4}",
            a.dp_difference, a.eo_difference, a.accuracy
        );
        let _ = writeln!(
            s,
            "Affected: {} (G0 {}, G1 {})",
            self.affected.total, self.affected.group0, self.affected.group1
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10} {:>6}  {:<26} {:<16} {:>6} {:>8}  Stop",
            "Population", "Size", "SR % [G0, G1] (PD)", "Actions (AD)", "Active", "Gower"
        );
        for p in &self.populations {
            match (&p.result, &p.skipped) {
                (Some(r), _) => {
                    let sr = format!(
                        "[{:.2}, {:.2}] ({:.2})",
                        100.0 * r.sr[0],
                        100.0 * r.sr[1],
                        100.0 * r.pd
                    );
                    let acts = format!("[{}, {}] ({})", r.action_counts[0], r.action_counts[1], r.ad);
                    let _ = writeln!(
                        s,
                        "{:<10} {:>6}  {:<26} {:<16} {:>6} {:>8.4}  {}",
                        p.name,
                        p.size,
                        sr,
                        acts,
                        r.active_actions,
                        r.mean_gower,
                        if r.stopping_met { "yes" } else { "no" }
                    );
                }
                (None, reason) => {
                    let _ = writeln!(
                        s,
                        "{:<10} {:>6}  skipped: {}",
                        p.name,
                        p.size,
                        reason.as_deref().unwrap_or("not evaluated")
                    );
                }
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10} {:<5} {:>6} {:>9} {:>13} {:>11} {:>11} {:>11}",
            "CF quality", "Group", "Count", "Validity", "Plausibility", "Similarity", "Minimality", "Actionable"
        );
        for p in &self.populations {
            let Some(r) = &p.result else { continue };
            for (g, q) in r.cf_quality.iter().enumerate() {
                match q {
                    Some(q) => {
                        let _ = writeln!(
                            s,
                            "{:<10} {:<5} {:>6} {:>9.4} {:>13.4} {:>11.4} {:>11.2} {:>11}",
                            p.name,
                            format!("G{g}"),
                            q.count,
                            q.validity,
                            q.plausibility,
                            q.similarity,
                            q.minimality,
                            if q.actionability { "yes" } else { "no" }
                        );
                    }
                    None => {
                        let _ = writeln!(s, "{:<10} {:<5} {:>6}  no counterfactuals", p.name, format!("G{g}"), 0);
                    }
                }
            }
        }
        s
    }
}

fn polyline(points: &[(f64, f64)], x0: f64, y0: f64, w: f64, h: f64) -> (String, f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, y) in points {
        lo = lo.min(y);
        hi = hi.max(y);
    }
    if !lo.is_finite() {
        return (String::new(), 0.0, 0.0);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let xmax = points.last().map_or(1.0, |p| p.0).max(1.0);
    let xmin = points.first().map_or(0.0, |p| p.0);
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let mut s = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let px = x0 + (x - xmin) / xspan * w;
        let py = y0 + h - (y - lo) / span * h;
        let _ = write!(s, "{}{px:.2},{py:.2}", if i == 0 { "" } else { " " });
    }
    (s, lo, hi)
}

/// Two stacked line charts: episode reward mean and entropy coefficient
/// against environment steps.
pub fn trace_svg(trace: &TrainingTrace, title: &str) -> String {
    let (width, panel_h, left, top) = (640.0, 200.0, 70.0, 40.0);
    let plot_w = width - left - 20.0;
    let mut s = String::new();
    let total_h = top + 2.0 * (panel_h + 50.0);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" viewBox="0 0 {width} {total_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    type Series<'a> = (&'a str, Vec<(f64, f64)>, &'a str);
    let series: [Series; 2] = [
        (
            "episode reward mean",
            trace.rows.iter().map(|r| (r.step as f64, r.episode_reward_mean)).collect(),
            "#1f77b4",
        ),
        (
            "entropy coefficient",
            trace.rows.iter().map(|r| (r.step as f64, r.entropy_coefficient)).collect(),
            "#d62728",
        ),
    ];
    for (k, (label, pts, colour)) in series.iter().enumerate() {
        let y0 = top + k as f64 * (panel_h + 50.0);
        let (line, lo, hi) = polyline(pts, left, y0, plot_w, panel_h);
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{y0}" width="{plot_w}" height="{panel_h}" fill="none" stroke="gray"/>"#
        );
        let _ = writeln!(s, r#"<text x="{left}" y="{}">{label}</text>"#, y0 - 6.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{hi:.4}</text>"#,
            left - 4.0,
            y0 + 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{lo:.4}</text>"#,
            left - 4.0,
            y0 + panel_h
        );
        let last_step = pts.last().map_or(0.0, |p| p.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">step {last_step}</text>"#,
            left + plot_w,
            y0 + panel_h + 14.0
        );
        if !line.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{line}"/>"#
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
