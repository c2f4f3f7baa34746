//! Search reports: a versioned TOML document echoing the full configuration,
//! the derived selection, latencies, and metrics, plus CSV emitters for
//! trajectories and standalone metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{SearchConfig, SearchOutcome, TrajectoryPoint};
use crate::supernet::{OpChoice, Selection, SupernetConfig};
use crate::teacher::TeacherConfig;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub retrain_auc: f64,
    pub teacher_auc: f64,
    pub recall: f64,
}

/// Everything needed to reproduce and interpret one search run, given the
/// dataset it ran on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchReport {
    pub version: u32,
    pub seed: u64,
    pub selected_features: Vec<usize>,
    /// Operator per Mixop: `mlp:<width>` or `zero`.
    pub selected_operators: Vec<String>,
    pub theta: Vec<f64>,
    pub strengths: Vec<Vec<f64>>,
    pub feature_latency_ms: f64,
    pub arch_latency_ms: f64,
    pub metrics: Metrics,
    pub teacher: TeacherConfig,
    pub supernet: SupernetConfig,
    pub search: SearchConfig,
}

pub fn op_string(op: OpChoice) -> String {
    match op {
        OpChoice::Mlp(w) => format!("mlp:{w}"),
        OpChoice::Zero => "zero".into(),
    }
}

pub fn parse_op(s: &str) -> Result<OpChoice> {
    if s == "zero" {
        return Ok(OpChoice::Zero);
    }
    s.strip_prefix("mlp:")
        .and_then(|w| w.parse().ok())
        .map(OpChoice::Mlp)
        .ok_or_else(|| Error::Config(format!("bad operator string {s:?}")))
}

impl SearchReport {
    pub fn selection(&self) -> Result<Selection> {
        Ok(Selection {
            feature_ids: self.selected_features.clone(),
            operators: self
                .selected_operators
                .iter()
                .map(|s| parse_op(s))
                .collect::<Result<_>>()?,
        })
    }
}

pub fn build_report(
    outcome: &SearchOutcome,
    teacher: &TeacherConfig,
    supernet: &SupernetConfig,
    search: &SearchConfig,
) -> SearchReport {
    SearchReport {
        version: REPORT_VERSION,
        seed: search.seed,
        selected_features: outcome.selection.feature_ids.clone(),
        selected_operators: outcome
            .selection
            .operators
            .iter()
            .map(|&op| op_string(op))
            .collect(),
        theta: outcome.theta.clone(),
        strengths: outcome.strengths.clone(),
        feature_latency_ms: outcome.feature_latency_ms,
        arch_latency_ms: outcome.arch_latency_ms,
        metrics: Metrics {
            retrain_auc: outcome.retrain_auc,
            teacher_auc: outcome.teacher_auc,
            recall: outcome.recall,
        },
        teacher: teacher.clone(),
        supernet: supernet.clone(),
        search: search.clone(),
    }
}

/// TOML with fields in declaration order; identical reports are byte-identical
/// on disk.
pub fn write_report(path: &Path, report: &SearchReport) -> Result<()> {
    let s =
        toml::to_string(report).map_err(|e| Error::Config(format!("report serialize: {e}")))?;
    fs::write(path, s)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<SearchReport> {
    let text = fs::read_to_string(path)?;
    let report: SearchReport =
        toml::from_str(&text).map_err(|e| Error::Config(format!("report parse: {e}")))?;
    if report.version != REPORT_VERSION {
        return Err(Error::Config(format!(
            "unsupported report version {} (expected {REPORT_VERSION})",
            report.version
        )));
    }
    Ok(report)
}

/// θ and strength time series: one row per sampled step.
pub fn write_trajectory_csv(path: &Path, trajectory: &[TrajectoryPoint]) -> Result<()> {
    let mut s = String::new();
    if let Some(first) = trajectory.first() {
        s.push_str("step,loss");
        for i in 0..first.theta.len() {
            s.push_str(&format!(",theta_{i}"));
        }
        for (r, row) in first.strengths.iter().enumerate() {
            for k in 0..row.len() {
                s.push_str(&format!(",strength_{r}_{k}"));
            }
        }
        s.push('\n');
    }
    for p in trajectory {
        s.push_str(&format!("{},{}", p.step, p.loss));
        for t in &p.theta {
            s.push_str(&format!(",{t}"));
        }
        for row in &p.strengths {
            for v in row {
                s.push_str(&format!(",{v}"));
            }
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// `metric,name,value` rows.
pub fn write_metrics_csv(path: &Path, rows: &[(String, String, f64)]) -> Result<()> {
    let mut s = String::from("metric,name,value\n");
    for (metric, name, value) in rows {
        s.push_str(&format!("{metric},{name},{value}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Human-readable summary with the selected architecture drawn as a chain.
pub fn render_report(report: &SearchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("search report (seed {})\n", report.seed));
    out.push_str(&format!(
        "selected features ({}): {}\n",
        report.selected_features.len(),
        report
            .selected_features
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    let mut chain = vec!["input".to_string()];
    for op in &report.selected_operators {
        if op != "zero" {
            chain.push(op.replace("mlp:", "MLP(") + ")");
        }
    }
    chain.push("logit".into());
    out.push_str(&format!("architecture: {}\n", chain.join(" -> ")));
    let dropped = report.selected_operators.iter().filter(|o| *o == "zero").count();
    if dropped > 0 {
        out.push_str(&format!("({dropped} Mixop(s) collapsed to zero)\n"));
    }
    out.push_str(&format!(
        "latency: features {:.4} ms, architecture {:.4} ms\n",
        report.feature_latency_ms, report.arch_latency_ms
    ));
    out.push_str(&format!(
        "metrics: retrain AUC {:.4}, teacher AUC {:.4}, recall {:.4}\n",
        report.metrics.retrain_auc, report.metrics.teacher_auc, report.metrics.recall
    ));
    out
}
