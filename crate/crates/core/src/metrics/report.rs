use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{f1_score, ConfusionMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const SUPPORTED: [&'static str; 3] = ["markdown", "csv", "json"];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::UnsupportedFormat {
                requested: s.to_string(),
                supported: Self::SUPPORTED.to_vec(),
            }),
        }
    }
}

/// Which experiment a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentLabel {
    pub name: String,
    pub feature_selection: bool,
    pub callback: bool,
}

impl ExperimentLabel {
    pub fn new(name: impl Into<String>, feature_selection: bool, callback: bool) -> Self {
        Self {
            name: name.into(),
            feature_selection,
            callback,
        }
    }
}

impl fmt::Display for ExperimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = |on: bool| if on { "w/" } else { "w/o" };
        write!(
            f,
            "{} ({} FE & {} Callback)",
            self.name,
            w(self.feature_selection),
            w(self.callback)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub training_seconds: f64,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub normal: ClassMetrics,
    pub attack: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: ExperimentLabel,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub degenerate: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: PerClass,
    pub training_seconds: f64,
    pub inference_seconds: f64,
    pub total_weights: usize,
}

impl MetricsReport {
    /// Copy with timing fields zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self {
            training_seconds: 0.0,
            inference_seconds: 0.0,
            ..self.clone()
        }
    }

    /// `(row label, formatted value)` pairs shared by every text rendering.
    fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("Accuracy(%)", format!("{:.2}", 100.0 * self.accuracy)),
            ("Precision", format!("{:.4}", self.precision)),
            ("Recall", format!("{:.4}", self.recall)),
            ("F1-Score", format!("{:.4}", self.f1)),
            ("AUC ROC Score", format!("{:.4}", self.auc_roc)),
            ("Training Time (seconds)", format!("{:.2}", self.training_seconds)),
            ("Inference Time (seconds)", format!("{:.2}", self.inference_seconds)),
            ("Total Model Weights", self.total_weights.to_string()),
            ("True Positives", self.confusion.true_pos.to_string()),
            ("False Positives", self.confusion.false_pos.to_string()),
            ("True Negatives", self.confusion.true_neg.to_string()),
            ("False Negatives", self.confusion.false_neg.to_string()),
            ("Normal Precision", format!("{:.4}", self.per_class.normal.precision)),
            ("Normal Recall", format!("{:.4}", self.per_class.normal.recall)),
            ("Normal F1-Score", format!("{:.4}", self.per_class.normal.f1)),
            ("Attack Precision", format!("{:.4}", self.per_class.attack.precision)),
            ("Attack Recall", format!("{:.4}", self.per_class.attack.recall)),
            ("Attack F1-Score", format!("{:.4}", self.per_class.attack.f1)),
        ]
    }
}

fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let (p, r) = (cm.precision(), cm.recall());
    ClassMetrics {
        precision: p.value,
        recall: r.value,
        f1: f1_score(p, r).value,
        support: cm.true_pos + cm.false_neg,
    }
}

pub fn build_report(
    cm: ConfusionMatrix,
    auc: f64,
    timings: Timings,
    total_weights: usize,
    experiment: ExperimentLabel,
) -> MetricsReport {
    let metrics = [
        ("accuracy", cm.accuracy()),
        ("precision", cm.precision()),
        ("recall", cm.recall()),
        ("f1", cm.f1()),
    ];
    MetricsReport {
        experiment,
        accuracy: metrics[0].1.value,
        precision: metrics[1].1.value,
        recall: metrics[2].1.value,
        f1: metrics[3].1.value,
        auc_roc: auc,
        degenerate: metrics
            .iter()
            .filter(|(_, m)| m.degenerate)
            .map(|(n, _)| n.to_string())
            .collect(),
        confusion: cm,
        per_class: PerClass {
            normal: class_metrics(&cm.flipped()),
            attack: class_metrics(&cm),
        },
        training_seconds: timings.training_seconds,
        inference_seconds: timings.inference_seconds,
        total_weights,
    }
}

pub fn render(report: &MetricsReport, format: &str) -> Result<String> {
    render_comparison(std::slice::from_ref(report), format)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Side-by-side table with one column per report.
pub fn render_comparison(reports: &[MetricsReport], format: &str) -> Result<String> {
    let format: ReportFormat = format.parse()?;
    if format == ReportFormat::Json {
        let value = if reports.len() == 1 {
            serde_json::to_string_pretty(&reports[0])
        } else {
            serde_json::to_string_pretty(reports)
        };
        return value
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::json("metrics report", e));
    }
    let header: Vec<String> = reports.iter().map(|r| r.experiment.to_string()).collect();
    let rows: Vec<Vec<(&str, String)>> = reports.iter().map(MetricsReport::rows).collect();
    let n_rows = rows.first().map_or(0, Vec::len);
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Metric |");
            for h in &header {
                out.push_str(&format!(" {h} |"));
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(header.len()));
            out.push('\n');
            for i in 0..n_rows {
                out.push_str(&format!("| {} |", rows[0][i].0));
                for r in &rows {
                    out.push_str(&format!(" {} |", r[i].1));
                }
                out.push('\n');
            }
        }
        ReportFormat::Csv => {
            out.push_str("metric");
            for h in &header {
                out.push(',');
                out.push_str(&csv_field(h));
            }
            out.push('\n');
            for i in 0..n_rows {
                out.push_str(&csv_field(rows[0][i].0));
                for r in &rows {
                    out.push(',');
                    out.push_str(&r[i].1);
                }
                out.push('\n');
            }
        }
        ReportFormat::Json => unreachable!(),
    }
    Ok(out)
}
