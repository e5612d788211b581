//! Random-forest feature ranking and threshold-based selection.

mod forest;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, Forest, ForestConfig, SplitRule, Tree, TreeNode};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub importance: f64,
}

/// Importances plus, once [`select`] has run, the chosen features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub importances: Vec<FeatureImportance>,
    pub threshold: f64,
    pub selected: Vec<String>,
    pub forced_included: Vec<String>,
}

impl ImportanceReport {
    /// The model's input list: `selected` followed by `forced_included`.
    pub fn features(&self) -> Vec<String> {
        self.selected.iter().chain(&self.forced_included).cloned().collect()
    }

    pub fn importance(&self, name: &str) -> Option<f64> {
        self.importances.iter().find(|f| f.name == name).map(|f| f.importance)
    }

    /// Reorders the importance entries to follow `names`; entries not listed
    /// keep their relative order at the end.
    pub fn reorder(&mut self, names: &[String]) {
        let pos = |n: &str| names.iter().position(|x| x == n).unwrap_or(usize::MAX);
        self.importances.sort_by_key(|f| pos(&f.name));
    }
}

/// Mean decrease in impurity: each tree's importances are normalised to sum
/// to 1, averaged over the trees that split at least once, and renormalised.
/// A forest without any split yields all zeros.
pub fn importances(forest: &Forest) -> ImportanceReport {
    let n = forest.feature_names.len();
    let mut sum = vec![0.0; n];
    let mut used = 0usize;
    for tree in &forest.trees {
        let raw = tree.raw_importances(n);
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            for (s, r) in sum.iter_mut().zip(&raw) {
                *s += r / total;
            }
            used += 1;
        }
    }
    if used > 0 {
        let total: f64 = sum.iter().sum();
        for s in &mut sum {
            *s /= total;
        }
    }
    ImportanceReport {
        importances: forest
            .feature_names
            .iter()
            .zip(sum)
            .map(|(name, importance)| FeatureImportance {
                name: name.clone(),
                importance,
            })
            .collect(),
        threshold: 0.0,
        selected: Vec::new(),
        forced_included: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Mean,
    Value(f64),
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Threshold::Mean),
            v => v
                .parse()
                .map(Threshold::Value)
                .map_err(|_| Error::Config(format!("selection threshold must be `mean` or a number, got {v:?}"))),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Mean => f.write_str("mean"),
            Threshold::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Keeps features whose importance reaches the threshold, ordered by
/// descending importance with ties in report order, then appends any
/// `force_include` names not already chosen.
pub fn select(report: &ImportanceReport, threshold: Threshold, force_include: &[String]) -> Result<ImportanceReport> {
    if let Some(bad) = force_include.iter().find(|n| report.importance(n).is_none()) {
        return Err(Error::UnknownFeature(bad.clone()));
    }
    let value = match threshold {
        Threshold::Mean if report.importances.is_empty() => 0.0,
        Threshold::Mean => {
            report.importances.iter().map(|f| f.importance).sum::<f64>() / report.importances.len() as f64
        }
        Threshold::Value(v) => v,
    };
    // Absorb rounding so that equal importances all clear a mean threshold.
    let cut = value - 1e-12;
    let mut ranked: Vec<(usize, &FeatureImportance)> = report
        .importances
        .iter()
        .enumerate()
        .filter(|(_, f)| f.importance >= cut)
        .collect();
    ranked.sort_by(|a, b| b.1.importance.total_cmp(&a.1.importance).then(a.0.cmp(&b.0)));
    let selected: Vec<String> = ranked.into_iter().map(|(_, f)| f.name.clone()).collect();
    let mut forced_included = Vec::new();
    for name in force_include {
        if !selected.contains(name) && !forced_included.contains(name) {
            forced_included.push(name.clone());
        }
    }
    Ok(ImportanceReport {
        importances: report.importances.clone(),
        threshold: value,
        selected,
        forced_included,
    })
}
