//! Retrieval metrics and the strategy comparison.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{filter_with, FilterOptions};
use crate::graph::{Store, SysGraph};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground truth for {0}")]
    GroundTruthMissing(String),
    #[error("ground truth names unknown asset `{0}`")]
    UnknownAsset(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::GroundTruthMissing(_) => "GroundTruthMissing",
            EvalError::UnknownAsset(_) => "InvalidGroundTruth",
            EvalError::Io { .. } | EvalError::Csv(_) => "StorageIo",
        }
    }
}

/// Counts and ratios of one retrieval. Undefined ratios (0/0) are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub coverage: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn score<S: AsRef<str> + Ord>(retrieved: &BTreeSet<S>, ground_truth: &BTreeSet<S>) -> RetrievalMetrics {
    let tp = retrieved.intersection(ground_truth).count();
    let fp = retrieved.len() - tp;
    let fn_ = ground_truth.len() - tp;
    RetrievalMetrics {
        tp,
        fp,
        fn_,
        precision: ratio(tp, tp + fp),
        coverage: ratio(tp, tp + fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Word-boundary search of installed product names in descriptions.
    KeywordMatch,
    /// Product and version lookup of each installed component.
    CpeQuery,
    /// Configuration-graph applicability filtering.
    UcpeGraphFiltered,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::KeywordMatch, Strategy::CpeQuery, Strategy::UcpeGraphFiltered];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::KeywordMatch => "keyword-match",
            Strategy::CpeQuery => "cpe-query",
            Strategy::UcpeGraphFiltered => "ucpe-graph-filtered",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Applicable CVE ids per asset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub assets: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let io = |message: String| EvalError::Io {
            path: path.display().to_string(),
            message,
        };
        if !path.exists() {
            return Err(EvalError::GroundTruthMissing(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: Strategy,
    pub asset_id: String,
    #[serde(flatten)]
    pub metrics: RetrievalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub strategy: Strategy,
    pub precision: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<MetricRow>,
    pub averages: Vec<AverageRow>,
}

impl ComparisonTable {
    pub fn average(&self, strategy: Strategy) -> Option<&AverageRow> {
        self.averages.iter().find(|a| a.strategy == strategy)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["strategy", "asset_id", "tp", "fp", "fn", "precision", "coverage"])?;
        for r in &self.rows {
            w.write_record([
                r.strategy.name().to_string(),
                r.asset_id.clone(),
                r.metrics.tp.to_string(),
                r.metrics.fp.to_string(),
                r.metrics.fn_.to_string(),
                format!("{:.6}", r.metrics.precision),
                format!("{:.6}", r.metrics.coverage),
            ])?;
        }
        for a in &self.averages {
            w.write_record([
                a.strategy.name().to_string(),
                "average".to_string(),
                String::new(),
                String::new(),
                String::new(),
                format!("{:.6}", a.precision),
                format!("{:.6}", a.coverage),
            ])?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: "csv output".into(),
            message: e.to_string(),
        })
    }
}

fn words(text: &str) -> String {
    let mut out = String::from(" ");
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with(' ') {
            out.push(' ');
        }
    }
    if !out.ends_with(' ') {
        out.push(' ');
    }
    out
}

/// CVE ids one strategy retrieves for one asset.
pub fn retrieve(store: &Store, sys: &SysGraph, asset_id: &str, strategy: Strategy, tau: f64) -> BTreeSet<String> {
    let Some(asset) = sys.assets.iter().find(|a| a.asset_id == asset_id) else {
        return BTreeSet::new();
    };
    match strategy {
        Strategy::KeywordMatch => {
            let keywords: BTreeSet<String> = asset.components.iter().map(|c| words(&c.product)).collect();
            store
                .vulnerabilities()
                .filter(|v| {
                    let text = words(&v.record.description);
                    keywords.iter().any(|k| text.contains(k.as_str()))
                })
                .map(|v| v.record.cve_id.clone())
                .collect()
        }
        Strategy::CpeQuery => asset
            .components
            .iter()
            .flat_map(|c| store.query_by_product(&c.vendor, &c.product, Some(&c.version), tau))
            .map(|h| h.cve_id)
            .collect(),
        Strategy::UcpeGraphFiltered => {
            let single = SysGraph {
                assets: vec![asset.clone()],
                edges: Vec::new(),
            };
            filter_with(&single, &store.vul_graphs(), FilterOptions { traces: false })
                .applicable
                .into_iter()
                .map(|a| a.cve_id)
                .collect()
        }
    }
}

/// Scores each strategy per ground-truth asset and averages the ratios
/// over assets without weighting.
pub fn run_comparison(
    store: &Store,
    sys: &SysGraph,
    strategies: &[Strategy],
    ground_truth: &GroundTruth,
    tau: f64,
) -> Result<ComparisonTable, EvalError> {
    if ground_truth.assets.is_empty() {
        return Err(EvalError::GroundTruthMissing("every asset".into()));
    }
    if let Some(unknown) = ground_truth
        .assets
        .keys()
        .find(|id| !sys.assets.iter().any(|a| &a.asset_id == *id))
    {
        return Err(EvalError::UnknownAsset(unknown.clone()));
    }
    let mut strategies: Vec<Strategy> = strategies.to_vec();
    strategies.sort();
    strategies.dedup();
    let per_strategy: Vec<(Strategy, Vec<MetricRow>)> = strategies
        .par_iter()
        .map(|&strategy| {
            let rows = ground_truth
                .assets
                .iter()
                .map(|(asset_id, gt)| MetricRow {
                    strategy,
                    asset_id: asset_id.clone(),
                    metrics: score(&retrieve(store, sys, asset_id, strategy, tau), gt),
                })
                .collect();
            (strategy, rows)
        })
        .collect();
    let mut table = ComparisonTable::default();
    for (strategy, rows) in per_strategy {
        let n = rows.len() as f64;
        table.averages.push(AverageRow {
            strategy,
            precision: rows.iter().map(|r| r.metrics.precision).sum::<f64>() / n,
            coverage: rows.iter().map(|r| r.metrics.coverage).sum::<f64>() / n,
        });
        table.rows.extend(rows);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn score_examples() {
        let m = score(&set(&["A", "B", "C"]), &set(&["B", "C", "D"]));
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.coverage - 2.0 / 3.0).abs() < 1e-12);
        let same = score(&set(&["A"]), &set(&["A"]));
        assert_eq!((same.precision, same.coverage), (1.0, 1.0));
        let empty = score(&set(&[]), &set(&["A", "B"]));
        assert_eq!((empty.tp, empty.fp, empty.fn_, empty.precision, empty.coverage), (0, 0, 2, 0.0, 0.0));
    }

    #[test]
    fn metrics_serialize_fn_field() {
        let json = serde_json::to_value(score(&set(&["A"]), &set(&["B"]))).unwrap();
        assert_eq!(json["fn"], 1);
    }

    #[test]
    fn keyword_words_respect_boundaries() {
        assert!(words("Google Chrome, before 8").contains(&words("chrome")));
        assert!(!words("Chromebook firmware").contains(&words("chrome")));
        assert!(words("in ubuntu_linux 22.04").contains(&words("ubuntu linux")));
    }

    proptest! {
        #[test]
        fn score_invariants(r in prop::collection::btree_set(0u8..20, 0..20), g in prop::collection::btree_set(0u8..20, 0..20)) {
            let r: BTreeSet<String> = r.iter().map(|i| format!("CVE-{i}")).collect();
            let g: BTreeSet<String> = g.iter().map(|i| format!("CVE-{i}")).collect();
            let m = score(&r, &g);
            prop_assert_eq!(m.tp + m.fn_, g.len());
            prop_assert_eq!(m.tp + m.fp, r.len());
            prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.coverage));
            let relabel = |s: &BTreeSet<String>| s.iter().map(|x| format!("X{x}")).collect::<BTreeSet<_>>();
            prop_assert_eq!(score(&relabel(&r), &relabel(&g)), m);
        }
    }
}
