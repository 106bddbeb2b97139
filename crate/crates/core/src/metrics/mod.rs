//! MAE, RMSE and Pearson's ρ over prediction records, pooled per group.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Fold, Granularity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptySet,
    #[error("correlation undefined: {0}")]
    ConstantInput(&'static str),
    #[error("duplicate instance id `{0}` in result set")]
    DuplicateRecord(String),
    #[error("unknown group-by key `{0}` (expected dataset, language, granularity or global)")]
    UnknownGroupBy(String),
}

fn check(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    Ok(())
}

pub fn mae(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y)?;
    let mse = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(mse.sqrt())
}

/// Pearson correlation between ground truth `x` and predictions `y`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::ConstantInput("fewer than two pairs"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantInput(if sxx == 0.0 {
            "constant gold values"
        } else {
            "constant predictions"
        }));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One predicted instance, as archived by the evaluation protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub dataset_id: String,
    pub language: String,
    pub granularity: Granularity,
    pub fold: Fold,
    pub gold_v: f64,
    pub gold_a: f64,
    pub pred_v: f64,
    pub pred_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Dataset,
    Language,
    Granularity,
    Global,
}

impl GroupBy {
    pub const ALL: [GroupBy; 4] = [
        GroupBy::Global,
        GroupBy::Granularity,
        GroupBy::Dataset,
        GroupBy::Language,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::Dataset => "dataset",
            GroupBy::Language => "language",
            GroupBy::Granularity => "granularity",
            GroupBy::Global => "global",
        }
    }

    pub fn key(self, record: &PredictionRecord) -> String {
        match self {
            GroupBy::Dataset => record.dataset_id.clone(),
            GroupBy::Language => record.language.clone(),
            GroupBy::Granularity => record.granularity.as_str().to_string(),
            GroupBy::Global => "all".to_string(),
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupBy {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupBy::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| MetricsError::UnknownGroupBy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    /// `None` when the correlation is undefined for this group.
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_undefined: Option<String>,
    pub rmse: f64,
    pub mae: f64,
}

impl DimensionMetrics {
    fn compute(gold: &[f64], pred: &[f64]) -> Result<Self, MetricsError> {
        let (rho, rho_undefined) = match pearson(gold, pred) {
            Ok(r) => (Some(r), None),
            Err(MetricsError::ConstantInput(why)) => (None, Some(why.to_string())),
            Err(e) => return Err(e),
        };
        Ok(Self {
            rho,
            rho_undefined,
            rmse: rmse(gold, pred)?,
            mae: mae(gold, pred)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n: usize,
    pub valence: DimensionMetrics,
    pub arousal: DimensionMetrics,
}

impl GroupMetrics {
    pub fn compute(group: impl Into<String>, records: &[&PredictionRecord]) -> Result<Self, MetricsError> {
        let gv: Vec<f64> = records.iter().map(|r| r.gold_v).collect();
        let pv: Vec<f64> = records.iter().map(|r| r.pred_v).collect();
        let ga: Vec<f64> = records.iter().map(|r| r.gold_a).collect();
        let pa: Vec<f64> = records.iter().map(|r| r.pred_a).collect();
        Ok(Self {
            group: group.into(),
            n: records.len(),
            valence: DimensionMetrics::compute(&gv, &pv)?,
            arousal: DimensionMetrics::compute(&ga, &pa)?,
        })
    }

    /// `[ρ_V, ρ_A, RMSE_V, RMSE_A, MAE_V, MAE_A]`.
    pub fn columns(&self) -> [Option<f64>; 6] {
        [
            self.valence.rho,
            self.arousal.rho,
            Some(self.valence.rmse),
            Some(self.arousal.rmse),
            Some(self.valence.mae),
            Some(self.arousal.mae),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.columns().iter().all(|c| c.map_or(true, f64::is_finite))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub group_by: GroupBy,
    pub groups: Vec<GroupMetrics>,
}

pub const COLUMN_LABELS: [&str; 6] = ["rho_V", "rho_A", "RMSE_V", "RMSE_A", "MAE_V", "MAE_A"];

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

impl MetricsReport {
    pub fn group(&self, key: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == key)
    }

    /// Long format: `group,dimension,rho,rmse,mae,n`, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,dimension,rho,rmse,mae,n\n");
        for g in &self.groups {
            for (dim, m) in [("valence", &g.valence), ("arousal", &g.arousal)] {
                let rho = m.rho.map(|r| r.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{},{},{}", csv_field(&g.group), dim, rho, m.rmse, m.mae, g.n);
            }
        }
        out
    }

    /// Fixed-width table in the `ρ_V ρ_A RMSE_V RMSE_A MAE_V MAE_A` layout.
    pub fn render(&self) -> String {
        let width = self.groups.iter().map(|g| g.group.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$} {:>7}", self.group_by.as_str(), "n");
        for label in COLUMN_LABELS {
            let _ = write!(out, " {label:>7}");
        }
        out.push('\n');
        let mut undefined = false;
        for g in &self.groups {
            let _ = write!(out, "{:<width$} {:>7}", g.group, g.n);
            for c in g.columns() {
                undefined |= c.is_none();
                let _ = write!(out, " {:>7}", fmt_cell(c));
            }
            out.push('\n');
        }
        if undefined {
            out.push_str("n/a: correlation undefined (fewer than two records or constant values)\n");
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Metrics over the pooled records of each group. Groups are sorted by key.
pub fn evaluate_grouped(
    records: &[PredictionRecord],
    group_by: GroupBy,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.instance_id.as_str()) {
            return Err(MetricsError::DuplicateRecord(r.instance_id.clone()));
        }
    }
    let mut groups: BTreeMap<String, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(group_by.key(r)).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|(k, rs)| GroupMetrics::compute(k, &rs))
        .collect::<Result<_, _>>()?;
    Ok(MetricsReport { group_by, groups })
}

/// Pooled metrics over every record.
pub fn evaluate_all(records: &[PredictionRecord]) -> Result<GroupMetrics, MetricsError> {
    let report = evaluate_grouped(records, GroupBy::Global)?;
    Ok(report.groups.into_iter().next().expect("nonempty input has one group"))
}
