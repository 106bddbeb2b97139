//! Results layout: `<root>/<plan name>/<model>_<loss>/` per grid cell, plus
//! `zero_shot/` and `ablation/` subtrees, a comparison table, an index and
//! a manifest-of-record.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    run_ablation, run_grid, run_zero_shot, AblationResult, ComparisonTable, CrossValidationResult, DeltaRow,
    ExperimentError, ExperimentPlan, FoldRun, GridResult, ProtocolReport, Scale, ZeroShotResult, ZeroShotRow,
    fold_assignment_hash,
};
use crate::corpus::{adapter::sha256_hex, Corpus};
use crate::losses::LossKind;
use crate::metrics::{GroupBy, GroupMetrics, MetricsReport, PredictionRecord};
use crate::model::{artifact, EncoderFamily};
use crate::trainer::{TrainConfig, TrainingLog, LOG_FILE};

pub const RESULTS_FILE: &str = "results.json";
pub const MANIFEST_OF_RECORD: &str = "manifest_of_record.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    std::fs::write(path, bytes).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut json = serde_json::to_vec_pretty(value).expect("result types serialize");
    json.push(b'\n');
    write_file(path, json)
}

fn write_records(path: &Path, records: &[PredictionRecord]) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    write_file(path, buf)
}

fn write_log(path: &Path, log: &TrainingLog) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).map_err(io(path))?;
    write_file(path, buf)
}

pub fn cell_dir_name(model: EncoderFamily, loss: LossKind) -> String {
    format!("{}_{}", model.as_str(), loss.slug())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsFile {
    global: GroupMetrics,
    by_dataset: MetricsReport,
    by_language: MetricsReport,
    by_granularity: MetricsReport,
}

/// Predictions, grouped metrics (CSV, text, JSON) and per-fold logs.
pub fn write_cross_validation(dir: &Path, r: &CrossValidationResult) -> Result<(), ExperimentError> {
    write_records(&dir.join(PREDICTIONS_FILE), &r.records)?;
    let file = MetricsFile {
        global: r.global.clone(),
        by_dataset: r.report(GroupBy::Dataset)?,
        by_language: r.report(GroupBy::Language)?,
        by_granularity: r.report(GroupBy::Granularity)?,
    };
    for (key, report) in [
        ("dataset", &file.by_dataset),
        ("language", &file.by_language),
        ("granularity", &file.by_granularity),
    ] {
        write_file(&dir.join(format!("metrics_{key}.csv")), report.to_csv())?;
        write_file(&dir.join(format!("metrics_{key}.txt")), report.render())?;
    }
    write_json(&dir.join("metrics.json"), &file)?;
    write_json(&dir.join("folds.json"), &r.folds)?;
    write_json(&dir.join("train_config.json"), &r.config)?;
    for (k, log) in r.logs.iter().enumerate() {
        let fold = r.folds[k].trained_on;
        write_log(&dir.join(format!("fold_{fold}")).join(LOG_FILE), log)?;
    }
    for (k, model) in r.models.iter().enumerate() {
        let fold = r.folds[k].trained_on;
        artifact::save_predictor(model, &dir.join(format!("fold_{fold}")))?;
    }
    Ok(())
}

pub fn render_zero_shot(rows: &[ZeroShotRow]) -> String {
    let mut out = format!("{:<9} {:<12} {:>6} {:>7} {:>7} {:>7} {:>7}\n", "language", "input", "n", "rho_V", "rho_A", "RMSE_V", "RMSE_A");
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    for row in rows {
        for (label, m) in [("any", &row.any_input), ("words", &row.words), ("short texts", &row.short_texts)] {
            if let Some(m) = m {
                out.push_str(&format!(
                    "{:<9} {:<12} {:>6} {:>7} {:>7} {:>7} {:>7}\n",
                    row.language,
                    label,
                    m.n,
                    cell(m.valence.rho),
                    cell(m.arousal.rho),
                    cell(Some(m.valence.rmse)),
                    cell(Some(m.arousal.rmse)),
                ));
            }
        }
    }
    out
}

pub fn write_zero_shot(dir: &Path, z: &ZeroShotResult) -> Result<(), ExperimentError> {
    write_records(&dir.join(PREDICTIONS_FILE), &z.records)?;
    write_json(&dir.join("zero_shot.json"), &z.rows)?;
    write_file(&dir.join("zero_shot.txt"), render_zero_shot(&z.rows))?;
    write_log(&dir.join(LOG_FILE), &z.log)
}

pub fn write_ablation(dir: &Path, a: &AblationResult) -> Result<(), ExperimentError> {
    write_cross_validation(dir, &a.reduced)?;
    write_file(&dir.join("delta.csv"), a.delta_csv())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: EncoderFamily,
    pub loss: LossKind,
    /// Relative to the plan's results directory.
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GroupMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSummary {
    pub model: EncoderFamily,
    pub loss: LossKind,
    pub dir: String,
    pub holdout: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<ZeroShotRow>,
    /// Trained-on-all rows for the same languages, from the grid cell.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_rows: Vec<ZeroShotRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub model: EncoderFamily,
    pub loss: LossKind,
    pub dir: String,
    pub excluded: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<DeltaRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `results.json`: everything the report command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsIndex {
    pub name: String,
    pub scale: Scale,
    pub grid: Vec<CellSummary>,
    pub comparison: ComparisonTable,
    #[serde(default)]
    pub zero_shot: Vec<ZeroShotSummary>,
    #[serde(default)]
    pub ablation: Vec<AblationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOfRecord {
    pub plan: ExperimentPlan,
    pub plan_sha256: String,
    pub corpus_sha256: String,
    pub corpus_size: usize,
    pub fold_assignment_sha256: String,
    pub train_configs: Vec<TrainConfig>,
    pub library_versions: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn library_versions() -> BTreeMap<String, String> {
    [
        ("affectva", env!("CARGO_PKG_VERSION")),
        ("nalgebra", "0.33"),
        ("ndarray", "0.16"),
        ("rand_chacha", "0.3"),
        ("safetensors", "0.4"),
        ("serde_json", "1"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct PlanOutcome {
    pub dir: PathBuf,
    pub corpus: Corpus,
    pub grid: GridResult,
    pub zero_shot: Vec<(EncoderFamily, LossKind, Result<ZeroShotResult, String>)>,
    pub ablation: Vec<(EncoderFamily, LossKind, Result<AblationResult, String>)>,
    pub index: ResultsIndex,
    pub manifest: ManifestOfRecord,
}

/// Holdout and exclusion sets must name entities present in the corpus.
fn check_references(plan: &ExperimentPlan, corpus: &Corpus) -> Result<(), ExperimentError> {
    if let Some(h) = &plan.holdout_languages {
        let langs: BTreeSet<String> = corpus.languages().into_iter().collect();
        let missing: Vec<String> = h.difference(&langs).cloned().collect();
        if !missing.is_empty() {
            return Err(ExperimentError::EmptyHoldout(missing));
        }
    }
    if let Some(x) = &plan.excluded_datasets {
        let ids: BTreeSet<String> = corpus.dataset_ids().into_iter().collect();
        if let Some(id) = x.iter().find(|id| !ids.contains(*id)) {
            return Err(ExperimentError::UnknownDatasetId(id.clone()));
        }
    }
    Ok(())
}

/// Runs the grid, then zero-shot and ablation for every pair when the plan
/// asks for them, and writes everything under `out_root/<plan.name>/`.
pub fn run_plan(plan: &ExperimentPlan, corpus: &Corpus, out_root: &Path) -> Result<PlanOutcome, ExperimentError> {
    plan.validate()?;
    let started_unix = unix_now();
    let corpus = plan.prepare_corpus(corpus);
    check_references(plan, &corpus)?;
    let dir = out_root.join(&plan.name);
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;

    let grid = run_grid(&corpus, plan)?;
    let mut summaries = Vec::new();
    for cell in &grid.cells {
        let name = cell_dir_name(cell.model, cell.loss);
        let mut s = CellSummary {
            model: cell.model,
            loss: cell.loss,
            dir: name.clone(),
            global: None,
            folds: Vec::new(),
            protocol: None,
            error: None,
        };
        match cell.result() {
            Some(r) => {
                write_cross_validation(&dir.join(&name), r)?;
                s.global = Some(r.global.clone());
                s.folds = r.folds.clone();
                s.protocol = Some(r.protocol.clone());
            }
            None => {
                if let super::CellOutcome::Failed(e) = &cell.outcome {
                    write_json(&dir.join(&name).join("failure.json"), &serde_json::json!({ "error": e }))?;
                    s.error = Some(e.clone());
                }
            }
        }
        summaries.push(s);
    }
    let comparison = grid.table();
    write_file(&dir.join("comparison.csv"), comparison.to_csv())?;
    write_file(&dir.join("comparison.txt"), comparison.render())?;

    let mut zero_shot = Vec::new();
    let mut zs_summaries = Vec::new();
    if plan.holdout_languages.as_ref().is_some_and(|h| !h.is_empty()) {
        for cell in &grid.cells {
            let name = format!("zero_shot/{}", cell_dir_name(cell.model, cell.loss));
            let outcome = run_zero_shot(&corpus, plan, cell.model, cell.loss);
            if let Err(e @ ExperimentError::ProtocolViolation(_)) = outcome {
                return Err(e);
            }
            let mut s = ZeroShotSummary {
                model: cell.model,
                loss: cell.loss,
                dir: name.clone(),
                holdout: plan.holdout_languages.iter().flatten().cloned().collect(),
                rows: Vec::new(),
                reference_rows: Vec::new(),
                error: None,
            };
            if let Some(r) = cell.result() {
                s.reference_rows = s
                    .holdout
                    .iter()
                    .map(|l| ZeroShotRow::compute(l, &r.records))
                    .collect::<Result<_, _>>()?;
            }
            let outcome = match outcome {
                Ok(z) => {
                    write_zero_shot(&dir.join(&name), &z)?;
                    s.rows = z.rows.clone();
                    Ok(z)
                }
                Err(e) => {
                    log::warn!("zero-shot {} / {} failed: {e}", cell.model, cell.loss);
                    s.error = Some(e.to_string());
                    Err(e.to_string())
                }
            };
            zs_summaries.push(s);
            zero_shot.push((cell.model, cell.loss, outcome));
        }
    }

    let mut ablation = Vec::new();
    let mut ab_summaries = Vec::new();
    if plan.excluded_datasets.is_some() {
        for cell in &grid.cells {
            let Some(base) = cell.result() else { continue };
            let name = format!("ablation/{}", cell_dir_name(cell.model, cell.loss));
            let mut s = AblationSummary {
                model: cell.model,
                loss: cell.loss,
                dir: name.clone(),
                excluded: plan.excluded_datasets.iter().flatten().cloned().collect(),
                delta: Vec::new(),
                error: None,
            };
            let outcome = match run_ablation(&corpus, plan, base) {
                Ok(a) => {
                    write_ablation(&dir.join(&name), &a)?;
                    s.delta = a.delta.clone();
                    Ok(a)
                }
                Err(e @ ExperimentError::ProtocolViolation(_)) => return Err(e),
                Err(e) => {
                    s.error = Some(e.to_string());
                    Err(e.to_string())
                }
            };
            ab_summaries.push(s);
            ablation.push((cell.model, cell.loss, outcome));
        }
    }

    let index = ResultsIndex {
        name: plan.name.clone(),
        scale: plan.scale,
        grid: summaries,
        comparison,
        zero_shot: zs_summaries,
        ablation: ab_summaries,
    };
    write_json(&dir.join(RESULTS_FILE), &index)?;
    let manifest = ManifestOfRecord {
        plan: plan.clone(),
        plan_sha256: sha256_hex(&serde_json::to_vec(plan).expect("plan serializes")),
        corpus_sha256: corpus.content_hash(),
        corpus_size: corpus.len(),
        fold_assignment_sha256: fold_assignment_hash(&corpus),
        train_configs: grid
            .cells
            .iter()
            .map(|c| plan.train_config(c.model, c.loss))
            .collect(),
        library_versions: library_versions(),
        started_unix,
        finished_unix: unix_now(),
    };
    write_json(&dir.join(MANIFEST_OF_RECORD), &manifest)?;
    Ok(PlanOutcome {
        dir,
        corpus,
        grid,
        zero_shot,
        ablation,
        index,
        manifest,
    })
}

pub fn load_results(dir: &Path) -> Result<ResultsIndex, ExperimentError> {
    let path = dir.join(RESULTS_FILE);
    let bytes = std::fs::read(&path).map_err(io(&path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ExperimentError::InvalidPlan(format!("{}: {e}", path.display())))
}

/// Prediction records of one results subdirectory.
pub fn load_cell_records(dir: &Path, cell_dir: &str) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let path = dir.join(cell_dir).join(PREDICTIONS_FILE);
    let file = std::fs::File::open(&path).map_err(io(&path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            ExperimentError::InvalidPlan(format!("{} line {}: {e}", path.display(), k + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{tiny_corpus, tiny_plan};
    use super::*;

    #[test]
    fn layout_and_reload() {
        let root = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan();
        plan.holdout_languages = Some(["qb".to_string()].into());
        plan.excluded_datasets = Some(["d1".to_string()].into());
        let out = run_plan(&plan, &tiny_corpus(), root.path()).unwrap();
        let dir = root.path().join("unit");
        for f in [
            "results.json",
            "manifest_of_record.json",
            "comparison.csv",
            "distilled-base_mse/predictions.jsonl",
            "distilled-base_mse/metrics_language.csv",
            "distilled-base_mse/fold_A/training_log.jsonl",
            "zero_shot/distilled-base_mse/zero_shot.txt",
            "ablation/distilled-base_mse/delta.csv",
        ] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let index = load_results(&dir).unwrap();
        assert_eq!(index, out.index);
        let records = load_cell_records(&dir, &index.grid[0].dir).unwrap();
        assert_eq!(records, out.grid.cells[0].result().unwrap().records);
        assert_eq!(out.manifest.corpus_size, 63);
        assert_eq!(index.zero_shot[0].reference_rows.len(), 1);
    }

    #[test]
    fn unknown_references_fail_early() {
        let root = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan();
        plan.excluded_datasets = Some(["zz".to_string()].into());
        assert!(matches!(
            run_plan(&plan, &tiny_corpus(), root.path()),
            Err(ExperimentError::UnknownDatasetId(_))
        ));
        assert!(!root.path().join("unit").exists());
    }
}
