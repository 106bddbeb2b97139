//! Evaluation protocols: two-fold cross-validation, the model × loss grid,
//! zero-shot language holdout, and dataset ablation.
//!
//! Every protocol checks its own invariants (no train/eval overlap, exact
//! coverage, holdout purity) and returns [`ExperimentError::ProtocolViolation`]
//! if one fails.

mod persist;
mod table;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use persist::{
    load_cell_records, load_results, run_plan, write_ablation, write_cross_validation, write_zero_shot,
    render_zero_shot, AblationSummary, CellSummary, ManifestOfRecord, PlanOutcome, ResultsIndex, ZeroShotSummary,
    MANIFEST_OF_RECORD, PREDICTIONS_FILE,
    RESULTS_FILE,
};
pub use table::{ComparisonRow, ComparisonTable};

use crate::corpus::{adapter::sha256_hex, split_folds, subsample_per_dataset, AnnotatedInstance, Corpus, CorpusError, Fold, Granularity};
use crate::losses::{LossConfig, LossKind, RobustConfig, SmallBatchFallback};
use crate::metrics::{evaluate_all, evaluate_grouped, GroupBy, GroupMetrics, MetricsError, MetricsReport, PredictionRecord, COLUMN_LABELS};
use crate::model::{EncoderFamily, ModelError, VaModel};
use crate::trainer::{train_on, ModelSettings, TrainConfig, TrainError, TrainedModel, TrainingLog};

pub const DESK_MAX_PER_DATASET: usize = 200;
pub const DESK_EPOCHS: usize = 2;
/// Peak learning rate of the desk profile; the small fixture needs a much
/// larger step than the full-corpus recipe to learn within two epochs.
pub const DESK_LEARNING_RATE: f64 = 5e-3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("holdout languages {0:?} have no instances in the corpus")]
    EmptyHoldout(Vec<String>),
    #[error("unknown dataset id `{0}`")]
    UnknownDatasetId(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    #[default]
    Full,
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(format!("unknown scale `{other}` (expected desk or full)")),
        }
    }
}

/// Architecture overrides, mainly for fast tests with small encoders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_buckets: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sequence_length: Option<usize>,
}

/// Training settings that override the scale profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_batch_fallback: Option<SmallBatchFallback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
}

fn all_families() -> Vec<EncoderFamily> {
    EncoderFamily::ALL.to_vec()
}

fn all_losses() -> Vec<LossKind> {
    LossKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    /// Merged corpus file (JSON lines).
    pub corpus: PathBuf,
    #[serde(default = "all_families")]
    pub models: Vec<EncoderFamily>,
    #[serde(default = "all_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_languages: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_datasets: Option<BTreeSet<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub training: TrainingOverrides,
    /// Also write each fold's predictor artifact.
    #[serde(default)]
    pub save_models: bool,
}

impl ExperimentPlan {
    pub fn new(name: impl Into<String>, corpus: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            corpus: corpus.into(),
            models: all_families(),
            losses: all_losses(),
            holdout_languages: None,
            excluded_datasets: None,
            seed: 0,
            scale: Scale::Full,
            training: TrainingOverrides::default(),
            save_models: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidPlan(m.to_string()));
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad("name must be a plain directory name");
        }
        if self.models.is_empty() {
            return bad("at least one model family is required");
        }
        if self.losses.is_empty() {
            return bad("at least one loss kind is required");
        }
        Ok(())
    }

    /// Model families after the scale profile is applied.
    pub fn resolved_models(&self) -> Vec<EncoderFamily> {
        match self.scale {
            Scale::Desk => vec![EncoderFamily::DistilledBase],
            Scale::Full => dedup(&self.models),
        }
    }

    pub fn resolved_losses(&self) -> Vec<LossKind> {
        dedup(&self.losses)
    }

    pub fn model_settings(&self, family: EncoderFamily) -> ModelSettings {
        let mut settings = ModelSettings::for_family(family);
        if let Some(arch) = &self.training.architecture {
            if let Some(d) = arch.hidden_size {
                if d != family.hidden_size() {
                    settings.checkpoint_id = format!("{}-d{d}", family.as_str());
                    settings.family = Some(family);
                    settings.hidden_size = Some(d);
                }
            }
            settings.vocab_buckets = arch.vocab_buckets;
            settings.attention_size = arch.attention_size;
            settings.max_sequence_length = arch.max_sequence_length;
        }
        settings
    }

    /// Training recipe for one grid cell. `fold_to_train` is set per run.
    pub fn train_config(&self, family: EncoderFamily, loss: LossKind) -> TrainConfig {
        let mut loss_config = LossConfig::new(loss);
        if let Some(r) = &self.training.robust {
            loss_config.robust = r.clone();
        }
        if let Some(f) = self.training.small_batch_fallback {
            loss_config.small_batch_fallback = f;
        }
        let mut c = TrainConfig::new(self.model_settings(family), loss_config);
        c.seed = self.seed;
        if self.scale == Scale::Desk {
            c.epochs = DESK_EPOCHS;
            c.learning_rate = DESK_LEARNING_RATE;
        }
        let o = &self.training;
        c.batch_size = o.batch_size.unwrap_or(c.batch_size);
        c.epochs = o.epochs.unwrap_or(c.epochs);
        c.learning_rate = o.learning_rate.unwrap_or(c.learning_rate);
        c.warmup_ratio = o.warmup_ratio.unwrap_or(c.warmup_ratio);
        c
    }

    /// Applies the scale profile's subsampling and assigns folds to any
    /// instance that has none.
    pub fn prepare_corpus(&self, corpus: &Corpus) -> Corpus {
        let corpus = match self.scale {
            Scale::Desk => subsample_per_dataset(corpus, DESK_MAX_PER_DATASET, self.seed),
            Scale::Full => corpus.clone(),
        };
        if corpus.iter().any(|i| i.fold == Fold::Unassigned) {
            split_folds(&corpus, self.seed)
        } else {
            corpus
        }
    }
}

fn dedup<T: PartialEq + Copy>(items: &[T]) -> Vec<T> {
    let mut out = Vec::new();
    for &x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// SHA-256 over `instance_id<TAB>fold` lines.
pub fn fold_assignment_hash(corpus: &Corpus) -> String {
    let mut buf = String::new();
    for i in corpus.iter() {
        buf.push_str(&i.instance_id);
        buf.push('\t');
        buf.push_str(i.fold.as_str());
        buf.push('\n');
    }
    sha256_hex(buf.as_bytes())
}

/// Outcome of the invariant checks for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub leakage_free: bool,
    pub coverage_exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_pure: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_absent: Option<bool>,
    pub fold_assignment_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub trained_on: Fold,
    pub train_size: usize,
    pub predicted: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub fallback_events: u64,
    pub truncation_events: u64,
    pub wall_seconds: f64,
}

impl FoldRun {
    fn of(fold: Fold, trained: &TrainedModel, predicted: usize) -> Self {
        Self {
            trained_on: fold,
            train_size: trained.train_ids.len(),
            predicted,
            steps: trained.log.steps.len(),
            final_loss: trained.log.final_loss(),
            alpha: trained.alpha,
            fallback_events: trained.log.fallback_events,
            truncation_events: trained.log.truncation_events,
            wall_seconds: trained.log.wall_seconds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossValidationResult {
    pub model: EncoderFamily,
    pub loss: LossKind,
    pub config: TrainConfig,
    pub records: Vec<PredictionRecord>,
    pub folds: Vec<FoldRun>,
    pub logs: Vec<TrainingLog>,
    pub models: Vec<VaModel>,
    pub global: GroupMetrics,
    pub protocol: ProtocolReport,
}

impl CrossValidationResult {
    pub fn report(&self, group_by: GroupBy) -> Result<MetricsReport, MetricsError> {
        evaluate_grouped(&self.records, group_by)
    }
}

fn predict_records(model: &VaModel, items: &[&AnnotatedInstance]) -> Result<Vec<PredictionRecord>, ModelError> {
    let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
    let preds = model.predict_batch(&texts)?;
    Ok(items
        .iter()
        .zip(preds)
        .map(|(i, p)| PredictionRecord {
            instance_id: i.instance_id.clone(),
            dataset_id: i.dataset_id.clone(),
            language: i.language.clone(),
            granularity: i.granularity,
            fold: i.fold,
            gold_v: i.valence,
            gold_a: i.arousal,
            pred_v: p.valence,
            pred_a: p.arousal,
        })
        .collect())
}

fn violation(msg: String) -> ExperimentError {
    log::error!("protocol violation: {msg}");
    ExperimentError::ProtocolViolation(msg)
}

/// Ids seen in any logged training batch.
fn batch_ids(log: &TrainingLog) -> HashSet<&str> {
    log.steps
        .iter()
        .flat_map(|s| s.batch_ids.iter().map(String::as_str))
        .collect()
}

/// Trains on fold A and predicts fold B, then the reverse; metrics are
/// computed once over the concatenated predictions.
pub fn run_cross_validation(
    corpus: &Corpus,
    plan: &ExperimentPlan,
    model: EncoderFamily,
    loss: LossKind,
) -> Result<CrossValidationResult, ExperimentError> {
    run_cross_validation_with(corpus, plan.train_config(model, loss), model, loss, plan.save_models)
}

fn run_cross_validation_with(
    corpus: &Corpus,
    config: TrainConfig,
    model: EncoderFamily,
    loss: LossKind,
    keep_models: bool,
) -> Result<CrossValidationResult, ExperimentError> {
    if let Some(i) = corpus.iter().find(|i| i.fold == Fold::Unassigned) {
        return Err(ExperimentError::InvalidPlan(format!("instance {} has no fold", i.instance_id)));
    }
    let mut records = Vec::with_capacity(corpus.len());
    let mut folds = Vec::new();
    let mut logs = Vec::new();
    let mut models = Vec::new();
    for fold in [Fold::A, Fold::B] {
        let train: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| i.fold == fold).collect();
        let eval: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| i.fold == fold.other()).collect();
        let mut c = config.clone();
        c.fold_to_train = fold;
        log::info!("{} / {}: training on fold {fold} ({} instances)", model, loss, train.len());
        let trained = train_on(&train, &c)?;
        let predicted = predict_records(&trained.model, &eval)?;

        let seen: HashSet<&str> = trained.train_ids.iter().map(String::as_str).collect();
        let in_batches = batch_ids(&trained.log);
        if let Some(r) = predicted
            .iter()
            .find(|r| seen.contains(r.instance_id.as_str()) || in_batches.contains(r.instance_id.as_str()))
        {
            return Err(violation(format!(
                "{} predicted by the model trained on fold {fold}, which saw it",
                r.instance_id
            )));
        }
        folds.push(FoldRun::of(fold, &trained, predicted.len()));
        records.extend(predicted);
        logs.push(trained.log);
        if keep_models {
            models.push(trained.model);
        }
    }
    check_coverage(corpus, &records)?;
    let global = evaluate_all(&records)?;
    Ok(CrossValidationResult {
        model,
        loss,
        config,
        records,
        folds,
        logs,
        models,
        global,
        protocol: ProtocolReport {
            leakage_free: true,
            coverage_exact: true,
            holdout_pure: None,
            excluded_absent: None,
            fold_assignment_sha256: fold_assignment_hash(corpus),
        },
    })
}

fn check_coverage(corpus: &Corpus, records: &[PredictionRecord]) -> Result<(), ExperimentError> {
    let mut counts: HashMap<&str, usize> = corpus.iter().map(|i| (i.instance_id.as_str(), 0)).collect();
    for r in records {
        match counts.get_mut(r.instance_id.as_str()) {
            Some(c) => *c += 1,
            None => return Err(violation(format!("{} is not in the corpus", r.instance_id))),
        }
    }
    if let Some((id, n)) = counts.iter().find(|(_, &n)| n != 1) {
        return Err(violation(format!("{id} evaluated {n} times")));
    }
    Ok(())
}

#[derive(Debug)]
pub enum CellOutcome {
    Completed(Box<CrossValidationResult>),
    Failed(String),
}

#[derive(Debug)]
pub struct GridCell {
    pub model: EncoderFamily,
    pub loss: LossKind,
    pub outcome: CellOutcome,
}

impl GridCell {
    pub fn result(&self) -> Option<&CrossValidationResult> {
        match &self.outcome {
            CellOutcome::Completed(r) => Some(r),
            CellOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn table(&self) -> ComparisonTable {
        ComparisonTable::from_cells(&self.cells)
    }

    pub fn cell(&self, model: EncoderFamily, loss: LossKind) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.model == model && c.loss == loss)
    }
}

/// One cross-validation per (model, loss) pair; a failing cell is recorded
/// and the rest continue.
pub fn run_grid(corpus: &Corpus, plan: &ExperimentPlan) -> Result<GridResult, ExperimentError> {
    plan.validate()?;
    let mut cells = Vec::new();
    for model in plan.resolved_models() {
        for loss in plan.resolved_losses() {
            let outcome = match run_cross_validation(corpus, plan, model, loss) {
                Ok(r) => CellOutcome::Completed(Box::new(r)),
                Err(e @ ExperimentError::ProtocolViolation(_)) => return Err(e),
                Err(e) => {
                    log::warn!("{model} / {loss} failed: {e}");
                    CellOutcome::Failed(e.to_string())
                }
            };
            cells.push(GridCell { model, loss, outcome });
        }
    }
    Ok(GridResult { cells })
}

/// Metrics for one holdout language in the any-input / words / short-texts
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub language: String,
    pub any_input: Option<GroupMetrics>,
    pub words: Option<GroupMetrics>,
    pub short_texts: Option<GroupMetrics>,
}

impl ZeroShotRow {
    pub fn compute(language: &str, records: &[PredictionRecord]) -> Result<Self, MetricsError> {
        let subset = |keep: &dyn Fn(&PredictionRecord) -> bool| -> Result<Option<GroupMetrics>, MetricsError> {
            let rs: Vec<&PredictionRecord> = records.iter().filter(|r| r.language == language && keep(r)).collect();
            if rs.is_empty() {
                Ok(None)
            } else {
                GroupMetrics::compute(language, &rs).map(Some)
            }
        };
        Ok(Self {
            language: language.to_string(),
            any_input: subset(&|_| true)?,
            words: subset(&|r| r.granularity == Granularity::Word)?,
            short_texts: subset(&|r| r.granularity == Granularity::ShortText)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ZeroShotResult {
    pub model: EncoderFamily,
    pub loss: LossKind,
    pub holdout: Vec<String>,
    pub train_size: usize,
    pub records: Vec<PredictionRecord>,
    pub rows: Vec<ZeroShotRow>,
    pub log: TrainingLog,
    pub protocol: ProtocolReport,
}

/// One model trained on both folds of every non-holdout language, evaluated
/// on all instances of the holdout languages.
pub fn run_zero_shot(
    corpus: &Corpus,
    plan: &ExperimentPlan,
    model: EncoderFamily,
    loss: LossKind,
) -> Result<ZeroShotResult, ExperimentError> {
    let holdout: BTreeSet<String> = plan
        .holdout_languages
        .clone()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| ExperimentError::InvalidPlan("zero-shot needs holdout_languages".into()))?;
    let present: BTreeSet<String> = corpus.languages().into_iter().collect();
    let missing: Vec<String> = holdout.difference(&present).cloned().collect();
    if !missing.is_empty() {
        return Err(ExperimentError::EmptyHoldout(missing));
    }
    let train: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| !holdout.contains(&i.language)).collect();
    let eval: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| holdout.contains(&i.language)).collect();
    if train.is_empty() {
        return Err(ExperimentError::InvalidPlan("no training data outside the holdout languages".into()));
    }
    let config = plan.train_config(model, loss);
    let trained = train_on(&train, &config)?;

    let language_of: HashMap<&str, &str> = corpus.iter().map(|i| (i.instance_id.as_str(), i.language.as_str())).collect();
    for id in batch_ids(&trained.log).into_iter().chain(trained.train_ids.iter().map(String::as_str)) {
        if language_of.get(id).is_some_and(|l| holdout.contains(*l)) {
            return Err(violation(format!("holdout instance {id} appeared in a training batch")));
        }
    }
    let records = predict_records(&trained.model, &eval)?;
    let seen: HashSet<&str> = trained.train_ids.iter().map(String::as_str).collect();
    if let Some(r) = records.iter().find(|r| seen.contains(r.instance_id.as_str())) {
        return Err(violation(format!("{} is both trained on and evaluated", r.instance_id)));
    }
    if records.len() != eval.len() {
        return Err(violation("holdout coverage incomplete".into()));
    }
    let rows = holdout
        .iter()
        .map(|l| ZeroShotRow::compute(l, &records))
        .collect::<Result<_, _>>()?;
    Ok(ZeroShotResult {
        model,
        loss,
        holdout: holdout.into_iter().collect(),
        train_size: train.len(),
        records,
        rows,
        log: trained.log,
        protocol: ProtocolReport {
            leakage_free: true,
            coverage_exact: true,
            holdout_pure: Some(true),
            excluded_absent: None,
            fold_assignment_sha256: fold_assignment_hash(corpus),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub baseline: Option<f64>,
    pub ablated: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub excluded: Vec<String>,
    pub reduced: CrossValidationResult,
    pub delta: Vec<DeltaRow>,
}

impl AblationResult {
    pub fn delta_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("metric,baseline,ablated,delta\n");
        for r in &self.delta {
            out.push_str(&format!("{},{},{},{}\n", r.metric, cell(r.baseline), cell(r.ablated), cell(r.delta)));
        }
        out
    }
}

pub fn delta_rows(baseline: &GroupMetrics, ablated: &GroupMetrics) -> Vec<DeltaRow> {
    COLUMN_LABELS
        .iter()
        .zip(baseline.columns().into_iter().zip(ablated.columns()))
        .map(|(label, (b, a))| DeltaRow {
            metric: label.to_string(),
            baseline: b,
            ablated: a,
            delta: b.zip(a).map(|(b, a)| a - b),
        })
        .collect()
}

/// Cross-validation without the excluded datasets, compared against
/// `baseline` (normally the same cell of the full grid).
pub fn run_ablation(
    corpus: &Corpus,
    plan: &ExperimentPlan,
    baseline: &CrossValidationResult,
) -> Result<AblationResult, ExperimentError> {
    let excluded = plan.excluded_datasets.clone().unwrap_or_default();
    let known: BTreeSet<String> = corpus.dataset_ids().into_iter().collect();
    if let Some(id) = excluded.iter().find(|id| !known.contains(*id)) {
        return Err(ExperimentError::UnknownDatasetId(id.clone()));
    }
    let reduced_corpus = corpus.filter(|i| !excluded.contains(&i.dataset_id));
    if reduced_corpus.is_empty() {
        return Err(ExperimentError::InvalidPlan("ablation removes every dataset".into()));
    }
    let mut reduced = run_cross_validation_with(
        &reduced_corpus,
        plan.train_config(baseline.model, baseline.loss),
        baseline.model,
        baseline.loss,
        plan.save_models,
    )?;
    let dataset_of: HashMap<&str, &str> = corpus.iter().map(|i| (i.instance_id.as_str(), i.dataset_id.as_str())).collect();
    let touched = reduced
        .records
        .iter()
        .map(|r| r.dataset_id.as_str())
        .chain(reduced.logs.iter().flat_map(|l| {
            l.steps
                .iter()
                .flat_map(|s| s.batch_ids.iter().filter_map(|id| dataset_of.get(id.as_str()).copied()))
        }))
        .find(|d| excluded.contains(*d));
    if let Some(d) = touched {
        return Err(violation(format!("excluded dataset {d} reached training or evaluation")));
    }
    reduced.protocol.excluded_absent = Some(true);
    let delta = delta_rows(&baseline.global, &reduced.global);
    Ok(AblationResult {
        excluded: excluded.into_iter().collect(),
        reduced,
        delta,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_plan() -> ExperimentPlan {
        let mut plan = ExperimentPlan::new("unit", "unused.jsonl");
        plan.models = vec![EncoderFamily::DistilledBase];
        plan.losses = vec![LossKind::Mse];
        plan.seed = 3;
        plan.training = TrainingOverrides {
            epochs: Some(1),
            learning_rate: Some(1e-2),
            architecture: Some(Architecture {
                hidden_size: Some(16),
                vocab_buckets: Some(257),
                attention_size: Some(8),
                max_sequence_length: Some(16),
            }),
            ..Default::default()
        };
        plan
    }

    pub(crate) fn tiny_corpus() -> Corpus {
        let mut instances = Vec::new();
        for (lang, ds) in [("qa", "d1"), ("qa", "d2"), ("qb", "d3")] {
            for k in 0..21 {
                let v = (k % 7) as f64 / 6.0;
                instances.push(AnnotatedInstance {
                    instance_id: format!("{ds}:{k}"),
                    dataset_id: ds.into(),
                    language: lang.into(),
                    granularity: if k % 3 == 0 { Granularity::ShortText } else { Granularity::Word },
                    text: format!("{lang}{} {lang}x{}", k % 7, k % 2),
                    valence: v,
                    arousal: 0.2 + 0.5 * v * v,
                    fold: Fold::Unassigned,
                });
            }
        }
        split_folds(&Corpus::new(instances), 9)
    }

    #[test]
    fn cross_validation_covers_once_without_leakage() {
        let corpus = tiny_corpus();
        let r = run_cross_validation(&corpus, &tiny_plan(), EncoderFamily::DistilledBase, LossKind::Mse).unwrap();
        assert_eq!(r.records.len(), corpus.len());
        assert!(r.protocol.leakage_free && r.protocol.coverage_exact);
        for f in &r.folds {
            let train: HashSet<_> = corpus.iter().filter(|i| i.fold == f.trained_on).map(|i| &i.instance_id).collect();
            assert!(r.records.iter().filter(|x| x.fold != f.trained_on).all(|x| !train.contains(&x.instance_id)));
        }
        assert!(r.global.all_finite());
    }

    #[test]
    fn grid_of_one_matches_cross_validation() {
        let corpus = tiny_corpus();
        let plan = tiny_plan();
        let grid = run_grid(&corpus, &plan).unwrap();
        assert_eq!(grid.cells.len(), 1);
        let cv = run_cross_validation(&corpus, &plan, EncoderFamily::DistilledBase, LossKind::Mse).unwrap();
        assert_eq!(grid.cells[0].result().unwrap().records, cv.records);
    }

    #[test]
    fn grid_isolates_failing_cells() {
        let corpus = tiny_corpus();
        let mut plan = tiny_plan();
        plan.losses = vec![LossKind::Mse, LossKind::Rl];
        plan.training.robust = Some(RobustConfig { c: -1.0, ..Default::default() });
        let grid = run_grid(&corpus, &plan).unwrap();
        assert!(grid.cells[0].result().is_some());
        assert!(matches!(grid.cells[1].outcome, CellOutcome::Failed(_)));
        assert_eq!(grid.table().rows.len(), 2);
    }

    #[test]
    fn zero_shot_purity_and_errors() {
        let corpus = tiny_corpus();
        let mut plan = tiny_plan();
        plan.holdout_languages = Some(["qb".to_string()].into());
        let z = run_zero_shot(&corpus, &plan, EncoderFamily::DistilledBase, LossKind::Mse).unwrap();
        assert_eq!(z.records.len(), 21);
        assert_eq!(z.train_size, 42);
        assert!(z.records.iter().all(|r| r.language == "qb"));
        let row = &z.rows[0];
        assert_eq!(row.any_input.as_ref().unwrap().n, 21);
        assert_eq!(row.words.as_ref().unwrap().n + row.short_texts.as_ref().unwrap().n, 21);

        plan.holdout_languages = Some(["zz".to_string()].into());
        assert!(matches!(
            run_zero_shot(&corpus, &plan, EncoderFamily::DistilledBase, LossKind::Mse),
            Err(ExperimentError::EmptyHoldout(_))
        ));
    }

    #[test]
    fn ablation_noop_and_exclusion() {
        let corpus = tiny_corpus();
        let mut plan = tiny_plan();
        let base = run_cross_validation(&corpus, &plan, EncoderFamily::DistilledBase, LossKind::Mse).unwrap();
        plan.excluded_datasets = Some(BTreeSet::new());
        let same = run_ablation(&corpus, &plan, &base).unwrap();
        assert_eq!(same.reduced.global, base.global);
        assert!(same.delta.iter().all(|d| d.delta.map_or(true, |x| x == 0.0)));

        plan.excluded_datasets = Some(["d2".to_string()].into());
        let cut = run_ablation(&corpus, &plan, &base).unwrap();
        assert_eq!(cut.reduced.records.len(), 42);
        assert!(cut.reduced.records.iter().all(|r| r.dataset_id != "d2"));
        assert!(cut.delta_csv().starts_with("metric,baseline,ablated,delta\nrho_V,"));

        plan.excluded_datasets = Some(["nope".to_string()].into());
        assert!(matches!(run_ablation(&corpus, &plan, &base), Err(ExperimentError::UnknownDatasetId(_))));
    }

    #[test]
    fn desk_profile() {
        let mut plan = ExperimentPlan::new("p", "c.jsonl");
        plan.scale = Scale::Desk;
        assert_eq!(plan.resolved_models(), [EncoderFamily::DistilledBase]);
        let c = plan.train_config(EncoderFamily::DistilledBase, LossKind::Cccl);
        assert_eq!((c.epochs, c.learning_rate, c.batch_size), (DESK_EPOCHS, DESK_LEARNING_RATE, 16));
        let full = ExperimentPlan::new("p", "c.jsonl");
        let c = full.train_config(EncoderFamily::Large, LossKind::Mse);
        assert_eq!((c.epochs, c.learning_rate, c.warmup_ratio), (10, 6e-6, 0.1));
        assert_eq!(full.resolved_models().len() * full.resolved_losses().len(), 15);
    }

    #[test]
    fn plan_json_defaults() {
        let plan: ExperimentPlan = serde_json::from_str(r#"{"name":"t","corpus":"x.jsonl"}"#).unwrap();
        assert_eq!(plan.models.len(), 3);
        assert_eq!(plan.losses.len(), 5);
        assert_eq!(plan.scale, Scale::Full);
        assert!(ExperimentPlan { name: "../x".into(), ..plan }.validate().is_err());
    }
}
