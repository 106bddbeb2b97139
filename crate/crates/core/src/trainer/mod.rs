//! Fine-tuning of encoder and head on one fold, with AdamW and a linear
//! warmup/decay schedule.

mod optim;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use optim::{AdamW, AdamWConfig};

use crate::corpus::{AnnotatedInstance, Corpus, Fold};
use crate::losses::{LossConfig, LossError, LossEvaluator, LossKind, VaBatch};
use crate::model::{
    artifact, EncoderFamily, EncoderSpec, ForwardPass, ModelError, ModelGrads, VaModel,
    DEFAULT_HARD_SIGMOID_SLOPE,
};

pub const LOG_FILE: &str = "training_log.jsonl";
pub const CONFIG_FILE: &str = "train_config.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("fold {0} has no training instances")]
    EmptyFold(Fold),
    #[error("non-finite loss at step {step}; batch: {batch_ids:?}")]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },
    #[error(
        "estimated memory {estimated_mb:.0} MB exceeds budget {budget_mb:.0} MB; {}",
        match suggested_accumulation_steps {
            Some(k) => format!("try gradient_accumulation_steps = {k}"),
            None => "gradient accumulation alone cannot fit this model; reduce vocab_buckets or hidden size".to_string(),
        }
    )]
    OutOfMemoryGuidance {
        estimated_mb: f64,
        budget_mb: f64,
        suggested_accumulation_steps: Option<usize>,
    },
    #[error("gradient accumulation is not supported for {0}: the concordance term is not a per-instance mean")]
    AccumulationUnsupportedForBatchLoss(LossKind),
    #[error("micro-batch sizes sum to {actual}, expected {expected}")]
    MicroBatchSizes { expected: usize, actual: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which encoder to start from. `checkpoint_id` is a registered id, a
/// family tag, or a saved predictor directory. The optional fields
/// override the registered architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub checkpoint_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<EncoderFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sequence_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_buckets: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_size: Option<usize>,
    #[serde(default = "default_slope")]
    pub hard_sigmoid_slope: f64,
}

fn default_slope() -> f64 {
    DEFAULT_HARD_SIGMOID_SLOPE
}

impl ModelSettings {
    pub fn for_family(family: EncoderFamily) -> Self {
        Self {
            checkpoint_id: family.checkpoint_id().to_string(),
            family: None,
            hidden_size: None,
            max_sequence_length: None,
            vocab_buckets: None,
            attention_size: None,
            hard_sigmoid_slope: DEFAULT_HARD_SIGMOID_SLOPE,
        }
    }

    pub fn spec(&self) -> Result<EncoderSpec, ModelError> {
        let mut spec = match EncoderSpec::from_registry(&self.checkpoint_id) {
            Ok(spec) => spec,
            Err(e) => match (self.family, self.hidden_size) {
                (Some(family), Some(hidden_size)) => EncoderSpec {
                    checkpoint_id: self.checkpoint_id.clone(),
                    hidden_size,
                    ..EncoderSpec::for_family(family)
                },
                _ => return Err(e),
            },
        };
        if let Some(n) = self.max_sequence_length {
            spec.max_sequence_length = n;
        }
        if let Some(n) = self.vocab_buckets {
            spec.vocab_buckets = n;
        }
        if let Some(n) = self.attention_size {
            spec.attention_size = n;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Initial model; the head is seeded from `seed`.
    pub fn build(&self, seed: u64) -> Result<VaModel, ModelError> {
        let path = Path::new(&self.checkpoint_id);
        let mut model = if path.join(artifact::METADATA_FILE).exists() {
            artifact::load_predictor(path)?
        } else {
            VaModel::new(self.spec()?, seed)?
        };
        model.hard_sigmoid_slope = self.hard_sigmoid_slope;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::warmup_ratio")]
    pub warmup_ratio: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default = "defaults::fold")]
    pub fold_to_train: Fold,
    pub model: ModelSettings,
    /// Micro-batches per optimizer step; only for per-instance losses.
    #[serde(default = "defaults::accumulation")]
    pub gradient_accumulation_steps: usize,
    /// Global gradient-norm clip; off unless set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    /// Refuse to start when the estimated footprint exceeds this many MB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_budget_mb: Option<f64>,
}

mod defaults {
    use crate::corpus::Fold;

    pub fn batch_size() -> usize {
        16
    }
    pub fn epochs() -> usize {
        10
    }
    pub fn learning_rate() -> f64 {
        6e-6
    }
    pub fn warmup_ratio() -> f64 {
        0.1
    }
    pub fn fold() -> Fold {
        Fold::A
    }
    pub fn accumulation() -> usize {
        1
    }
}

impl TrainConfig {
    pub fn new(model: ModelSettings, loss: LossConfig) -> Self {
        Self {
            batch_size: defaults::batch_size(),
            epochs: defaults::epochs(),
            learning_rate: defaults::learning_rate(),
            warmup_ratio: defaults::warmup_ratio(),
            optimizer: AdamWConfig::default(),
            seed: 0,
            loss,
            fold_to_train: Fold::A,
            model,
            gradient_accumulation_steps: 1,
            max_grad_norm: None,
            memory_budget_mb: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.gradient_accumulation_steps == 0 || self.gradient_accumulation_steps > self.batch_size {
            return bad("gradient_accumulation_steps must be in 1..=batch_size");
        }
        if self.gradient_accumulation_steps > 1 && self.loss.kind.uses_ccc() {
            return Err(TrainError::AccumulationUnsupportedForBatchLoss(self.loss.kind));
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        if self.fold_to_train == Fold::Unassigned {
            return bad("fold_to_train must be A or B");
        }
        Ok(())
    }

    pub fn total_steps(&self, train_size: usize) -> usize {
        self.epochs * train_size.div_ceil(self.batch_size)
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_ratio * total_steps as f64).ceil() as usize
    }
}

/// Linear ramp from 0 to the peak over the warmup steps, then linear decay
/// to 0 at `total_steps`. Optimizer step `k` (0-based) uses `lr_at_step(k)`.
pub fn lr_at_step(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let warmup = config.warmup_steps(total_steps);
    let lr = config.learning_rate;
    if step >= total_steps {
        0.0
    } else if step < warmup {
        lr * step as f64 / warmup as f64
    } else {
        lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_valence: f64,
    pub loss_arousal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub fallback_events: u32,
    pub batch_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub total_steps: usize,
    pub train_size: usize,
    pub fallback_events: u64,
    pub truncation_events: u64,
    pub wall_seconds: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Step(StepRecord),
    Epoch(EpochRecord),
    Summary {
        total_steps: usize,
        train_size: usize,
        fallback_events: u64,
        truncation_events: u64,
        wall_seconds: f64,
    },
}

impl TrainingLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = |l: &LogLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")
        };
        let mut epochs = self.epochs.iter().peekable();
        for s in &self.steps {
            while let Some(e) = epochs.next_if(|e| e.epoch < s.epoch) {
                line(&LogLine::Epoch(e.clone()))?;
            }
            line(&LogLine::Step(s.clone()))?;
        }
        for e in epochs {
            line(&LogLine::Epoch(e.clone()))?;
        }
        line(&LogLine::Summary {
            total_steps: self.total_steps,
            train_size: self.train_size,
            fallback_events: self.fallback_events,
            truncation_events: self.truncation_events,
            wall_seconds: self.wall_seconds,
        })
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut log = TrainingLog::default();
        for raw in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(raw)? {
                LogLine::Step(s) => log.steps.push(s),
                LogLine::Epoch(e) => log.epochs.push(e),
                LogLine::Summary {
                    total_steps,
                    train_size,
                    fallback_events,
                    truncation_events,
                    wall_seconds,
                } => {
                    log.total_steps = total_steps;
                    log.train_size = train_size;
                    log.fallback_events = fallback_events;
                    log.truncation_events = truncation_events;
                    log.wall_seconds = wall_seconds;
                }
            }
        }
        Ok(log)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    pub fn batch_order(&self) -> Vec<&[String]> {
        self.steps.iter().map(|s| s.batch_ids.as_slice()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: VaModel,
    pub log: TrainingLog,
    /// Ids of every instance the model was trained on.
    pub train_ids: Vec<String>,
    /// Learned (or fixed) α at the end of training, when a robust term is used.
    pub alpha: Option<f64>,
}

/// Rough peak footprint: weights, gradients, two moment buffers, and one
/// batch of activations.
pub fn estimate_memory_mb(spec: &EncoderSpec, batch_size: usize) -> (f64, f64) {
    let d = spec.hidden_size as f64;
    let params = spec.vocab_buckets as f64 * d
        + spec.max_sequence_length as f64 * d
        + 2.0 * spec.attention_size as f64 * d
        + 2.0 * d
        + 2.0;
    let fixed = params * 8.0 * 4.0 / 1e6;
    let activations = batch_size as f64
        * spec.max_sequence_length as f64
        * (2.0 * d + spec.attention_size as f64)
        * 8.0
        / 1e6;
    (fixed, activations)
}

fn check_memory(config: &TrainConfig, spec: &EncoderSpec) -> Result<(), TrainError> {
    let Some(budget) = config.memory_budget_mb else {
        return Ok(());
    };
    let (fixed, act) = estimate_memory_mb(spec, config.batch_size);
    let per_micro = act / config.gradient_accumulation_steps as f64;
    if fixed + per_micro <= budget {
        return Ok(());
    }
    let suggested = (budget > fixed)
        .then(|| (act / (budget - fixed)).ceil() as usize)
        .filter(|&k| k <= config.batch_size)
        .map(|k| k.max(2));
    Err(TrainError::OutOfMemoryGuidance {
        estimated_mb: fixed + per_micro,
        budget_mb: budget,
        suggested_accumulation_steps: suggested,
    })
}

/// Summed gradient of one optimizer batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: ModelGrads,
    pub grad_latent_alpha: f64,
    pub loss: f64,
    pub loss_valence: f64,
    pub loss_arousal: f64,
    pub alpha: Option<f64>,
    pub fallback_events: u32,
    pub truncation_events: u32,
}

fn forward_all(model: &VaModel, items: &[&AnnotatedInstance]) -> Result<Vec<ForwardPass>, ModelError> {
    items.par_iter().map(|i| model.forward(&i.text)).collect()
}

/// Adds the gradient of one micro-batch, weighted by `weight`, into `out`.
fn accumulate_micro(
    model: &VaModel,
    evaluator: &LossEvaluator,
    items: &[&AnnotatedInstance],
    latent_alpha: f64,
    weight: f64,
    out: &mut BatchGradient,
) -> Result<(), TrainError> {
    let passes = forward_all(model, items)?;
    let pv: Vec<f64> = passes.iter().map(|p| p.prediction.valence).collect();
    let pa: Vec<f64> = passes.iter().map(|p| p.prediction.arousal).collect();
    let gv: Vec<f64> = items.iter().map(|i| i.valence).collect();
    let ga: Vec<f64> = items.iter().map(|i| i.arousal).collect();
    let eval = evaluator.evaluate(
        &VaBatch {
            pred_valence: &pv,
            pred_arousal: &pa,
            gold_valence: &gv,
            gold_arousal: &ga,
        },
        latent_alpha,
    )?;
    for (k, pass) in passes.iter().enumerate() {
        let d = [weight * eval.grad_pred_valence[k], weight * eval.grad_pred_arousal[k]];
        model.backward(pass, d, &mut out.grads);
        out.truncation_events += pass.truncated as u32;
    }
    out.grad_latent_alpha += weight * eval.grad_latent_alpha;
    out.loss += weight * eval.value.total;
    out.loss_valence += weight * eval.value.valence_component;
    out.loss_arousal += weight * eval.value.arousal_component;
    out.alpha = eval.alpha;
    out.fallback_events += eval.fallback_events;
    Ok(())
}

/// Gradient of the batch formed by concatenating `micro_batches`, computed
/// one micro-batch at a time with weights `m_k / B`. Only per-instance-mean
/// losses decompose this way; a concordance term with more than one
/// micro-batch is refused.
pub fn gradient_accumulate(
    model: &VaModel,
    evaluator: &LossEvaluator,
    micro_batches: &[&[&AnnotatedInstance]],
    latent_alpha: f64,
    expected_batch_size: Option<usize>,
) -> Result<BatchGradient, TrainError> {
    let kind = evaluator.config().kind;
    if micro_batches.len() > 1 && kind.uses_ccc() {
        return Err(TrainError::AccumulationUnsupportedForBatchLoss(kind));
    }
    let total: usize = micro_batches.iter().map(|m| m.len()).sum();
    if let Some(expected) = expected_batch_size {
        if expected != total {
            return Err(TrainError::MicroBatchSizes { expected, actual: total });
        }
    }
    let mut out = BatchGradient {
        grads: ModelGrads::zeros_like(model),
        grad_latent_alpha: 0.0,
        loss: 0.0,
        loss_valence: 0.0,
        loss_arousal: 0.0,
        alpha: None,
        fallback_events: 0,
        truncation_events: 0,
    };
    batch_gradient_into(model, evaluator, micro_batches, latent_alpha, &mut out)?;
    Ok(out)
}

fn batch_gradient_into(
    model: &VaModel,
    evaluator: &LossEvaluator,
    micro_batches: &[&[&AnnotatedInstance]],
    latent_alpha: f64,
    out: &mut BatchGradient,
) -> Result<(), TrainError> {
    let total: usize = micro_batches.iter().map(|m| m.len()).sum();
    out.grads.zero();
    out.grad_latent_alpha = 0.0;
    out.loss = 0.0;
    out.loss_valence = 0.0;
    out.loss_arousal = 0.0;
    out.alpha = None;
    out.fallback_events = 0;
    out.truncation_events = 0;
    for micro in micro_batches.iter().filter(|m| !m.is_empty()) {
        let weight = micro.len() as f64 / total as f64;
        accumulate_micro(model, evaluator, micro, latent_alpha, weight, out)?;
    }
    Ok(())
}

fn split_micro<'a, 'b>(batch: &'b [&'a AnnotatedInstance], parts: usize) -> Vec<&'b [&'a AnnotatedInstance]> {
    let parts = parts.min(batch.len()).max(1);
    let base = batch.len() / parts;
    let extra = batch.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + (k < extra) as usize;
        out.push(&batch[start..start + len]);
        start += len;
    }
    out
}

fn grad_norm(g: &BatchGradient) -> f64 {
    let mut sq = g.grad_latent_alpha * g.grad_latent_alpha;
    for s in g.grads.slices() {
        sq += s.iter().map(|x| x * x).sum::<f64>();
    }
    sq.sqrt()
}

/// Trains on `config.fold_to_train` of `corpus`.
pub fn train_fold(corpus: &Corpus, fold: Fold, config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    let items: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| i.fold == fold).collect();
    if items.is_empty() {
        return Err(TrainError::EmptyFold(fold));
    }
    train_on(&items, config)
}

/// Trains on an explicit instance list, in the given base order.
pub fn train_on(items: &[&AnnotatedInstance], config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    if items.is_empty() {
        return Err(TrainError::EmptyFold(config.fold_to_train));
    }
    let mut model = config.model.build(config.seed)?;
    check_memory(config, &model.spec)?;
    let evaluator = LossEvaluator::new(config.loss.clone())?;
    let learns_alpha = evaluator.learns_alpha();
    let mut latent = [if learns_alpha { config.loss.initial_latent_alpha()? } else { 0.0 }];

    let total_steps = config.total_steps(items.len());
    let slot_sizes: Vec<usize> = ModelGrads::zeros_like(&model)
        .slices()
        .iter()
        .map(|s| s.len())
        .chain([1])
        .collect();
    let mut optimizer = AdamW::new(config.optimizer, &slot_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut grad = BatchGradient {
        grads: ModelGrads::zeros_like(&model),
        grad_latent_alpha: 0.0,
        loss: 0.0,
        loss_valence: 0.0,
        loss_arousal: 0.0,
        alpha: None,
        fallback_events: 0,
        truncation_events: 0,
    };
    let mut log = TrainingLog {
        total_steps,
        train_size: items.len(),
        ..Default::default()
    };
    let started = Instant::now();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&AnnotatedInstance> = chunk.iter().map(|&k| items[k]).collect();
            let micro = split_micro(&batch, config.gradient_accumulation_steps);
            batch_gradient_into(&model, &evaluator, &micro, latent[0], &mut grad)?;
            let batch_ids: Vec<String> = batch.iter().map(|i| i.instance_id.clone()).collect();
            if !grad.loss.is_finite() {
                log::error!("non-finite loss at step {step}; batch: {batch_ids:?}");
                return Err(TrainError::NonFiniteLoss { step, batch_ids });
            }
            if let Some(max_norm) = config.max_grad_norm {
                let norm = grad_norm(&grad);
                if norm > max_norm {
                    let f = max_norm / norm;
                    grad.grads.scale(f);
                    grad.grad_latent_alpha *= f;
                }
            }
            let lr = lr_at_step(step, total_steps, config);
            optimizer.begin_step();
            {
                let slices = grad.grads.slices();
                for (k, slot) in model.parameters_mut().into_iter().enumerate() {
                    optimizer.update(k, lr, slot.values, slices[k], slot.weight_decay);
                }
            }
            if learns_alpha {
                optimizer.update(slot_sizes.len() - 1, lr, &mut latent, &[grad.grad_latent_alpha], false);
            }
            log.fallback_events += grad.fallback_events as u64;
            log.truncation_events += grad.truncation_events as u64;
            epoch_loss += grad.loss;
            epoch_steps += 1;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                loss: grad.loss,
                loss_valence: grad.loss_valence,
                loss_arousal: grad.loss_arousal,
                alpha: grad.alpha,
                fallback_events: grad.fallback_events,
                batch_ids,
            });
            step += 1;
        }
        let mean_loss = epoch_loss / epoch_steps as f64;
        log::info!("epoch {} mean loss {mean_loss:.5}", epoch + 1);
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            wall_seconds: epoch_start.elapsed().as_secs_f64(),
        });
    }
    log.wall_seconds = started.elapsed().as_secs_f64();
    let alpha = if learns_alpha {
        Some(evaluator.alpha_map().alpha(latent[0]))
    } else if config.loss.kind.uses_robust() {
        Some(config.loss.robust.alpha)
    } else {
        None
    };
    Ok(TrainedModel {
        model,
        log,
        train_ids: items.iter().map(|i| i.instance_id.clone()).collect(),
        alpha,
    })
}

/// Writes the predictor artifact, training log and config into `dir`.
pub fn write_run_dir(dir: &Path, trained: &TrainedModel, config: &TrainConfig) -> Result<(), TrainError> {
    artifact::save_predictor(&trained.model, dir)?;
    let log_path = dir.join(LOG_FILE);
    let file = std::fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut out = std::io::BufWriter::new(file);
    trained.log.write_jsonl(&mut out).map_err(io_err(&log_path))?;
    out.flush().map_err(io_err(&log_path))?;
    let cfg_path = dir.join(CONFIG_FILE);
    let json = serde_json::to_vec_pretty(config).expect("config serializes");
    std::fs::write(&cfg_path, json).map_err(io_err(&cfg_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Granularity;

    pub(crate) fn tiny_model() -> ModelSettings {
        ModelSettings {
            checkpoint_id: "unit-tiny".into(),
            family: Some(EncoderFamily::DistilledBase),
            hidden_size: Some(16),
            max_sequence_length: Some(16),
            vocab_buckets: Some(211),
            attention_size: Some(8),
            hard_sigmoid_slope: DEFAULT_HARD_SIGMOID_SLOPE,
        }
    }

    fn instance(k: usize, text: String, v: f64, a: f64) -> AnnotatedInstance {
        AnnotatedInstance {
            instance_id: format!("syn:{k}"),
            dataset_id: "syn".into(),
            language: "qa".into(),
            granularity: Granularity::Word,
            text,
            valence: v,
            arousal: a,
            fold: Fold::A,
        }
    }

    fn synthetic(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|k| {
                    let v = (k % 8) as f64 / 7.0;
                    instance(k, format!("w{} x{}", k % 8, k % 3), 0.1 + 0.8 * v, 0.3 + 0.4 * v * v)
                })
                .collect(),
        )
    }

    fn config(kind: LossKind) -> TrainConfig {
        let mut c = TrainConfig::new(tiny_model(), LossConfig::new(kind));
        c.learning_rate = 2e-2;
        c.epochs = 2;
        c.seed = 5;
        c
    }

    #[test]
    fn schedule_examples() {
        let mut c = config(LossKind::Mse);
        c.learning_rate = 1.0;
        assert_eq!(c.warmup_steps(100), 10);
        assert_eq!(lr_at_step(0, 100, &c), 0.0);
        assert_eq!(lr_at_step(10, 100, &c), 1.0);
        assert_eq!(lr_at_step(5, 100, &c), 0.5);
        assert_eq!(lr_at_step(55, 100, &c), 0.5);
        assert_eq!(lr_at_step(100, 100, &c), 0.0);
        c.warmup_ratio = 0.0;
        assert_eq!(lr_at_step(0, 10, &c), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = config(LossKind::Mse);
        c.warmup_ratio = 1.0;
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let mut c = config(LossKind::Cccl);
        c.gradient_accumulation_steps = 2;
        assert!(matches!(
            c.validate(),
            Err(TrainError::AccumulationUnsupportedForBatchLoss(LossKind::Cccl))
        ));
        let json = serde_json::to_string(&config(LossKind::RlCccl)).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config(LossKind::RlCccl));
        let minimal: TrainConfig = serde_json::from_str(
            r#"{"loss":{"kind":"mse"},"model":{"checkpoint_id":"xlm-roberta-base"}}"#,
        )
        .unwrap();
        assert_eq!(minimal.batch_size, 16);
        assert_eq!(minimal.epochs, 10);
        assert_eq!(minimal.learning_rate, 6e-6);
        assert_eq!(minimal.warmup_ratio, 0.1);
    }

    #[test]
    fn step_count_and_trace() {
        let corpus = synthetic(40);
        let mut c = config(LossKind::Mse);
        c.epochs = 3;
        let t = train_fold(&corpus, Fold::A, &c).unwrap();
        assert_eq!(t.log.steps.len(), 3 * 40usize.div_ceil(16));
        assert_eq!(t.log.total_steps, t.log.steps.len());
        for (k, s) in t.log.steps.iter().enumerate() {
            assert_eq!(s.step, k);
            assert_eq!(s.lr, lr_at_step(k, t.log.total_steps, &c));
        }
        for e in 0..3 {
            let mut ids: Vec<&String> = t
                .log
                .steps
                .iter()
                .filter(|s| s.epoch == e)
                .flat_map(|s| &s.batch_ids)
                .collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 40);
        }
    }

    #[test]
    fn loss_decreases() {
        let corpus = synthetic(64);
        let c = config(LossKind::Mse);
        let t = train_fold(&corpus, Fold::A, &c).unwrap();
        let first = t.log.steps.first().unwrap().loss;
        let last = t.log.steps.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn constant_targets_fit() {
        let corpus = Corpus::new((0..48).map(|k| instance(k, format!("t{k}"), 0.5, 0.5)).collect());
        let mut c = config(LossKind::Mse);
        c.epochs = 3;
        let t = train_fold(&corpus, Fold::A, &c).unwrap();
        assert!(t.log.final_loss().unwrap() < 1e-3, "{:?}", t.log.final_loss());
    }

    #[test]
    fn deterministic_batch_order() {
        let corpus = synthetic(37);
        let c = config(LossKind::RlCccl);
        let a = train_fold(&corpus, Fold::A, &c).unwrap();
        let b = train_fold(&corpus, Fold::A, &c).unwrap();
        assert_eq!(a.log.batch_order(), b.log.batch_order());
        assert_eq!(a.model, b.model);
        let mut c2 = c.clone();
        c2.seed = 6;
        let d = train_fold(&corpus, Fold::A, &c2).unwrap();
        assert_ne!(a.log.batch_order(), d.log.batch_order());
    }

    #[test]
    fn ragged_final_batch_uses_fallback() {
        let corpus = synthetic(17);
        let c = config(LossKind::Cccl);
        let t = train_fold(&corpus, Fold::A, &c).unwrap();
        assert_eq!(t.log.steps.iter().filter(|s| s.batch_ids.len() == 1).count(), 2);
        assert!(t.log.fallback_events >= 4);
    }

    #[test]
    fn alpha_stays_in_bounds() {
        let corpus = synthetic(64);
        let mut c = config(LossKind::Rl);
        c.learning_rate = 0.5;
        let t = train_fold(&corpus, Fold::A, &c).unwrap();
        for s in &t.log.steps {
            let a = s.alpha.unwrap();
            assert!((0.0..=2.0).contains(&a));
        }
        assert!(t.alpha.is_some());
    }

    #[test]
    fn empty_fold() {
        let corpus = synthetic(8);
        assert!(matches!(
            train_fold(&corpus, Fold::B, &config(LossKind::Mse)),
            Err(TrainError::EmptyFold(Fold::B))
        ));
    }

    #[test]
    fn memory_guidance() {
        let mut c = TrainConfig::new(ModelSettings::for_family(EncoderFamily::Large), LossConfig::new(LossKind::Mse));
        let spec = c.model.spec().unwrap();
        let (fixed, act) = estimate_memory_mb(&spec, 16);
        c.memory_budget_mb = Some(fixed + act / 3.0);
        match check_memory(&c, &spec) {
            Err(TrainError::OutOfMemoryGuidance { suggested_accumulation_steps: Some(k), .. }) => {
                assert!(k >= 3);
                c.gradient_accumulation_steps = k;
                assert!(check_memory(&c, &spec).is_ok());
            }
            other => panic!("{other:?}"),
        }
        c.memory_budget_mb = Some(fixed / 2.0);
        assert!(matches!(
            check_memory(&c, &spec),
            Err(TrainError::OutOfMemoryGuidance { suggested_accumulation_steps: None, .. })
        ));
    }

    #[test]
    fn log_round_trip() {
        let corpus = synthetic(20);
        let t = train_fold(&corpus, Fold::A, &config(LossKind::Rl)).unwrap();
        let mut buf = Vec::new();
        t.log.write_jsonl(&mut buf).unwrap();
        let back = TrainingLog::read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, t.log);
    }

    #[test]
    fn split_micro_sizes() {
        let corpus = synthetic(16);
        let items: Vec<&AnnotatedInstance> = corpus.iter().collect();
        let parts = split_micro(&items, 3);
        assert_eq!(parts.iter().map(|p| p.len()).collect::<Vec<_>>(), [6, 5, 5]);
        assert_eq!(split_micro(&items[..2], 4).len(), 2);
    }
}
