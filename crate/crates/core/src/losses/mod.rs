//! Training objectives. Every objective is evaluated per affective dimension
//! and the two dimensions are summed with equal weight.

mod robust;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use robust::{
    partition_integral, rho, rho_grad_alpha, rho_grad_x, robust_loss, robust_loss_adaptive_nll,
    robust_loss_grad, robust_nll_grad, AlphaMap, LogPartition, NllEval, PARTITION_GRID_STEP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction and target lengths differ ({pred} vs {gold})")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate batch for concordance loss: {0}")]
    DegenerateBatch(&'static str),
    #[error("robust-loss scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid alpha bounds [{0}, {1}]; need 0 <= lo < hi")]
    InvalidAlphaBounds(f64, f64),
    #[error("{0} is not a hybrid loss")]
    NotHybrid(LossKind),
    #[error("unknown loss kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "cccl")]
    Cccl,
    #[serde(rename = "rl")]
    Rl,
    #[serde(rename = "mse+cccl")]
    MseCccl,
    #[serde(rename = "rl+cccl")]
    RlCccl,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Mse,
        LossKind::Cccl,
        LossKind::Rl,
        LossKind::MseCccl,
        LossKind::RlCccl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Cccl => "cccl",
            LossKind::Rl => "rl",
            LossKind::MseCccl => "mse+cccl",
            LossKind::RlCccl => "rl+cccl",
        }
    }

    /// Table label, e.g. `MSE+CCCL`.
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Mse => "MSE",
            LossKind::Cccl => "CCCL",
            LossKind::Rl => "RL",
            LossKind::MseCccl => "MSE+CCCL",
            LossKind::RlCccl => "RL+CCCL",
        }
    }

    /// Filesystem-safe name.
    pub fn slug(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Cccl => "cccl",
            LossKind::Rl => "rl",
            LossKind::MseCccl => "mse_cccl",
            LossKind::RlCccl => "rl_cccl",
        }
    }

    pub fn uses_ccc(self) -> bool {
        matches!(self, LossKind::Cccl | LossKind::MseCccl | LossKind::RlCccl)
    }

    pub fn uses_robust(self) -> bool {
        matches!(self, LossKind::Rl | LossKind::RlCccl)
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, LossKind::MseCccl | LossKind::RlCccl)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "+");
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| LossError::UnknownKind(s.to_string()))
    }
}

/// Which robust objective the RL-containing losses optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RobustForm {
    /// ρ plus the log-partition term; α is learned.
    #[default]
    AdaptiveNll,
    /// Plain mean ρ at the configured, fixed α.
    Fixed,
}

/// What to do when a concordance term meets a batch it cannot score
/// (one element, or both vectors constant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmallBatchFallback {
    /// Replace the concordance term by MSE for that batch and count the event.
    #[default]
    Mse,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    /// Initial α when learned, the constant α otherwise.
    pub alpha: f64,
    pub c: f64,
    pub alpha_bounds: (f64, f64),
    pub form: RobustForm,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            c: 0.1,
            alpha_bounds: (0.0, 2.0),
            form: RobustForm::AdaptiveNll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default)]
    pub robust: RobustConfig,
    #[serde(default)]
    pub small_batch_fallback: SmallBatchFallback,
    /// Added to the concordance denominator.
    #[serde(default)]
    pub ccc_epsilon: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            robust: RobustConfig::default(),
            small_batch_fallback: SmallBatchFallback::default(),
            ccc_epsilon: 0.0,
        }
    }

    pub fn alpha_map(&self) -> Result<AlphaMap, LossError> {
        AlphaMap::new(self.robust.alpha_bounds.0, self.robust.alpha_bounds.1)
    }

    /// Latent value that maps onto the configured initial α.
    pub fn initial_latent_alpha(&self) -> Result<f64, LossError> {
        Ok(self.alpha_map()?.latent_for(self.robust.alpha))
    }
}

/// Per-batch loss, split by dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossValue {
    pub total: f64,
    pub valence_component: f64,
    pub arousal_component: f64,
}

impl LossValue {
    pub fn from_components(valence: f64, arousal: f64) -> Self {
        Self {
            total: valence + arousal,
            valence_component: valence,
            arousal_component: arousal,
        }
    }
}

fn check_pair(pred: &[f64], gold: &[f64]) -> Result<(), LossError> {
    if pred.len() != gold.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    Ok(())
}

pub fn mse_loss(pred: &[f64], gold: &[f64]) -> Result<f64, LossError> {
    check_pair(pred, gold)?;
    let sum: f64 = pred.iter().zip(gold).map(|(p, g)| (g - p) * (g - p)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_loss_grad(pred: &[f64], gold: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    let value = mse_loss(pred, gold)?;
    let n = pred.len() as f64;
    let grad = pred.iter().zip(gold).map(|(p, g)| 2.0 * (p - g) / n).collect();
    Ok((value, grad))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn check_concordance(pred: &[f64], gold: &[f64]) -> Result<(), LossError> {
    check_pair(pred, gold)?;
    if pred.len() < 2 {
        return Err(LossError::DegenerateBatch("fewer than two elements"));
    }
    if is_constant(pred) && is_constant(gold) {
        return Err(LossError::DegenerateBatch("both vectors constant"));
    }
    Ok(())
}

struct Moments {
    mean_p: f64,
    mean_g: f64,
    var_p: f64,
    var_g: f64,
    cov: f64,
}

fn moments(pred: &[f64], gold: &[f64]) -> Moments {
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_g = gold.iter().sum::<f64>() / n;
    let (mut var_p, mut var_g, mut cov) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gold) {
        let (dp, dg) = (p - mean_p, g - mean_g);
        var_p += dp * dp;
        var_g += dg * dg;
        cov += dp * dg;
    }
    Moments {
        mean_p,
        mean_g,
        var_p: var_p / n,
        var_g: var_g / n,
        cov: cov / n,
    }
}

/// Concordance correlation coefficient over the batch (population moments).
pub fn ccc(pred: &[f64], gold: &[f64]) -> Result<f64, LossError> {
    ccc_with_epsilon(pred, gold, 0.0)
}

fn ccc_with_epsilon(pred: &[f64], gold: &[f64], eps: f64) -> Result<f64, LossError> {
    check_concordance(pred, gold)?;
    let m = moments(pred, gold);
    let shift = m.mean_p - m.mean_g;
    Ok(2.0 * m.cov / (m.var_p + m.var_g + shift * shift + eps))
}

/// `1 − CCC`, in `[0, 2]`.
pub fn ccc_loss(pred: &[f64], gold: &[f64]) -> Result<f64, LossError> {
    Ok(1.0 - ccc(pred, gold)?)
}

/// `1 − CCC` and its gradient with respect to `pred`.
pub fn ccc_loss_grad(
    pred: &[f64],
    gold: &[f64],
    eps: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    check_concordance(pred, gold)?;
    let n = pred.len() as f64;
    let m = moments(pred, gold);
    let shift = m.mean_p - m.mean_g;
    let num = 2.0 * m.cov;
    let den = m.var_p + m.var_g + shift * shift + eps;
    let grad = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            let dnum = 2.0 * (g - m.mean_g) / n;
            let dden = 2.0 * (p - m.mean_p) / n + 2.0 * shift / n;
            -(dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok((1.0 - num / den, grad))
}

/// Predictions and targets for one batch, valence and arousal side by side.
#[derive(Debug, Clone, Copy)]
pub struct VaBatch<'a> {
    pub pred_valence: &'a [f64],
    pub pred_arousal: &'a [f64],
    pub gold_valence: &'a [f64],
    pub gold_arousal: &'a [f64],
}

impl VaBatch<'_> {
    pub fn len(&self) -> usize {
        self.pred_valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred_valence.is_empty()
    }
}

/// Loss value plus everything the trainer needs to take a step.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: LossValue,
    pub grad_pred_valence: Vec<f64>,
    pub grad_pred_arousal: Vec<f64>,
    /// Zero unless α is learned.
    pub grad_latent_alpha: f64,
    /// α used for this evaluation, when a robust term is present.
    pub alpha: Option<f64>,
    pub fallback_events: u32,
}

struct DimEval {
    value: f64,
    grad: Vec<f64>,
    grad_latent: f64,
    alpha: Option<f64>,
    fallback: bool,
}

enum Partition {
    Shared(&'static LogPartition),
    Owned(LogPartition),
}

/// Evaluates a configured objective with gradients. Holds the log-partition
/// table so it is built once per training run.
pub struct LossEvaluator {
    config: LossConfig,
    alpha_map: AlphaMap,
    partition: Option<Partition>,
}

impl LossEvaluator {
    pub fn new(config: LossConfig) -> Result<Self, LossError> {
        let alpha_map = config.alpha_map()?;
        if config.kind.uses_robust() && !(config.robust.c > 0.0 && config.robust.c.is_finite()) {
            return Err(LossError::NonPositiveScale(config.robust.c));
        }
        let partition = if config.kind.uses_robust() && config.robust.form == RobustForm::AdaptiveNll
        {
            let shared = LogPartition::default_bounds();
            Some(if shared.covers(&alpha_map) {
                Partition::Shared(shared)
            } else {
                Partition::Owned(LogPartition::new(alpha_map))
            })
        } else {
            None
        };
        Ok(Self {
            config,
            alpha_map,
            partition,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn alpha_map(&self) -> AlphaMap {
        self.alpha_map
    }

    /// True when α is a trainable parameter.
    pub fn learns_alpha(&self) -> bool {
        self.partition.is_some()
    }

    fn partition(&self) -> Option<&LogPartition> {
        match &self.partition {
            Some(Partition::Shared(p)) => Some(p),
            Some(Partition::Owned(p)) => Some(p),
            None => None,
        }
    }

    fn robust_term(&self, pred: &[f64], gold: &[f64], latent: f64) -> Result<DimEval, LossError> {
        check_pair(pred, gold)?;
        let residuals: Vec<f64> = gold.iter().zip(pred).map(|(g, p)| g - p).collect();
        let c = self.config.robust.c;
        // ∂/∂pred = −∂/∂residual
        match self.partition() {
            Some(table) => {
                let e = robust_nll_grad(&residuals, latent, c, &self.alpha_map, table)?;
                Ok(DimEval {
                    value: e.value,
                    grad: e.grad_residuals.into_iter().map(|g| -g).collect(),
                    grad_latent: e.grad_latent,
                    alpha: Some(e.alpha),
                    fallback: false,
                })
            }
            None => {
                let alpha = self.config.robust.alpha;
                let (value, grad) = robust_loss_grad(&residuals, alpha, c)?;
                Ok(DimEval {
                    value,
                    grad: grad.into_iter().map(|g| -g).collect(),
                    grad_latent: 0.0,
                    alpha: Some(alpha),
                    fallback: false,
                })
            }
        }
    }

    fn ccc_term(&self, pred: &[f64], gold: &[f64]) -> Result<DimEval, LossError> {
        match ccc_loss_grad(pred, gold, self.config.ccc_epsilon) {
            Ok((value, grad)) => Ok(DimEval {
                value,
                grad,
                grad_latent: 0.0,
                alpha: None,
                fallback: false,
            }),
            Err(LossError::DegenerateBatch(why))
                if self.config.small_batch_fallback == SmallBatchFallback::Mse =>
            {
                log::debug!("concordance term degenerate ({why}); using MSE for this batch");
                let (value, grad) = mse_loss_grad(pred, gold)?;
                Ok(DimEval {
                    value,
                    grad,
                    grad_latent: 0.0,
                    alpha: None,
                    fallback: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    fn dimension(&self, pred: &[f64], gold: &[f64], latent: f64) -> Result<DimEval, LossError> {
        let instance = match self.config.kind {
            LossKind::Mse | LossKind::MseCccl => {
                let (value, grad) = mse_loss_grad(pred, gold)?;
                Some(DimEval {
                    value,
                    grad,
                    grad_latent: 0.0,
                    alpha: None,
                    fallback: false,
                })
            }
            LossKind::Rl | LossKind::RlCccl => Some(self.robust_term(pred, gold, latent)?),
            LossKind::Cccl => None,
        };
        let batch = if self.config.kind.uses_ccc() {
            Some(self.ccc_term(pred, gold)?)
        } else {
            None
        };
        Ok(match (instance, batch) {
            (Some(a), Some(b)) => DimEval {
                value: a.value + b.value,
                grad: a.grad.iter().zip(&b.grad).map(|(x, y)| x + y).collect(),
                grad_latent: a.grad_latent,
                alpha: a.alpha,
                fallback: b.fallback,
            },
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("every loss kind has at least one term"),
        })
    }

    /// Both dimensions, equally weighted.
    pub fn evaluate(&self, batch: &VaBatch<'_>, latent_alpha: f64) -> Result<LossEval, LossError> {
        let v = self.dimension(batch.pred_valence, batch.gold_valence, latent_alpha)?;
        let a = self.dimension(batch.pred_arousal, batch.gold_arousal, latent_alpha)?;
        Ok(LossEval {
            value: LossValue::from_components(v.value, a.value),
            grad_latent_alpha: v.grad_latent + a.grad_latent,
            alpha: v.alpha.or(a.alpha),
            fallback_events: v.fallback as u32 + a.fallback as u32,
            grad_pred_valence: v.grad,
            grad_pred_arousal: a.grad,
        })
    }
}

/// One of the two additive hybrids (instance term + batch-level CCCL).
pub fn hybrid_loss(
    kind: LossKind,
    batch: &VaBatch<'_>,
    config: &LossConfig,
    latent_alpha: f64,
) -> Result<LossValue, LossError> {
    if !kind.is_hybrid() {
        return Err(LossError::NotHybrid(kind));
    }
    let config = LossConfig {
        kind,
        ..config.clone()
    };
    Ok(LossEvaluator::new(config)?.evaluate(batch, latent_alpha)?.value)
}

/// Sum of the per-dimension losses under `config`; α starts from its
/// configured initial value.
pub fn total_loss(
    pred_valence: &[f64],
    pred_arousal: &[f64],
    gold_valence: &[f64],
    gold_arousal: &[f64],
    config: &LossConfig,
) -> Result<LossValue, LossError> {
    let batch = VaBatch {
        pred_valence,
        pred_arousal,
        gold_valence,
        gold_arousal,
    };
    let latent = config.initial_latent_alpha()?;
    Ok(LossEvaluator::new(config.clone())?.evaluate(&batch, latent)?.value)
}
