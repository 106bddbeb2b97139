//! Encoder plus two-output regression head.
//!
//! The head is a linear layer over the first-token hidden state, followed by
//! a hard sigmoid so both outputs stay in `[0, 1]`. Output index 0 is
//! valence and index 1 is arousal, everywhere in the crate.
//!
//! Weights come from [`Encoder::initialize`] for a registered checkpoint id,
//! or from a saved predictor artifact (see [`artifact`]).

pub mod artifact;
mod encoder;
mod tokenizer;

use std::fmt;
use std::hash::Hasher;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{Encoder, EncoderGrads, EncoderTrace};
pub use tokenizer::{pieces, Tokenized, Tokenizer, CLS_ID};

pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 128;
pub const DEFAULT_VOCAB_BUCKETS: usize = 8192;
pub const DEFAULT_ATTENTION_SIZE: usize = 64;
pub const DEFAULT_HARD_SIGMOID_SLOPE: f64 = 0.2;
pub const OUTPUT_ORDER: [&str; 2] = ["valence", "arousal"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("checkpoint `{0}` is not available (known: distilbert-base-multilingual-cased, xlm-roberta-base, xlm-roberta-large, or a saved artifact directory)")]
    CheckpointUnavailable(String),
    #[error("text produced no tokens: {0:?}")]
    TokenizationFailure(String),
    #[error("empty input batch")]
    EmptyBatch,
    #[error("head expects hidden size {expected}, encoder has {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderFamily {
    #[serde(rename = "distilled-base")]
    DistilledBase,
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "large")]
    Large,
}

impl EncoderFamily {
    pub const ALL: [EncoderFamily; 3] = [
        EncoderFamily::DistilledBase,
        EncoderFamily::Base,
        EncoderFamily::Large,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderFamily::DistilledBase => "distilled-base",
            EncoderFamily::Base => "base",
            EncoderFamily::Large => "large",
        }
    }

    pub fn checkpoint_id(self) -> &'static str {
        match self {
            EncoderFamily::DistilledBase => "distilbert-base-multilingual-cased",
            EncoderFamily::Base => "xlm-roberta-base",
            EncoderFamily::Large => "xlm-roberta-large",
        }
    }

    pub fn hidden_size(self) -> usize {
        match self {
            EncoderFamily::DistilledBase | EncoderFamily::Base => 768,
            EncoderFamily::Large => 1024,
        }
    }

    /// Table label.
    pub fn label(self) -> &'static str {
        match self {
            EncoderFamily::DistilledBase => "DistilBERT",
            EncoderFamily::Base => "XLM-RoBERTa-base",
            EncoderFamily::Large => "XLM-RoBERTa-large",
        }
    }
}

impl fmt::Display for EncoderFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub checkpoint_id: String,
    pub hidden_size: usize,
    pub max_sequence_length: usize,
    pub family: EncoderFamily,
    #[serde(default = "default_buckets")]
    pub vocab_buckets: usize,
    #[serde(default = "default_attention")]
    pub attention_size: usize,
}

fn default_buckets() -> usize {
    DEFAULT_VOCAB_BUCKETS
}

fn default_attention() -> usize {
    DEFAULT_ATTENTION_SIZE
}

impl EncoderSpec {
    pub fn for_family(family: EncoderFamily) -> Self {
        Self {
            checkpoint_id: family.checkpoint_id().to_string(),
            hidden_size: family.hidden_size(),
            max_sequence_length: DEFAULT_MAX_SEQUENCE_LENGTH,
            family,
            vocab_buckets: DEFAULT_VOCAB_BUCKETS,
            attention_size: DEFAULT_ATTENTION_SIZE,
        }
    }

    /// Looks up a checkpoint id or family tag in the built-in registry.
    pub fn from_registry(checkpoint_id: &str) -> Result<Self, ModelError> {
        EncoderFamily::ALL
            .into_iter()
            .find(|f| f.checkpoint_id() == checkpoint_id || f.as_str() == checkpoint_id)
            .map(Self::for_family)
            .ok_or_else(|| ModelError::CheckpointUnavailable(checkpoint_id.to_string()))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive");
        }
        if self.max_sequence_length < 2 {
            return bad("max_sequence_length must leave room for one token after CLS");
        }
        if self.vocab_buckets < 2 {
            return bad("vocab_buckets must be at least 2");
        }
        if self.attention_size == 0 {
            return bad("attention_size must be positive");
        }
        if let Ok(reg) = Self::from_registry(&self.checkpoint_id) {
            if reg.hidden_size != self.hidden_size {
                return bad("hidden_size does not match the registered checkpoint");
            }
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer {
            buckets: self.vocab_buckets,
            max_sequence_length: self.max_sequence_length,
        }
    }

    pub(crate) fn weight_seed(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write(self.checkpoint_id.as_bytes());
        h.finish()
    }
}

/// `clamp(slope·x + 0.5, 0, 1)`.
pub fn hard_sigmoid(x: f64) -> f64 {
    hard_sigmoid_with_slope(x, DEFAULT_HARD_SIGMOID_SLOPE)
}

pub fn hard_sigmoid_with_slope(x: f64, slope: f64) -> f64 {
    (slope * x + 0.5).clamp(0.0, 1.0)
}

/// Derivative; zero in the saturated regions.
pub fn hard_sigmoid_grad(x: f64, slope: f64) -> f64 {
    let y = slope * x + 0.5;
    if y > 0.0 && y < 1.0 {
        slope
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    /// `[2 × hidden_size]`, row 0 valence, row 1 arousal.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl RegressionHead {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            weight: Array2::zeros((2, hidden_size)),
            bias: Array1::zeros(2),
        }
    }

    /// Weights `N(0, 0.02²)`, bias zero.
    pub fn initialize(hidden_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: encoder::normal_matrix(2, hidden_size, 0.02, &mut rng),
            bias: Array1::zeros(2),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaPrediction {
    pub valence: f64,
    pub arousal: f64,
}

/// Gradients for every trainable model parameter.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &VaModel) -> Self {
        Self {
            encoder: EncoderGrads::zeros_like(&model.encoder),
            head_weight: Array2::zeros(model.head.weight.raw_dim()),
            head_bias: Array1::zeros(2),
        }
    }

    pub fn zero(&mut self) {
        self.encoder.zero();
        self.head_weight.fill(0.0);
        self.head_bias.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.encoder.scale(factor);
        self.head_weight.mapv_inplace(|g| g * factor);
        self.head_bias.mapv_inplace(|g| g * factor);
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.encoder.add_assign(&other.encoder);
        self.head_weight += &other.head_weight;
        self.head_bias += &other.head_bias;
    }

    /// Flattened views in [`VaModel::parameters_mut`] order.
    pub fn slices(&self) -> [&[f64]; 6] {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s(&self.encoder.token),
            s(&self.encoder.position),
            s(&self.encoder.query),
            s(&self.encoder.key),
            s(&self.head_weight),
            self.head_bias.as_slice().expect("standard layout"),
        ]
    }
}

/// A named flat parameter tensor, as seen by the optimizer.
pub struct ParamSlot<'a> {
    pub name: &'static str,
    pub values: &'a mut [f64],
    pub weight_decay: bool,
}

/// One text's forward pass, with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub encoder: EncoderTrace,
    pub logits: [f64; 2],
    pub prediction: VaPrediction,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaModel {
    pub spec: EncoderSpec,
    pub encoder: Encoder,
    pub head: RegressionHead,
    pub hard_sigmoid_slope: f64,
}

impl VaModel {
    /// Registered initial encoder weights and a freshly initialized head.
    pub fn new(spec: EncoderSpec, head_seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let encoder = Encoder::initialize(&spec);
        let head = RegressionHead::initialize(spec.hidden_size, head_seed);
        Ok(Self {
            spec,
            encoder,
            head,
            hard_sigmoid_slope: DEFAULT_HARD_SIGMOID_SLOPE,
        })
    }

    pub fn from_parts(spec: EncoderSpec, encoder: Encoder, head: RegressionHead) -> Result<Self, ModelError> {
        if head.hidden_size() != spec.hidden_size {
            return Err(ModelError::ShapeMismatch {
                expected: head.hidden_size(),
                actual: spec.hidden_size,
            });
        }
        if encoder.hidden_size() != spec.hidden_size {
            return Err(ModelError::ShapeMismatch {
                expected: spec.hidden_size,
                actual: encoder.hidden_size(),
            });
        }
        Ok(Self {
            spec,
            encoder,
            head,
            hard_sigmoid_slope: DEFAULT_HARD_SIGMOID_SLOPE,
        })
    }

    pub fn tokenize(&self, text: &str) -> Result<Tokenized, ModelError> {
        self.spec.tokenizer().tokenize(text)
    }

    pub fn forward(&self, text: &str) -> Result<ForwardPass, ModelError> {
        let tokens = self.tokenize(text)?;
        let enc = self.encoder.forward(&tokens.ids);
        let logits = [
            self.head.weight.row(0).dot(&enc.hidden) + self.head.bias[0],
            self.head.weight.row(1).dot(&enc.hidden) + self.head.bias[1],
        ];
        let slope = self.hard_sigmoid_slope;
        Ok(ForwardPass {
            prediction: VaPrediction {
                valence: hard_sigmoid_with_slope(logits[0], slope),
                arousal: hard_sigmoid_with_slope(logits[1], slope),
            },
            logits,
            encoder: enc,
            truncated: tokens.truncated,
        })
    }

    /// Accumulates gradients for upstream `d_prediction = [∂L/∂v, ∂L/∂a]`.
    pub fn backward(&self, pass: &ForwardPass, d_prediction: [f64; 2], grads: &mut ModelGrads) {
        let slope = self.hard_sigmoid_slope;
        let d_logits = [
            d_prediction[0] * hard_sigmoid_grad(pass.logits[0], slope),
            d_prediction[1] * hard_sigmoid_grad(pass.logits[1], slope),
        ];
        if d_logits == [0.0, 0.0] {
            return;
        }
        let hidden = &pass.encoder.hidden;
        let mut d_hidden = Array1::zeros(hidden.len());
        for (k, &dl) in d_logits.iter().enumerate() {
            grads.head_weight.row_mut(k).scaled_add(dl, hidden);
            grads.head_bias[k] += dl;
            d_hidden.scaled_add(dl, &self.head.weight.row(k));
        }
        self.encoder.backward(&pass.encoder, d_hidden.view(), &mut grads.encoder);
    }

    pub fn parameters_mut(&mut self) -> [ParamSlot<'_>; 6] {
        fn flat(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let enc = &mut self.encoder;
        [
            ParamSlot { name: "encoder.token_embeddings", values: flat(&mut enc.token_embeddings), weight_decay: true },
            ParamSlot { name: "encoder.position_embeddings", values: flat(&mut enc.position_embeddings), weight_decay: true },
            ParamSlot { name: "encoder.query", values: flat(&mut enc.query), weight_decay: true },
            ParamSlot { name: "encoder.key", values: flat(&mut enc.key), weight_decay: true },
            ParamSlot { name: "head.weight", values: flat(&mut self.head.weight), weight_decay: true },
            ParamSlot { name: "head.bias", values: self.head.bias.as_slice_mut().expect("standard layout"), weight_decay: false },
        ]
    }

    /// Pooled first-token representations, one row per text, plus the
    /// number of texts that were truncated.
    pub fn encode_pool(&self, texts: &[String]) -> Result<(Array2<f64>, usize), ModelError> {
        if texts.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let rows: Vec<(Array1<f64>, bool)> = texts
            .par_iter()
            .map(|t| {
                let tokens = self.tokenize(t)?;
                Ok((self.encoder.forward(&tokens.ids).hidden, tokens.truncated))
            })
            .collect::<Result<_, ModelError>>()?;
        let mut out = Array2::zeros((texts.len(), self.spec.hidden_size));
        let mut truncated = 0;
        for (i, (row, t)) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&row);
            truncated += t as usize;
        }
        Ok((out, truncated))
    }

    pub fn predict_batch(&self, texts: &[String]) -> Result<Vec<VaPrediction>, ModelError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let (pooled, _) = self.encode_pool(texts)?;
        let slope = self.hard_sigmoid_slope;
        let logit = |h: &ArrayView1<'_, f64>, k: usize| self.head.weight.row(k).dot(h) + self.head.bias[k];
        Ok(pooled
            .rows()
            .into_iter()
            .map(|h| VaPrediction {
                valence: hard_sigmoid_with_slope(logit(&h, 0), slope),
                arousal: hard_sigmoid_with_slope(logit(&h, 1), slope),
            })
            .collect())
    }
}

/// Free-function form of [`VaModel::encode_pool`].
pub fn encode_pool(texts: &[String], model: &VaModel) -> Result<Array2<f64>, ModelError> {
    model.encode_pool(texts).map(|(m, _)| m)
}

/// Free-function form of [`VaModel::predict_batch`].
pub fn predict_batch(texts: &[String], model: &VaModel) -> Result<Vec<VaPrediction>, ModelError> {
    model.predict_batch(texts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> EncoderSpec {
        EncoderSpec {
            checkpoint_id: "test-small".into(),
            hidden_size: 24,
            max_sequence_length: 16,
            family: EncoderFamily::DistilledBase,
            vocab_buckets: 97,
            attention_size: 8,
        }
    }

    fn texts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hard_sigmoid_examples() {
        assert_eq!(hard_sigmoid(0.0), 0.5);
        assert_eq!(hard_sigmoid(-10.0), 0.0);
        assert_eq!(hard_sigmoid(10.0), 1.0);
        assert!((hard_sigmoid(1.0) - 0.7).abs() < 1e-15);
        assert_eq!(hard_sigmoid(-2.5), 0.0);
        assert_eq!(hard_sigmoid(2.5), 1.0);
        assert_eq!(hard_sigmoid_grad(3.0, 0.2), 0.0);
        assert_eq!(hard_sigmoid_grad(1.0, 0.2), 0.2);
    }

    #[test]
    fn registry() {
        let large = EncoderSpec::from_registry("xlm-roberta-large").unwrap();
        assert_eq!(large.hidden_size, 1024);
        assert_eq!(large.family, EncoderFamily::Large);
        assert_eq!(EncoderSpec::from_registry("base").unwrap().hidden_size, 768);
        assert!(matches!(
            EncoderSpec::from_registry("bert-tiny"),
            Err(ModelError::CheckpointUnavailable(_))
        ));
        let mut bad = EncoderSpec::for_family(EncoderFamily::Base);
        bad.hidden_size = 512;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn encode_shape_determinism_truncation() {
        let model = VaModel::new(small_spec(), 1).unwrap();
        let (m, _) = model.encode_pool(&texts(&["a b", "c", "a b"])).unwrap();
        assert_eq!(m.dim(), (3, 24));
        assert_eq!(m.row(0), m.row(2));

        let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let prefix = long[..15].join(" ");
        let (m, truncated) = model.encode_pool(&[long.join(" "), prefix]).unwrap();
        assert_eq!(m.row(0), m.row(1));
        assert_eq!(truncated, 1);
        assert!(matches!(
            model.encode_pool(&texts(&["ok", "  "])),
            Err(ModelError::TokenizationFailure(_))
        ));
    }

    #[test]
    fn zero_head_predicts_centre() {
        let mut model = VaModel::new(small_spec(), 1).unwrap();
        model.head = RegressionHead::zeros(24);
        for p in model.predict_batch(&texts(&["x", "y z", "¡hola!"])).unwrap() {
            assert_eq!((p.valence, p.arousal), (0.5, 0.5));
        }
    }

    #[test]
    fn batching_invariance() {
        let model = VaModel::new(small_spec(), 7).unwrap();
        let batch = texts(&["the sun", "rain again", "calm sea"]);
        let all = model.predict_batch(&batch).unwrap();
        for (i, t) in batch.iter().enumerate() {
            let one = model.predict_batch(std::slice::from_ref(t)).unwrap();
            assert_eq!(one[0], all[i]);
            let fwd = model.forward(t).unwrap();
            assert!((fwd.prediction.valence - all[i].valence).abs() < 1e-12);
        }
    }

    #[test]
    fn head_shape_must_match() {
        let spec = small_spec();
        let enc = Encoder::initialize(&spec);
        assert!(matches!(
            VaModel::from_parts(spec, enc, RegressionHead::zeros(10)),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }
}
