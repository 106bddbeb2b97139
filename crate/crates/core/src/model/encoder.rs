//! Single-layer attention encoder. Only the first (CLS) position is computed:
//!
//! ```text
//! e_j = token[id_j] + position[j]
//! q   = Wq e_0,   k_j = Wk e_j
//! a   = softmax(q·k_j / √d_attn)
//! h   = e_0 + Σ_j a_j e_j          (first-token hidden state)
//! ```

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub ids: Vec<usize>,
    embedded: Array2<f64>,
    q: Array1<f64>,
    keys: Array2<f64>,
    attention: Array1<f64>,
    pub hidden: Array1<f64>,
}

pub(crate) fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl Encoder {
    /// Deterministic initial weights for a checkpoint id.
    pub fn initialize(spec: &EncoderSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.weight_seed());
        let d = spec.hidden_size;
        let inv = 1.0 / (d as f64).sqrt();
        Self {
            token_embeddings: normal_matrix(spec.vocab_buckets, d, inv, &mut rng),
            position_embeddings: normal_matrix(spec.max_sequence_length, d, 0.1 * inv, &mut rng),
            query: normal_matrix(spec.attention_size, d, inv, &mut rng),
            key: normal_matrix(spec.attention_size, d, inv, &mut rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.token_embeddings.ncols()
    }

    pub fn forward(&self, ids: &[usize]) -> EncoderTrace {
        let len = ids.len();
        let d = self.hidden_size();
        let mut embedded = Array2::zeros((len, d));
        for (j, &id) in ids.iter().enumerate() {
            let mut row = embedded.row_mut(j);
            row += &self.token_embeddings.row(id);
            row += &self.position_embeddings.row(j);
        }
        let first = embedded.row(0);
        let q = self.query.dot(&first);
        let keys = embedded.dot(&self.key.t());
        let scale = 1.0 / (self.query.nrows() as f64).sqrt();
        let scores = keys.dot(&q) * scale;
        let max = scores.fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        let mut attention = scores.mapv(|s| (s - max).exp());
        attention /= attention.sum();
        let hidden = &first + &attention.dot(&embedded);
        EncoderTrace {
            ids: ids.to_vec(),
            embedded,
            q,
            keys,
            attention,
            hidden,
        }
    }

    /// Accumulates parameter gradients for upstream gradient `d_hidden`.
    pub fn backward(&self, trace: &EncoderTrace, d_hidden: ArrayView1<'_, f64>, grads: &mut EncoderGrads) {
        let scale = 1.0 / (self.query.nrows() as f64).sqrt();
        let a = &trace.attention;
        let mut d_embedded = Array2::zeros(trace.embedded.raw_dim());
        // value path (identity values) and the residual on position 0
        for (j, mut row) in d_embedded.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(a[j], &d_hidden);
        }
        d_embedded.row_mut(0).scaled_add(1.0, &d_hidden);
        // softmax
        let d_attn = trace.embedded.dot(&d_hidden);
        let centre = a.dot(&d_attn);
        let d_scores = a * &(d_attn - centre);
        let d_q = trace.keys.t().dot(&d_scores) * scale;
        let d_keys = {
            let mut m = Array2::zeros(trace.keys.raw_dim());
            for (j, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
                row.scaled_add(d_scores[j] * scale, &trace.q);
            }
            m
        };
        let first = trace.embedded.row(0);
        for (i, mut row) in grads.query.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(d_q[i], &first);
        }
        grads.key += &d_keys.t().dot(&trace.embedded);
        d_embedded.row_mut(0).scaled_add(1.0, &self.query.t().dot(&d_q));
        d_embedded += &d_keys.dot(&self.key);
        for (j, &id) in trace.ids.iter().enumerate() {
            let row = d_embedded.row(j);
            grads.token.row_mut(id).scaled_add(1.0, &row);
            grads.position.row_mut(j).scaled_add(1.0, &row);
            grads.touched_tokens.push(id);
            grads.touched_positions = grads.touched_positions.max(j + 1);
        }
    }
}

/// Gradient buffers shaped like [`Encoder`]. Token rows are zeroed lazily.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub token: Array2<f64>,
    pub position: Array2<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    touched_tokens: Vec<usize>,
    touched_positions: usize,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &Encoder) -> Self {
        Self {
            token: Array2::zeros(enc.token_embeddings.raw_dim()),
            position: Array2::zeros(enc.position_embeddings.raw_dim()),
            query: Array2::zeros(enc.query.raw_dim()),
            key: Array2::zeros(enc.key.raw_dim()),
            touched_tokens: Vec::new(),
            touched_positions: 0,
        }
    }

    pub fn zero(&mut self) {
        for &id in &self.touched_tokens {
            self.token.row_mut(id).fill(0.0);
        }
        self.touched_tokens.clear();
        self.position
            .slice_mut(ndarray::s![..self.touched_positions, ..])
            .fill(0.0);
        self.touched_positions = 0;
        self.query.fill(0.0);
        self.key.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.touched_tokens.sort_unstable();
        self.touched_tokens.dedup();
        for &id in &self.touched_tokens {
            self.token.row_mut(id).mapv_inplace(|g| g * factor);
        }
        self.position.mapv_inplace(|g| g * factor);
        self.query.mapv_inplace(|g| g * factor);
        self.key.mapv_inplace(|g| g * factor);
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        let mut rows = other.touched_tokens.clone();
        rows.sort_unstable();
        rows.dedup();
        for &id in &rows {
            self.token.row_mut(id).scaled_add(1.0, &other.token.row(id));
        }
        self.touched_tokens.extend(rows);
        self.touched_positions = self.touched_positions.max(other.touched_positions);
        self.position += &other.position;
        self.query += &other.query;
        self.key += &other.key;
    }
}
