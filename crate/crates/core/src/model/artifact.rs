//! Predictor artifact: `encoder.safetensors`, `head.safetensors` and
//! `metadata.json` in one directory.

use std::path::Path;

use ndarray::{Array1, Array2};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderFamily, EncoderSpec, ModelError, RegressionHead, VaModel, OUTPUT_ORDER};

pub const ENCODER_FILE: &str = "encoder.safetensors";
pub const HEAD_FILE: &str = "head.safetensors";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub checkpoint_id: String,
    pub hidden_size: usize,
    pub max_sequence_length: usize,
    pub hard_sigmoid_slope: f64,
    pub output_order: Vec<String>,
    pub family: EncoderFamily,
    pub vocab_buckets: usize,
    pub attention_size: usize,
}

impl ArtifactMetadata {
    fn of(model: &VaModel) -> Self {
        Self {
            checkpoint_id: model.spec.checkpoint_id.clone(),
            hidden_size: model.spec.hidden_size,
            max_sequence_length: model.spec.max_sequence_length,
            hard_sigmoid_slope: model.hard_sigmoid_slope,
            output_order: OUTPUT_ORDER.iter().map(|s| s.to_string()).collect(),
            family: model.spec.family,
            vocab_buckets: model.spec.vocab_buckets,
            attention_size: model.spec.attention_size,
        }
    }

    fn spec(&self) -> EncoderSpec {
        EncoderSpec {
            checkpoint_id: self.checkpoint_id.clone(),
            hidden_size: self.hidden_size,
            max_sequence_length: self.max_sequence_length,
            family: self.family,
            vocab_buckets: self.vocab_buckets,
            attention_size: self.attention_size,
        }
    }
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_tensors(path: &Path, tensors: &[(&str, Vec<usize>, Vec<u8>)]) -> Result<(), ModelError> {
    let views = tensors
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.to_string(), v))
                .map_err(|e| ModelError::Artifact(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let data = safetensors::serialize(views, &None).map_err(|e| ModelError::Artifact(e.to_string()))?;
    std::fs::write(path, data)?;
    Ok(())
}

fn read_tensor(st: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<Vec<f64>, ModelError> {
    let view = st
        .tensor(name)
        .map_err(|e| ModelError::Artifact(format!("{name}: {e}")))?;
    if view.dtype() != Dtype::F64 {
        return Err(ModelError::Artifact(format!("{name}: expected F64, found {:?}", view.dtype())));
    }
    if view.shape() != shape {
        return Err(ModelError::Artifact(format!(
            "{name}: expected shape {shape:?}, found {:?}",
            view.shape()
        )));
    }
    Ok(view
        .data()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn matrix(st: &SafeTensors<'_>, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>, ModelError> {
    let data = read_tensor(st, name, &[rows, cols])?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}

fn flat(a: &Array2<f64>) -> Vec<u8> {
    to_bytes(a.as_slice().expect("standard layout"))
}

pub fn save_predictor(model: &VaModel, dir: &Path) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir)?;
    let e = &model.encoder;
    write_tensors(
        &dir.join(ENCODER_FILE),
        &[
            ("token_embeddings", e.token_embeddings.shape().to_vec(), flat(&e.token_embeddings)),
            ("position_embeddings", e.position_embeddings.shape().to_vec(), flat(&e.position_embeddings)),
            ("query", e.query.shape().to_vec(), flat(&e.query)),
            ("key", e.key.shape().to_vec(), flat(&e.key)),
        ],
    )?;
    write_tensors(
        &dir.join(HEAD_FILE),
        &[
            ("weight", model.head.weight.shape().to_vec(), flat(&model.head.weight)),
            ("bias", vec![2], to_bytes(model.head.bias.as_slice().expect("standard layout"))),
        ],
    )?;
    let meta = serde_json::to_vec_pretty(&ArtifactMetadata::of(model)).expect("metadata serializes");
    std::fs::write(dir.join(METADATA_FILE), meta)?;
    Ok(())
}

pub fn load_metadata(dir: &Path) -> Result<ArtifactMetadata, ModelError> {
    let path = dir.join(METADATA_FILE);
    if !path.exists() {
        return Err(ModelError::CheckpointUnavailable(dir.display().to_string()));
    }
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| ModelError::Artifact(format!("{METADATA_FILE}: {e}")))
}

pub fn load_predictor(dir: &Path) -> Result<VaModel, ModelError> {
    let meta = load_metadata(dir)?;
    if meta.output_order != OUTPUT_ORDER {
        return Err(ModelError::Artifact(format!("unsupported output order {:?}", meta.output_order)));
    }
    let spec = meta.spec();
    let d = spec.hidden_size;
    let enc_bytes = std::fs::read(dir.join(ENCODER_FILE))?;
    let st = SafeTensors::deserialize(&enc_bytes).map_err(|e| ModelError::Artifact(e.to_string()))?;
    let encoder = Encoder {
        token_embeddings: matrix(&st, "token_embeddings", spec.vocab_buckets, d)?,
        position_embeddings: matrix(&st, "position_embeddings", spec.max_sequence_length, d)?,
        query: matrix(&st, "query", spec.attention_size, d)?,
        key: matrix(&st, "key", spec.attention_size, d)?,
    };
    let head_bytes = std::fs::read(dir.join(HEAD_FILE))?;
    let st = SafeTensors::deserialize(&head_bytes).map_err(|e| ModelError::Artifact(e.to_string()))?;
    let head = RegressionHead {
        weight: matrix(&st, "weight", 2, d)?,
        bias: Array1::from(read_tensor(&st, "bias", &[2])?),
    };
    let mut model = VaModel::from_parts(spec, encoder, head)?;
    model.hard_sigmoid_slope = meta.hard_sigmoid_slope;
    Ok(model)
}

/// Resolves a checkpoint reference: a saved artifact directory, or a
/// registered id for fresh initial weights.
pub fn resolve_checkpoint(reference: &str, head_seed: u64) -> Result<VaModel, ModelError> {
    let path = Path::new(reference);
    if path.join(METADATA_FILE).exists() {
        return load_predictor(path);
    }
    VaModel::new(EncoderSpec::from_registry(reference)?, head_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = EncoderSpec {
            checkpoint_id: "tiny".into(),
            hidden_size: 12,
            max_sequence_length: 8,
            family: EncoderFamily::DistilledBase,
            vocab_buckets: 31,
            attention_size: 4,
        };
        let mut model = VaModel::new(spec, 3).unwrap();
        model.head.bias[1] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        save_predictor(&model, dir.path()).unwrap();
        let loaded = load_predictor(dir.path()).unwrap();
        assert_eq!(loaded, model);
        let texts = vec!["one two".to_string(), "three".to_string()];
        assert_eq!(loaded.predict_batch(&texts).unwrap(), model.predict_batch(&texts).unwrap());
        let meta = load_metadata(dir.path()).unwrap();
        assert_eq!(meta.output_order, ["valence", "arousal"]);
    }

    #[test]
    fn missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_predictor(dir.path()),
            Err(ModelError::CheckpointUnavailable(_))
        ));
        assert!(matches!(
            resolve_checkpoint("no-such-model", 0),
            Err(ModelError::CheckpointUnavailable(_))
        ));
    }
}
