//! Merged valence–arousal corpus: descriptors, normalization to `[0, 1]`,
//! per-dataset fold assignment, and JSON-lines persistence.

pub mod adapter;
mod fit;
mod stats;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapter::{parse_dataset, AdapterOptions, RawRecord, TextEncoding};
pub use fit::{quadratic_va_fit, QuadraticFit};
pub use stats::{corpus_stats, CorpusStats, DimensionStats, GroupStats, HISTOGRAM_BINS};

/// Environment variable naming the directory that relative `source_uri`s
/// are resolved against.
pub const DATA_ROOT_ENV: &str = "AFFECTVA_DATA_ROOT";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown adapter `{0}`")]
    UnknownAdapter(String),
    #[error("checksum mismatch for `{dataset}`: expected {expected}, got {actual}")]
    ChecksumMismatch {
        dataset: String,
        expected: String,
        actual: String,
    },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: rating {value} outside scale [{scale_min}, {scale_max}]")]
    OutOfScaleRating {
        row: usize,
        value: f64,
        scale_min: f64,
        scale_max: f64,
    },
    #[error("dataset `{0}` has no records")]
    EmptyDataset(String),
    #[error("empty annotation list")]
    EmptyAnnotationList,
    #[error("degenerate scale [{0}, {0}]")]
    DegenerateScale(f64),
    #[error("rating {value} outside [{scale_min}, {scale_max}]")]
    RatingOutOfRange {
        value: f64,
        scale_min: f64,
        scale_max: f64,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateInstanceId(String),
    #[error("invalid dataset descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("quadratic fit needs at least 3 distinct valence values, found {0}")]
    RankDeficient(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Word,
    ShortText,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Word => "word",
            Granularity::ShortText => "short_text",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Fold {
    A,
    B,
    #[default]
    #[serde(rename = "unassigned")]
    Unassigned,
}

impl Fold {
    pub fn other(self) -> Fold {
        match self {
            Fold::A => Fold::B,
            Fold::B => Fold::A,
            Fold::Unassigned => Fold::Unassigned,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fold::A => "A",
            Fold::B => "B",
            Fold::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    /// ISO 639-1 code.
    pub language: String,
    pub granularity: Granularity,
    pub scale_min: f64,
    pub scale_max: f64,
    pub adapter: String,
    pub source_uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
    /// Separate arousal scale, for sources that rate the two dimensions on
    /// different instruments. Defaults to `[scale_min, scale_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal_scale: Option<(f64, f64)>,
    #[serde(default)]
    pub options: AdapterOptions,
}

impl DatasetDescriptor {
    pub fn valence_scale(&self) -> (f64, f64) {
        (self.scale_min, self.scale_max)
    }

    pub fn arousal_scale(&self) -> (f64, f64) {
        self.arousal_scale.unwrap_or((self.scale_min, self.scale_max))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidDescriptor(m));
        if self.id.trim().is_empty() || self.id.contains(':') {
            return bad(format!("id {:?} must be nonempty and contain no ':'", self.id));
        }
        if self.language.len() != 2 || !self.language.chars().all(|c| c.is_ascii_lowercase()) {
            return bad(format!("{}: language {:?} is not an ISO 639-1 code", self.id, self.language));
        }
        for (lo, hi) in [self.valence_scale(), self.arousal_scale()] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("{}: scale [{lo}, {hi}] needs min < max", self.id));
            }
        }
        if !adapter::ADAPTERS.contains(&self.adapter.as_str()) {
            return Err(CorpusError::UnknownAdapter(self.adapter.clone()));
        }
        Ok(())
    }

    /// Source location, resolved against `data_root` when relative.
    pub fn resolve_source(&self, data_root: &Path) -> PathBuf {
        let p = Path::new(&self.source_uri);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            data_root.join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub instance_id: String,
    pub dataset_id: String,
    pub language: String,
    pub granularity: Granularity,
    pub text: String,
    pub valence: f64,
    pub arousal: f64,
    #[serde(default)]
    pub fold: Fold,
}

/// Merged corpus in source order (manifest order, then row order).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub instances: Vec<AnnotatedInstance>,
}

impl Corpus {
    pub fn new(instances: Vec<AnnotatedInstance>) -> Self {
        Self { instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AnnotatedInstance> {
        self.instances.iter()
    }

    pub fn filter(&self, keep: impl Fn(&AnnotatedInstance) -> bool) -> Corpus {
        Corpus::new(self.instances.iter().filter(|i| keep(i)).cloned().collect())
    }

    pub fn fold(&self, fold: Fold) -> Corpus {
        self.filter(|i| i.fold == fold)
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.instances
            .iter()
            .filter(|i| seen.insert(i.dataset_id.as_str()))
            .map(|i| i.dataset_id.clone())
            .collect()
    }

    pub fn languages(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.instances.iter().map(|i| i.language.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Corpus, CorpusError> {
        let mut instances = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(Path::new("<corpus>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: AnnotatedInstance = serde_json::from_str(&line)
                .map_err(|source| CorpusError::Json { line: i + 1, source })?;
            instances.push(inst);
        }
        let corpus = Corpus::new(instances);
        corpus.check_invariants()?;
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Corpus, CorpusError> {
        let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
        Corpus::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_jsonl_bytes()).map_err(|e| CorpusError::io(path, e))
    }

    /// SHA-256 of the JSON-lines serialization.
    pub fn content_hash(&self) -> String {
        adapter::sha256_hex(&self.to_jsonl_bytes())
    }

    pub fn check_invariants(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::with_capacity(self.instances.len());
        for inst in &self.instances {
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(CorpusError::DuplicateInstanceId(inst.instance_id.clone()));
            }
            for value in [inst.valence, inst.arousal] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(CorpusError::RatingOutOfRange {
                        value,
                        scale_min: 0.0,
                        scale_max: 1.0,
                    });
                }
            }
            if inst.text.trim().is_empty() {
                return Err(CorpusError::MalformedRow {
                    row: 0,
                    reason: format!("{}: empty text", inst.instance_id),
                });
            }
        }
        Ok(())
    }
}

/// Arithmetic mean of one item's annotator ratings.
pub fn aggregate_annotations(ratings: &[f64]) -> Result<f64, CorpusError> {
    if ratings.is_empty() {
        return Err(CorpusError::EmptyAnnotationList);
    }
    // Sorting first makes the sum order, and so the result, permutation-invariant.
    let mut sorted = ratings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(mean.clamp(sorted[0], sorted[sorted.len() - 1]))
}

/// `(x − min) / (max − min)` on the rating scale's endpoints.
pub fn normalize_rating(x: f64, scale_min: f64, scale_max: f64) -> Result<f64, CorpusError> {
    if scale_min == scale_max {
        return Err(CorpusError::DegenerateScale(scale_min));
    }
    if !(scale_min < scale_max) {
        return Err(CorpusError::InvalidDescriptor(format!(
            "scale [{scale_min}, {scale_max}] needs min < max"
        )));
    }
    if !(scale_min..=scale_max).contains(&x) {
        return Err(CorpusError::RatingOutOfRange {
            value: x,
            scale_min,
            scale_max,
        });
    }
    if x == scale_max {
        return Ok(1.0);
    }
    Ok(((x - scale_min) / (scale_max - scale_min)).clamp(0.0, 1.0))
}

/// Inverse of [`normalize_rating`].
pub fn denormalize_rating(z: f64, scale_min: f64, scale_max: f64) -> f64 {
    scale_min + z * (scale_max - scale_min)
}

/// Normalizes one parsed dataset into corpus instances.
pub fn normalize_dataset(
    descriptor: &DatasetDescriptor,
    records: &[RawRecord],
) -> Result<Vec<AnnotatedInstance>, CorpusError> {
    let (vmin, vmax) = descriptor.valence_scale();
    let (amin, amax) = descriptor.arousal_scale();
    records
        .iter()
        .enumerate()
        .map(|(ordinal, r)| {
            Ok(AnnotatedInstance {
                instance_id: format!("{}:{}", descriptor.id, ordinal),
                dataset_id: descriptor.id.clone(),
                language: descriptor.language.clone(),
                granularity: descriptor.granularity,
                text: r.text.clone(),
                valence: normalize_rating(aggregate_annotations(&r.valence)?, vmin, vmax)?,
                arousal: normalize_rating(aggregate_annotations(&r.arousal)?, amin, amax)?,
                fold: Fold::Unassigned,
            })
        })
        .collect()
}

pub fn validate_manifest(manifest: &[DatasetDescriptor]) -> Result<(), CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::InvalidManifest("manifest lists no datasets".into()));
    }
    let mut ids = HashSet::new();
    for d in manifest {
        d.validate()?;
        if !ids.insert(d.id.as_str()) {
            return Err(CorpusError::InvalidManifest(format!("duplicate dataset id `{}`", d.id)));
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<DatasetDescriptor>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let manifest: Vec<DatasetDescriptor> = serde_json::from_slice(&bytes)
        .map_err(|e| CorpusError::InvalidManifest(e.to_string()))?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}

/// Concatenates normalized datasets in manifest order. Identical texts from
/// different sources stay separate instances.
pub fn merge_corpus(
    manifest: &[DatasetDescriptor],
    parsed: Vec<Vec<AnnotatedInstance>>,
) -> Result<Corpus, CorpusError> {
    let known: HashSet<&str> = manifest.iter().map(|d| d.id.as_str()).collect();
    let mut by_dataset: BTreeMap<usize, Vec<AnnotatedInstance>> = BTreeMap::new();
    let position = |id: &str| manifest.iter().position(|d| d.id == id);
    for set in parsed {
        let Some(first) = set.first() else { continue };
        if !known.contains(first.dataset_id.as_str()) {
            return Err(CorpusError::InvalidManifest(format!(
                "dataset `{}` is not in the manifest",
                first.dataset_id
            )));
        }
        let pos = position(&first.dataset_id).unwrap_or(usize::MAX);
        by_dataset.entry(pos).or_default().extend(set);
    }
    let corpus = Corpus::new(by_dataset.into_values().flatten().collect());
    let mut ids = HashSet::with_capacity(corpus.len());
    for inst in &corpus.instances {
        if !ids.insert(inst.instance_id.as_str()) {
            return Err(CorpusError::DuplicateInstanceId(inst.instance_id.clone()));
        }
    }
    Ok(corpus)
}

fn dataset_seed(seed: u64, dataset_id: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(dataset_id.as_bytes());
    h.finish() ^ seed.rotate_left(17)
}

/// Splits every dataset independently into two halves. With an odd count the
/// extra instance lands in fold A.
pub fn split_folds(corpus: &Corpus, seed: u64) -> Corpus {
    let mut out = corpus.clone();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.instances.iter().enumerate() {
        groups.entry(inst.dataset_id.as_str()).or_default().push(i);
    }
    for (dataset, mut idx) in groups {
        let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed(seed, dataset));
        idx.shuffle(&mut rng);
        let a_count = idx.len().div_ceil(2);
        for (k, &i) in idx.iter().enumerate() {
            out.instances[i].fold = if k < a_count { Fold::A } else { Fold::B };
        }
    }
    out
}

/// Keeps at most `max_per_dataset` instances of each dataset, chosen with a
/// seeded shuffle and returned in source order.
pub fn subsample_per_dataset(corpus: &Corpus, max_per_dataset: usize, seed: u64) -> Corpus {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.instances.iter().enumerate() {
        groups.entry(inst.dataset_id.as_str()).or_default().push(i);
    }
    let mut keep = vec![false; corpus.len()];
    for (dataset, mut idx) in groups {
        if idx.len() > max_per_dataset {
            let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed(seed ^ 0x5eed, dataset));
            idx.shuffle(&mut rng);
            idx.truncate(max_per_dataset);
        }
        for i in idx {
            keep[i] = true;
        }
    }
    Corpus::new(
        corpus
            .instances
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(i, _)| i.clone())
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDataset {
    pub id: String,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub corpus: Corpus,
    pub included: Vec<String>,
    pub skipped: Vec<SkippedDataset>,
}

/// Reads every dataset in the manifest that exists under `data_root`,
/// normalizes, merges and assigns folds. Missing files are skipped.
pub fn build_corpus(
    manifest: &[DatasetDescriptor],
    data_root: &Path,
    seed: u64,
) -> Result<BuildOutcome, CorpusError> {
    validate_manifest(manifest)?;
    let mut parsed = Vec::new();
    let mut included = Vec::new();
    let mut skipped = Vec::new();
    for d in manifest {
        let path = d.resolve_source(data_root);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                log::warn!("dataset `{}` not found at {}; skipping", d.id, path.display());
                skipped.push(SkippedDataset {
                    id: d.id.clone(),
                    path,
                    reason: "not found".into(),
                });
                continue;
            }
            Err(e) => return Err(CorpusError::io(&path, e)),
        };
        let records = parse_dataset(d, &bytes).map_err(|e| match e {
            CorpusError::MalformedRow { row, reason } => CorpusError::MalformedRow {
                row,
                reason: format!("{}: {reason}", d.id),
            },
            other => other,
        })?;
        parsed.push(normalize_dataset(d, &records)?);
        included.push(d.id.clone());
    }
    let corpus = split_folds(&merge_corpus(manifest, parsed)?, seed);
    Ok(BuildOutcome {
        corpus,
        included,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(dataset: &str, i: usize, v: f64, a: f64) -> AnnotatedInstance {
        AnnotatedInstance {
            instance_id: format!("{dataset}:{i}"),
            dataset_id: dataset.into(),
            language: "en".into(),
            granularity: Granularity::Word,
            text: format!("w{i}"),
            valence: v,
            arousal: a,
            fold: Fold::Unassigned,
        }
    }

    fn descriptor(id: &str) -> DatasetDescriptor {
        DatasetDescriptor {
            id: id.into(),
            language: "en".into(),
            granularity: Granularity::Word,
            scale_min: 1.0,
            scale_max: 9.0,
            adapter: "csv".into(),
            source_uri: format!("{id}.csv"),
            checksum: None,
            arousal_scale: None,
            options: AdapterOptions::default(),
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_annotations(&[5.0]).unwrap(), 5.0);
        assert_eq!(aggregate_annotations(&[2.0, 4.0, 6.0]).unwrap(), 4.0);
        assert_eq!(
            aggregate_annotations(&[0.1, 0.7, 0.2, 0.3]).unwrap(),
            aggregate_annotations(&[0.3, 0.2, 0.7, 0.1]).unwrap()
        );
        assert!(matches!(aggregate_annotations(&[]), Err(CorpusError::EmptyAnnotationList)));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_rating(1.0, 1.0, 9.0).unwrap(), 0.0);
        assert_eq!(normalize_rating(9.0, 1.0, 9.0).unwrap(), 1.0);
        assert_eq!(normalize_rating(5.0, 1.0, 9.0).unwrap(), 0.5);
        assert!(matches!(normalize_rating(3.0, 3.0, 3.0), Err(CorpusError::DegenerateScale(_))));
        assert!(matches!(
            normalize_rating(9.5, 1.0, 9.0),
            Err(CorpusError::RatingOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn normalization_is_monotone_and_invertible(
            lo in -100.0f64..100.0, width in 0.5f64..100.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0
        ) {
            let hi = lo + width;
            let x1 = lo + t1 * width;
            let x2 = lo + t2 * width;
            let z1 = normalize_rating(x1, lo, hi).unwrap();
            let z2 = normalize_rating(x2, lo, hi).unwrap();
            prop_assert!((0.0..=1.0).contains(&z1));
            if x1 < x2 { prop_assert!(z1 <= z2); }
            let back = denormalize_rating(z1, lo, hi);
            prop_assert!((back - x1).abs() <= 1e-12 * x1.abs().max(width));
        }

        #[test]
        fn folds_partition_each_dataset(sizes in prop::collection::vec(1usize..40, 1..5), seed in any::<u64>()) {
            let mut all = Vec::new();
            for (d, &n) in sizes.iter().enumerate() {
                for i in 0..n { all.push(inst(&format!("d{d}"), i, 0.5, 0.5)); }
            }
            let split = split_folds(&Corpus::new(all), seed);
            for (d, &n) in sizes.iter().enumerate() {
                let id = format!("d{d}");
                let a = split.iter().filter(|i| i.dataset_id == id && i.fold == Fold::A).count();
                let b = split.iter().filter(|i| i.dataset_id == id && i.fold == Fold::B).count();
                prop_assert_eq!(a + b, n);
                prop_assert!(a.abs_diff(b) <= 1);
            }
        }
    }

    #[test]
    fn split_examples() {
        let ten = Corpus::new((0..10).map(|i| inst("d", i, 0.5, 0.5)).collect());
        let s = split_folds(&ten, 3);
        assert_eq!(s.fold(Fold::A).len(), 5);
        assert_eq!(s.fold(Fold::B).len(), 5);
        assert_eq!(split_folds(&ten, 3), s);

        let seven = Corpus::new((0..7).map(|i| inst("d", i, 0.5, 0.5)).collect());
        let s = split_folds(&seven, 3);
        let mut sizes = [s.fold(Fold::A).len(), s.fold(Fold::B).len()];
        sizes.sort();
        assert_eq!(sizes, [3, 4]);

        let one = Corpus::new(vec![inst("d", 0, 0.5, 0.5)]);
        assert_eq!(split_folds(&one, 99).instances[0].fold, Fold::A);
    }

    #[test]
    fn merge_keeps_counts_and_cross_dataset_duplicates() {
        let manifest = vec![descriptor("x"), descriptor("y")];
        let mut shared_x = inst("x", 0, 0.2, 0.3);
        shared_x.text = "dog".into();
        let mut shared_y = inst("y", 0, 0.7, 0.3);
        shared_y.text = "dog".into();
        let merged = merge_corpus(
            &manifest,
            vec![vec![shared_y, inst("y", 1, 0.1, 0.1)], vec![shared_x, inst("x", 1, 0.4, 0.4)]],
        )
        .unwrap();
        assert_eq!(merged.len(), 4);
        // manifest order wins over argument order
        assert_eq!(merged.instances[0].dataset_id, "x");
        let dogs: Vec<_> = merged.iter().filter(|i| i.text == "dog").collect();
        assert_eq!(dogs.len(), 2);
        assert_ne!(dogs[0].instance_id, dogs[1].instance_id);

        let single = merge_corpus(&manifest, vec![vec![inst("x", 0, 0.1, 0.1)]]).unwrap();
        assert_eq!(single.len(), 1);

        let dup = merge_corpus(&manifest, vec![vec![inst("x", 0, 0.1, 0.1), inst("x", 0, 0.2, 0.2)]]);
        assert!(matches!(dup, Err(CorpusError::DuplicateInstanceId(_))));
    }

    #[test]
    fn normalize_dataset_assigns_ordinal_ids() {
        let d = descriptor("lex");
        let recs = vec![
            RawRecord { row: 2, text: "a".into(), valence: vec![1.0], arousal: vec![9.0] },
            RawRecord { row: 3, text: "b".into(), valence: vec![3.0, 7.0], arousal: vec![5.0] },
        ];
        let out = normalize_dataset(&d, &recs).unwrap();
        assert_eq!(out[0].instance_id, "lex:0");
        assert_eq!(out[1].instance_id, "lex:1");
        assert_eq!((out[0].valence, out[0].arousal), (0.0, 1.0));
        assert_eq!((out[1].valence, out[1].arousal), (0.5, 0.5));
    }

    #[test]
    fn descriptor_validation() {
        assert!(descriptor("ok").validate().is_ok());
        let mut d = descriptor("bad");
        d.scale_max = 1.0;
        assert!(d.validate().is_err());
        let mut d = descriptor("bad");
        d.language = "eng".into();
        assert!(d.validate().is_err());
        let mut d = descriptor("bad");
        d.adapter = "parquet".into();
        assert!(matches!(d.validate(), Err(CorpusError::UnknownAdapter(_))));
        assert!(validate_manifest(&[]).is_err());
        assert!(validate_manifest(&[descriptor("a"), descriptor("a")]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let c = split_folds(&Corpus::new((0..5).map(|i| inst("d", i, 0.125 * i as f64, 0.3)).collect()), 1);
        let bytes = c.to_jsonl_bytes();
        let back = Corpus::read_jsonl(&bytes[..]).unwrap();
        assert_eq!(back, c);
        let line = String::from_utf8(bytes).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["instance_id", "dataset_id", "language", "granularity", "text", "valence", "arousal", "fold"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }
}
