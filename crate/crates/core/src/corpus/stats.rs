use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotatedInstance, Corpus, CorpusError};

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Counts over 10 equal-width bins on `[0, 1]`; 1.0 falls in the last bin.
    pub histogram: [u64; HISTOGRAM_BINS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    /// Whitespace-delimited words per instance.
    pub mean_length_words: f64,
    pub valence: DimensionStats,
    pub arousal: DimensionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub global: GroupStats,
    pub by_dataset: BTreeMap<String, GroupStats>,
    pub by_language: BTreeMap<String, GroupStats>,
    pub by_granularity: BTreeMap<String, GroupStats>,
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    words: usize,
    valence: Vec<f64>,
    arousal: Vec<f64>,
}

impl Accumulator {
    fn push(&mut self, inst: &AnnotatedInstance) {
        self.count += 1;
        self.words += inst.text.split_whitespace().count();
        self.valence.push(inst.valence);
        self.arousal.push(inst.arousal);
    }

    fn finish(self) -> GroupStats {
        GroupStats {
            count: self.count,
            mean_length_words: self.words as f64 / self.count as f64,
            valence: dimension(&self.valence),
            arousal: dimension(&self.arousal),
        }
    }
}

fn dimension(values: &[f64]) -> DimensionStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut histogram = [0u64; HISTOGRAM_BINS];
    for &v in values {
        let bin = ((v * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    DimensionStats {
        mean,
        std: var.sqrt(),
        histogram,
    }
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut global = Accumulator::default();
    let mut by_dataset: BTreeMap<String, Accumulator> = BTreeMap::new();
    let mut by_language: BTreeMap<String, Accumulator> = BTreeMap::new();
    let mut by_granularity: BTreeMap<String, Accumulator> = BTreeMap::new();
    for inst in corpus.iter() {
        global.push(inst);
        by_dataset.entry(inst.dataset_id.clone()).or_default().push(inst);
        by_language.entry(inst.language.clone()).or_default().push(inst);
        by_granularity
            .entry(inst.granularity.as_str().to_string())
            .or_default()
            .push(inst);
    }
    let finish = |m: BTreeMap<String, Accumulator>| {
        m.into_iter().map(|(k, v)| (k, v.finish())).collect()
    };
    Ok(CorpusStats {
        global: global.finish(),
        by_dataset: finish(by_dataset),
        by_language: finish(by_language),
        by_granularity: finish(by_granularity),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Fold, Granularity};

    fn inst(id: usize, dataset: &str, lang: &str, text: &str, v: f64, a: f64) -> AnnotatedInstance {
        AnnotatedInstance {
            instance_id: format!("{dataset}:{id}"),
            dataset_id: dataset.into(),
            language: lang.into(),
            granularity: if text.contains(' ') { Granularity::ShortText } else { Granularity::Word },
            text: text.into(),
            valence: v,
            arousal: a,
            fold: Fold::Unassigned,
        }
    }

    #[test]
    fn constant_valence() {
        let c = Corpus::new((0..6).map(|i| inst(i, "d", "en", "w", 0.5, i as f64 / 10.0)).collect());
        let s = corpus_stats(&c).unwrap();
        assert_eq!(s.global.valence.mean, 0.5);
        assert_eq!(s.global.valence.std, 0.0);
        assert_eq!(s.global.valence.histogram[5], 6);
    }

    #[test]
    fn known_moments_and_histogram() {
        let vals = [0.0, 0.25, 0.5, 1.0];
        let c = Corpus::new(
            vals.iter().enumerate().map(|(i, &v)| inst(i, "d", "en", "one two three", v, 1.0 - v)).collect(),
        );
        let s = corpus_stats(&c).unwrap();
        let mean = 0.4375;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((s.global.valence.mean - mean).abs() < 1e-15);
        assert!((s.global.valence.std - var.sqrt()).abs() < 1e-15);
        assert_eq!(s.global.valence.histogram, [1, 0, 1, 0, 0, 1, 0, 0, 0, 1]);
        assert_eq!(s.global.mean_length_words, 3.0);
    }

    #[test]
    fn group_counts_add_up() {
        let mut items = Vec::new();
        for i in 0..5 {
            items.push(inst(i, "a", "en", "x", 0.2, 0.3));
        }
        for i in 0..3 {
            items.push(inst(i, "b", "pt", "y z", 0.6, 0.9));
        }
        let s = corpus_stats(&Corpus::new(items)).unwrap();
        assert_eq!(s.global.count, 8);
        assert_eq!(s.by_dataset.values().map(|g| g.count).sum::<usize>(), 8);
        assert_eq!(s.by_language.values().map(|g| g.count).sum::<usize>(), 8);
        assert_eq!(s.by_granularity["short_text"].count, 3);
        assert!(corpus_stats(&Corpus::default()).is_err());
    }
}
