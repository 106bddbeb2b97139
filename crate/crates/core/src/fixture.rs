//! Deterministic synthetic corpus: three invented languages, each with a
//! rated lexicon and a set of rated short texts built from that lexicon.
//!
//! Every word gets a latent `(v, a)` with arousal rising quadratically away
//! from neutral valence. A text's latent is the mean of its words' latents,
//! so the targets are linear in bag-of-words features.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::adapter::{sha256_hex, AdapterOptions};
use crate::corpus::{CorpusError, DatasetDescriptor, Granularity};

pub const DEFAULT_FIXTURE_SEED: u64 = 20_240_501;
pub const MANIFEST_FILE: &str = "manifest.json";

struct Language {
    code: &'static str,
    onsets: &'static [&'static str],
    vowels: &'static [&'static str],
    codas: &'static [&'static str],
    lexicon_size: usize,
    text_count: usize,
}

const LANGUAGES: [Language; 3] = [
    Language {
        code: "qa",
        onsets: &["p", "t", "k", "m", "n", "s", "l", "v"],
        vowels: &["a", "e", "i", "o", "u"],
        codas: &["", "", "n", "r"],
        lexicon_size: 50,
        text_count: 116,
    },
    Language {
        code: "qb",
        onsets: &["b", "d", "g", "z", "r", "h", "j"],
        vowels: &["a", "ä", "e", "o", "ö", "u"],
        codas: &["", "", "s", "l"],
        lexicon_size: 48,
        text_count: 114,
    },
    Language {
        code: "qc",
        onsets: &["б", "д", "к", "л", "м", "н", "р", "ш"],
        vowels: &["а", "е", "и", "о", "у"],
        codas: &["", "", "т", "в"],
        lexicon_size: 52,
        text_count: 115,
    },
];

#[derive(Debug, Clone)]
struct Word {
    form: String,
    valence: f64,
    arousal: f64,
}

/// One generated file plus its manifest entry.
#[derive(Debug, Clone)]
pub struct FixtureFile {
    pub name: String,
    pub bytes: Vec<u8>,
    pub descriptor: DatasetDescriptor,
}

fn lexicon(lang: &Language, rng: &mut ChaCha8Rng) -> Vec<Word> {
    let noise = Normal::new(0.0, 0.06).expect("finite");
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(lang.lexicon_size);
    while out.len() < lang.lexicon_size {
        let syllables = rng.gen_range(2..=3);
        let mut form = String::new();
        for _ in 0..syllables {
            form.push_str(lang.onsets.choose(rng).expect("nonempty"));
            form.push_str(lang.vowels.choose(rng).expect("nonempty"));
        }
        form.push_str(lang.codas.choose(rng).expect("nonempty"));
        if !seen.insert(form.clone()) {
            continue;
        }
        let valence: f64 = rng.gen_range(0.05..0.95);
        let arousal = (0.3 + 1.3 * (valence - 0.5).powi(2) + noise.sample(rng)).clamp(0.03, 0.97);
        out.push(Word { form, valence, arousal });
    }
    out
}

struct Text {
    text: String,
    valence: f64,
    arousal: f64,
}

fn texts(lang: &Language, words: &[Word], rng: &mut ChaCha8Rng) -> Vec<Text> {
    let noise = Normal::new(0.0, 0.015).expect("finite");
    (0..lang.text_count)
        .map(|_| {
            let len = rng.gen_range(5..=12);
            let picked: Vec<&Word> = (0..len).map(|_| words.choose(rng).expect("nonempty")).collect();
            let mean = |f: fn(&Word) -> f64| picked.iter().map(|w| f(w)).sum::<f64>() / len as f64;
            let mut text = picked.iter().map(|w| w.form.as_str()).collect::<Vec<_>>().join(" ");
            let mut chars = text.chars();
            if let Some(first) = chars.next() {
                text = first.to_uppercase().chain(chars).collect();
            }
            text.push(if rng.gen_bool(0.2) { '!' } else { '.' });
            Text {
                text,
                valence: (mean(|w| w.valence) + noise.sample(rng)).clamp(0.0, 1.0),
                arousal: (mean(|w| w.arousal) + noise.sample(rng)).clamp(0.0, 1.0),
            }
        })
        .collect()
}

fn on_scale(z: f64, lo: f64, hi: f64) -> f64 {
    lo + z * (hi - lo)
}

fn descriptor(id: &str, language: &str, granularity: Granularity, scale: (f64, f64), adapter: &str, file: &str) -> DatasetDescriptor {
    DatasetDescriptor {
        id: id.to_string(),
        language: language.to_string(),
        granularity,
        scale_min: scale.0,
        scale_max: scale.1,
        adapter: adapter.to_string(),
        source_uri: file.to_string(),
        checksum: None,
        arousal_scale: None,
        options: AdapterOptions::default(),
    }
}

/// Lexicon with four integer annotator ratings per word, one row each.
fn per_annotator_csv(words: &[Word], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let jitter = Normal::new(0.0, 0.45).expect("finite");
    let mut out = String::from("text,valence,arousal\n");
    for w in words {
        for _ in 0..4 {
            let r = |z: f64, rng: &mut ChaCha8Rng| (on_scale(z, 1.0, 9.0) + jitter.sample(rng)).round().clamp(1.0, 9.0);
            let (v, a) = (r(w.valence, rng), r(w.arousal, rng));
            writeln!(out, "{},{v},{a}", w.form).expect("string write");
        }
    }
    out.into_bytes()
}

fn mean_rated(words: &[Word], header: &str, sep: char) -> Vec<u8> {
    let mut out = format!("{header}\n");
    for w in words {
        writeln!(
            out,
            "{}{sep}{:.2}{sep}{:.2}",
            w.form,
            on_scale(w.valence, 1.0, 9.0),
            on_scale(w.arousal, 1.0, 9.0)
        )
        .expect("string write");
    }
    out.into_bytes()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// All fixture files and their manifest entries, checksums filled in.
pub fn generate(seed: u64) -> Vec<FixtureFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = Vec::new();
    for lang in &LANGUAGES {
        let words = lexicon(lang, &mut rng);
        let items = texts(lang, &words, &mut rng);
        let code = lang.code;
        match code {
            "qa" => {
                let name = "qa_lexicon.csv".to_string();
                let mut d = descriptor("qa_lexicon", code, Granularity::Word, (1.0, 9.0), "csv", &name);
                d.options.per_annotator = true;
                files.push((name, per_annotator_csv(&words, &mut rng), d));

                let name = "qa_texts.jsonl".to_string();
                let mut body = String::new();
                for t in &items {
                    let line = serde_json::json!({
                        "text": t.text,
                        "valence": (on_scale(t.valence, 1.0, 5.0) * 1000.0).round() / 1000.0,
                        "arousal": (on_scale(t.arousal, 1.0, 5.0) * 1000.0).round() / 1000.0,
                    });
                    body.push_str(&line.to_string());
                    body.push('\n');
                }
                let d = descriptor("qa_texts", code, Granularity::ShortText, (1.0, 5.0), "jsonl", &name);
                files.push((name, body.into_bytes(), d));
            }
            "qb" => {
                let name = "qb_lexicon.tsv".to_string();
                let d = descriptor("qb_lexicon", code, Granularity::Word, (1.0, 9.0), "tsv", &name);
                files.push((name, mean_rated(&words, "text\tvalence\tarousal", '\t'), d));

                let name = "qb_texts.csv".to_string();
                let mut body = String::from("id,text,V,A\n");
                for (k, t) in items.iter().enumerate() {
                    writeln!(
                        body,
                        "qb{k:03},{},{:.3},{:.3}",
                        csv_field(&t.text),
                        on_scale(t.valence, 1.0, 5.0),
                        on_scale(t.arousal, 1.0, 5.0)
                    )
                    .expect("string write");
                }
                let d = descriptor("qb_texts", code, Granularity::ShortText, (1.0, 5.0), "emobank", &name);
                files.push((name, body.into_bytes(), d));
            }
            _ => {
                let name = "qc_lexicon.csv".to_string();
                let d = descriptor("qc_lexicon", code, Granularity::Word, (1.0, 9.0), "warriner", &name);
                files.push((name, mean_rated(&words, "Word,V.Mean.Sum,A.Mean.Sum", ','), d));

                let name = "qc_texts.csv".to_string();
                let mut body = String::from("sentence,val,aro\n");
                for t in &items {
                    writeln!(
                        body,
                        "{},{:.3},{:.3}",
                        csv_field(&t.text),
                        on_scale(t.valence, -3.0, 3.0),
                        on_scale(t.arousal, 1.0, 5.0)
                    )
                    .expect("string write");
                }
                let mut d = descriptor("qc_texts", code, Granularity::ShortText, (-3.0, 3.0), "csv", &name);
                d.arousal_scale = Some((1.0, 5.0));
                d.options.text_column = Some("sentence".into());
                d.options.valence_column = Some("val".into());
                d.options.arousal_column = Some("aro".into());
                files.push((name, body.into_bytes(), d));
            }
        }
    }
    files
        .into_iter()
        .map(|(name, bytes, mut descriptor)| {
            descriptor.checksum = Some(format!("sha256:{}", sha256_hex(&bytes)));
            FixtureFile { name, bytes, descriptor }
        })
        .collect()
}

pub fn manifest(files: &[FixtureFile]) -> Vec<DatasetDescriptor> {
    files.iter().map(|f| f.descriptor.clone()).collect()
}

/// Writes the data files and `manifest.json` into `dir`.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<Vec<DatasetDescriptor>, CorpusError> {
    std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let files = generate(seed);
    for f in &files {
        let path = dir.join(&f.name);
        std::fs::write(&path, &f.bytes).map_err(|e| CorpusError::io(&path, e))?;
    }
    let manifest = manifest(&files);
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| CorpusError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, quadratic_va_fit};

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate(7);
        let b = generate(7);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bytes, y.bytes);
        }
        assert_ne!(a[0].bytes, generate(8)[0].bytes);
    }

    #[test]
    fn builds_into_corpus_of_about_500() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_fixture(dir.path(), DEFAULT_FIXTURE_SEED).unwrap();
        let out = build_corpus(&manifest, dir.path(), 1).unwrap();
        assert!(out.skipped.is_empty());
        let n = out.corpus.len();
        assert!((480..=520).contains(&n), "{n}");
        assert_eq!(out.corpus.languages(), ["qa", "qb", "qc"]);
        assert_eq!(out.corpus.iter().filter(|i| i.dataset_id == "qa_lexicon").count(), 50);
        out.corpus.check_invariants().unwrap();
        assert!(quadratic_va_fit(&out.corpus).unwrap().c2 > 0.0);
    }
}
