//! Source-format adapters. Each adapter turns the raw bytes of one dataset
//! file into raw records carrying ratings on the dataset's original scale.
//!
//! Registered adapters:
//!
//! | name        | format                                   | default columns              |
//! |-------------|------------------------------------------|------------------------------|
//! | `csv`       | comma-separated, header row              | `text`, `valence`, `arousal` |
//! | `tsv`       | tab-separated, header row                | `text`, `valence`, `arousal` |
//! | `jsonl`     | one JSON object per line                 | `text`, `valence`, `arousal` |
//! | `warriner`  | CSV as distributed by Warriner et al.    | `Word`, `V.Mean.Sum`, `A.Mean.Sum` |
//! | `nrc_vad`   | NRC-VAD lexicon text file                | `Word`, `Valence`, `Arousal` |
//! | `emobank`   | EmoBank `emobank.csv`                    | `text`, `V`, `A`             |
//!
//! Columns are looked up by header name, or by zero-based index when the
//! option is an integer string and `has_header` is false.
//!
//! A file is either pre-averaged (one row per item) or per-annotator (one row
//! per rating, `per_annotator: true`). Per-annotator rows sharing the same
//! text are grouped in order of first appearance; for `jsonl`, a rating may
//! also be an array of annotator scores.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::{CorpusError, DatasetDescriptor};

pub const ADAPTERS: [&str; 6] = ["csv", "tsv", "jsonl", "warriner", "nrc_vad", "emobank"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TextEncoding {
    #[default]
    #[serde(alias = "utf8")]
    Utf8,
    #[serde(alias = "latin1", alias = "iso-8859-1")]
    Latin1,
}

/// Per-dataset overrides of the adapter defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AdapterOptions {
    pub text_column: Option<String>,
    pub valence_column: Option<String>,
    pub arousal_column: Option<String>,
    pub has_header: Option<bool>,
    pub delimiter: Option<char>,
    pub encoding: TextEncoding,
    pub per_annotator: bool,
}

/// One item of a source dataset before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// 1-based line of the item's first row in the source file.
    pub row: usize,
    pub text: String,
    pub valence: Vec<f64>,
    pub arousal: Vec<f64>,
}

struct Layout {
    delimiter: u8,
    has_header: bool,
    text: String,
    valence: String,
    arousal: String,
}

fn layout_for(adapter: &str, opts: &AdapterOptions) -> Result<Option<Layout>, CorpusError> {
    let (delimiter, text, valence, arousal, header) = match adapter {
        "csv" => (b',', "text", "valence", "arousal", true),
        "tsv" => (b'\t', "text", "valence", "arousal", true),
        "warriner" => (b',', "Word", "V.Mean.Sum", "A.Mean.Sum", true),
        "nrc_vad" => (b'\t', "Word", "Valence", "Arousal", true),
        "emobank" => (b',', "text", "V", "A", true),
        "jsonl" => return Ok(None),
        other => return Err(CorpusError::UnknownAdapter(other.to_string())),
    };
    let delimiter = match opts.delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => {
            return Err(CorpusError::InvalidDescriptor(format!(
                "delimiter {c:?} is not ASCII"
            )))
        }
        None => delimiter,
    };
    Ok(Some(Layout {
        delimiter,
        has_header: opts.has_header.unwrap_or(header),
        text: opts.text_column.clone().unwrap_or_else(|| text.into()),
        valence: opts.valence_column.clone().unwrap_or_else(|| valence.into()),
        arousal: opts.arousal_column.clone().unwrap_or_else(|| arousal.into()),
    }))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn verify_checksum(descriptor: &DatasetDescriptor, bytes: &[u8]) -> Result<(), CorpusError> {
    let Some(expected) = &descriptor.checksum else {
        return Ok(());
    };
    let expected = expected.trim();
    let expected = expected.strip_prefix("sha256:").unwrap_or(expected);
    let actual = sha256_hex(bytes);
    if actual.eq_ignore_ascii_case(expected) {
        Ok(())
    } else {
        Err(CorpusError::ChecksumMismatch {
            dataset: descriptor.id.clone(),
            expected: expected.to_string(),
            actual,
        })
    }
}

fn decode(bytes: &[u8], encoding: TextEncoding) -> Result<String, CorpusError> {
    match encoding {
        TextEncoding::Utf8 => {
            let text = std::str::from_utf8(bytes).map_err(|e| {
                let row = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
                CorpusError::MalformedRow {
                    row,
                    reason: "invalid UTF-8".into(),
                }
            })?;
            Ok(text.strip_prefix('\u{feff}').unwrap_or(text).to_string())
        }
        TextEncoding::Latin1 => Ok(bytes.iter().map(|&b| b as char).collect()),
    }
}

/// NFC plus surrounding-whitespace trim; nothing else is altered.
pub fn clean_text(raw: &str) -> String {
    raw.nfc().collect::<String>().trim().to_string()
}

fn parse_rating(field: &str, row: usize, what: &str) -> Result<f64, CorpusError> {
    let field = field.trim();
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CorpusError::MalformedRow {
            row,
            reason: format!("{what} rating {field:?} is not a finite number"),
        })
}

fn column_index(
    headers: Option<&csv::StringRecord>,
    name: &str,
) -> Result<usize, CorpusError> {
    if let Some(h) = headers {
        if let Some(i) = h.iter().position(|c| c.trim() == name) {
            return Ok(i);
        }
    }
    name.parse::<usize>().map_err(|_| CorpusError::MalformedRow {
        row: 1,
        reason: format!("column {name:?} not found"),
    })
}

fn parse_delimited(text: &str, layout: &Layout) -> Result<Vec<RawRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(layout.delimiter)
        .has_headers(layout.has_header)
        .flexible(true)
        .quoting(layout.delimiter != b'\t')
        .from_reader(text.as_bytes());
    let headers = if layout.has_header {
        Some(reader.headers().map_err(csv_error)?.clone())
    } else {
        None
    };
    let ti = column_index(headers.as_ref(), &layout.text)?;
    let vi = column_index(headers.as_ref(), &layout.valence)?;
    let ai = column_index(headers.as_ref(), &layout.arousal)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let field = |i: usize| {
            record.get(i).ok_or_else(|| CorpusError::MalformedRow {
                row,
                reason: format!("missing column {i}"),
            })
        };
        let text = clean_text(field(ti)?);
        if text.is_empty() {
            return Err(CorpusError::MalformedRow {
                row,
                reason: "empty text".into(),
            });
        }
        out.push(RawRecord {
            row,
            text,
            valence: vec![parse_rating(field(vi)?, row, "valence")?],
            arousal: vec![parse_rating(field(ai)?, row, "arousal")?],
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> CorpusError {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    CorpusError::MalformedRow {
        row,
        reason: e.to_string(),
    }
}

fn json_ratings(value: Option<&serde_json::Value>, row: usize, what: &str) -> Result<Vec<f64>, CorpusError> {
    let bad = || CorpusError::MalformedRow {
        row,
        reason: format!("{what} must be a number or an array of numbers"),
    };
    match value {
        Some(serde_json::Value::Number(n)) => Ok(vec![n.as_f64().ok_or_else(bad)?]),
        Some(serde_json::Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|v| v.as_f64().ok_or_else(bad))
            .collect(),
        _ => Err(bad()),
    }
}

fn parse_jsonl(text: &str, opts: &AdapterOptions) -> Result<Vec<RawRecord>, CorpusError> {
    let tk = opts.text_column.as_deref().unwrap_or("text");
    let vk = opts.valence_column.as_deref().unwrap_or("valence");
    let ak = opts.arousal_column.as_deref().unwrap_or("arousal");
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRow {
                row,
                reason: e.to_string(),
            })?;
        let text = obj
            .get(tk)
            .and_then(|t| t.as_str())
            .map(clean_text)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| CorpusError::MalformedRow {
                row,
                reason: format!("missing or empty {tk:?}"),
            })?;
        out.push(RawRecord {
            row,
            text,
            valence: json_ratings(obj.get(vk), row, "valence")?,
            arousal: json_ratings(obj.get(ak), row, "arousal")?,
        });
    }
    Ok(out)
}

fn group_annotators(rows: Vec<RawRecord>) -> Vec<RawRecord> {
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut out: Vec<RawRecord> = Vec::new();
    for r in rows {
        match index.get(&r.text) {
            Some(&i) => {
                out[i].valence.extend(r.valence);
                out[i].arousal.extend(r.arousal);
            }
            None => {
                index.insert(r.text.clone(), out.len());
                out.push(r);
            }
        }
    }
    out
}

/// Parses one dataset file into raw records on its original scale.
pub fn parse_dataset(
    descriptor: &DatasetDescriptor,
    raw_bytes: &[u8],
) -> Result<Vec<RawRecord>, CorpusError> {
    let layout = layout_for(&descriptor.adapter, &descriptor.options)?;
    verify_checksum(descriptor, raw_bytes)?;
    let text = decode(raw_bytes, descriptor.options.encoding)?;
    let mut records = match layout {
        Some(layout) => parse_delimited(&text, &layout)?,
        None => parse_jsonl(&text, &descriptor.options)?,
    };
    if descriptor.options.per_annotator {
        records = group_annotators(records);
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset(descriptor.id.clone()));
    }
    let (vmin, vmax) = descriptor.valence_scale();
    let (amin, amax) = descriptor.arousal_scale();
    for r in &records {
        for (&value, lo, hi) in r
            .valence
            .iter()
            .map(|v| (v, vmin, vmax))
            .chain(r.arousal.iter().map(|a| (a, amin, amax)))
        {
            if !(lo..=hi).contains(&value) {
                return Err(CorpusError::OutOfScaleRating {
                    row: r.row,
                    value,
                    scale_min: lo,
                    scale_max: hi,
                });
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Granularity;

    fn descriptor(adapter: &str) -> DatasetDescriptor {
        DatasetDescriptor {
            id: "lex".into(),
            language: "en".into(),
            granularity: Granularity::Word,
            scale_min: 1.0,
            scale_max: 9.0,
            adapter: adapter.into(),
            source_uri: "lex.csv".into(),
            checksum: None,
            arousal_scale: None,
            options: AdapterOptions::default(),
        }
    }

    #[test]
    fn sam_lexicon_row_passes_through() {
        let recs = parse_dataset(&descriptor("csv"), b"text,valence,arousal\ndog, 7.57, 5.76\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].text, "dog");
        assert_eq!(recs[0].valence, vec![7.57]);
        assert_eq!(recs[0].arousal, vec![5.76]);
        assert_eq!(recs[0].row, 2);
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(
            parse_dataset(&descriptor("csv"), b""),
            Err(CorpusError::EmptyDataset(_)) | Err(CorpusError::MalformedRow { .. })
        ));
        assert!(matches!(
            parse_dataset(&descriptor("csv"), b"text,valence,arousal\n"),
            Err(CorpusError::EmptyDataset(_))
        ));
    }

    #[test]
    fn out_of_scale_rating() {
        let err = parse_dataset(&descriptor("csv"), b"text,valence,arousal\ncat,9.4,5\n").unwrap_err();
        assert!(matches!(err, CorpusError::OutOfScaleRating { row: 2, value, .. } if value == 9.4));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_dataset(
            &descriptor("csv"),
            b"text,valence,arousal\ncat,5,5\nsun,abc,5\n",
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRow { row: 3, .. }));
    }

    #[test]
    fn unknown_adapter() {
        assert!(matches!(
            parse_dataset(&descriptor("xlsx"), b"x"),
            Err(CorpusError::UnknownAdapter(_))
        ));
    }

    #[test]
    fn checksum_is_verified() {
        let body = b"text,valence,arousal\ncat,5,5\n";
        let mut d = descriptor("csv");
        d.checksum = Some(format!("sha256:{}", sha256_hex(body)));
        assert!(parse_dataset(&d, body).is_ok());
        d.checksum = Some("00".repeat(32));
        assert!(matches!(
            parse_dataset(&d, body),
            Err(CorpusError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn per_annotator_rows_are_grouped() {
        let mut d = descriptor("tsv");
        d.options.per_annotator = true;
        let body = "text\tvalence\tarousal\nsol\t7\t3\nmar\t5\t5\nsol\t9\t5\n";
        let recs = parse_dataset(&d, body.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].text, "sol");
        assert_eq!(recs[0].valence, vec![7.0, 9.0]);
        assert_eq!(recs[1].arousal, vec![5.0]);
    }

    #[test]
    fn text_is_nfc_trimmed_but_otherwise_untouched() {
        let body = "text,valence,arousal\n\"  Cafe\u{301}, Ok!  \",5,5\n";
        let recs = parse_dataset(&descriptor("csv"), body.as_bytes()).unwrap();
        assert_eq!(recs[0].text, "Caf\u{e9}, Ok!");
    }

    #[test]
    fn presets_and_positional_columns() {
        let body = b"Word,V.Mean.Sum,V.SD.Sum,A.Mean.Sum\naardvark,6.26,2.21,2.41\n";
        let recs = parse_dataset(&descriptor("warriner"), body).unwrap();
        assert_eq!(recs[0].arousal, vec![2.41]);

        let mut d = descriptor("tsv");
        d.options.has_header = Some(false);
        d.options.text_column = Some("0".into());
        d.options.valence_column = Some("2".into());
        d.options.arousal_column = Some("1".into());
        let recs = parse_dataset(&d, b"zorro\t3\t8\n").unwrap();
        assert_eq!(recs[0].valence, vec![8.0]);
        assert_eq!(recs[0].arousal, vec![3.0]);
    }

    #[test]
    fn jsonl_with_annotator_arrays_and_latin1() {
        let d = descriptor("jsonl");
        let recs = parse_dataset(&d, br#"{"text":"hola","valence":[2,4,6],"arousal":5}"#).unwrap();
        assert_eq!(recs[0].valence, vec![2.0, 4.0, 6.0]);

        let mut d = descriptor("csv");
        d.options.encoding = TextEncoding::Latin1;
        let recs = parse_dataset(&d, b"text,valence,arousal\ncaf\xe9,5,5\n").unwrap();
        assert_eq!(recs[0].text, "caf\u{e9}");
        assert!(parse_dataset(&descriptor("csv"), b"text,valence,arousal\ncaf\xe9,5,5\n").is_err());
    }
}
