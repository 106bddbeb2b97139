use std::hash::Hasher;

use super::ModelError;

/// Id of the leading classification token; pooling reads its hidden state.
pub const CLS_ID: usize = 0;

/// Hashed-vocabulary tokenizer: words split on whitespace, punctuation and
/// Han/Kana/Hangul characters become single-character tokens, all pieces
/// are lowercased and hashed into `buckets − 1` ids after the reserved CLS id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    pub buckets: usize,
    pub max_sequence_length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    /// Starts with [`CLS_ID`]; at most `max_sequence_length` entries.
    pub ids: Vec<usize>,
    pub truncated: bool,
}

fn is_ideographic(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // CJK compatibility
        | 0x20000..=0x2FA1F)
}

/// Word pieces in order, before hashing.
pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word).to_lowercase());
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if is_ideographic(c) || !(c.is_alphanumeric() || c == '\'' || c == '-') {
            flush(&mut word, &mut out);
            out.push(c.to_lowercase().collect());
        } else {
            word.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

impl Tokenizer {
    pub fn piece_id(&self, piece: &str) -> usize {
        let mut h = fnv::FnvHasher::default();
        h.write(piece.as_bytes());
        1 + (h.finish() % (self.buckets as u64 - 1)) as usize
    }

    pub fn tokenize(&self, text: &str) -> Result<Tokenized, ModelError> {
        let pieces = pieces(text);
        if pieces.is_empty() {
            return Err(ModelError::TokenizationFailure(text.chars().take(40).collect()));
        }
        let room = self.max_sequence_length.saturating_sub(1);
        let truncated = pieces.len() > room;
        let ids = std::iter::once(CLS_ID)
            .chain(pieces.iter().take(room).map(|p| self.piece_id(p)))
            .collect();
        Ok(Tokenized { ids, truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_punctuation_and_han() {
        assert_eq!(pieces("Hello, World!"), ["hello", ",", "world", "!"]);
        assert_eq!(pieces("  it's  well-known "), ["it's", "well-known"]);
        assert_eq!(pieces("我很高兴"), ["我", "很", "高", "兴"]);
        assert!(pieces(" \t\n").is_empty());
    }

    #[test]
    fn truncates_after_cls() {
        let t = Tokenizer { buckets: 64, max_sequence_length: 4 };
        let out = t.tokenize("a b c d e").unwrap();
        assert_eq!(out.ids.len(), 4);
        assert_eq!(out.ids[0], CLS_ID);
        assert!(out.truncated);
        assert_eq!(out.ids, t.tokenize("a b c").unwrap().ids);
        assert!(!t.tokenize("a b c").unwrap().truncated);
        assert!(out.ids[1..].iter().all(|&i| (1..64).contains(&i)));
        assert!(matches!(t.tokenize("   "), Err(ModelError::TokenizationFailure(_))));
    }
}
