//! Tokenization, vocabulary building, and fixed-length encoding.
//!
//! Tokenizer rule: lowercase, treat every character that is not alphanumeric
//! as a separator, except an apostrophe sitting between two alphanumerics
//! ("it's" stays whole, "'quoted'" loses its quotes).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const RESERVED_IDS: usize = 2;
pub const DEFAULT_MAX_LEN: usize = 5041;

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || (c == '\''
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if keep {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token ↔ id mapping with ids 0 (padding) and 1 (unknown) reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Keeps the `max_vocab - 2` most frequent tokens, ordered by descending
    /// count with ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], max_vocab: usize) -> Result<Self> {
        if max_vocab < 3 {
            return Err(Error::Argument(format!(
                "max_vocab must be at least 3, got {max_vocab}"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Argument("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab - RESERVED_IDS);
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect()))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + RESERVED_IDS))
            .collect();
        Vocabulary {
            token_to_id,
            tokens,
        }
    }

    /// Total id space including the reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED_IDS
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(RESERVED_IDS)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// One token per line; line `n` (0-based) holds id `n + 2`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut tokens = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(Error::Ingestion {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("invalid vocabulary entry {line:?}"),
                });
            }
            tokens.push(line);
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.token_to_id.len() != vocab.tokens.len() {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                line: 0,
                message: "duplicate vocabulary entries".into(),
            });
        }
        Ok(vocab)
    }
}

/// Fixed-length id sequence for one record; ids past `true_length` are padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPost {
    ids: Vec<usize>,
    true_length: usize,
}

impl EncodedPost {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Wraps raw ids; `true_length` ends at the last non-padding id.
    pub fn from_ids(ids: Vec<usize>) -> Self {
        let true_length = ids.iter().rposition(|&i| i != PAD_ID).map_or(0, |p| p + 1);
        EncodedPost { ids, true_length }
    }
}

/// Maps tokens to ids, truncating past `max_len` and right-padding with 0.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> EncodedPost {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t.as_ref()))
        .collect();
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    EncodedPost { ids, true_length }
}

pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> EncodedPost {
    encode(&tokenize(text), vocab, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("I am fine"), toks(&["i", "am", "fine"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("It's been a year"), toks(&["it's", "been", "a", "year"]));
        assert_eq!(tokenize("'hello,'  world!!"), toks(&["hello", "world"]));
        assert_eq!(tokenize("rock'n'roll ends'"), toks(&["rock'n'roll", "ends"]));
    }

    #[test]
    fn vocab_single_token() {
        let v = Vocabulary::build(&[toks(&["a", "a", "a"])], 10).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.size(), 3);
    }

    #[test]
    fn vocab_tie_break_is_lexicographic() {
        let v = Vocabulary::build(&[toks(&["b", "a", "b", "a"])], 10).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
    }

    #[test]
    fn vocab_truncation() {
        let corpus = vec![toks(&["e", "d", "d", "c", "b", "a"])];
        let v = Vocabulary::build(&corpus, 3).unwrap();
        assert_eq!(v.id("d"), 2);
        for t in ["a", "b", "c", "e"] {
            assert_eq!(v.id(t), UNK_ID);
        }
        assert!(matches!(Vocabulary::build(&corpus, 2), Err(Error::Argument(_))));
        let empty: Vec<Vec<String>> = vec![];
        assert!(Vocabulary::build(&empty, 5).is_err());
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::build(&[toks(&["x", "y"])], 10).unwrap();
        let empty: Vec<&str> = vec![];
        let e = encode(&empty, &v, 4);
        assert_eq!(e.ids(), &[0, 0, 0, 0]);
        assert_eq!(e.true_length(), 0);

        let e = encode(&["x", "y", "zzz"], &v, 5);
        assert_eq!(e.ids(), &[2, 3, 1, 0, 0]);
        assert_eq!(e.true_length(), 3);

        let long: Vec<&str> = (0..9).map(|i| if i % 2 == 0 { "x" } else { "y" }).collect();
        let e = encode(&long, &v, 4);
        assert_eq!(e.ids(), &[2, 3, 2, 3]);
        assert_eq!(e.true_length(), 4);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(&[toks(&["it's", "b", "b", "c"])], 100).unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines, "b\nc\nit's\n");
    }
}
