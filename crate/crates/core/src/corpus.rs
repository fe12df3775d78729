//! Corpus loading, NFC normalization, seeded sampling, and byte statistics.

use std::path::Path;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{read_file, Error, Result};
use crate::util::decode_lossy_counting;

/// One document: a line of a text file or one jsonl record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub text: String,
}

impl Document {
    pub fn new(text: impl Into<String>) -> Self {
        Document { text: text.into() }
    }

    /// UTF-8 byte length of the text.
    pub fn byte_len(&self) -> usize {
        self.text.len()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub source_id: String,
    /// U+FFFD substitutions made during lenient loading.
    pub replacements: u64,
}

impl Corpus {
    pub fn from_texts<S: Into<String>>(
        source_id: &str,
        texts: impl IntoIterator<Item = S>,
    ) -> Self {
        Corpus {
            docs: texts.into_iter().map(Document::new).collect(),
            source_id: source_id.to_string(),
            replacements: 0,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One document per line.
    Lines,
    /// One JSON object per line with a required "text" string field.
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Reject invalid UTF-8.
    Strict,
    /// Replace invalid byte sequences with U+FFFD and count them.
    Lenient,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub total_bytes: u64,
    pub total_chars: u64,
    pub mean_doc_bytes: f64,
    pub replacements: u64,
}

/// Load a corpus file. Line splitting follows `str::lines` (strips \n and
/// \r\n). Documents are returned in file order.
pub fn load_corpus(path: &Path, format: CorpusFormat, mode: LoadMode) -> Result<Corpus> {
    let raw = read_file(path)?;
    let (text, replacements) = match mode {
        LoadMode::Strict => match String::from_utf8(raw) {
            Ok(s) => (s, 0),
            Err(e) => {
                return Err(Error::InvalidUtf8 {
                    offset: e.utf8_error().valid_up_to(),
                })
            }
        },
        LoadMode::Lenient => decode_lossy_counting(&raw),
    };

    let mut docs = Vec::new();
    match format {
        CorpusFormat::Lines => {
            for line in text.lines() {
                docs.push(Document::new(line));
            }
        }
        CorpusFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                let value: serde_json::Value =
                    serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                let Some(t) = value.get("text").and_then(|v| v.as_str()) else {
                    return Err(Error::MalformedRecord {
                        line: i + 1,
                        msg: "missing \"text\" string field".to_string(),
                    });
                };
                docs.push(Document::new(t));
            }
        }
    }

    Ok(Corpus {
        docs,
        source_id: path.display().to_string(),
        replacements,
    })
}

/// Unicode NFC normalization. Idempotent.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect()
}

/// Uniform sample of min(n, n_docs) documents without replacement. The same
/// (corpus, n, seed) always yields the same document sequence; n >= n_docs
/// returns a full permutation.
pub fn sample_documents(corpus: &Corpus, n: usize, seed: u64) -> Corpus {
    let len = corpus.docs.len();
    let take = n.min(len);
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates: after i rounds the prefix is a uniform sample
    for i in 0..take {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    Corpus {
        docs: idx[..take]
            .iter()
            .map(|&i| corpus.docs[i].clone())
            .collect(),
        source_id: corpus.source_id.clone(),
        replacements: corpus.replacements,
    }
}

pub fn byte_stats(corpus: &Corpus) -> CorpusStats {
    let total_bytes: u64 = corpus.docs.iter().map(|d| d.byte_len() as u64).sum();
    let total_chars: u64 = corpus
        .docs
        .iter()
        .map(|d| d.text.chars().count() as u64)
        .sum();
    let n_docs = corpus.docs.len();
    CorpusStats {
        n_docs,
        total_bytes,
        total_chars,
        mean_doc_bytes: if n_docs > 0 {
            total_bytes as f64 / n_docs as f64
        } else {
            0.0
        },
        replacements: corpus.replacements,
    }
}
