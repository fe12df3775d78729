//! Byte-fallback BPE: model representation, encode/decode with rank-ordered
//! merge application, and the deterministic tokenizer file format.
//!
//! Id layout: `<bos>` at 0, the 256 byte tokens at 1..=256 (id = byte + 1),
//! merged tokens from 257 up.

mod train;

pub use train::{train_bpe, train_bpe_detailed};

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, Corpus};
use crate::error::{read_file, Error, Result};
use crate::util::{decode_lossy_counting, fingerprint};

pub const BOS_ID: u32 = 0;
/// Specials + byte tokens; also the id of the first merged token.
pub const ALPHABET_SIZE: usize = 257;

pub const BOS_TOKEN: &str = "<bos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Base,
    Added,
}

/// One merge; rank = position in the model's merge table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRule {
    pub left: u32,
    pub right: u32,
    pub result: u32,
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    specials: Vec<String>,
    /// Indexed by id; slot 0 holds the bos surface for debugging only.
    token_bytes: Vec<Vec<u8>>,
    provenance: Vec<Provenance>,
    merges: Vec<MergeRule>,
    requested_vocab_size: usize,
    /// (left, right) -> (rank, result id)
    pair_table: HashMap<(u32, u32), (u32, u32)>,
}

impl TokenizerModel {
    /// Specials + 256 byte tokens, no merges yet.
    pub(crate) fn new_base(requested_vocab_size: usize) -> Self {
        let mut token_bytes = Vec::with_capacity(ALPHABET_SIZE);
        token_bytes.push(BOS_TOKEN.as_bytes().to_vec());
        for b in 0u16..256 {
            token_bytes.push(vec![b as u8]);
        }
        TokenizerModel {
            specials: vec![BOS_TOKEN.to_string()],
            provenance: vec![Provenance::Base; token_bytes.len()],
            token_bytes,
            merges: Vec::new(),
            requested_vocab_size,
            pair_table: HashMap::new(),
        }
    }

    pub(crate) fn push_token(&mut self, bytes: Vec<u8>, provenance: Provenance) -> u32 {
        let id = self.token_bytes.len() as u32;
        self.token_bytes.push(bytes);
        self.provenance.push(provenance);
        id
    }

    /// Append a merge rule whose result token already exists.
    pub(crate) fn push_merge(&mut self, rule: MergeRule) {
        let rank = self.merges.len() as u32;
        self.pair_table
            .insert((rule.left, rule.right), (rank, rule.result));
        self.merges.push(rule);
    }

    pub(crate) fn has_pair(&self, left: u32, right: u32) -> bool {
        self.pair_table.contains_key(&(left, right))
    }

    #[cfg(test)]
    pub(crate) fn corrupt_specials_for_tests(&mut self) {
        self.specials[0] = "<s>".to_string();
        self.token_bytes[0] = b"<s>".to_vec();
    }

    pub fn vocab_size(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn requested_vocab_size(&self) -> usize {
        self.requested_vocab_size
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        self.token_bytes
            .get(id as usize)
            .map(|v| v.as_slice())
            .ok_or(Error::InvalidTokenId {
                id,
                vocab: self.vocab_size(),
            })
    }

    pub fn provenance(&self, id: u32) -> Result<Provenance> {
        self.provenance
            .get(id as usize)
            .copied()
            .ok_or(Error::InvalidTokenId {
                id,
                vocab: self.vocab_size(),
            })
    }

    /// Ids of learned (merged) tokens.
    pub fn merged_ids(&self) -> impl Iterator<Item = u32> {
        ALPHABET_SIZE as u32..self.vocab_size() as u32
    }

    /// Same specials and byte alphabet; the precondition for diff/merge.
    pub fn compatible_alphabet(&self, other: &TokenizerModel) -> bool {
        self.specials == other.specials
            && self.token_bytes[..ALPHABET_SIZE] == other.token_bytes[..ALPHABET_SIZE]
    }

    /// NFC-normalize, split into words, and reduce each word by repeatedly
    /// applying the applicable merge with the lowest rank.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let norm = normalize_text(text);
        let mut out = Vec::new();
        for word in pre_tokenize(&norm) {
            self.encode_word_into(word, &mut out);
        }
        out
    }

    /// Encode raw bytes as one isolated word (no normalization, no
    /// pre-tokenization). This is the Tokenize(v; V) used for mean-init.
    pub fn encode_word_bytes(&self, word: &[u8]) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_word_into(word, &mut out);
        out
    }

    fn encode_word_into(&self, word: &[u8], out: &mut Vec<u32>) {
        let start = out.len();
        out.extend(word.iter().map(|&b| b as u32 + 1));
        if self.merges.is_empty() {
            return;
        }
        let seq = &mut out[start..];
        let mut len = seq.len();
        loop {
            // lowest-rank applicable pair anywhere in the word
            let mut best: Option<(u32, u32, (u32, u32))> = None;
            for k in 0..len.saturating_sub(1) {
                if let Some(&(rank, result)) = self.pair_table.get(&(seq[k], seq[k + 1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, result, (seq[k], seq[k + 1])));
                    }
                }
            }
            let Some((_, result, pair)) = best else { break };
            len = apply_merge_ltr(&mut seq[..len], pair, result);
        }
        out.truncate(start + len);
    }

    /// Encode every document, reusing word encodings across the corpus.
    /// Output is identical for any thread count.
    pub fn encode_corpus(&self, corpus: &Corpus) -> Vec<Vec<u32>> {
        if rayon::current_num_threads() <= 1 {
            let mut cache = HashMap::new();
            corpus
                .docs
                .iter()
                .map(|d| self.encode_doc_cached(&d.text, &mut cache))
                .collect()
        } else {
            corpus
                .docs
                .par_iter()
                .map_init(HashMap::new, |cache, d| {
                    self.encode_doc_cached(&d.text, cache)
                })
                .collect()
        }
    }

    fn encode_doc_cached(&self, text: &str, cache: &mut HashMap<Vec<u8>, Vec<u32>>) -> Vec<u32> {
        let norm = normalize_text(text);
        let mut ids = Vec::new();
        for word in pre_tokenize(&norm) {
            if let Some(hit) = cache.get(word) {
                ids.extend_from_slice(hit);
            } else {
                let enc = self.encode_word_bytes(word);
                ids.extend_from_slice(&enc);
                cache.insert(word.to_vec(), enc);
            }
        }
        ids
    }

    /// Concatenate token bytes and decode; bos ids are skipped, invalid
    /// UTF-8 at the concatenation level becomes U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id as usize >= self.vocab_size() {
                return Err(Error::InvalidTokenId {
                    id,
                    vocab: self.vocab_size(),
                });
            }
            if id == BOS_ID {
                continue;
            }
            bytes.extend_from_slice(&self.token_bytes[id as usize]);
        }
        Ok(decode_lossy_counting(&bytes).0)
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            version: 1,
            normalization: "nfc".to_string(),
            specials: self.specials.clone(),
            tokens: (1..self.vocab_size() as u32)
                .map(|id| TokenEntry {
                    id,
                    bytes: hex::encode(&self.token_bytes[id as usize]),
                    provenance: match self.provenance[id as usize] {
                        Provenance::Base => "base".to_string(),
                        Provenance::Added => "added".to_string(),
                    },
                })
                .collect(),
            merges: self
                .merges
                .iter()
                .map(|m| [m.left, m.right, m.result])
                .collect(),
            requested_vocab_size: self.requested_vocab_size,
            achieved_vocab_size: self.vocab_size(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("tokenizer serialization");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("invalid tokenizer file: {e}")))?;
        if file.version != 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported tokenizer file version {}",
                file.version
            )));
        }
        if file.normalization != "nfc" {
            return Err(Error::InvalidArgument(format!(
                "unsupported normalization {:?}",
                file.normalization
            )));
        }
        if file.specials != [BOS_TOKEN] {
            return Err(Error::InvalidArgument(
                "specials must be exactly [\"<bos>\"]".to_string(),
            ));
        }
        let mut model = TokenizerModel::new_base(file.requested_vocab_size);
        for (i, entry) in file.tokens.iter().enumerate() {
            let expect_id = (i + 1) as u32;
            if entry.id != expect_id {
                return Err(Error::InvalidArgument(format!(
                    "token ids must be dense; expected {expect_id}, found {}",
                    entry.id
                )));
            }
            let bytes = hex::decode(&entry.bytes)
                .map_err(|e| Error::InvalidArgument(format!("token {expect_id}: bad hex: {e}")))?;
            let provenance = match entry.provenance.as_str() {
                "base" => Provenance::Base,
                "added" => Provenance::Added,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "token {expect_id}: unknown provenance {other:?}"
                    )))
                }
            };
            if (entry.id as usize) < ALPHABET_SIZE {
                // byte token slots are fixed by construction
                if bytes.len() != 1 || bytes[0] as u32 != entry.id - 1 {
                    return Err(Error::InvalidArgument(format!(
                        "token {expect_id} must be the byte 0x{:02x}",
                        entry.id - 1
                    )));
                }
            } else {
                if bytes.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "merged token {expect_id} must span at least 2 bytes"
                    )));
                }
                model.push_token(bytes, provenance);
            }
        }
        let vocab = model.vocab_size();
        if file.achieved_vocab_size != vocab {
            return Err(Error::InvalidArgument(format!(
                "achieved_vocab_size {} does not match {} tokens",
                file.achieved_vocab_size, vocab
            )));
        }
        let mut produced = vec![false; vocab];
        for &[left, right, result] in &file.merges {
            for id in [left, right, result] {
                if id as usize >= vocab {
                    return Err(Error::InvalidTokenId { id, vocab });
                }
            }
            if (result as usize) < ALPHABET_SIZE {
                return Err(Error::InvalidArgument(format!(
                    "merge result {result} is not a merged token"
                )));
            }
            let mut expect = model.token_bytes[left as usize].clone();
            expect.extend_from_slice(&model.token_bytes[right as usize]);
            if expect != model.token_bytes[result as usize] {
                return Err(Error::InvalidArgument(format!(
                    "merge ({left},{right})->{result} does not concatenate"
                )));
            }
            if model.has_pair(left, right) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate merge pair ({left},{right})"
                )));
            }
            produced[result as usize] = true;
            model.push_merge(MergeRule {
                left,
                right,
                result,
            });
        }
        if let Some(id) = (ALPHABET_SIZE..vocab).find(|&id| !produced[id]) {
            return Err(Error::InvalidArgument(format!(
                "merged token {id} is not produced by any merge rule"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = read_file(path)?;
        let s = String::from_utf8(raw).map_err(|e| Error::InvalidUtf8 {
            offset: e.utf8_error().valid_up_to(),
        })?;
        Self::from_json(&s)
    }

    /// Short content id used in report metadata.
    pub fn fingerprint(&self) -> String {
        fingerprint(self.to_json().as_bytes())
    }
}

/// Replace every left-to-right non-overlapping (l,r) occurrence with the
/// result id, in place; returns the new length.
fn apply_merge_ltr(seq: &mut [u32], (l, r): (u32, u32), result: u32) -> usize {
    let n = seq.len();
    let mut w = 0;
    let mut k = 0;
    while k < n {
        if k + 1 < n && seq[k] == l && seq[k + 1] == r {
            seq[w] = result;
            k += 2;
        } else {
            seq[w] = seq[k];
            k += 1;
        }
        w += 1;
    }
    w
}

fn is_whitespace_byte(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | 0x0b | 0x0c | b'\r')
}

/// Split text into BPE words: an optional single leading 0x20 attaches to
/// the following run of non-whitespace bytes; every other whitespace byte
/// (and a space not followed by a word) is a standalone one-byte word.
/// Concatenating the words reproduces the input bytes exactly.
pub fn pre_tokenize(text: &str) -> Vec<&[u8]> {
    let b = text.as_bytes();
    let mut words = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b' ' && i + 1 < b.len() && !is_whitespace_byte(b[i + 1]) {
            let j = word_end(b, i + 1);
            words.push(&b[i..j]);
            i = j;
        } else if is_whitespace_byte(b[i]) {
            words.push(&b[i..i + 1]);
            i += 1;
        } else {
            let j = word_end(b, i);
            words.push(&b[i..j]);
            i = j;
        }
    }
    words
}

fn word_end(b: &[u8], start: usize) -> usize {
    let mut j = start;
    while j < b.len() && !is_whitespace_byte(b[j]) {
        j += 1;
    }
    j
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    version: u32,
    normalization: String,
    specials: Vec<String>,
    tokens: Vec<TokenEntry>,
    merges: Vec<[u32; 3]>,
    requested_vocab_size: usize,
    achieved_vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenEntry {
    id: u32,
    bytes: String,
    provenance: String,
}
