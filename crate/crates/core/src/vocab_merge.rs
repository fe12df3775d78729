//! Vocabulary diff and merge: find the extra tokenizer's novel tokens and
//! append them — together with the extra merge table — behind everything the
//! base model already has, so base ids and base merge priorities never move.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bpe::{MergeRule, Provenance, TokenizerModel, ALPHABET_SIZE};
use crate::error::{Error, Result};

/// What a merge added: the novel token surfaces, their ids in the merged
/// model, and bookkeeping about overlaps and dropped duplicate merges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabDiff {
    /// Novel token byte strings, in the extra model's id order.
    pub new_tokens: Vec<Vec<u8>>,
    /// Their ids in the merged model: contiguous from `base_vocab_size`.
    pub new_ids: Vec<u32>,
    /// Extra merged tokens that already existed in the base vocabulary.
    pub overlap_count: usize,
    /// Extra merges whose (left, right) pair the merged model already had.
    pub dropped_duplicate_merges: usize,
    /// Vocabulary size of the base model the diff was taken against.
    pub base_vocab_size: usize,
}

impl VocabDiff {
    pub fn report(&self) -> VocabDiffReport {
        let start = self.base_vocab_size as u32;
        let end = start + self.new_ids.len() as u32;
        VocabDiffReport {
            new_token_count: self.new_tokens.len(),
            overlap_count: self.overlap_count,
            dropped_duplicate_merges: self.dropped_duplicate_merges,
            new_ids_range: [start, end],
        }
    }
}

/// Flat JSON summary of a [`VocabDiff`]; `new_ids_range` is half-open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabDiffReport {
    pub new_token_count: usize,
    pub overlap_count: usize,
    pub dropped_duplicate_merges: usize,
    pub new_ids_range: [u32; 2],
}

impl VocabDiffReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

/// Tokens of `extra` (merged tokens only) not present in `base`, by byte
/// identity, with the ids they would take in the merged model.
pub fn diff_vocab(base: &TokenizerModel, extra: &TokenizerModel) -> Result<VocabDiff> {
    merge_impl(base, extra).map(|(_, diff)| diff)
}

/// Append `extra`'s novel tokens and its merge table to `base`. Base token
/// ids and merge ranks are preserved; every appended merge gets a strictly
/// larger rank (lower priority), re-pointed into merged-model ids; appended
/// merges duplicating an existing (left, right) pair are dropped.
pub fn merge_tokenizers(
    base: &TokenizerModel,
    extra: &TokenizerModel,
) -> Result<(TokenizerModel, VocabDiff)> {
    merge_impl(base, extra)
}

/// Ids of the tokens a merge added, for ΔV-membership tests.
pub fn added_token_ids(diff: &VocabDiff) -> HashSet<u32> {
    diff.new_ids.iter().copied().collect()
}

fn merge_impl(
    base: &TokenizerModel,
    extra: &TokenizerModel,
) -> Result<(TokenizerModel, VocabDiff)> {
    if !base.compatible_alphabet(extra) {
        return Err(Error::IncompatibleAlphabet(
            "models disagree on specials or byte alphabet".to_string(),
        ));
    }
    let mut merged = base.clone();
    // byte surface -> merged-model id; lowest id wins for duplicate surfaces
    let mut by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
    for id in 0..base.vocab_size() as u32 {
        by_bytes
            .entry(base.token_bytes(id).expect("dense ids").to_vec())
            .or_insert(id);
    }

    let base_vocab_size = base.vocab_size();
    let mut extra_to_merged: Vec<u32> = (0..ALPHABET_SIZE as u32).collect();
    let mut new_tokens = Vec::new();
    let mut new_ids = Vec::new();
    let mut overlap_count = 0;
    for e in extra.merged_ids() {
        let bytes = extra.token_bytes(e).expect("dense ids").to_vec();
        if let Some(&id) = by_bytes.get(&bytes) {
            if (id as usize) < base_vocab_size {
                overlap_count += 1;
            }
            extra_to_merged.push(id);
        } else {
            let id = merged.push_token(bytes.clone(), Provenance::Added);
            by_bytes.insert(bytes.clone(), id);
            new_tokens.push(bytes);
            new_ids.push(id);
            extra_to_merged.push(id);
        }
    }

    let mut dropped_duplicate_merges = 0;
    for rule in extra.merges() {
        let left = extra_to_merged[rule.left as usize];
        let right = extra_to_merged[rule.right as usize];
        let result = extra_to_merged[rule.result as usize];
        if merged.has_pair(left, right) {
            dropped_duplicate_merges += 1;
        } else {
            merged.push_merge(MergeRule {
                left,
                right,
                result,
            });
        }
    }

    let diff = VocabDiff {
        new_tokens,
        new_ids,
        overlap_count,
        dropped_duplicate_merges,
        base_vocab_size,
    };
    Ok((merged, diff))
}
