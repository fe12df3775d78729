//! BPE training: greedily merge the most frequent adjacent pair over
//! pre-tokenized word types. An inverted index (pair -> word types that
//! contain it) keeps each step proportional to the words actually touched,
//! and a lazily-invalidated max-heap picks the next pair.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use crate::corpus::{normalize_text, Corpus};
use crate::error::{Error, Result};

use super::{apply_merge_ltr, pre_tokenize, MergeRule, Provenance, TokenizerModel, ALPHABET_SIZE};

/// Pairs occurring fewer times than this never become merges.
const MIN_PAIR_COUNT: u64 = 2;

pub fn train_bpe(corpus: &Corpus, target_vocab_size: usize, seed: u64) -> Result<TokenizerModel> {
    train_bpe_detailed(corpus, target_vocab_size, seed).map(|(model, _)| model)
}

/// Like [`train_bpe`], additionally returning the pair count that justified
/// each merge (index = rank). Training is fully deterministic; `seed` is
/// part of the interface for forward compatibility and currently unused.
pub fn train_bpe_detailed(
    corpus: &Corpus,
    target_vocab_size: usize,
    _seed: u64,
) -> Result<(TokenizerModel, Vec<u64>)> {
    if target_vocab_size < ALPHABET_SIZE {
        return Err(Error::VocabTooSmall(target_vocab_size));
    }
    if corpus.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut word_counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for doc in &corpus.docs {
        let norm = normalize_text(&doc.text);
        for word in pre_tokenize(&norm) {
            *word_counts.entry(word.to_vec()).or_insert(0) += 1;
        }
    }
    // canonical order so word-type indices don't depend on map iteration
    let mut types: Vec<(Vec<u8>, u64)> = word_counts.into_iter().collect();
    types.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mut words: Vec<(Vec<u32>, u64)> = types
        .into_iter()
        .map(|(bytes, n)| (bytes.iter().map(|&b| b as u32 + 1).collect(), n))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (idx, (seq, n)) in words.iter().enumerate() {
        for k in 0..seq.len().saturating_sub(1) {
            let p = (seq[k], seq[k + 1]);
            *pair_counts.entry(p).or_insert(0) += n;
            occurs.entry(p).or_default().insert(idx);
        }
    }
    // max count first; among equal counts the smallest (left, right) pair
    let mut heap: BinaryHeap<(u64, Reverse<(u32, u32)>)> = pair_counts
        .iter()
        .filter(|&(_, &c)| c >= MIN_PAIR_COUNT)
        .map(|(&p, &c)| (c, Reverse(p)))
        .collect();

    let mut model = TokenizerModel::new_base(target_vocab_size);
    let mut merge_counts = Vec::new();

    while model.vocab_size() < target_vocab_size {
        let Some((count, pair)) = pop_valid(&mut heap, &pair_counts, &model) else {
            break; // no pair frequent enough: early stop
        };
        let (left, right) = pair;
        let mut bytes = model.token_bytes[left as usize].clone();
        bytes.extend_from_slice(&model.token_bytes[right as usize]);
        let result = model.push_token(bytes, Provenance::Base);
        model.push_merge(MergeRule {
            left,
            right,
            result,
        });
        merge_counts.push(count);

        let affected = occurs.remove(&pair).unwrap_or_default();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for idx in affected {
            let weight = words[idx].1;
            let mut seq = std::mem::take(&mut words[idx].0);
            for k in 0..seq.len().saturating_sub(1) {
                let p = (seq[k], seq[k + 1]);
                let c = pair_counts.get_mut(&p).expect("pair count invariant");
                *c -= weight;
                if *c == 0 {
                    pair_counts.remove(&p);
                    occurs.remove(&p);
                } else if let Some(set) = occurs.get_mut(&p) {
                    set.remove(&idx);
                }
                touched.insert(p);
            }
            let new_len = apply_merge_ltr(&mut seq, pair, result);
            seq.truncate(new_len);
            for k in 0..seq.len().saturating_sub(1) {
                let p = (seq[k], seq[k + 1]);
                *pair_counts.entry(p).or_insert(0) += weight;
                occurs.entry(p).or_default().insert(idx);
                touched.insert(p);
            }
            words[idx].0 = seq;
        }
        debug_assert!(
            !pair_counts.contains_key(&pair),
            "merged pair must vanish from every word"
        );
        // one fresh heap entry per changed pair; stale entries are discarded
        // at pop time by comparing against the live count
        for p in touched {
            if let Some(&c) = pair_counts.get(&p) {
                if c >= MIN_PAIR_COUNT {
                    heap.push((c, Reverse(p)));
                }
            }
        }
    }

    Ok((model, merge_counts))
}

fn pop_valid(
    heap: &mut BinaryHeap<(u64, Reverse<(u32, u32)>)>,
    pair_counts: &HashMap<(u32, u32), u64>,
    model: &TokenizerModel,
) -> Option<(u64, (u32, u32))> {
    while let Some((count, Reverse(pair))) = heap.pop() {
        if count < MIN_PAIR_COUNT || pair_counts.get(&pair) != Some(&count) {
            continue; // stale entry
        }
        // an adjacency can re-emerge after its pair was already merged
        // (later merges may rebuild the right-hand token next to the left);
        // a pair gets at most one rule, so such candidates are skipped
        if model.has_pair(pair.0, pair.1) {
            continue;
        }
        return Some((count, pair));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::BOS_ID;

    fn id(b: u8) -> u32 {
        b as u32 + 1
    }

    #[test]
    fn abab_example() {
        let corpus = Corpus::from_texts("t", ["abab", "abab"]);
        let (model, counts) = train_bpe_detailed(&corpus, 259, 0).unwrap();
        assert_eq!(model.vocab_size(), 259);
        let m = model.merges();
        assert_eq!(m.len(), 2);
        assert_eq!(
            (m[0].left, m[0].right, m[0].result),
            (id(b'a'), id(b'b'), 257)
        );
        assert_eq!((m[1].left, m[1].right, m[1].result), (257, 257, 258));
        assert_eq!(counts, vec![4, 2]);
        assert_eq!(model.token_bytes(257).unwrap(), b"ab");
        assert_eq!(model.token_bytes(258).unwrap(), b"abab");
    }

    #[test]
    fn target_257_learns_nothing() {
        let corpus = Corpus::from_texts("t", ["abab", "abab"]);
        let model = train_bpe(&corpus, 257, 0).unwrap();
        assert_eq!(model.vocab_size(), 257);
        assert!(model.merges().is_empty());
    }

    #[test]
    fn early_stop_when_no_frequent_pair() {
        // (z,z) count 2 across the two docs; after the merge nothing repeats
        let corpus = Corpus::from_texts("t", ["zz", "zz"]);
        let model = train_bpe(&corpus, 10_000, 0).unwrap();
        assert_eq!(model.vocab_size(), 258);
        assert_eq!(model.requested_vocab_size(), 10_000);
        assert_eq!(model.token_bytes(257).unwrap(), b"zz");
    }

    #[test]
    fn overlapping_pair_counts_within_a_word() {
        // "zzz" holds two (z,z) occurrences; replacement is left-to-right
        // non-overlapping, so the word becomes [zz, z] and training stops
        let corpus = Corpus::from_texts("t", ["zzz"]);
        let (model, counts) = train_bpe_detailed(&corpus, 10_000, 0).unwrap();
        assert_eq!(model.vocab_size(), 258);
        assert_eq!(counts, vec![2]);
        assert_eq!(model.encode("zzz"), vec![257, id(b'z')]);
    }

    #[test]
    fn single_occurrence_pair_is_ignored() {
        let corpus = Corpus::from_texts("t", ["zz"]);
        let model = train_bpe(&corpus, 10_000, 0).unwrap();
        assert_eq!(model.vocab_size(), 257);
    }

    #[test]
    fn ties_break_on_smallest_pair() {
        // count-2 candidates (space,c), (a,b), (c,d); ids order the wins
        let corpus = Corpus::from_texts("t", ["ab ab cd cd"]);
        let (model, counts) = train_bpe_detailed(&corpus, 10_000, 0).unwrap();
        let m: Vec<_> = model
            .merges()
            .iter()
            .map(|r| (r.left, r.right, r.result))
            .collect();
        assert_eq!(
            m,
            vec![
                (id(b' '), id(b'c'), 257),
                (id(b'a'), id(b'b'), 258),
                (257, id(b'd'), 259),
            ]
        );
        assert_eq!(counts, vec![2, 2, 2]);
    }

    #[test]
    fn word_counts_aggregate_across_docs() {
        let one = Corpus::from_texts("t", ["ab", "ab"]);
        let two = Corpus::from_texts("t", ["ab\nab"]); // newline is its own word; "ab" still counts twice
        let m1 = train_bpe(&one, 258, 0).unwrap();
        let m2 = train_bpe(&two, 258, 0).unwrap();
        assert_eq!(m1.merges(), m2.merges());
    }

    #[test]
    fn rejects_bad_inputs() {
        let corpus = Corpus::from_texts("t", ["abab"]);
        assert!(matches!(
            train_bpe(&corpus, 256, 0),
            Err(Error::VocabTooSmall(256))
        ));
        let empty = Corpus::from_texts("t", Vec::<String>::new());
        assert!(matches!(train_bpe(&empty, 300, 0), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn deterministic_serialization() {
        let corpus = Corpus::from_texts("t", ["the cat sat on the mat", "a cat sat"]);
        let a = train_bpe(&corpus, 300, 0).unwrap();
        let b = train_bpe(&corpus, 300, 7).unwrap(); // seed is inert
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn encode_never_emits_bos() {
        let corpus = Corpus::from_texts("t", ["abab", "abab"]);
        let model = train_bpe(&corpus, 400, 0).unwrap();
        assert!(model.encode("ab abab b").iter().all(|&t| t != BOS_ID));
    }
}
