//! Shared fixtures for the integration suites: an independent quadratic
//! reference implementation of BPE training/encoding, and deterministic
//! synthetic corpus generators.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use lingua_adapt::corpus::{normalize_text, Corpus};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Merge = (u32, u32, u32);

fn is_ws(b: u8) -> bool {
    matches!(b, 0x20 | 0x09 | 0x0A | 0x0B | 0x0C | 0x0D)
}

/// Independent restatement of the word-splitting rule: a word is an
/// optional single leading space plus a maximal run of non-whitespace
/// bytes; any other whitespace byte (and a space not followed by
/// non-whitespace) stands alone.
pub fn naive_pre_tokenize(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut words = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == 0x20 && i + 1 < bytes.len() && !is_ws(bytes[i + 1]) {
            let mut j = i + 1;
            while j < bytes.len() && !is_ws(bytes[j]) {
                j += 1;
            }
            words.push(bytes[i..j].to_vec());
            i = j;
        } else if is_ws(b) {
            words.push(vec![b]);
            i += 1;
        } else {
            let mut j = i;
            while j < bytes.len() && !is_ws(bytes[j]) {
                j += 1;
            }
            words.push(bytes[i..j].to_vec());
            i = j;
        }
    }
    words
}

/// Left-to-right non-overlapping replacement of `pair` by `id`, in place.
pub fn replace_pair_ltr(seq: &mut Vec<u32>, pair: (u32, u32), id: u32) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == pair.0 && seq[i + 1] == pair.1 {
            out.push(id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    *seq = out;
}

/// Quadratic reference BPE trainer: recount every pair from scratch at each
/// step, pick the most frequent (ties to the numerically smallest pair),
/// stop below count 2 or at the target size. A pair that was already merged
/// once is never emitted again even if later merges make it re-appear.
pub fn naive_train_bpe(docs: &[&str], target_vocab: usize) -> Vec<Merge> {
    assert!(
        target_vocab >= 257,
        "reference trainer needs a valid target"
    );
    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for doc in docs {
        let text = normalize_text(doc);
        for w in naive_pre_tokenize(text.as_bytes()) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| b as u32 + 1).collect(), c))
        .collect();
    words.sort();

    let mut merges: Vec<Merge> = Vec::new();
    let mut merged_pairs: HashSet<(u32, u32)> = HashSet::new();
    let mut next_id = 257u32;
    while (next_id as usize) < target_vocab {
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (w, c) in &words {
            for pair in w.windows(2) {
                *pair_counts.entry((pair[0], pair[1])).or_insert(0) += c;
            }
        }
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &pair_counts {
            if count < 2 || merged_pairs.contains(&pair) {
                continue;
            }
            best = match best {
                Some((bp, bc)) if count < bc || (count == bc && pair >= bp) => Some((bp, bc)),
                _ => Some((pair, count)),
            };
        }
        let Some((pair, _)) = best else { break };
        merged_pairs.insert(pair);
        merges.push((pair.0, pair.1, next_id));
        for (w, _) in &mut words {
            replace_pair_ltr(w, pair, next_id);
        }
        next_id += 1;
    }
    merges
}

/// Brute-force encoder: repeatedly apply the lowest-rank rule that occurs
/// anywhere in the word until no rule applies.
pub fn naive_encode_word(word: &[u8], merges: &[Merge]) -> Vec<u32> {
    let mut seq: Vec<u32> = word.iter().map(|&b| b as u32 + 1).collect();
    'outer: loop {
        for &(l, r, id) in merges {
            if seq.windows(2).any(|w| w[0] == l && w[1] == r) {
                replace_pair_ltr(&mut seq, (l, r), id);
                continue 'outer;
            }
        }
        return seq;
    }
}

fn syllable_pool(
    consonants: &[&str],
    vowels: &[&str],
    n_types: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(n_types);
    while pool.len() < n_types {
        let n_syllables = rng.random_range(2..=4usize);
        let mut w = String::new();
        for _ in 0..n_syllables {
            w.push_str(consonants[rng.random_range(0..consonants.len())]);
            w.push_str(vowels[rng.random_range(0..vowels.len())]);
        }
        if seen.insert(w.clone()) {
            pool.push(w);
        }
    }
    pool
}

/// Documents of `words_per_doc` words drawn 1/rank-weighted from a fixed
/// pool of `n_types` word types. Fully determined by the arguments.
fn zipf_corpus(
    source_id: &str,
    pool: &[String],
    n_docs: usize,
    words_per_doc: usize,
    seed: u64,
) -> Corpus {
    let mut cum = Vec::with_capacity(pool.len());
    let mut total = 0.0f64;
    for r in 0..pool.len() {
        total += 1.0 / (r + 1) as f64;
        cum.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let mut doc = String::new();
        for i in 0..words_per_doc {
            if i > 0 {
                doc.push(' ');
            }
            let u: f64 = rng.random_range(0.0..total);
            let idx = cum.partition_point(|&c| c < u);
            doc.push_str(&pool[idx.min(pool.len() - 1)]);
        }
        docs.push(doc);
    }
    Corpus::from_texts(source_id, docs)
}

/// English-looking synthetic corpus (lowercase ASCII syllable words).
pub fn ascii_corpus(n_docs: usize, words_per_doc: usize, n_types: usize, seed: u64) -> Corpus {
    let consonants = [
        "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
    ];
    let vowels = ["a", "e", "i", "o", "u", "y"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a5c1);
    let pool = syllable_pool(&consonants, &vowels, n_types, &mut rng);
    zipf_corpus("synthetic-ascii", &pool, n_docs, words_per_doc, seed)
}

/// Disjoint-script synthetic corpus (Cyrillic syllable words; every
/// character is outside ASCII, two UTF-8 bytes each).
pub fn cyrillic_corpus(n_docs: usize, words_per_doc: usize, n_types: usize, seed: u64) -> Corpus {
    let consonants = [
        "б", "в", "г", "д", "ж", "з", "к", "л", "м", "н", "п", "р", "с", "т", "ф", "х", "ц", "ч",
        "ш", "щ",
    ];
    let vowels = ["а", "е", "и", "о", "у", "ы", "э", "ю", "я"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc421_111c);
    let pool = syllable_pool(&consonants, &vowels, n_types, &mut rng);
    zipf_corpus("synthetic-cyrillic", &pool, n_docs, words_per_doc, seed)
}
