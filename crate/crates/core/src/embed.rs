//! Embedding tables (input and unembedding) and the strategies that fill in
//! rows for newly added tokens: constituent mean, scale-matched Gaussian,
//! random-token copy, and similarity-weighted combination in an auxiliary
//! embedding space.

use std::path::Path;

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bpe::TokenizerModel;
use crate::error::{read_file, Error, Result};
use crate::util::mix_seed;
use crate::vocab_merge::VocabDiff;

const MAGIC: &[u8; 4] = b"EMBT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Output,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Input => 0,
            Role::Output => 1,
        }
    }

    fn from_code(code: u8) -> Result<Role> {
        match code {
            0 => Ok(Role::Input),
            1 => Ok(Role::Output),
            other => Err(Error::InvalidArgument(format!(
                "unknown embedding role code {other}"
            ))),
        }
    }
}

/// Dense |V| x d matrix of f32 rows, one per token id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    role: Role,
    vocab_size: usize,
    dim: usize,
    data: Vec<f32>, // row-major
}

impl EmbeddingTable {
    pub fn zeros(role: Role, vocab_size: usize, dim: usize) -> Self {
        EmbeddingTable {
            role,
            vocab_size,
            dim,
            data: vec![0.0; vocab_size * dim],
        }
    }

    pub fn from_data(role: Role, vocab_size: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != vocab_size * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {vocab_size}x{dim} = {} values, got {}",
                vocab_size * dim,
                data.len()
            )));
        }
        let table = EmbeddingTable {
            role,
            vocab_size,
            dim,
            data,
        };
        table.check_finite()?;
        Ok(table)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> &[f32] {
        let i = id as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[cfg(test)]
    pub(crate) fn row_mut(&mut self, id: u32) -> &mut [f32] {
        let i = id as usize;
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "embedding row {} dim {}",
                i / self.dim,
                i % self.dim
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_finite()?;
        Ok(self.raw_bytes())
    }

    /// Serialized form without the finite-value check — for fingerprinting,
    /// where in-progress tables must still hash.
    pub(crate) fn raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.role.code());
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.vocab_size as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::ShapeMismatch(format!(
                "embedding file too short: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported embedding file version {version}"
            )));
        }
        let role = Role::from_code(bytes[8])?;
        let vocab_size = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        let expect = HEADER_LEN + 4 * vocab_size * dim;
        if bytes.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "embedding file length {} does not match header {}x{} (want {})",
                bytes.len(),
                vocab_size,
                dim,
                expect
            )));
        }
        let data: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_data(role, vocab_size, dim, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Mean,
    Random,
    RandomToken,
    FocusLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitStrategy {
    pub kind: InitKind,
    pub seed: u64,
    /// Top-k neighbours for `FocusLite`; must be >= 1.
    pub focus_k: usize,
}

impl InitStrategy {
    pub fn new(kind: InitKind, seed: u64) -> Self {
        InitStrategy {
            kind,
            seed,
            focus_k: 10,
        }
    }
}

/// Extend `table` (sized for `base`) to the merged vocabulary. Rows
/// 0..|V_base| are copied bit-exactly; each added row is filled per the
/// strategy. Per-token RNG streams are derived from (seed, role, token id),
/// so results do not depend on evaluation order.
pub fn init_new_rows(
    table: &EmbeddingTable,
    merged: &TokenizerModel,
    base: &TokenizerModel,
    diff: &VocabDiff,
    strategy: &InitStrategy,
    aux: Option<&EmbeddingTable>,
) -> Result<EmbeddingTable> {
    if table.vocab_size != base.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "table holds {} rows but base vocabulary has {}",
            table.vocab_size,
            base.vocab_size()
        )));
    }
    if diff.base_vocab_size != base.vocab_size()
        || merged.vocab_size() != base.vocab_size() + diff.new_ids.len()
    {
        return Err(Error::DimensionMismatch(format!(
            "diff ({} base + {} new) does not match base {} / merged {}",
            diff.base_vocab_size,
            diff.new_ids.len(),
            base.vocab_size(),
            merged.vocab_size()
        )));
    }
    let dim = table.dim;
    let mut data = Vec::with_capacity(merged.vocab_size() * dim);
    data.extend_from_slice(&table.data);

    match strategy.kind {
        InitKind::Mean => {
            for &v in &diff.new_ids {
                let surface = merged.token_bytes(v)?;
                let constituents = base.encode_word_bytes(surface);
                if constituents.is_empty() {
                    return Err(Error::EmptyConstituents(format!(
                        "token {v} has no base constituents"
                    )));
                }
                // sum then divide, in the table's own precision
                let mut acc = vec![0f32; dim];
                for &t in &constituents {
                    for (a, &x) in acc.iter_mut().zip(table.row(t)) {
                        *a += x;
                    }
                }
                let n = constituents.len() as f32;
                for a in &mut acc {
                    *a /= n;
                }
                data.extend_from_slice(&acc);
            }
        }
        InitKind::Random => {
            let (mu, sigma) = base_row_stats(table);
            for &v in &diff.new_ids {
                let mut rng = token_rng(strategy.seed, table.role, v);
                for j in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push((mu[j] + sigma[j] * z) as f32);
                }
            }
        }
        InitKind::RandomToken => {
            for &v in &diff.new_ids {
                let mut rng = token_rng(strategy.seed, table.role, v);
                let src = rng.random_range(0..table.vocab_size as u32);
                data.extend_from_slice(table.row(src));
            }
        }
        InitKind::FocusLite => {
            if strategy.focus_k == 0 {
                return Err(Error::InvalidArgument("focus_k must be >= 1".to_string()));
            }
            let aux = aux.ok_or(Error::MissingAuxEmbedding)?;
            if aux.vocab_size != merged.vocab_size() {
                return Err(Error::DimensionMismatch(format!(
                    "aux table holds {} rows but merged vocabulary has {}",
                    aux.vocab_size,
                    merged.vocab_size()
                )));
            }
            let k = strategy.focus_k.min(base.vocab_size());
            for &v in &diff.new_ids {
                let target = aux.row(v);
                let mut sims: Vec<(f64, u32)> = (0..base.vocab_size() as u32)
                    .map(|u| (cosine(target, aux.row(u)), u))
                    .collect();
                // highest similarity first; ties prefer the lower id
                sims.sort_unstable_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .expect("finite cosine")
                        .then(a.1.cmp(&b.1))
                });
                sims.truncate(k);
                let weights = softmax(sims.iter().map(|&(c, _)| c));
                let mut acc = vec![0f64; dim];
                for (w, &(_, u)) in weights.iter().zip(&sims) {
                    for (a, &x) in acc.iter_mut().zip(table.row(u)) {
                        *a += w * x as f64;
                    }
                }
                data.extend(acc.into_iter().map(|x| x as f32));
            }
        }
    }

    EmbeddingTable::from_data(table.role, merged.vocab_size(), dim, data)
}

fn token_rng(seed: u64, role: Role, token_id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, &[role.code() as u64, token_id as u64]))
}

/// Per-dimension mean and population standard deviation over all rows, in f64.
fn base_row_stats(table: &EmbeddingTable) -> (Vec<f64>, Vec<f64>) {
    let n = table.vocab_size as f64;
    let mut mu = vec![0f64; table.dim];
    for id in 0..table.vocab_size as u32 {
        for (m, &x) in mu.iter_mut().zip(table.row(id)) {
            *m += x as f64;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut var = vec![0f64; table.dim];
    for id in 0..table.vocab_size as u32 {
        for ((v, &m), &x) in var.iter_mut().zip(&mu).zip(table.row(id)) {
            let d = x as f64 - m;
            *v += d * d;
        }
    }
    let sigma = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mu, sigma)
}

/// Cosine similarity in f64; zero-norm vectors similarity is 0.
fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn softmax(logits: impl Iterator<Item = f64>) -> Vec<f64> {
    let xs: Vec<f64> = logits.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
