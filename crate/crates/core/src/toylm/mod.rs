//! A small fixed-context feed-forward language model. It is deliberately
//! tiny — concatenated context embeddings, one ReLU layer, and a row-per-token
//! unembedding — but it has exactly the input/output embedding structure that
//! vocabulary adaptation manipulates, trains in seconds, and every operation
//! is deterministic for a fixed seed.

pub(crate) mod net;
mod train;

pub use train::{
    cosine_warmup_lr, loss_curve_csv, train, warm_start, LossRecord, TrainSchedule,
    DEFAULT_WARM_FRACTION, DEFAULT_WARM_LR,
};

use std::path::Path;
use std::time::Instant;

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bpe::{TokenizerModel, BOS_ID};
use crate::embed::{init_new_rows, EmbeddingTable, InitStrategy, Role};
use crate::error::{read_file, Error, Result};
use crate::util::{fingerprint, mix_seed};
use crate::vocab_merge::VocabDiff;

use net::{build_positions, Net};

const BODY_MAGIC: &[u8; 4] = b"BODY";
const OPTIM_MAGIC: &[u8; 4] = b"OPTM";
const FORMAT_VERSION: u32 = 1;
/// Default step size for finite-difference gradient probes.
pub const GRAD_CHECK_H: f64 = 1e-4;
const GRAD_TAG: u64 = 0x6772_6164; // "grad"
const INIT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub context_k: usize,
    pub embed_dim: usize,
    pub hidden_h: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl LMConfig {
    /// Default architecture: context 8, embedding 64, hidden 256.
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        LMConfig {
            context_k: 8,
            embed_dim: 64,
            hidden_h: 256,
            vocab_size,
            seed,
        }
    }
}

/// Adam moment estimates, kept at f64 like all training arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdamState {
    pub t: u64,
    pub m_e: Vec<f64>,
    pub m_o: Vec<f64>,
    pub m_w1: Vec<f64>,
    pub m_b1: Vec<f64>,
    pub v_e: Vec<f64>,
    pub v_o: Vec<f64>,
    pub v_w1: Vec<f64>,
    pub v_b1: Vec<f64>,
}

impl AdamState {
    fn zeros(t: u64, e: usize, o: usize, w1: usize, b1: usize) -> Self {
        AdamState {
            t,
            m_e: vec![0.0; e],
            m_o: vec![0.0; o],
            m_w1: vec![0.0; w1],
            m_b1: vec![0.0; b1],
            v_e: vec![0.0; e],
            v_o: vec![0.0; o],
            v_w1: vec![0.0; w1],
            v_b1: vec![0.0; b1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LMCheckpoint {
    pub config: LMConfig,
    pub(crate) e: EmbeddingTable,
    pub(crate) o: EmbeddingTable,
    /// (k·d) x h row-major: w1[j*h + i] feeds input j into hidden unit i.
    pub(crate) w1: Vec<f32>,
    pub(crate) b1: Vec<f32>,
    pub(crate) optim: AdamState,
    pub(crate) step: u64,
}

impl LMCheckpoint {
    pub fn input_embeddings(&self) -> &EmbeddingTable {
        &self.e
    }

    pub fn output_embeddings(&self) -> &EmbeddingTable {
        &self.o
    }

    pub fn body_w1(&self) -> &[f32] {
        &self.w1
    }

    pub fn body_b1(&self) -> &[f32] {
        &self.b1
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * (self.w1.len() + self.b1.len()));
        out.extend_from_slice(BODY_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for x in self.w1.iter().chain(&self.b1) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    fn optim_bytes(&self) -> Vec<u8> {
        let s = &self.optim;
        let n = s.m_e.len() + s.m_o.len() + s.m_w1.len() + s.m_b1.len();
        let mut out = Vec::with_capacity(16 + 16 * n);
        out.extend_from_slice(OPTIM_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&s.t.to_le_bytes());
        for part in [
            &s.m_e, &s.m_o, &s.m_w1, &s.m_b1, &s.v_e, &s.v_o, &s.v_w1, &s.v_b1,
        ] {
            for x in part.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    fn config_json(&self) -> String {
        let file = ConfigFile {
            context_k: self.config.context_k,
            embed_dim: self.config.embed_dim,
            hidden_h: self.config.hidden_h,
            vocab_size: self.config.vocab_size,
            seed: self.config.seed,
            step: self.step,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("config serialization");
        s.push('\n');
        s
    }

    /// Write the checkpoint as a directory: config.json, E.embt, O.embt,
    /// body.bin, optim.bin.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), self.config_json())?;
        self.e.save(&dir.join("E.embt"))?;
        self.o.save(&dir.join("O.embt"))?;
        std::fs::write(dir.join("body.bin"), self.body_bytes())?;
        std::fs::write(dir.join("optim.bin"), self.optim_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<LMCheckpoint> {
        let raw = read_file(&dir.join("config.json"))?;
        let cf: ConfigFile = serde_json::from_slice(&raw)
            .map_err(|e| Error::InvalidArgument(format!("invalid checkpoint config: {e}")))?;
        let config = LMConfig {
            context_k: cf.context_k,
            embed_dim: cf.embed_dim,
            hidden_h: cf.hidden_h,
            vocab_size: cf.vocab_size,
            seed: cf.seed,
        };
        let e = EmbeddingTable::load(&dir.join("E.embt"))?;
        let o = EmbeddingTable::load(&dir.join("O.embt"))?;
        if e.role() != Role::Input || o.role() != Role::Output {
            return Err(Error::InvalidArgument(
                "checkpoint embedding files have swapped roles".to_string(),
            ));
        }
        let (k, d, h, v) = (cf.context_k, cf.embed_dim, cf.hidden_h, cf.vocab_size);
        if e.vocab_size() != v || e.dim() != d || o.vocab_size() != v || o.dim() != h {
            return Err(Error::ShapeMismatch(format!(
                "embedding tables {}x{} / {}x{} do not match config {v}x{d} / {v}x{h}",
                e.vocab_size(),
                e.dim(),
                o.vocab_size(),
                o.dim()
            )));
        }

        let body = read_file(&dir.join("body.bin"))?;
        let (w1, b1) = parse_body(&body, k * d * h, h)?;

        let optim_path = dir.join("optim.bin");
        let optim = if optim_path.exists() {
            parse_optim(&read_file(&optim_path)?, v * d, v * h, k * d * h, h)?
        } else {
            AdamState::zeros(cf.step, v * d, v * h, k * d * h, h)
        };

        Ok(LMCheckpoint {
            config,
            e,
            o,
            w1,
            b1,
            optim,
            step: cf.step,
        })
    }

    /// Short content id over config and parameters (optimizer excluded).
    pub fn fingerprint(&self) -> String {
        let mut bytes = self.config_json().into_bytes();
        for table in [&self.e, &self.o] {
            bytes.extend_from_slice(&table.raw_bytes());
        }
        bytes.extend_from_slice(&self.body_bytes());
        fingerprint(&bytes)
    }

    pub(crate) fn param_len(&self) -> usize {
        self.e.data().len() + self.o.data().len() + self.w1.len() + self.b1.len()
    }

    pub(crate) fn param_get(&self, idx: usize) -> f32 {
        let mut i = idx;
        for part in [self.e.data(), self.o.data(), &self.w1, &self.b1] {
            if i < part.len() {
                return part[i];
            }
            i -= part.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub(crate) fn param_set(&mut self, idx: usize, val: f32) {
        let mut i = idx;
        let e_len = self.e.data().len();
        if i < e_len {
            self.e.data_mut()[i] = val;
            return;
        }
        i -= e_len;
        let o_len = self.o.data().len();
        if i < o_len {
            self.o.data_mut()[i] = val;
            return;
        }
        i -= o_len;
        if i < self.w1.len() {
            self.w1[i] = val;
            return;
        }
        i -= self.w1.len();
        self.b1[i] = val;
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    context_k: usize,
    embed_dim: usize,
    hidden_h: usize,
    vocab_size: usize,
    seed: u64,
    step: u64,
}

fn parse_body(bytes: &[u8], w1_len: usize, b1_len: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    if bytes.len() < 8 || &bytes[..4] != BODY_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(BODY_MAGIC).into_owned(),
            found: String::from_utf8_lossy(bytes.get(..4).unwrap_or_default()).into_owned(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported body file version {version}"
        )));
    }
    let expect = 8 + 4 * (w1_len + b1_len);
    if bytes.len() != expect {
        return Err(Error::ShapeMismatch(format!(
            "body file length {} (want {expect})",
            bytes.len()
        )));
    }
    let mut floats = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let w1: Vec<f32> = floats.by_ref().take(w1_len).collect();
    let b1: Vec<f32> = floats.collect();
    if w1.iter().chain(&b1).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteValue("body parameters".to_string()));
    }
    Ok((w1, b1))
}

fn parse_optim(bytes: &[u8], e: usize, o: usize, w1: usize, b1: usize) -> Result<AdamState> {
    if bytes.len() < 16 || &bytes[..4] != OPTIM_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(OPTIM_MAGIC).into_owned(),
            found: String::from_utf8_lossy(bytes.get(..4).unwrap_or_default()).into_owned(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported optimizer file version {version}"
        )));
    }
    let t = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let n = e + o + w1 + b1;
    let expect = 16 + 16 * n;
    if bytes.len() != expect {
        return Err(Error::ShapeMismatch(format!(
            "optimizer file length {} (want {expect})",
            bytes.len()
        )));
    }
    let mut floats = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |len: usize| -> Vec<f64> { floats.by_ref().take(len).collect() };
    Ok(AdamState {
        t,
        m_e: take(e),
        m_o: take(o),
        m_w1: take(w1),
        m_b1: take(b1),
        v_e: take(e),
        v_o: take(o),
        v_w1: take(w1),
        v_b1: take(b1),
    })
}

/// Fresh model: all parameters i.i.d. Gaussian(0, 0.02²) from the config
/// seed, filled in the order E, O, W1, b1; step 0, zero optimizer state.
pub fn new_lm(config: LMConfig) -> Result<LMCheckpoint> {
    if config.context_k == 0
        || config.embed_dim == 0
        || config.hidden_h == 0
        || config.vocab_size == 0
    {
        return Err(Error::InvalidArgument(
            "model dimensions must all be >= 1".to_string(),
        ));
    }
    let (k, d, h, v) = (
        config.context_k,
        config.embed_dim,
        config.hidden_h,
        config.vocab_size,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |n: usize| -> Vec<f32> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (INIT_SCALE * z) as f32
            })
            .collect()
    };
    let e = EmbeddingTable::from_data(Role::Input, v, d, draw(v * d))?;
    let o = EmbeddingTable::from_data(Role::Output, v, h, draw(v * h))?;
    let w1 = draw(k * d * h);
    let b1 = draw(h);
    Ok(LMCheckpoint {
        config,
        e,
        o,
        w1,
        b1,
        optim: AdamState::zeros(0, v * d, v * h, k * d * h, h),
        step: 0,
    })
}

fn validate_batch(lm: &LMCheckpoint, batch: &[&[u32]]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptySequence);
    }
    let vocab = lm.config.vocab_size;
    for seq in batch {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        for &id in *seq {
            if id as usize >= vocab {
                return Err(Error::InvalidTokenId { id, vocab });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_tokenizer_matches(lm: &LMCheckpoint, tok: &TokenizerModel) -> Result<()> {
    if lm.config.vocab_size != tok.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "model vocabulary {} vs tokenizer {}",
            lm.config.vocab_size,
            tok.vocab_size()
        )));
    }
    Ok(())
}

/// Mean next-token cross-entropy (nats/token) over every position of every
/// sequence.
pub fn forward_loss(lm: &LMCheckpoint, batch: &[Vec<u32>]) -> Result<f64> {
    let refs: Vec<&[u32]> = batch.iter().map(|s| s.as_slice()).collect();
    validate_batch(lm, &refs)?;
    let (ctx, tgt) = build_positions(&refs, lm.config.context_k);
    let net = Net::from_checkpoint(lm);
    Ok(net.forward_backward(&ctx, &tgt, false).0)
}

/// Extend E and O to the merged vocabulary with the given strategy; body
/// weights and step are untouched, new optimizer moments start at zero.
pub fn resize_vocab(
    lm: &LMCheckpoint,
    merged: &TokenizerModel,
    base: &TokenizerModel,
    diff: &VocabDiff,
    strategy: &InitStrategy,
    aux: Option<&EmbeddingTable>,
) -> Result<LMCheckpoint> {
    if lm.config.vocab_size != base.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "model vocabulary {} vs base tokenizer {}",
            lm.config.vocab_size,
            base.vocab_size()
        )));
    }
    let e = init_new_rows(&lm.e, merged, base, diff, strategy, aux)?;
    let o = init_new_rows(&lm.o, merged, base, diff, strategy, aux)?;
    let mut optim = lm.optim.clone();
    let add = diff.new_ids.len();
    let (d, h) = (lm.config.embed_dim, lm.config.hidden_h);
    for part in [&mut optim.m_e, &mut optim.v_e] {
        part.extend(std::iter::repeat_n(0.0, add * d));
    }
    for part in [&mut optim.m_o, &mut optim.v_o] {
        part.extend(std::iter::repeat_n(0.0, add * h));
    }
    let mut config = lm.config;
    config.vocab_size = merged.vocab_size();
    Ok(LMCheckpoint {
        config,
        e,
        o,
        w1: lm.w1.clone(),
        b1: lm.b1.clone(),
        optim,
        step: lm.step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub ids: Vec<u32>,
    pub elapsed_seconds: f64,
}

/// Greedy decoding: append the argmax-logit token (ties go to the lowest
/// id) until `max_tokens` or, with `stop_on_newline`, a token whose bytes
/// contain 0x0A (that token is kept in the output).
pub fn generate_greedy(
    lm: &LMCheckpoint,
    tokenizer: &TokenizerModel,
    prompt: &str,
    max_tokens: usize,
    stop_on_newline: bool,
) -> Result<Generation> {
    if max_tokens == 0 {
        return Err(Error::InvalidArgument(
            "max_tokens must be >= 1".to_string(),
        ));
    }
    check_tokenizer_matches(lm, tokenizer)?;
    let start = Instant::now();
    let mut history = tokenizer.encode(prompt);
    let net = Net::from_checkpoint(lm);
    let k = lm.config.context_k;
    let mut ctx = vec![BOS_ID; k];
    let mut ids = Vec::new();
    let mut logits = Vec::new();
    loop {
        for (c, slot) in ctx.iter_mut().enumerate() {
            let back = k - c;
            *slot = if history.len() >= back {
                history[history.len() - back]
            } else {
                BOS_ID
            };
        }
        net.logits_one(&ctx, &mut logits);
        let mut best = 0u32;
        let mut best_logit = logits[0];
        for (v, &l) in logits.iter().enumerate().skip(1) {
            if l > best_logit {
                best = v as u32;
                best_logit = l;
            }
        }
        ids.push(best);
        history.push(best);
        if stop_on_newline && tokenizer.token_bytes(best)?.contains(&b'\n') {
            break;
        }
        if ids.len() >= max_tokens {
            break;
        }
    }
    let text = tokenizer.decode(&ids)?;
    Ok(Generation {
        text,
        ids,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Compare the analytic gradient against central finite differences on
/// `n_coords` uniformly chosen parameters; returns the worst relative error
/// |g_a − g_n| / max(1e-8, |g_a| + |g_n|). A coordinate whose ±h probes land
/// in different ReLU activation regions is redrawn: the centered difference
/// across a kink estimates no derivative, so comparing it against the
/// analytic (one-sided) gradient would only measure the kink, not the code.
pub fn grad_check(lm: &LMCheckpoint, batch: &[Vec<u32>], n_coords: usize, h: f64) -> Result<f64> {
    let refs: Vec<&[u32]> = batch.iter().map(|s| s.as_slice()).collect();
    validate_batch(lm, &refs)?;
    let (ctx, tgt) = build_positions(&refs, lm.config.context_k);
    let (_, grads) = Net::from_checkpoint(lm).forward_backward(&ctx, &tgt, true);
    let grads = grads.expect("gradients requested");

    let total = lm.param_len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(lm.config.seed, &[GRAD_TAG]));
    let mut probe = lm.clone();
    let mut max_rel = 0f64;
    let mut checked = 0;
    let mut attempts = n_coords.saturating_mul(50);
    while checked < n_coords && attempts > 0 {
        attempts -= 1;
        let idx = rng.random_range(0..total);
        let theta = lm.param_get(idx);
        let plus = (theta as f64 + h) as f32;
        let minus = (theta as f64 - h) as f32;
        let h_eff = plus as f64 - minus as f64;
        assert!(h_eff > 0.0, "perturbation vanished in f32");
        probe.param_set(idx, plus);
        let net_plus = Net::from_checkpoint(&probe);
        let mask_plus = net_plus.relu_mask(&ctx);
        let loss_plus = net_plus.forward_backward(&ctx, &tgt, false).0;
        probe.param_set(idx, minus);
        let net_minus = Net::from_checkpoint(&probe);
        let mask_minus = net_minus.relu_mask(&ctx);
        let loss_minus = net_minus.forward_backward(&ctx, &tgt, false).0;
        probe.param_set(idx, theta);
        if mask_plus != mask_minus {
            continue;
        }
        let g_n = (loss_plus - loss_minus) / h_eff;
        let g_a = grads.flat_get(idx);
        let rel = (g_a - g_n).abs() / 1e-8f64.max(g_a.abs() + g_n.abs());
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(max_rel)
}
