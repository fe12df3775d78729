//! Adam training with a cosine-warmup learning-rate schedule, global
//! gradient-norm clipping, and optional body freezing (embedding-only
//! updates for warm starts).

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bpe::TokenizerModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::util::mix_seed;

use super::net::{build_positions, Net};
use super::{check_tokenizer_matches, LMCheckpoint};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
/// Sequences are truncated to this many tokens before batching.
const SEQ_CAP: usize = 1024;
/// Fixed batch size used by [`warm_start`].
const WARM_BATCH: usize = 16;
const TRAIN_TAG: u64 = 0x7472_6169; // "trai"

pub const DEFAULT_WARM_FRACTION: f64 = 0.05;
pub const DEFAULT_WARM_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    /// When set, W1 and b1 receive no updates (embeddings only).
    pub freeze_body: bool,
    pub clip_norm: f64,
}

impl TrainSchedule {
    pub fn new(total_steps: usize, warmup_steps: usize, base_lr: f64, batch_size: usize) -> Self {
        TrainSchedule {
            total_steps,
            warmup_steps,
            base_lr,
            batch_size,
            freeze_body: false,
            clip_norm: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        // the <= / is_nan pairs reject NaN along with non-positive values
        if self.base_lr <= 0.0 || self.base_lr.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be >= 1".to_string(),
            ));
        }
        if self.clip_norm <= 0.0 || self.clip_norm.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over `warmup_steps`, then cosine decay to 0
/// at `total_steps`.
pub fn cosine_warmup_lr(step: usize, schedule: &TrainSchedule) -> Result<f64> {
    if step >= schedule.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: schedule.total_steps,
        });
    }
    if step < schedule.warmup_steps {
        return Ok(schedule.base_lr * (step + 1) as f64 / schedule.warmup_steps as f64);
    }
    let span = (schedule.total_steps - schedule.warmup_steps) as f64;
    let progress = (step - schedule.warmup_steps) as f64 / span;
    Ok(schedule.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Render a loss curve as CSV (header `step,lr,loss`).
pub fn loss_curve_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
    }
    out
}

/// Run `schedule.total_steps` Adam steps of next-token training. Documents
/// are tokenized, empty encodings dropped, sequences capped at 1024 tokens,
/// and batches drawn from one seeded shuffle consumed cyclically. The loss
/// recorded for a step is measured before that step's update.
pub fn train(
    lm: &mut LMCheckpoint,
    corpus: &Corpus,
    tokenizer: &TokenizerModel,
    schedule: &TrainSchedule,
) -> Result<Vec<LossRecord>> {
    schedule.validate()?;
    check_tokenizer_matches(lm, tokenizer)?;
    if corpus.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let seqs: Vec<Vec<u32>> = tokenizer
        .encode_corpus(corpus)
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|mut s| {
            s.truncate(SEQ_CAP);
            s
        })
        .collect();
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(lm.config.seed, &[TRAIN_TAG, lm.step]));
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut records = Vec::with_capacity(schedule.total_steps);
    for s in 0..schedule.total_steps {
        let lr = cosine_warmup_lr(s, schedule)?;
        let batch: Vec<&[u32]> = (0..schedule.batch_size)
            .map(|_| {
                let seq = seqs[order[cursor]].as_slice();
                cursor = (cursor + 1) % order.len();
                seq
            })
            .collect();
        let (ctx, tgt) = build_positions(&batch, lm.config.context_k);
        let (loss, grads) = Net::from_checkpoint(lm).forward_backward(&ctx, &tgt, true);
        let g = grads.expect("gradients requested");
        records.push(LossRecord {
            step: lm.step + s as u64,
            lr,
            loss,
        });

        // global norm over the parameters that will actually move
        let mut sq: f64 = sum_sq(&g.e) + sum_sq(&g.o);
        if !schedule.freeze_body {
            sq += sum_sq(&g.w1) + sum_sq(&g.b1);
        }
        let norm = sq.sqrt();
        let scale = if norm > schedule.clip_norm {
            schedule.clip_norm / norm
        } else {
            1.0
        };

        let t = lm.step + s as u64 + 1;
        let optim = &mut lm.optim;
        adam_step(
            lm.e.data_mut(),
            &g.e,
            &mut optim.m_e,
            &mut optim.v_e,
            lr,
            scale,
            t,
        );
        adam_step(
            lm.o.data_mut(),
            &g.o,
            &mut optim.m_o,
            &mut optim.v_o,
            lr,
            scale,
            t,
        );
        if !schedule.freeze_body {
            adam_step(
                &mut lm.w1,
                &g.w1,
                &mut optim.m_w1,
                &mut optim.v_w1,
                lr,
                scale,
                t,
            );
            adam_step(
                &mut lm.b1,
                &g.b1,
                &mut optim.m_b1,
                &mut optim.v_b1,
                lr,
                scale,
                t,
            );
        }
        optim.t = t;
    }
    lm.step += schedule.total_steps as u64;
    Ok(records)
}

/// Freeze the body and train on the first ⌈fraction · n_docs⌉ documents at
/// a flat learning rate — the embedding warm start.
pub fn warm_start(
    lm: &mut LMCheckpoint,
    corpus: &Corpus,
    tokenizer: &TokenizerModel,
    fraction: f64,
    lr: f64,
) -> Result<Vec<LossRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    if corpus.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let n_warm = ((fraction * corpus.n_docs() as f64).ceil() as usize).clamp(1, corpus.n_docs());
    let warm = Corpus {
        docs: corpus.docs[..n_warm].to_vec(),
        source_id: corpus.source_id.clone(),
        replacements: corpus.replacements,
    };
    let schedule = TrainSchedule {
        total_steps: n_warm.div_ceil(WARM_BATCH),
        warmup_steps: 0,
        base_lr: lr,
        batch_size: WARM_BATCH,
        freeze_body: true,
        clip_norm: 1.0,
    };
    train(lm, &warm, tokenizer, &schedule)
}

fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

#[allow(clippy::too_many_arguments)]
fn adam_step(
    theta: &mut [f32],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    scale: f64,
    t: u64,
) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..theta.len() {
        let gi = g[i] * scale;
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
        let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
        theta[i] = (theta[i] as f64 - update) as f32;
    }
}
