//! The numeric core of the toy LM. Parameters live in f32 on the
//! checkpoint; all arithmetic here runs in f64 over private copies so that
//! losses and gradients are reproducible and finite-difference checkable.
//!
//! Architecture per position: x = concat of the k context embedding rows
//! (oldest first), hidden = relu(W1^T x + b1), logits = O · hidden.

use crate::bpe::BOS_ID;

use super::LMCheckpoint;

/// Positions are processed in blocks this large to bound scratch memory.
const CHUNK: usize = 128;

pub(crate) struct Net {
    pub k: usize,
    pub d: usize,
    pub h: usize,
    pub vocab: usize,
    e: Vec<f64>,
    o: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
}

pub(crate) struct Grads {
    pub e: Vec<f64>,
    pub o: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
}

impl Grads {
    fn zeros(net: &Net) -> Self {
        Grads {
            e: vec![0.0; net.e.len()],
            o: vec![0.0; net.o.len()],
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
        }
    }

    /// Flat view in parameter order (E, O, W1, b1), matching
    /// [`LMCheckpoint::param_get`].
    pub fn flat_get(&self, idx: usize) -> f64 {
        let mut i = idx;
        for part in [&self.e, &self.o, &self.w1, &self.b1] {
            if i < part.len() {
                return part[i];
            }
            i -= part.len();
        }
        panic!("gradient index {idx} out of range");
    }
}

impl Net {
    pub fn from_checkpoint(lm: &LMCheckpoint) -> Self {
        Net {
            k: lm.config.context_k,
            d: lm.config.embed_dim,
            h: lm.config.hidden_h,
            vocab: lm.config.vocab_size,
            e: lm.e.data().iter().map(|&x| x as f64).collect(),
            o: lm.o.data().iter().map(|&x| x as f64).collect(),
            w1: lm.w1.iter().map(|&x| x as f64).collect(),
            b1: lm.b1.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Logits for a single context window (`ctx.len() == k`).
    pub fn logits_one(&self, ctx: &[u32], out: &mut Vec<f64>) {
        debug_assert_eq!(ctx.len(), self.k);
        let (d, h) = (self.d, self.h);
        let mut x = vec![0f64; self.k * d];
        for (c, &id) in ctx.iter().enumerate() {
            let row = id as usize * d;
            x[c * d..(c + 1) * d].copy_from_slice(&self.e[row..row + d]);
        }
        let mut hidden = self.b1.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let w = &self.w1[j * h..(j + 1) * h];
                for i in 0..h {
                    hidden[i] += xj * w[i];
                }
            }
        }
        for v in hidden.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out.clear();
        out.reserve(self.vocab);
        for v in 0..self.vocab {
            let orow = &self.o[v * h..(v + 1) * h];
            let mut acc = 0.0;
            for i in 0..h {
                acc += orow[i] * hidden[i];
            }
            out.push(acc);
        }
    }

    /// Per-(position, unit) ReLU activation pattern, position-major. The
    /// accumulation order matches `forward_backward` exactly, so equal masks
    /// under two parameter settings guarantee both losses were computed in
    /// the same piecewise-linear region.
    pub fn relu_mask(&self, ctx: &[u32]) -> Vec<bool> {
        let (k, d, h) = (self.k, self.d, self.h);
        debug_assert_eq!(ctx.len() % k, 0);
        let n = ctx.len() / k;
        let mut mask = Vec::with_capacity(n * h);
        let mut z = vec![0f64; h];
        for p in 0..n {
            z.copy_from_slice(&self.b1);
            for c in 0..k {
                let row = ctx[p * k + c] as usize * d;
                for jj in 0..d {
                    let xj = self.e[row + jj];
                    if xj != 0.0 {
                        let w = &self.w1[(c * d + jj) * h..(c * d + jj + 1) * h];
                        for i in 0..h {
                            z[i] += xj * w[i];
                        }
                    }
                }
            }
            mask.extend(z.iter().map(|&v| v > 0.0));
        }
        mask
    }

    /// Mean cross-entropy over all positions and, optionally, its gradient.
    /// `ctx` is position-major (k ids each, oldest first), `tgt` one id per
    /// position.
    pub fn forward_backward(
        &self,
        ctx: &[u32],
        tgt: &[u32],
        want_grads: bool,
    ) -> (f64, Option<Grads>) {
        let (k, d, h, vocab) = (self.k, self.d, self.h, self.vocab);
        let kd = k * d;
        let n = tgt.len();
        assert_eq!(ctx.len(), n * k);
        let inv_n = 1.0 / n as f64;

        let mut grads = want_grads.then(|| Grads::zeros(self));
        let mut x = vec![0f64; CHUNK * kd];
        let mut hidden = vec![0f64; CHUNK * h];
        let mut dh = vec![0f64; CHUNK * h];
        // v-major so the per-token inner loops run over contiguous memory
        let mut logits = vec![0f64; vocab * CHUNK];
        let mut loss = 0.0;

        let mut start = 0;
        while start < n {
            let m = (n - start).min(CHUNK);

            for p in 0..m {
                let cbase = (start + p) * k;
                for c in 0..k {
                    let row = ctx[cbase + c] as usize * d;
                    x[p * kd + c * d..p * kd + (c + 1) * d].copy_from_slice(&self.e[row..row + d]);
                }
            }

            for p in 0..m {
                let hrow = &mut hidden[p * h..(p + 1) * h];
                hrow.copy_from_slice(&self.b1);
                for j in 0..kd {
                    let xj = x[p * kd + j];
                    if xj != 0.0 {
                        let w = &self.w1[j * h..(j + 1) * h];
                        for i in 0..h {
                            hrow[i] += xj * w[i];
                        }
                    }
                }
                for v in hrow.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }

            for v in 0..vocab {
                let orow = &self.o[v * h..(v + 1) * h];
                let lrow = &mut logits[v * CHUNK..v * CHUNK + m];
                for (p, l) in lrow.iter_mut().enumerate() {
                    let hrow = &hidden[p * h..(p + 1) * h];
                    let mut acc = 0.0;
                    for i in 0..h {
                        acc += orow[i] * hrow[i];
                    }
                    *l = acc;
                }
            }

            for p in 0..m {
                let mut max = f64::NEG_INFINITY;
                for v in 0..vocab {
                    max = max.max(logits[v * CHUNK + p]);
                }
                let mut z = 0.0;
                for v in 0..vocab {
                    z += (logits[v * CHUNK + p] - max).exp();
                }
                let lse = max + z.ln();
                let t = tgt[start + p] as usize;
                loss += (lse - logits[t * CHUNK + p]) * inv_n;
                if want_grads {
                    // reuse the logits buffer for d(loss)/d(logit)
                    for v in 0..vocab {
                        let sm = (logits[v * CHUNK + p] - lse).exp();
                        logits[v * CHUNK + p] = sm * inv_n;
                    }
                    logits[t * CHUNK + p] -= inv_n;
                }
            }

            let Some(g) = grads.as_mut() else {
                start += m;
                continue;
            };

            dh[..m * h].fill(0.0);
            for v in 0..vocab {
                let gorow = &mut g.o[v * h..(v + 1) * h];
                let orow = &self.o[v * h..(v + 1) * h];
                for p in 0..m {
                    let dl = logits[v * CHUNK + p];
                    let hrow = &hidden[p * h..(p + 1) * h];
                    let dhrow = &mut dh[p * h..(p + 1) * h];
                    for i in 0..h {
                        gorow[i] += dl * hrow[i];
                        dhrow[i] += dl * orow[i];
                    }
                }
            }

            for p in 0..m {
                let hrow = &hidden[p * h..(p + 1) * h];
                let dhrow = &mut dh[p * h..(p + 1) * h];
                for i in 0..h {
                    if hrow[i] <= 0.0 {
                        dhrow[i] = 0.0; // relu gate: dh is now d(pre-activation)
                    }
                }
                for (gb, &dv) in g.b1.iter_mut().zip(dhrow.iter()) {
                    *gb += dv;
                }
                let xrow = &x[p * kd..(p + 1) * kd];
                for (j, &xj) in xrow.iter().enumerate() {
                    if xj != 0.0 {
                        let gw = &mut g.w1[j * h..(j + 1) * h];
                        for i in 0..h {
                            gw[i] += xj * dhrow[i];
                        }
                    }
                }
                let cbase = (start + p) * k;
                for c in 0..k {
                    let erow = ctx[cbase + c] as usize * d;
                    for jj in 0..d {
                        let w = &self.w1[(c * d + jj) * h..(c * d + jj + 1) * h];
                        let mut acc = 0.0;
                        for i in 0..h {
                            acc += w[i] * dhrow[i];
                        }
                        g.e[erow + jj] += acc;
                    }
                }
            }

            start += m;
        }

        (loss, grads)
    }
}

/// Flatten a batch of sequences into per-position context windows (k ids,
/// oldest first, left-padded with bos) and targets.
pub(crate) fn build_positions(batch: &[&[u32]], k: usize) -> (Vec<u32>, Vec<u32>) {
    let n: usize = batch.iter().map(|s| s.len()).sum();
    let mut ctx = Vec::with_capacity(n * k);
    let mut tgt = Vec::with_capacity(n);
    for seq in batch {
        for i in 0..seq.len() {
            for c in 0..k {
                let back = k - c;
                ctx.push(if i >= back { seq[i - back] } else { BOS_ID });
            }
            tgt.push(seq[i]);
        }
    }
    (ctx, tgt)
}
