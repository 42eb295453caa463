//! Tape-free incremental decoding with a per-layer key/value cache.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LmConfig, LmError, LmParams, PromptEncoding, TokenId, EOS};
use crate::numerics::kernels::{axpy, dot, softmax_in_place};
use crate::numerics::ParameterStore;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Temperature(f64),
}

/// Incremental forward pass; feeds one position at a time.
pub struct Decoder<'a> {
    store: &'a ParameterStore,
    params: &'a LmParams,
    cfg: &'a LmConfig,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

fn vec_mat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, &w[i * cols..(i + 1) * cols], &mut out);
    }
    out
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let is = 1.0 / libm::sqrt(var + LN_EPS);
    x.iter().zip(g).zip(b).map(|((&v, &g), &b)| (v - mean) * is * g + b).collect()
}

impl<'a> Decoder<'a> {
    pub fn new(store: &'a ParameterStore, params: &'a LmParams, cfg: &'a LmConfig) -> Self {
        Decoder {
            store,
            params,
            cfg,
            keys: vec![Vec::new(); cfg.layers],
            values: vec![Vec::new(); cfg.layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn data(&self, id: crate::numerics::ParamId) -> &'a [f64] {
        &self.store.value(id).data
    }

    /// Input row for a token, before the position embedding.
    pub fn token_row(&self, id: TokenId) -> Vec<f64> {
        let d = self.cfg.d_model;
        self.data(self.params.tok)[id * d..(id + 1) * d].to_vec()
    }

    /// Input row for a graph slot given one `d_graph` row of `e_b`.
    pub fn graph_row(&self, row: &[f64]) -> Vec<f64> {
        match self.params.graph_proj {
            Some(p) => vec_mat(row, self.data(p), self.cfg.d_model),
            None => row.to_vec(),
        }
    }

    /// Appends one position; returns its next-token logits when `logits`.
    pub fn step(&mut self, input: &[f64], logits: bool) -> Result<Option<Vec<f64>>, LmError> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        if self.len >= cfg.max_seq {
            return Err(LmError::SequenceTooLong { len: self.len + 1, max: cfg.max_seq });
        }
        let pos = &self.data(self.params.pos)[self.len * d..(self.len + 1) * d];
        let mut x: Vec<f64> = input.iter().zip(pos).map(|(a, b)| a + b).collect();
        let heads = cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let t = self.len + 1;
        for (l, b) in self.params.blocks.iter().enumerate() {
            let h = layer_norm(&x, self.data(b.ln1_g), self.data(b.ln1_b));
            let q = vec_mat(&h, self.data(b.wq), d);
            let k = vec_mat(&h, self.data(b.wk), d);
            let v = vec_mat(&h, self.data(b.wv), d);
            self.keys[l].extend(k);
            self.values[l].extend(v);
            let (ks, vs) = (&self.keys[l], &self.values[l]);
            let mut att = vec![0.0; d];
            let mut w = vec![0.0; t];
            for hh in 0..heads {
                let r = hh * dh..(hh + 1) * dh;
                for (j, wj) in w.iter_mut().enumerate() {
                    *wj = dot(&q[r.clone()], &ks[j * d..][r.clone()]) * scale;
                }
                softmax_in_place(&mut w);
                for (j, &wj) in w.iter().enumerate() {
                    axpy(wj, &vs[j * d..][r.clone()], &mut att[r.clone()]);
                }
            }
            let o = vec_mat(&att, self.data(b.wo), d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

            let h = layer_norm(&x, self.data(b.ln2_g), self.data(b.ln2_b));
            let mut m = vec_mat(&h, self.data(b.w1), cfg.d_ff);
            m.iter_mut().zip(self.data(b.b1)).for_each(|(a, b)| *a = (*a + b).max(0.0));
            let m = vec_mat(&m, self.data(b.w2), d);
            x.iter_mut().zip(&m).zip(self.data(b.b2)).for_each(|((a, m), b)| *a += m + b);
        }
        self.len = t;
        if !logits {
            return Ok(None);
        }
        let h = layer_norm(&x, self.data(self.params.lnf_g), self.data(self.params.lnf_b));
        let v = self.store.value(self.params.out).data.len() / d;
        Ok(Some(vec_mat(&h, self.data(self.params.out), v)))
    }

    /// Feeds every prompt position, substituting graph rows at the slots;
    /// returns the logits of the last position.
    pub fn prefill(&mut self, enc: &PromptEncoding, e_b: Option<&[f64]>) -> Result<Vec<f64>, LmError> {
        let n = enc.ids.len();
        let slots = &enc.graph_slot_positions;
        let dg = self.cfg.d_graph;
        let rows = e_b.map_or(0, |e| e.len() / dg);
        if slots.len() != rows || e_b.is_some_and(|e| e.len() % dg != 0) {
            return Err(LmError::SlotMismatch { slots: slots.len(), rows });
        }
        if n == 0 {
            return Err(LmError::InvalidConfig("empty prompt"));
        }
        if n > self.cfg.max_seq {
            return Err(LmError::SequenceTooLong { len: n, max: self.cfg.max_seq });
        }
        let mut last = None;
        let mut slot = 0;
        for (p, &id) in enc.ids.iter().enumerate() {
            let input = if slot < slots.len() && slots[slot] == p {
                let e = e_b.expect("rows checked");
                slot += 1;
                self.graph_row(&e[(slot - 1) * dg..slot * dg])
            } else {
                self.token_row(id)
            };
            last = self.step(&input, p + 1 == n)?;
        }
        Ok(last.expect("nonempty prompt"))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Generates up to `max_new` tokens after `enc` (a prompt without target),
/// stopping at EOS, which is not returned.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    store: &ParameterStore,
    params: &LmParams,
    cfg: &LmConfig,
    enc: &PromptEncoding,
    e_b: Option<&[f64]>,
    mode: DecodeMode,
    max_new: usize,
    seed: u64,
) -> Result<Vec<TokenId>, LmError> {
    if let DecodeMode::Temperature(tau) = mode {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(LmError::InvalidConfig("temperature must be positive"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dec = Decoder::new(store, params, cfg);
    let mut logits = dec.prefill(enc, e_b)?;
    let mut out = Vec::new();
    while out.len() < max_new {
        let next = match mode {
            DecodeMode::Greedy => argmax(&logits),
            DecodeMode::Temperature(tau) => {
                let mut p: Vec<f64> = logits.iter().map(|l| l / tau).collect();
                softmax_in_place(&mut p);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        if next == EOS {
            break;
        }
        out.push(next);
        // the whole sequence, generated tokens included, stays within max_seq
        if dec.len() + 1 >= cfg.max_seq || out.len() == max_new {
            break;
        }
        let row = dec.token_row(next);
        logits = dec.step(&row, true)?.expect("logits requested");
    }
    Ok(out)
}
