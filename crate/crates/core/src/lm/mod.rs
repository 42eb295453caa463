//! Decoder-only sequence model over [`Vocab`] tokens whose graph-pad slots
//! are overwritten with branch embedding rows.

mod infer;
mod vocab;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::numerics::{NumericsError, ParamId, ParameterStore, Tape, Var};

pub use infer::{decode, DecodeMode, Decoder};
pub use vocab::{TokenId, Vocab, VocabError, BOS, EOS, GRAPH, INDENT, NEWLINE, NOT_AVAIL, PAD, SEP};

pub const DEFAULT_MAX_NEW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub max_seq: usize,
    /// Hidden width of the position-wise MLP.
    pub d_ff: usize,
    /// Width of incoming graph rows; a learned map to `d_model` is added
    /// when `use_projection` is set.
    pub d_graph: usize,
    pub use_projection: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            layers: 4,
            d_model: 64,
            heads: 4,
            max_seq: 512,
            d_ff: 256,
            d_graph: 64,
            use_projection: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("SequenceTooLong: {len} tokens, limit {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("SlotMismatch: {slots} graph slots, {rows} embedding rows")]
    SlotMismatch { slots: usize, rows: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return Err(LmError::InvalidConfig("sizes must be positive"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(LmError::InvalidConfig("d_model must be divisible by heads"));
        }
        if !self.use_projection && self.d_graph != self.d_model {
            return Err(LmError::InvalidConfig("d_graph must equal d_model without a projection"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub tok: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub out: ParamId,
    pub graph_proj: Option<ParamId>,
}

impl LmParams {
    /// Registers the model under `lm.` in `store`.
    pub fn init<R: Rng>(cfg: &LmConfig, vocab_size: usize, store: &mut ParameterStore, rng: &mut R) -> Result<Self, LmError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let tok = store.add_uniform("lm.tok", vocab_size, d, 0.1, rng)?;
        let pos = store.add_uniform("lm.pos", cfg.max_seq, d, 0.02, rng)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let n = |s: &str| format!("lm.b{k}.{s}");
            blocks.push(BlockParams {
                ln1_g: store.add_const(n("ln1_g"), 1, d, 1.0)?,
                ln1_b: store.add_const(n("ln1_b"), 1, d, 0.0)?,
                wq: store.add_xavier(n("wq"), d, d, rng)?,
                wk: store.add_xavier(n("wk"), d, d, rng)?,
                wv: store.add_xavier(n("wv"), d, d, rng)?,
                wo: store.add_xavier(n("wo"), d, d, rng)?,
                ln2_g: store.add_const(n("ln2_g"), 1, d, 1.0)?,
                ln2_b: store.add_const(n("ln2_b"), 1, d, 0.0)?,
                w1: store.add_xavier(n("w1"), d, cfg.d_ff, rng)?,
                b1: store.add_const(n("b1"), 1, cfg.d_ff, 0.0)?,
                w2: store.add_xavier(n("w2"), cfg.d_ff, d, rng)?,
                b2: store.add_const(n("b2"), 1, d, 0.0)?,
            });
        }
        let lnf_g = store.add_const("lm.lnf_g", 1, d, 1.0)?;
        let lnf_b = store.add_const("lm.lnf_b", 1, d, 0.0)?;
        let out = store.add_xavier("lm.out", d, vocab_size, rng)?;
        let graph_proj = if cfg.use_projection {
            Some(store.add_xavier("lm.graph_proj", cfg.d_graph, d, rng)?)
        } else {
            None
        };
        Ok(LmParams { tok, pos, blocks, lnf_g, lnf_b, out, graph_proj })
    }

    pub fn from_store(cfg: &LmConfig, store: &ParameterStore) -> Result<Self, LmError> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let n = |s: &str| store.id(&format!("lm.b{k}.{s}"));
            blocks.push(BlockParams {
                ln1_g: n("ln1_g")?,
                ln1_b: n("ln1_b")?,
                wq: n("wq")?,
                wk: n("wk")?,
                wv: n("wv")?,
                wo: n("wo")?,
                ln2_g: n("ln2_g")?,
                ln2_b: n("ln2_b")?,
                w1: n("w1")?,
                b1: n("b1")?,
                w2: n("w2")?,
                b2: n("b2")?,
            });
        }
        Ok(LmParams {
            tok: store.id("lm.tok")?,
            pos: store.id("lm.pos")?,
            blocks,
            lnf_g: store.id("lm.lnf_g")?,
            lnf_b: store.id("lm.lnf_b")?,
            out: store.id("lm.out")?,
            graph_proj: if cfg.use_projection { Some(store.id("lm.graph_proj")?) } else { None },
        })
    }
}

/// Token ids of one prompt, optionally followed by its target test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEncoding {
    pub ids: Vec<TokenId>,
    pub graph_slot_positions: Vec<usize>,
    /// `[start, end)` of the target test tokens plus the closing EOS.
    pub target_span: Option<(usize, usize)>,
}

/// `BOS prompt SEP [test EOS]`.
pub fn encode_prompt(vocab: &Vocab, prompt_text: &str, test_source: Option<&str>) -> Result<PromptEncoding, LmError> {
    let mut ids = Vec::with_capacity(256);
    ids.push(BOS);
    ids.extend(vocab.encode(prompt_text)?);
    ids.push(SEP);
    let graph_slot_positions = ids.iter().enumerate().filter(|(_, &t)| t == GRAPH).map(|(i, _)| i).collect();
    let target_span = match test_source {
        Some(t) => {
            let start = ids.len();
            ids.extend(vocab.encode(t)?);
            ids.push(EOS);
            Some((start, ids.len()))
        }
        None => None,
    };
    Ok(PromptEncoding { ids, graph_slot_positions, target_span })
}

/// Token embedding rows with the slot rows replaced by `e_b`.
pub fn inject_graph_embeddings(tape: &mut Tape, token_embeddings: Var, slots: &[usize], e_b: Option<Var>) -> Result<Var, LmError> {
    let rows = e_b.map_or(0, |e| tape.shape(e).0);
    if slots.len() != rows {
        return Err(LmError::SlotMismatch { slots: slots.len(), rows });
    }
    match e_b {
        Some(e) if rows > 0 => Ok(tape.replace_rows(token_embeddings, slots, e)?),
        _ => Ok(token_embeddings),
    }
}

/// Logits `len(ids) x vocab` for next-token prediction.
pub fn lm_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &LmParams,
    cfg: &LmConfig,
    enc: &PromptEncoding,
    e_b: Option<Var>,
) -> Result<Var, LmError> {
    let t = enc.ids.len();
    if t > cfg.max_seq {
        return Err(LmError::SequenceTooLong { len: t, max: cfg.max_seq });
    }
    let tok = tape.param(store, params.tok);
    let emb = tape.gather_rows(tok, &enc.ids)?;
    let e_b = match (e_b, params.graph_proj) {
        (Some(e), Some(p)) => {
            let w = tape.param(store, p);
            Some(tape.matmul(e, w)?)
        }
        (e, _) => e,
    };
    let emb = match e_b {
        Some(_) => inject_graph_embeddings(tape, emb, &enc.graph_slot_positions, e_b)?,
        None if enc.graph_slot_positions.is_empty() => emb,
        None => return Err(LmError::SlotMismatch { slots: enc.graph_slot_positions.len(), rows: 0 }),
    };
    let pos_all = tape.param(store, params.pos);
    let pos = tape.slice_rows(pos_all, 0, t)?;
    let mut x = tape.add(emb, pos)?;
    for b in &params.blocks {
        let g = tape.param(store, b.ln1_g);
        let bb = tape.param(store, b.ln1_b);
        let h = tape.layer_norm(x, g, bb)?;
        let wq = tape.param(store, b.wq);
        let wk = tape.param(store, b.wk);
        let wv = tape.param(store, b.wv);
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let a = tape.causal_attention(q, k, v, cfg.heads)?;
        let wo = tape.param(store, b.wo);
        let a = tape.matmul(a, wo)?;
        x = tape.add(x, a)?;

        let g = tape.param(store, b.ln2_g);
        let bb = tape.param(store, b.ln2_b);
        let h = tape.layer_norm(x, g, bb)?;
        let w1 = tape.param(store, b.w1);
        let b1 = tape.param(store, b.b1);
        let w2 = tape.param(store, b.w2);
        let b2 = tape.param(store, b.b2);
        let m = tape.matmul(h, w1)?;
        let m = tape.add_row(m, b1)?;
        let m = tape.relu(m);
        let m = tape.matmul(m, w2)?;
        let m = tape.add_row(m, b2)?;
        x = tape.add(x, m)?;
    }
    let g = tape.param(store, params.lnf_g);
    let bb = tape.param(store, params.lnf_b);
    let h = tape.layer_norm(x, g, bb)?;
    let out = tape.param(store, params.out);
    Ok(tape.matmul(h, out)?)
}

/// Mean cross-entropy of the predictions of the target span tokens; prompt
/// positions are ignored.
pub fn training_loss(tape: &mut Tape, enc: &PromptEncoding, logits: Var) -> Result<Var, LmError> {
    let (start, end) = enc.target_span.ok_or(LmError::InvalidConfig("encoding has no target span"))?;
    let t = enc.ids.len();
    if start == 0 || start >= end || end > t || tape.shape(logits).0 != t {
        return Err(LmError::InvalidConfig("target span out of range"));
    }
    let mut targets = alloc::vec![PAD; t];
    let mut mask = alloc::vec![false; t];
    for p in start - 1..end - 1 {
        targets[p] = enc.ids[p + 1];
        mask[p] = true;
    }
    Ok(tape.cross_entropy(logits, &targets, &mask)?)
}

#[cfg(test)]
mod tests;
