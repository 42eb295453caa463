//! Heterogeneous message passing over the three CPG relations, producing the
//! branch embedding rows fed to the language model.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::N_GRAPH_SLOTS;
use crate::cpg::{BranchMask, Cpg, Relation, FEATURE_DIM};
use crate::numerics::kernels::{dot, softmax_in_place};
use crate::numerics::{Adjacency, NumericsError, ParamId, ParameterStore, Tape, Var, GAT_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Attention,
    MeanSample,
    /// No graph encoder at all (text-only baseline).
    None,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Attention => "attention",
            Variant::MeanSample => "mean",
            Variant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variant::Attention, Variant::MeanSample, Variant::None]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationPool {
    Mean,
    Sum,
}

impl RelationPool {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationPool::Mean => "mean",
            RelationPool::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [RelationPool::Mean, RelationPool::Sum]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchAgg {
    NodeStack,
    GraphPool,
}

impl BranchAgg {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchAgg::NodeStack => "node",
            BranchAgg::GraphPool => "pool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [BranchAgg::NodeStack, BranchAgg::GraphPool]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnnConfig {
    pub layers: usize,
    pub d_in: usize,
    pub d_h: usize,
    pub heads: usize,
    pub variant: Variant,
    pub relation_pool: RelationPool,
    pub branch_agg: BranchAgg,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 3,
            d_in: FEATURE_DIM,
            d_h: 64,
            heads: 8,
            variant: Variant::Attention,
            relation_pool: RelationPool::Mean,
            branch_agg: BranchAgg::NodeStack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnnError {
    #[error("MaskUnavailable: branch mask marks no node")]
    MaskUnavailable,
    #[error("NoEncoder: variant `none` has no graph encoder")]
    NoEncoder,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(&'static str),
    #[error("MaskMismatch: mask has {mask} bits, graph has {nodes} nodes")]
    MaskMismatch { mask: usize, nodes: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Self projection `S^k`.
    pub self_w: ParamId,
    pub bias: ParamId,
    /// Neighbor projection `W_j^k` per relation.
    pub rel_w: [ParamId; Relation::COUNT],
    pub att_src: Option<[ParamId; Relation::COUNT]>,
    pub att_dst: Option<[ParamId; Relation::COUNT]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<LayerParams>,
    /// Learned filler row for NodeStack when fewer than the slot count are masked.
    pub pad: ParamId,
}

const REL_NAMES: [&str; Relation::COUNT] = ["ast", "cfg", "dfg"];

impl GnnConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers == 0 || self.d_h == 0 || self.d_in == 0 {
            return Err(GnnError::InvalidConfig("layers and widths must be positive"));
        }
        if self.variant == Variant::Attention && (self.heads == 0 || self.d_h % self.heads != 0) {
            return Err(GnnError::InvalidConfig("d_h must be divisible by heads"));
        }
        Ok(())
    }
}

impl GnnParams {
    /// Registers all encoder parameters under `gnn.` in `store`.
    pub fn init<R: Rng>(cfg: &GnnConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self, GnnError> {
        cfg.validate()?;
        if cfg.variant == Variant::None {
            return Err(GnnError::NoEncoder);
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let d_in = if k == 0 { cfg.d_in } else { cfg.d_h };
            let self_w = store.add_xavier(format!("gnn.l{k}.self"), d_in, cfg.d_h, rng)?;
            let bias = store.add_const(format!("gnn.l{k}.bias"), 1, cfg.d_h, 0.0)?;
            let mut rel_w = [self_w; Relation::COUNT];
            for (j, name) in REL_NAMES.iter().enumerate() {
                rel_w[j] = store.add_xavier(format!("gnn.l{k}.{name}.w"), d_in, cfg.d_h, rng)?;
            }
            let (att_src, att_dst) = if cfg.variant == Variant::Attention {
                let mut src = [self_w; Relation::COUNT];
                let mut dst = [self_w; Relation::COUNT];
                let scale = 1.0 / libm::sqrt((cfg.d_h / cfg.heads) as f64);
                for (j, name) in REL_NAMES.iter().enumerate() {
                    src[j] = store.add_uniform(format!("gnn.l{k}.{name}.att_src"), 1, cfg.d_h, scale, rng)?;
                    dst[j] = store.add_uniform(format!("gnn.l{k}.{name}.att_dst"), 1, cfg.d_h, scale, rng)?;
                }
                (Some(src), Some(dst))
            } else {
                (None, None)
            };
            layers.push(LayerParams { self_w, bias, rel_w, att_src, att_dst });
        }
        let pad = store.add_uniform("gnn.pad", 1, cfg.d_h, 0.1, rng)?;
        Ok(GnnParams { layers, pad })
    }

    /// Looks up previously registered parameters by name.
    pub fn from_store(cfg: &GnnConfig, store: &ParameterStore) -> Result<Self, GnnError> {
        cfg.validate()?;
        if cfg.variant == Variant::None {
            return Err(GnnError::NoEncoder);
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let self_w = store.id(&format!("gnn.l{k}.self"))?;
            let bias = store.id(&format!("gnn.l{k}.bias"))?;
            let mut rel_w = [self_w; Relation::COUNT];
            for (j, name) in REL_NAMES.iter().enumerate() {
                rel_w[j] = store.id(&format!("gnn.l{k}.{name}.w"))?;
            }
            let (att_src, att_dst) = if cfg.variant == Variant::Attention {
                let mut src = [self_w; Relation::COUNT];
                let mut dst = [self_w; Relation::COUNT];
                for (j, name) in REL_NAMES.iter().enumerate() {
                    src[j] = store.id(&format!("gnn.l{k}.{name}.att_src"))?;
                    dst[j] = store.id(&format!("gnn.l{k}.{name}.att_dst"))?;
                }
                (Some(src), Some(dst))
            } else {
                (None, None)
            };
            layers.push(LayerParams { self_w, bias, rel_w, att_src, att_dst });
        }
        Ok(GnnParams { layers, pad: store.id("gnn.pad")? })
    }

    /// Every parameter id of the encoder.
    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.self_w);
            out.push(l.bias);
            out.extend(l.rel_w);
            if let (Some(s), Some(d)) = (l.att_src, l.att_dst) {
                out.extend(s);
                out.extend(d);
            }
        }
        out.push(self.pad);
        out
    }
}

/// Undirected neighbor lists per relation.
pub fn adjacency(cpg: &Cpg) -> [Adjacency; Relation::COUNT] {
    Relation::ALL.map(|r| Rc::new(cpg.neighbors(r)))
}

/// Final-layer states of every node, `|V| x d_h`.
pub fn node_states(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &GnnParams,
    cfg: &GnnConfig,
    cpg: &Cpg,
) -> Result<Var, GnnError> {
    let adj = adjacency(cpg);
    let mut h = tape.constant(cpg.len(), cfg.d_in, cpg.features.clone())?;
    for layer in &params.layers {
        let s = tape.param(store, layer.self_w);
        let b = tape.param(store, layer.bias);
        let z_self = tape.matmul(h, s)?;
        let mut per_rel = Vec::with_capacity(Relation::COUNT);
        for j in 0..Relation::COUNT {
            let w = tape.param(store, layer.rel_w[j]);
            let pre = match cfg.variant {
                Variant::Attention => {
                    let (src, dst) = (layer.att_src.expect("attention params"), layer.att_dst.expect("attention params"));
                    let a_src = tape.param(store, src[j]);
                    let a_dst = tape.param(store, dst[j]);
                    let z_nb = tape.matmul(h, w)?;
                    tape.gat(z_self, z_nb, a_src, a_dst, cfg.heads, &adj[j])?
                }
                Variant::MeanSample => {
                    let m = tape.neighbor_mean(h, &adj[j])?;
                    let mw = tape.matmul(m, w)?;
                    tape.add(z_self, mw)?
                }
                Variant::None => return Err(GnnError::NoEncoder),
            };
            let biased = tape.add_row(pre, b)?;
            per_rel.push(tape.leaky_relu(biased, GAT_SLOPE));
        }
        let mut acc = per_rel[0];
        for &r in &per_rel[1..] {
            acc = tape.add(acc, r)?;
        }
        h = match cfg.relation_pool {
            RelationPool::Mean => tape.scale(acc, 1.0 / Relation::COUNT as f64),
            RelationPool::Sum => acc,
        };
    }
    Ok(h)
}

/// Mask nodes placed in the graph slots: all of them when they fit, else
/// `N_GRAPH_SLOTS` picked at even strides in ascending id order, first and
/// last included. Sibling branches mostly differ in their later nodes, so a
/// prefix cut would often erase exactly the part that tells them apart.
pub fn stack_slots(active: &[usize]) -> Vec<usize> {
    let k = active.len();
    if k <= N_GRAPH_SLOTS {
        return active.to_vec();
    }
    (0..N_GRAPH_SLOTS).map(|i| active[i * (k - 1) / (N_GRAPH_SLOTS - 1)]).collect()
}

/// Branch embedding `e_b`, `N_GRAPH_SLOTS x d_h`.
pub fn gnn_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &GnnParams,
    cfg: &GnnConfig,
    cpg: &Cpg,
    mask: &BranchMask,
) -> Result<Var, GnnError> {
    if mask.bits.len() != cpg.len() {
        return Err(GnnError::MaskMismatch { mask: mask.bits.len(), nodes: cpg.len() });
    }
    if !mask.is_available() {
        return Err(GnnError::MaskUnavailable);
    }
    let h = node_states(tape, store, params, cfg, cpg)?;
    let active = mask.active_nodes();
    match cfg.branch_agg {
        BranchAgg::NodeStack => {
            let kept = stack_slots(&active);
            let rows = tape.gather_rows(h, &kept)?;
            if kept.len() == N_GRAPH_SLOTS {
                return Ok(rows);
            }
            let pad = tape.param(store, params.pad);
            let fill = tape.gather_rows(pad, &vec![0; N_GRAPH_SLOTS - kept.len()])?;
            Ok(tape.concat_rows(&[rows, fill])?)
        }
        BranchAgg::GraphPool => {
            let rows = tape.gather_rows(h, &active)?;
            let mean = tape.mean_rows(rows);
            Ok(tape.broadcast_rows(mean, N_GRAPH_SLOTS)?)
        }
    }
}

/// Single-head attention weights over `entries` (self first) for a query
/// whose projected state is `query`.
pub fn attention_weights(query: &[f64], entries: &[&[f64]], a_src: &[f64], a_dst: &[f64]) -> Vec<f64> {
    let s_dst = dot(a_dst, query);
    let mut w: Vec<f64> = entries
        .iter()
        .map(|e| {
            let x = s_dst + dot(a_src, e);
            if x > 0.0 { x } else { GAT_SLOPE * x }
        })
        .collect();
    if !w.is_empty() {
        softmax_in_place(&mut w);
    }
    w
}
