//! Gradient checks bundled for the command line and the acceptance run.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Split};
use crate::cpg::{BranchMask, Cpg, CpgNode, Edge, Relation, FEATURE_DIM};
use crate::frontend::NodeKind;
use crate::gnn::{gnn_forward, BranchAgg, GnnConfig, GnnParams, Variant};
use crate::lm::LmConfig;
use crate::numerics::{finite_diff_check, Adjacency, FdConfig, NumericsError, ParamId, ParameterStore, Tape, Var};
use crate::train::Model;

/// Tolerances of the three gradient suites.
pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const GNN_LAYER_TOL: f64 = 1e-4;
pub const JOINT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub checked: usize,
    /// `Err` when the forward pass itself failed.
    pub max_rel_err: Result<f64, String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        matches!(self.max_rel_err, Ok(e) if e < self.tolerance) && self.checked > 0
    }
}

fn measure<F>(name: String, tolerance: f64, store: &mut ParameterStore, ids: &[ParamId], f: F) -> CheckResult
where
    F: FnMut(&ParameterStore, &mut Tape) -> Result<Var, NumericsError>,
{
    let cfg = FdConfig { tolerance: f64::INFINITY, ..FdConfig::default() };
    match finite_diff_check(store, ids, &cfg, f) {
        Ok(r) => CheckResult { name, tolerance, checked: r.checked, max_rel_err: Ok(r.max_rel_err) },
        Err(e) => CheckResult { name, tolerance, checked: 0, max_rel_err: Err(format!("{e}")) },
    }
}

/// Weights every entry of `out` differently before summing.
fn readout(t: &mut Tape, out: Var) -> Result<Var, NumericsError> {
    let (r, c) = t.shape(out);
    let w: Vec<f64> = (0..r * c).map(|i| libm::sin(1.0 + i as f64 * 0.7)).collect();
    let w = t.constant(r, c, w)?;
    let m = t.mul(out, w)?;
    Ok(t.sum_all(m))
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>;

fn primitive(name: &str, shapes: &[(usize, usize)], build: Build) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParameterStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add_uniform(format!("p{i}"), r, c, 1.0, &mut rng).expect("fresh names"))
        .collect();
    let ids2 = ids.clone();
    measure(name.into(), PRIMITIVE_TOL, &mut store, &ids, |s, t| {
        let vars: Vec<Var> = ids2.iter().map(|&id| t.param(s, id)).collect();
        let out = build(t, &vars)?;
        readout(t, out)
    })
}

fn test_adjacency() -> Adjacency {
    Rc::new(vec![vec![1, 2], vec![0], vec![], vec![0, 1, 2]])
}

/// Every differentiable tape operation.
pub fn primitive_checks() -> Vec<CheckResult> {
    let cases: [(&str, &[(usize, usize)], Build); 24] = [
        ("matmul", &[(3, 4), (4, 5)], |t, v| t.matmul(v[0], v[1])),
        ("matmul_t", &[(3, 4), (5, 4)], |t, v| t.matmul_t(v[0], v[1])),
        ("add", &[(3, 4), (3, 4)], |t, v| t.add(v[0], v[1])),
        ("mul", &[(3, 4), (3, 4)], |t, v| t.mul(v[0], v[1])),
        ("add_row", &[(3, 4), (1, 4)], |t, v| t.add_row(v[0], v[1])),
        ("scale", &[(3, 4)], |t, v| Ok(t.scale(v[0], -1.5))),
        ("relu", &[(3, 4)], |t, v| Ok(t.relu(v[0]))),
        ("leaky_relu", &[(3, 4)], |t, v| Ok(t.leaky_relu(v[0], 0.2))),
        ("transpose", &[(3, 4)], |t, v| Ok(t.transpose(v[0]))),
        ("concat_cols", &[(3, 2), (3, 4)], |t, v| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", &[(2, 4), (3, 4)], |t, v| t.concat_rows(&[v[0], v[1]])),
        ("slice_cols", &[(3, 5)], |t, v| t.slice_cols(v[0], 1, 3)),
        ("slice_rows", &[(5, 3)], |t, v| t.slice_rows(v[0], 2, 2)),
        ("mean_rows", &[(3, 4)], |t, v| Ok(t.mean_rows(v[0]))),
        ("broadcast_rows", &[(1, 4)], |t, v| t.broadcast_rows(v[0], 3)),
        ("gather_rows", &[(6, 3)], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2])),
        ("replace_rows", &[(5, 3), (2, 3)], |t, v| t.replace_rows(v[0], &[3, 1], v[1])),
        ("softmax_rows", &[(3, 5)], |t, v| Ok(t.softmax_rows(v[0]))),
        ("layer_norm", &[(3, 6), (1, 6), (1, 6)], |t, v| t.layer_norm(v[0], v[1], v[2])),
        ("cross_entropy", &[(4, 7)], |t, v| t.cross_entropy(v[0], &[1, 6, 0, 3], &[true, false, true, true])),
        ("sum_all", &[(3, 4)], |t, v| Ok(t.sum_all(v[0]))),
        ("neighbor_mean", &[(4, 6)], |t, v| t.neighbor_mean(v[0], &test_adjacency())),
        ("gat", &[(4, 6), (4, 6), (1, 6), (1, 6)], |t, v| t.gat(v[0], v[1], v[2], v[3], 2, &test_adjacency())),
        ("causal_attention", &[(5, 8), (5, 8), (5, 8)], |t, v| t.causal_attention(v[0], v[1], v[2], 2)),
    ];
    cases.iter().map(|&(name, shapes, build)| primitive(name, shapes, build)).collect()
}

/// A hand-built 4-node graph with random features and edges in every
/// relation.
pub fn four_node_graph() -> Cpg {
    let kinds = [NodeKind::FuncDef, NodeKind::Assign, NodeKind::If, NodeKind::Return];
    let nodes = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| CpgNode { id: i, kind, line_start: i + 1, line_end: i + 1, order: i, depth: i.min(2) })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let features = (0..4 * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let e = |s, d| Edge { src: s, dst: d };
    let mut edges: [Vec<Edge>; Relation::COUNT] = Default::default();
    edges[Relation::Ast as usize] = vec![e(0, 1), e(0, 2), e(2, 3)];
    edges[Relation::Cfg as usize] = vec![e(1, 2), e(2, 3)];
    edges[Relation::Dfg as usize] = vec![e(1, 3)];
    Cpg { nodes, edges, features, line_count: 4 }
}

/// One encoder layer on [`four_node_graph`], for both message functions.
pub fn gnn_layer_checks() -> Vec<CheckResult> {
    let cpg = four_node_graph();
    let mask = BranchMask::from_bits(vec![false, true, true, true]);
    let mut out = Vec::new();
    for variant in [Variant::Attention, Variant::MeanSample] {
        for agg in [BranchAgg::NodeStack, BranchAgg::GraphPool] {
            let cfg = GnnConfig { layers: 1, d_h: 8, heads: 2, variant, branch_agg: agg, ..GnnConfig::default() };
            let mut store = ParameterStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let Ok(p) = GnnParams::init(&cfg, &mut store, &mut rng) else {
                out.push(CheckResult { name: "gnn init".into(), tolerance: GNN_LAYER_TOL, checked: 0, max_rel_err: Err("init failed".into()) });
                continue;
            };
            let ids = p.all_ids();
            let name = format!("gnn_layer/{}/{}", variant.as_str(), agg.as_str());
            out.push(measure(name, GNN_LAYER_TOL, &mut store, &ids, |s, t| {
                let e = gnn_forward(t, s, &p, &cfg, &cpg, &mask).map_err(|_| NumericsError::UnknownParameter("gnn forward".into()))?;
                readout(t, e)
            }));
        }
    }
    out
}

/// Reduced dimensions that keep the joint check quick while every
/// parameter tensor still gets sampled.
pub fn small_joint_configs() -> (GnnConfig, LmConfig) {
    let d = 8;
    let gnn = GnnConfig { layers: 2, d_h: d, heads: 2, ..GnnConfig::default() };
    let lm = LmConfig { layers: 1, d_model: d, heads: 2, d_ff: 16, d_graph: d, ..LmConfig::default() };
    (gnn, lm)
}

/// Graph encoder plus language model on the first training record of
/// `corpus` with an available mask.
pub fn joint_model_check(corpus: &Corpus, gnn: GnnConfig, lm: LmConfig) -> CheckResult {
    let name = String::from("joint_model");
    let fail = |msg: String| CheckResult { name: name.clone(), tolerance: JOINT_TOL, checked: 0, max_rel_err: Err(msg) };
    let Some(record) = corpus.records_in(Split::Train).find(|r| r.mask.is_available()) else {
        return fail("no training record with an available mask".into());
    };
    let model = match Model::init(gnn, lm, 11) {
        Ok(m) => m,
        Err(e) => return fail(format!("{e}")),
    };
    let ex = match model.example(corpus, record) {
        Ok(x) => x,
        Err(e) => return fail(format!("{e}")),
    };
    let mut store = model.store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    measure(name.clone(), JOINT_TOL, &mut store, &ids, |s, t| {
        let view = Model { store: s.clone(), ..model.clone() };
        view.example_loss(t, &corpus.cpgs, &ex).map_err(|_| NumericsError::UnknownParameter("joint forward".into()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{curate, CorpusConfig};

    #[test]
    fn all_suites_pass() {
        let results = primitive_checks();
        assert_eq!(results.len(), 24);
        for r in results.iter().chain(&gnn_layer_checks()) {
            assert!(r.passed(), "{r:?}");
        }
        let c = curate(&CorpusConfig { programs: 6, ..CorpusConfig::default() }).unwrap();
        let (g, l) = small_joint_configs();
        let j = joint_model_check(&c, g, l);
        assert!(j.passed(), "{j:?}");
        assert!(j.checked >= 100);
    }

    #[test]
    fn four_node_graph_is_connected_in_every_relation() {
        let g = four_node_graph();
        assert_eq!(g.len(), 4);
        for rel in Relation::ALL {
            assert!(!g.edges(rel).is_empty());
        }
    }
}
