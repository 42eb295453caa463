//! Code property graph: AST, control-flow and data-flow relations over the
//! nodes of a parsed program, with per-node feature vectors.

mod flow;
pub mod features;

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::frontend::{NodeId, NodeKind, Program};

pub use features::{encode_node_features, FEATURE_DIM};

/// Edge relation. The discriminant indexes [`Cpg::edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Ast = 0,
    Cfg = 1,
    Dfg = 2,
}

impl Relation {
    pub const COUNT: usize = 3;
    pub const ALL: [Relation; 3] = [Relation::Ast, Relation::Cfg, Relation::Dfg];

    pub fn from_index(i: usize) -> Option<Relation> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpgNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub line_start: usize,
    pub line_end: usize,
    pub order: usize,
    pub depth: usize,
}

impl CpgNode {
    pub fn kind_code(&self) -> u8 {
        self.kind.code()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CpgError {
    #[error("LineOutOfRange: line {line} outside 1..={line_count}")]
    LineOutOfRange { line: usize, line_count: usize },
}

/// Multi-relational program graph with a `|V| x FEATURE_DIM` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpg {
    pub nodes: Vec<CpgNode>,
    pub edges: [Vec<Edge>; Relation::COUNT],
    /// Row-major node feature matrix; row `i` belongs to `nodes[i]`.
    pub features: Vec<f64>,
    pub line_count: usize,
}

/// A control-flow successor: another statement or leaving the function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Successor {
    Stmt(NodeId),
    Exit,
}

pub fn is_statement_kind(kind: NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::Assign | NodeKind::If | NodeKind::Elif | NodeKind::While | NodeKind::Return
    )
}

impl Cpg {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self, rel: Relation) -> &[Edge] {
        &self.edges[rel as usize]
    }

    pub fn feature_row(&self, id: NodeId) -> &[f64] {
        &self.features[id * FEATURE_DIM..(id + 1) * FEATURE_DIM]
    }

    /// True for nodes that execute as a unit: assignments, returns, branch and
    /// loop headers, and calls used as statements.
    pub fn is_statement(&self, id: NodeId) -> bool {
        let n = &self.nodes[id];
        is_statement_kind(n.kind) || (n.kind == NodeKind::Call && self.is_call_statement(id))
    }

    fn is_call_statement(&self, id: NodeId) -> bool {
        self.edges(Relation::Ast)
            .iter()
            .find(|e| e.dst == id)
            .is_some_and(|e| self.nodes[e.src].kind == NodeKind::Block)
    }

    /// Undirected neighbor lists for one relation, sorted and deduplicated.
    pub fn neighbors(&self, rel: Relation) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in self.edges(rel) {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Control-flow successors of every node, in edge order, with implicit
    /// function exits made explicit. Non-statements have none.
    pub fn successors(&self) -> Vec<Vec<Successor>> {
        let mut out = vec![Vec::new(); self.len()];
        for e in self.edges(Relation::Cfg) {
            if self.nodes[e.src].kind != NodeKind::FuncDef {
                out[e.src].push(Successor::Stmt(e.dst));
            }
        }
        for id in 0..self.len() {
            if !self.is_statement(id) {
                continue;
            }
            match self.nodes[id].kind {
                NodeKind::Return => {}
                NodeKind::If | NodeKind::Elif | NodeKind::While => {
                    if out[id].len() < 2 {
                        out[id].push(Successor::Exit);
                    }
                }
                _ => {
                    if out[id].is_empty() {
                        out[id].push(Successor::Exit);
                    }
                }
            }
        }
        out
    }

    /// First statement of the function rooted at `func` (target of its entry edge).
    pub fn entry_of(&self, func: NodeId) -> Option<NodeId> {
        self.edges(Relation::Cfg)
            .iter()
            .find(|e| e.src == func)
            .map(|e| e.dst)
    }

    pub fn entry(&self) -> Option<NodeId> {
        self.entry_of(0)
    }
}

/// Builds the code property graph of a parsed program.
pub fn build_cpg(program: &Program) -> Cpg {
    let ast = &program.ast;
    let nodes: Vec<CpgNode> = ast
        .nodes
        .iter()
        .map(|n| CpgNode {
            id: n.id,
            kind: n.kind,
            line_start: n.line_start,
            line_end: n.line_end,
            order: n.order,
            depth: ast.depth(n.id),
        })
        .collect();

    let ast_edges: Vec<Edge> = ast
        .nodes
        .iter()
        .flat_map(|n| n.children.iter().map(move |&c| Edge { src: n.id, dst: c }))
        .collect();

    let flow = flow::analyze(ast);

    let mut features = Vec::with_capacity(nodes.len() * FEATURE_DIM);
    for n in &ast.nodes {
        features.extend_from_slice(&encode_node_features(ast, n.id, &program.source));
    }

    Cpg {
        nodes,
        edges: [ast_edges, flow.cfg, flow.dfg],
        features,
        line_count: program.source.line_count,
    }
}

/// Binary mask over CPG nodes whose line span meets a set of lines.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BranchMask {
    pub bits: Vec<bool>,
    pub active_count: usize,
}

impl BranchMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let active_count = bits.iter().filter(|&&b| b).count();
        BranchMask { bits, active_count }
    }

    /// A mask with no active node; consumers fall back to the
    /// "Not available" path.
    pub fn is_available(&self) -> bool {
        self.active_count > 0
    }

    pub fn active_nodes(&self) -> Vec<NodeId> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Bitwise `self <= other`.
    pub fn is_subset_of(&self, other: &BranchMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Marks node `i` iff `[line_start, line_end]` intersects `branch_lines`.
pub fn derive_branch_mask(cpg: &Cpg, branch_lines: &BTreeSet<usize>) -> Result<BranchMask, CpgError> {
    if let Some(&line) = branch_lines
        .iter()
        .find(|&&l| l == 0 || l > cpg.line_count)
    {
        return Err(CpgError::LineOutOfRange {
            line,
            line_count: cpg.line_count,
        });
    }
    let bits = cpg
        .nodes
        .iter()
        .map(|n| branch_lines.range(n.line_start..=n.line_end).next().is_some())
        .collect();
    Ok(BranchMask::from_bits(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::{BTreeMap, VecDeque};

    fn cpg_of(text: &str) -> (Program, Cpg) {
        let p = Program::parse("t", text).unwrap();
        let g = build_cpg(&p);
        (p, g)
    }

    fn edge_set(g: &Cpg, rel: Relation) -> BTreeSet<(usize, usize)> {
        g.edges(rel).iter().map(|e| (e.src, e.dst)).collect()
    }

    #[test]
    fn smallest_program_graph() {
        let (_, g) = cpg_of("def f(a):\n  return a");
        // 0 FuncDef, 1 Param, 2 Block, 3 Return, 4 Var
        assert_eq!(g.len(), 5);
        assert_eq!(
            edge_set(&g, Relation::Ast),
            BTreeSet::from([(0, 1), (0, 2), (2, 3), (3, 4)])
        );
        assert_eq!(edge_set(&g, Relation::Cfg), BTreeSet::from([(0, 3)]));
        assert_eq!(edge_set(&g, Relation::Dfg), BTreeSet::from([(1, 4)]));
        assert_eq!(g.features.len(), 5 * FEATURE_DIM);
    }

    #[test]
    fn if_has_two_cfg_successors() {
        let (p, g) = cpg_of("def f(a):\n  if a < 0:\n    a = 0\n  else:\n    a = 1\n  return a\n");
        let if_id = p.ast.nodes.iter().find(|n| n.kind == NodeKind::If).unwrap().id;
        let out: Vec<_> = g.edges(Relation::Cfg).iter().filter(|e| e.src == if_id).collect();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn straight_line_chain_and_dataflow() {
        // 0 FuncDef 1 Param(a) 2 Block 3 Assign(x) 4 Var(a) 5 Assign(y) 6 BinOp 7 Var(x) 8 IntLit 9 Return 10 Var(y)
        let (_, g) = cpg_of("def f(a):\n  x = a\n  y = x + 1\n  return y\n");
        assert_eq!(
            edge_set(&g, Relation::Cfg),
            BTreeSet::from([(0, 3), (3, 5), (5, 9)])
        );
        assert_eq!(
            edge_set(&g, Relation::Dfg),
            BTreeSet::from([(1, 4), (3, 7), (5, 10)])
        );

        // second statement does not read the first's variable
        let (_, g) = cpg_of("def f(a):\n  x = a\n  y = 2\n  return a\n");
        let dfg = edge_set(&g, Relation::Dfg);
        assert!(!dfg.iter().any(|&(s, _)| s == 3));
    }

    #[test]
    fn loop_back_edge_and_exit() {
        // 0 FuncDef 1 Param 2 Block 3 While 4 BinOp 5 Var 6 IntLit 7 Block 8 Assign 9 BinOp 10 Var 11 IntLit 12 Return 13 Var
        let (_, g) = cpg_of("def f(a):\n  while a < 3:\n    a = a + 1\n  return a\n");
        assert_eq!(
            edge_set(&g, Relation::Cfg),
            BTreeSet::from([(0, 3), (3, 8), (3, 12), (8, 3)])
        );
        // uses of `a` in the condition see both the parameter and the loop body def
        let dfg = edge_set(&g, Relation::Dfg);
        assert!(dfg.contains(&(1, 5)) && dfg.contains(&(8, 5)));
        assert!(dfg.contains(&(1, 10)) && dfg.contains(&(8, 10)));
        assert!(dfg.contains(&(1, 13)) && dfg.contains(&(8, 13)));
    }

    #[test]
    fn redefinition_kills() {
        let (p, g) = cpg_of("def f(a):\n  a = 2\n  return a\n");
        let dfg = edge_set(&g, Relation::Dfg);
        let var = p.ast.nodes.iter().rposition(|n| n.kind == NodeKind::Var).unwrap();
        assert_eq!(dfg, BTreeSet::from([(3, var)]));
    }

    #[test]
    fn mask_full_and_empty() {
        let (p, g) = cpg_of("def f(a):\n  if a < 0:\n    a = 0\n  return a\n");
        let all: BTreeSet<usize> = (1..=p.source.line_count).collect();
        let m = derive_branch_mask(&g, &all).unwrap();
        assert_eq!(m.active_count, g.len());
        let none = derive_branch_mask(&g, &BTreeSet::new()).unwrap();
        assert_eq!(none.active_count, 0);
        assert!(!none.is_available());
        assert_eq!(
            derive_branch_mask(&g, &BTreeSet::from([9])),
            Err(CpgError::LineOutOfRange { line: 9, line_count: 4 })
        );
    }

    #[test]
    fn mask_selects_taken_arm_only() {
        let text = "def f(a, b):\n  x = a + 1\n  if x < 3:\n    x = x * 2\n  else:\n    x = x - b\n  return x\n";
        let (p, g) = cpg_of(text);
        let m = derive_branch_mask(&g, &BTreeSet::from([2, 3, 4, 7])).unwrap();
        let ast = &p.ast;
        let expected: Vec<bool> = ast
            .nodes
            .iter()
            .map(|n| {
                // hand-computed: everything except params (line 1 only),
                // the else node and its contents (lines 5-6)
                !(n.kind == NodeKind::Param || n.line_start >= 5 && n.line_end <= 6)
            })
            .collect();
        assert_eq!(m.bits, expected);
        let if_node = ast.nodes.iter().find(|n| n.kind == NodeKind::If).unwrap();
        assert!(m.bits[if_node.id]);
    }

    /// Brute-force check of every DFG edge: some CFG walk from the definition
    /// reaches the use's statement without passing another definition of the
    /// same variable.
    fn dfg_is_sound(p: &Program, g: &Cpg) -> bool {
        let ast = &p.ast;
        let succ = g.successors();
        let stmt_of = |mut n: NodeId| {
            while !g.is_statement(n) {
                n = ast.node(n).parent.unwrap();
            }
            n
        };
        let defines = |s: NodeId, var: &str| ast.node(s).kind == NodeKind::Assign && ast.node(s).name() == Some(var);
        let func_of = |mut n: NodeId| {
            while ast.node(n).kind != NodeKind::FuncDef {
                n = ast.node(n).parent.unwrap();
            }
            n
        };
        g.edges(Relation::Dfg).iter().all(|e| {
            let var = ast.node(e.dst).name().unwrap();
            let target = stmt_of(e.dst);
            let mut queue = VecDeque::new();
            let mut seen = BTreeMap::new();
            match ast.node(e.src).kind {
                NodeKind::Param => {
                    let entry = g.entry_of(func_of(e.src)).unwrap();
                    queue.push_back(entry);
                }
                _ => {
                    for s in &succ[e.src] {
                        if let Successor::Stmt(t) = s {
                            queue.push_back(*t);
                        }
                    }
                }
            }
            while let Some(s) = queue.pop_front() {
                if seen.insert(s, ()).is_some() {
                    continue;
                }
                if s == target {
                    return true;
                }
                if defines(s, var) {
                    continue;
                }
                for t in &succ[s] {
                    if let Successor::Stmt(t) = t {
                        queue.push_back(*t);
                    }
                }
            }
            false
        })
    }

    #[test]
    fn dfg_soundness_hand_programs() {
        for text in [
            "def f(a, b):\n  x = 0\n  while x < a:\n    if b:\n      x = x + 2\n    else:\n      x = x + 1\n  return x\n",
            "def f(a):\n  if a < 0:\n    y = 1\n  elif a == 0:\n    y = 2\n  else:\n    y = a\n  return y + a\n",
        ] {
            let (p, g) = cpg_of(text);
            assert!(dfg_is_sound(&p, &g), "{text}");
        }
    }

    #[test]
    fn mask_monotone_in_lines() {
        let (_, g) = cpg_of("def f(a, b):\n  x = a\n  if x < b:\n    x = b\n  return x\n");
        let small = derive_branch_mask(&g, &BTreeSet::from([2])).unwrap();
        let big = derive_branch_mask(&g, &BTreeSet::from([2, 4])).unwrap();
        assert!(small.is_subset_of(&big));
    }

    pub(crate) fn check_invariants(p: &Program, g: &Cpg) {
        let n = g.len();
        assert_eq!(n, p.ast.len());
        assert_eq!(g.edges(Relation::Ast).len(), n - 1);
        let mut has_parent = vec![false; n];
        for e in g.edges(Relation::Ast) {
            assert!(e.src < e.dst, "pre-order ids make AST edges acyclic");
            assert!(!has_parent[e.dst]);
            has_parent[e.dst] = true;
        }
        for e in g.edges(Relation::Cfg) {
            assert_ne!(e.src, e.dst);
            assert!(g.is_statement(e.dst));
            assert!(g.is_statement(e.src) || g.nodes[e.src].kind == NodeKind::FuncDef);
        }
        for e in g.edges(Relation::Dfg) {
            assert_ne!(e.src, e.dst);
            assert!(matches!(g.nodes[e.src].kind, NodeKind::Assign | NodeKind::Param));
            assert_eq!(g.nodes[e.dst].kind, NodeKind::Var);
        }
        for id in 0..n {
            if !g.is_statement(id) {
                continue;
            }
            let out = g.edges(Relation::Cfg).iter().filter(|e| e.src == id).count();
            match g.nodes[id].kind {
                NodeKind::Return => assert_eq!(out, 0),
                NodeKind::If | NodeKind::Elif => assert_eq!(out, 2),
                _ => assert!(out >= 1),
            }
        }
        assert!(dfg_is_sound(p, g));
    }

    #[test]
    fn invariants_on_hand_program() {
        let (p, g) = cpg_of("def f(a, b):\n  x = 0\n  if a < b:\n    while x < a:\n      x = x + 2\n  elif b:\n    x = 1\n  else:\n    x = -(a - b) * 3\n  return x\n");
        check_invariants(&p, &g);
    }
}
