//! Statement-level control flow and reaching-definitions data flow.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::Edge;
use crate::frontend::{Ast, NodeId, NodeKind};

pub(super) struct Flow {
    pub cfg: Vec<Edge>,
    pub dfg: Vec<Edge>,
}

struct CfgBuilder<'a> {
    ast: &'a Ast,
    /// Successors per node; `None` is the function exit.
    succ: Vec<Vec<Option<NodeId>>>,
    stmts: Vec<NodeId>,
}

impl<'a> CfgBuilder<'a> {
    fn first(&self, block: NodeId) -> NodeId {
        self.ast.node(block).children[0]
    }

    fn block(&mut self, block: NodeId, follow: Option<NodeId>) {
        let children = self.ast.node(block).children.clone();
        for (i, &s) in children.iter().enumerate() {
            let next = children.get(i + 1).copied().or(follow);
            self.stmt(s, next);
        }
    }

    fn stmt(&mut self, s: NodeId, next: Option<NodeId>) {
        self.stmts.push(s);
        let node = self.ast.node(s);
        match node.kind {
            NodeKind::Return => {}
            NodeKind::While => {
                let body = node.children[1];
                self.succ[s] = vec![Some(self.first(body)), next];
                self.block(body, Some(s));
            }
            NodeKind::If => {
                let arms: Vec<NodeId> = node.children[2..].to_vec();
                let then_block = node.children[1];
                let false_target = self.arm_entry(arms.first().copied(), next);
                self.succ[s] = vec![Some(self.first(then_block)), false_target];
                self.block(then_block, next);
                for (i, &arm) in arms.iter().enumerate() {
                    let arm_node = self.ast.node(arm);
                    if arm_node.kind == NodeKind::Elif {
                        self.stmts.push(arm);
                        let body = arm_node.children[1];
                        let false_target = self.arm_entry(arms.get(i + 1).copied(), next);
                        self.succ[arm] = vec![Some(self.first(body)), false_target];
                        self.block(body, next);
                    } else {
                        self.block(arm_node.children[0], next);
                    }
                }
            }
            // Assign or call statement
            _ => self.succ[s] = vec![next],
        }
    }

    /// Where control goes when the preceding condition is false.
    fn arm_entry(&self, arm: Option<NodeId>, next: Option<NodeId>) -> Option<NodeId> {
        match arm {
            None => next,
            Some(a) => match self.ast.node(a).kind {
                NodeKind::Elif => Some(a),
                _ => Some(self.first(self.ast.node(a).children[0])),
            },
        }
    }
}

/// Var nodes read by statement `s` itself (not by nested statements).
fn uses(ast: &Ast, s: NodeId) -> Vec<NodeId> {
    let node = ast.node(s);
    let roots: Vec<NodeId> = match node.kind {
        NodeKind::Assign | NodeKind::Return | NodeKind::If | NodeKind::Elif | NodeKind::While => {
            vec![node.children[0]]
        }
        NodeKind::Call => vec![s],
        _ => Vec::new(),
    };
    let mut out = Vec::new();
    for r in roots {
        if ast.node(r).kind == NodeKind::Var {
            out.push(r);
        }
        out.extend(
            ast.descendants(r)
                .into_iter()
                .filter(|&d| ast.node(d).kind == NodeKind::Var),
        );
    }
    out
}

pub(super) fn analyze(ast: &Ast) -> Flow {
    let mut cfg = Vec::new();
    let mut dfg = Vec::new();

    for func in ast.functions() {
        let mut b = CfgBuilder {
            ast,
            succ: vec![Vec::new(); ast.len()],
            stmts: Vec::new(),
        };
        let body = ast.body(func);
        let entry = b.first(body);
        b.block(body, None);
        let stmts = b.stmts;
        let succ = b.succ;

        cfg.push(Edge { src: func, dst: entry });
        for &s in &stmts {
            for t in succ[s].iter().flatten() {
                let e = Edge { src: s, dst: *t };
                if !cfg.contains(&e) {
                    cfg.push(e);
                }
            }
        }

        // Reaching definitions over statements. Definitions are Param and
        // Assign nodes, identified by node id.
        let params: Vec<NodeId> = ast
            .node(func)
            .children
            .iter()
            .copied()
            .filter(|&c| ast.node(c).kind == NodeKind::Param)
            .collect();
        let defs_of = |var: &str| -> Vec<NodeId> {
            params
                .iter()
                .chain(stmts.iter())
                .copied()
                .filter(|&d| {
                    let n = ast.node(d);
                    matches!(n.kind, NodeKind::Param | NodeKind::Assign) && n.name() == Some(var)
                })
                .collect()
        };
        let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); ast.len()];
        for &s in &stmts {
            for t in succ[s].iter().flatten() {
                preds[*t].push(s);
            }
        }
        let mut reach_in: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); ast.len()];
        let mut reach_out: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); ast.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for &s in &stmts {
                let mut input: BTreeSet<NodeId> = BTreeSet::new();
                if s == entry {
                    input.extend(params.iter().copied());
                }
                for &p in &preds[s] {
                    input.extend(reach_out[p].iter().copied());
                }
                let node = ast.node(s);
                let mut output = input.clone();
                if node.kind == NodeKind::Assign {
                    let var = node.name().unwrap_or("");
                    for d in defs_of(var) {
                        output.remove(&d);
                    }
                    output.insert(s);
                }
                if input != reach_in[s] || output != reach_out[s] {
                    reach_in[s] = input;
                    reach_out[s] = output;
                    changed = true;
                }
            }
        }

        for &s in &stmts {
            for u in uses(ast, s) {
                let var = ast.node(u).name();
                for &d in &reach_in[s] {
                    if ast.node(d).name() == var {
                        dfg.push(Edge { src: d, dst: u });
                    }
                }
            }
        }
    }
    dfg.sort_unstable();
    dfg.dedup();
    Flow { cfg, dfg }
}
