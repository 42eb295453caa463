//! Execution branches: extraction from traces and bounded enumeration over the CFG.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;

use super::{ExecutionTrace, TraceEvent};
use crate::cpg::{Cpg, Successor};
use crate::frontend::{NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BranchError {
    #[error("EmptyTrace: trace has no events")]
    EmptyTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Branch {
    pub path: Vec<NodeId>,
    pub line_set: BTreeSet<usize>,
    pub branch_id: u64,
}

/// Stable id of an ordered statement path.
pub fn path_id(path: &[NodeId]) -> u64 {
    let mut h = FnvHasher::default();
    for &n in path {
        h.write(&(n as u32).to_le_bytes());
    }
    h.finish()
}

impl Branch {
    pub fn from_events(events: &[TraceEvent]) -> Result<Self, BranchError> {
        if events.is_empty() {
            return Err(BranchError::EmptyTrace);
        }
        let path: Vec<NodeId> = events.iter().map(|e| e.node).collect();
        Ok(Branch {
            branch_id: path_id(&path),
            line_set: events.iter().map(|e| e.line).collect(),
            path,
        })
    }

    pub fn from_path(cpg: &Cpg, path: Vec<NodeId>) -> Self {
        Branch {
            branch_id: path_id(&path),
            line_set: path.iter().map(|&n| cpg.nodes[n].line_start).collect(),
            path,
        }
    }

    /// Line numbers in execution order (may repeat inside loops).
    pub fn line_path(&self, cpg: &Cpg) -> Vec<usize> {
        self.path.iter().map(|&n| cpg.nodes[n].line_start).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BranchSet {
    pub branches: Vec<Branch>,
}

impl BranchSet {
    pub fn total(&self) -> usize {
        self.branches.len()
    }

    pub fn contains_id(&self, id: u64) -> bool {
        self.branches.iter().any(|b| b.branch_id == id)
    }

    pub fn get(&self, id: u64) -> Option<&Branch> {
        self.branches.iter().find(|b| b.branch_id == id)
    }
}

pub fn trace_to_branch(trace: &ExecutionTrace) -> Result<Branch, BranchError> {
    Branch::from_events(&trace.events)
}

struct Enumerator<'a> {
    cpg: &'a Cpg,
    succ: Vec<Vec<Successor>>,
    loop_bound: usize,
    cap: usize,
    entries: Vec<usize>,
    path: Vec<NodeId>,
    out: Vec<Branch>,
}

impl Enumerator<'_> {
    fn emit(&mut self) {
        if self.out.len() < self.cap {
            self.out.push(Branch::from_path(self.cpg, self.path.clone()));
        }
    }

    fn visit(&mut self, node: NodeId) {
        if self.out.len() >= self.cap {
            return;
        }
        self.path.push(node);
        let succ = self.succ[node].clone();
        if succ.is_empty() {
            self.emit();
        }
        let is_loop = self.cpg.nodes[node].kind == NodeKind::While;
        for (i, s) in succ.into_iter().enumerate() {
            if self.out.len() >= self.cap {
                break;
            }
            match s {
                Successor::Exit => self.emit(),
                Successor::Stmt(t) if is_loop && i == 0 => {
                    if self.entries[node] < self.loop_bound {
                        self.entries[node] += 1;
                        self.visit(t);
                        self.entries[node] -= 1;
                    }
                }
                Successor::Stmt(t) if is_loop => {
                    // leaving the loop ends this activation
                    let saved = core::mem::replace(&mut self.entries[node], 0);
                    self.visit(t);
                    self.entries[node] = saved;
                }
                Successor::Stmt(t) => self.visit(t),
            }
        }
        self.path.pop();
    }
}

/// Depth-first enumeration of entry-function paths, each While body entered
/// at most `loop_bound` times per activation, stopping after `cap` paths.
pub fn enumerate_branches(cpg: &Cpg, loop_bound: usize, cap: usize) -> BranchSet {
    let Some(entry) = cpg.entry() else {
        return BranchSet::default();
    };
    let mut e = Enumerator {
        cpg,
        succ: cpg.successors(),
        loop_bound,
        cap,
        entries: vec![0; cpg.len()],
        path: Vec::new(),
        out: Vec::new(),
    };
    e.visit(entry);
    BranchSet { branches: e.out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpg::{build_cpg, Relation};
    use crate::exec::{execute, run, DEFAULT_STEP_LIMIT};
    use crate::frontend::{Program, TestCase, Value};

    fn setup(text: &str) -> (Program, Cpg) {
        let p = Program::parse("t", text).unwrap();
        let g = build_cpg(&p);
        (p, g)
    }

    fn branch_for(p: &Program, args: &[Value]) -> Branch {
        Branch::from_events(&run(p, args, DEFAULT_STEP_LIMIT).events).unwrap()
    }

    #[test]
    fn single_return_has_length_one() {
        let (p, g) = setup("def f(a):\n  return a");
        let t = execute(&p, &TestCase::new("f", vec![Value::Int(3)], Value::Int(3)), 10).unwrap();
        let b = trace_to_branch(&t).unwrap();
        assert_eq!(b.path.len(), 1);
        assert_eq!(enumerate_branches(&g, 2, 1000).branches, vec![b]);
    }

    #[test]
    fn empty_trace() {
        assert_eq!(Branch::from_events(&[]), Err(BranchError::EmptyTrace));
    }

    #[test]
    fn same_arm_same_id_and_loop_counts_differ() {
        let (p, _) = setup("def f(a):\n  if a < 3:\n    return 0\n  return 1\n");
        assert_eq!(branch_for(&p, &[Value::Int(0)]).branch_id, branch_for(&p, &[Value::Int(1)]).branch_id);
        assert_ne!(branch_for(&p, &[Value::Int(0)]).branch_id, branch_for(&p, &[Value::Int(5)]).branch_id);

        let (p, _) = setup("def f(a):\n  x = 0\n  while x < a:\n    x = x + 1\n  return x\n");
        let once = branch_for(&p, &[Value::Int(1)]);
        let twice = branch_for(&p, &[Value::Int(2)]);
        assert_ne!(once.branch_id, twice.branch_id);
        assert_eq!(once.line_set, twice.line_set);
    }

    #[test]
    fn straight_line_and_two_arms() {
        let (_, g) = setup("def f(a):\n  x = a + 1\n  y = x * 2\n  return y\n");
        assert_eq!(enumerate_branches(&g, 2, 1000).total(), 1);
        let (_, g) = setup("def f(a):\n  if a < 0:\n    x = 1\n  else:\n    x = 2\n  return x\n");
        let set = enumerate_branches(&g, 2, 1000);
        assert_eq!(set.total(), 2);
        // true arm first
        assert_eq!(set.branches[0].line_set, [2, 3, 6].into_iter().collect());
    }

    #[test]
    fn implicit_exit_paths() {
        // falling off the end is still a path (a missing-return runtime error when executed)
        let (_, g) = setup("def f(a):\n  if a < 0:\n    return 1\n  x = 2\n");
        let set = enumerate_branches(&g, 2, 1000);
        assert_eq!(set.total(), 2);
    }

    #[test]
    fn loop_unrolling_bound() {
        let (_, g) = setup("def f(a):\n  x = 0\n  while x < a:\n    x = x + 1\n  return x\n");
        for bound in 0..4 {
            assert_eq!(enumerate_branches(&g, bound, 1000).total(), bound + 1);
        }
        assert_eq!(enumerate_branches(&g, 3, 2).total(), 2);
    }

    #[test]
    fn nested_loop_counter_resets_per_activation() {
        let (_, g) = setup(
            "def f(a):\n  i = 0\n  while i < a:\n    j = 0\n    while j < a:\n      j = j + 1\n    i = i + 1\n  return i\n",
        );
        // outer k in 0..=2 iterations, each inner activation 0..=2 iterations: 1 + 3 + 9
        assert_eq!(enumerate_branches(&g, 2, 1000).total(), 13);
    }

    #[test]
    fn paths_follow_cfg_edges() {
        let (_, g) = setup(
            "def f(a, b):\n  if a < 0:\n    x = 1\n  elif b:\n    x = 2\n  else:\n    x = 3\n  while x < 4:\n    x = x + 1\n  return x\n",
        );
        let cfg = g.edges(Relation::Cfg);
        for b in enumerate_branches(&g, 2, 1000).branches {
            assert_eq!(Some(b.path[0]), g.entry());
            for w in b.path.windows(2) {
                assert!(cfg.iter().any(|e| e.src == w[0] && e.dst == w[1]));
            }
            let lines: BTreeSet<usize> = b.path.iter().map(|&n| g.nodes[n].line_start).collect();
            assert_eq!(lines, b.line_set);
        }
    }

    #[test]
    fn nested_if_brute_force_subset() {
        let (p, g) = setup(
            "def f(a, b):\n  if a < 0:\n    if b < 0:\n      x = 1\n    else:\n      x = 2\n  else:\n    if b < 0:\n      x = 3\n    else:\n      x = 4\n  return x\n",
        );
        let set = enumerate_branches(&g, 2, 1000);
        assert_eq!(set.total(), 4);
        let mut seen = BTreeSet::new();
        for a in -3..=3 {
            for b in -3..=3 {
                let br = branch_for(&p, &[Value::Int(a), Value::Int(b)]);
                assert!(set.contains_id(br.branch_id));
                seen.insert(br.branch_id);
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn ids_distinct() {
        let (_, g) = setup(
            "def f(a):\n  x = 0\n  while x < a:\n    if x < 2:\n      x = x + 1\n    else:\n      x = x + 2\n  return x\n",
        );
        let set = enumerate_branches(&g, 2, 1000);
        let ids: BTreeSet<u64> = set.branches.iter().map(|b| b.branch_id).collect();
        assert_eq!(ids.len(), set.total());
        assert_eq!(set.total(), 1 + 2 + 4);
    }
}
