//! Synthetic corpus: program generation, ground-truth test synthesis by
//! exhaustive input search, prompt rendering and dataset assembly.

mod gen;
mod prompt;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cpg::{build_cpg, derive_branch_mask, BranchMask, Cpg, CpgError};
use crate::exec::{enumerate_branches, execute, run, Branch, BranchSet, Outcome, DEFAULT_STEP_LIMIT};
use crate::frontend::{FrontendError, Program, SourceProgram, TestCase, Value};

pub use gen::{generate_programs, GenConfig};
pub use prompt::{
    invocation_hint, render_prompt, without_graph, GRAPH_PAD, HEADER_BRANCH, HEADER_GRAPH, HEADER_HINT,
    HEADER_SOURCE, HEADER_TASK, NOT_AVAILABLE, N_GRAPH_SLOTS, SECTION_HEADERS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(&'static str),
    #[error("GenerationExhausted: produced {produced} of {wanted} unique programs")]
    GenerationExhausted { wanted: usize, produced: usize },
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Cpg(#[from] CpgError),
    #[error("InvariantViolation: record {record}: {reason}")]
    InvariantViolation { record: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

/// Argument values of one parameter in scan order: 0..=max, then -1 down to min.
fn int_scan(min: i64, max: i64) -> Vec<Value> {
    let mut v: Vec<Value> = (0..=max.max(0)).map(Value::Int).collect();
    v.extend((min.min(0)..0).rev().map(Value::Int));
    v
}

/// Infers parameter types: a parameter is boolean when the program uses it
/// only in boolean positions, i.e. no use of it sits under an arithmetic or
/// comparison operator, an assignment, a return or a call.
pub fn param_domains(program: &Program, int_min: i64, int_max: i64) -> Vec<Vec<Value>> {
    use crate::frontend::{BinOp, Label, NodeKind, UnaryOp};
    let ast = &program.ast;
    let is_int_use = |id: usize| -> bool {
        let Some(parent) = ast.node(id).parent else {
            return false;
        };
        let p = ast.node(parent);
        match (&p.kind, &p.label) {
            (NodeKind::BinOp, Label::Bin(op)) => !matches!(op, BinOp::And | BinOp::Or),
            (NodeKind::UnaryOp, Label::Unary(op)) => *op == UnaryOp::Neg,
            (NodeKind::Assign, _) | (NodeKind::Return, _) | (NodeKind::Call, _) => true,
            _ => false,
        }
    };
    program
        .entry_params()
        .iter()
        .map(|&name| {
            let uses: Vec<usize> = ast
                .descendants(crate::frontend::Ast::ROOT)
                .into_iter()
                .filter(|&d| ast.node(d).kind == NodeKind::Var && ast.node(d).name() == Some(name))
                .collect();
            let boolean = !uses.is_empty() && !uses.iter().any(|&u| is_int_use(u));
            if boolean {
                vec![Value::Bool(false), Value::Bool(true)]
            } else {
                int_scan(int_min, int_max)
            }
        })
        .collect()
}

/// Result of searching witnesses for every branch of a program.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub found: Vec<(Branch, TestCase)>,
    /// Enumerated branches no input within the budget reaches.
    pub infeasible: Vec<Branch>,
}

/// Scans argument tuples in odometer order (last parameter fastest) and keeps
/// the first passing tuple per branch; expected values are the observed returns.
pub fn synthesize_tests(
    program: &Program,
    branch_set: &BranchSet,
    domains: &[Vec<Value>],
    input_budget: usize,
) -> Synthesis {
    let mut witness: BTreeMap<u64, (Vec<Value>, Value)> = BTreeMap::new();
    let wanted = branch_set.total();
    let mut idx = vec![0usize; domains.len()];
    let empty = domains.iter().any(|d| d.is_empty());
    let mut tried = 0;
    while !empty && tried < input_budget && witness.len() < wanted {
        tried += 1;
        let args: Vec<Value> = idx.iter().zip(domains).map(|(&i, d)| d[i]).collect();
        let r = run(program, &args, DEFAULT_STEP_LIMIT);
        if let (Ok(v), Ok(b)) = (r.result, Branch::from_events(&r.events)) {
            if branch_set.contains_id(b.branch_id) {
                witness.entry(b.branch_id).or_insert((args, v));
            }
        }
        // odometer increment
        let mut k = domains.len();
        loop {
            if k == 0 {
                tried = input_budget;
                break;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < domains[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    let mut found = Vec::new();
    let mut infeasible = Vec::new();
    for b in &branch_set.branches {
        match witness.get(&b.branch_id) {
            Some((args, v)) => found.push((b.clone(), TestCase::new(program.entry_name(), args.clone(), *v))),
            None => infeasible.push(b.clone()),
        }
    }
    Synthesis { found, infeasible }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub programs: usize,
    pub gen: GenConfig,
    pub input_budget: usize,
    pub loop_bound: usize,
    pub branch_cap: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 7,
            programs: 200,
            gen: GenConfig::default(),
            input_budget: 100_000,
            loop_bound: 2,
            branch_cap: 1000,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: usize,
    pub program_ref: String,
    pub prompt_text: String,
    pub branch: Branch,
    /// Line numbers of `branch.path` in execution order.
    pub line_path: Vec<usize>,
    pub mask: BranchMask,
    pub test: TestCase,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub program_count: usize,
    pub record_count: usize,
    /// Indexed like `Split::ALL`.
    pub split_counts: [usize; 3],
    pub infeasible_count: usize,
    pub generation_config: Vec<(String, String)>,
}

/// A curated corpus: parsed programs (with their graphs) and dataset records.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub programs: Vec<Program>,
    pub cpgs: Vec<Cpg>,
    pub splits: Vec<Split>,
    pub records: Vec<DatasetRecord>,
}

impl Corpus {
    pub fn program_index(&self, name: &str) -> Option<usize> {
        self.programs.iter().position(|p| p.name() == name)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

const SPLIT_SALT: u64 = 0x5eed_5b17;

/// Assigns splits per program so that test programs never reach train/val.
pub fn assign_splits(seed: u64, count: usize, val_fraction: f64, test_fraction: f64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    order.shuffle(&mut rng);
    let n_test = ((count as f64 * test_fraction).round() as usize).min(count);
    let n_val = ((count as f64 * val_fraction).round() as usize).min(count - n_test);
    let mut splits = vec![Split::Train; count];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_test {
            splits[i] = Split::Test;
        } else if rank < n_test + n_val {
            splits[i] = Split::Val;
        }
    }
    splits
}

/// Generates `cfg.programs` programs and curates them.
pub fn curate(cfg: &CorpusConfig) -> Result<Corpus, CorpusError> {
    let sources = generate_programs(cfg.seed, cfg.programs, &cfg.gen)?;
    curate_sources(cfg, sources)
}

/// Builds the dataset from given programs, re-validating every record.
/// Splits are drawn from `cfg.seed` over the program order.
pub fn curate_sources(cfg: &CorpusConfig, sources: Vec<SourceProgram>) -> Result<Corpus, CorpusError> {
    if cfg.val_fraction < 0.0 || cfg.test_fraction < 0.0 || cfg.val_fraction + cfg.test_fraction > 1.0 {
        return Err(CorpusError::InvalidConfig("split fractions must be nonnegative and sum to at most 1"));
    }
    let splits = assign_splits(cfg.seed, sources.len(), cfg.val_fraction, cfg.test_fraction);
    let mut programs = Vec::with_capacity(sources.len());
    let mut cpgs = Vec::with_capacity(sources.len());
    let mut records = Vec::new();
    let mut infeasible_count = 0;
    for (sp, &split) in sources.into_iter().zip(&splits) {
        let program = Program::parse(sp.name, sp.text)?;
        let cpg = build_cpg(&program);
        let set = enumerate_branches(&cpg, cfg.loop_bound, cfg.branch_cap);
        let domains = param_domains(&program, cfg.gen.int_min, cfg.gen.int_max);
        let syn = synthesize_tests(&program, &set, &domains, cfg.input_budget);
        infeasible_count += syn.infeasible.len();
        let hint = invocation_hint(&program);
        for (branch, test) in syn.found {
            let id = records.len();
            let mask = derive_branch_mask(&cpg, &branch.line_set)?;
            let trace = execute(&program, &test, DEFAULT_STEP_LIMIT)
                .map_err(|_| CorpusError::InvariantViolation { record: id, reason: "test does not fit the program" })?;
            if trace.outcome != Outcome::Passed {
                return Err(CorpusError::InvariantViolation { record: id, reason: "ground-truth test does not pass" });
            }
            if Branch::from_events(&trace.events).map(|b| b.branch_id).ok() != Some(branch.branch_id) {
                return Err(CorpusError::InvariantViolation { record: id, reason: "ground-truth test takes another branch" });
            }
            records.push(DatasetRecord {
                id,
                program_ref: program.name().into(),
                prompt_text: render_prompt(&program, &cpg, &branch, mask.is_available(), &hint),
                line_path: branch.line_path(&cpg),
                branch,
                mask,
                test,
                split,
            });
        }
        programs.push(program);
        cpgs.push(cpg);
    }
    let mut split_counts = [0; 3];
    for r in &records {
        split_counts[r.split as usize] += 1;
    }
    let manifest = CorpusManifest {
        seed: cfg.seed,
        program_count: programs.len(),
        record_count: records.len(),
        split_counts,
        infeasible_count,
        generation_config: cfg.gen.describe(),
    };
    Ok(Corpus {
        manifest,
        programs,
        cpgs,
        splits,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn prog(text: &str) -> (Program, BranchSet) {
        let p = Program::parse("t", text).unwrap();
        let set = enumerate_branches(&build_cpg(&p), 2, 1000);
        (p, set)
    }

    #[test]
    fn scan_order() {
        let s = int_scan(-2, 2);
        assert_eq!(s, [0, 1, 2, -1, -2].map(Value::Int).to_vec());
    }

    #[test]
    fn straight_line_witness_is_zero() {
        let (p, set) = prog("def f(a):\n  return a + 1\n");
        let d = param_domains(&p, -8, 8);
        let syn = synthesize_tests(&p, &set, &d, 100_000);
        assert_eq!(syn.found.len(), 1);
        assert_eq!(syn.found[0].1.source_text, "check f(0) == 1");
    }

    #[test]
    fn positive_arm_witness() {
        let (p, set) = prog("def f(a):\n  if 0 < a:\n    return 1\n  return 0\n");
        let d = param_domains(&p, -8, 8);
        let syn = synthesize_tests(&p, &set, &d, 100_000);
        let tests: Vec<&str> = syn.found.iter().map(|(_, t)| t.source_text.as_str()).collect();
        assert_eq!(tests, ["check f(1) == 1", "check f(0) == 0"]);
    }

    #[test]
    fn loop_beyond_bound_is_not_synthesized() {
        let (p, set) = prog("def f(a):\n  x = 0\n  while x < a:\n    x = x + 1\n  return x\n");
        let d = param_domains(&p, -8, 8);
        let syn = synthesize_tests(&p, &set, &d, 100_000);
        let tests: Vec<&str> = syn.found.iter().map(|(_, t)| t.source_text.as_str()).collect();
        assert_eq!(tests, ["check f(2) == 2", "check f(1) == 1", "check f(0) == 0"]);
    }

    #[test]
    fn infeasible_branches_reported() {
        let (p, set) = prog("def f(a):\n  x = 0\n  if a < 0:\n    x = 1\n  if 0 <= a:\n    x = 2\n  return x\n");
        let d = param_domains(&p, -8, 8);
        let syn = synthesize_tests(&p, &set, &d, 100_000);
        assert_eq!(set.total(), 4);
        assert_eq!(syn.found.len(), 2);
        assert_eq!(syn.infeasible.len(), 2);
    }

    #[test]
    fn boolean_domains_and_odometer() {
        let (p, set) = prog("def f(a, b):\n  if b and a == 1:\n    return 1\n  return 0\n");
        let d = param_domains(&p, -8, 8);
        assert_eq!(d[1], vec![Value::Bool(false), Value::Bool(true)]);
        let syn = synthesize_tests(&p, &set, &d, 100_000);
        let tests: Vec<&str> = syn.found.iter().map(|(_, t)| t.source_text.as_str()).collect();
        assert_eq!(tests, ["check f(1, true) == 1", "check f(0, false) == 0"]);
    }

    #[test]
    fn budget_limits_search() {
        let (p, set) = prog("def f(a):\n  if a == 5:\n    return 1\n  return 0\n");
        let d = param_domains(&p, -8, 8);
        let syn = synthesize_tests(&p, &set, &d, 3);
        assert_eq!(syn.found.len(), 1);
        assert_eq!(syn.infeasible.len(), 1);
    }

    #[test]
    fn small_corpus_invariants() {
        let cfg = CorpusConfig {
            programs: 30,
            seed: 11,
            ..CorpusConfig::default()
        };
        let c = curate(&cfg).unwrap();
        assert_eq!(c.manifest.record_count, c.records.len());
        assert_eq!(c.manifest.split_counts.iter().sum::<usize>(), c.records.len());
        let test_names: BTreeSet<&str> = c.records_in(Split::Test).map(|r| r.program_ref.as_str()).collect();
        for r in c.records.iter().filter(|r| r.split != Split::Test) {
            assert!(!test_names.contains(r.program_ref.as_str()));
        }
        for r in &c.records {
            let i = c.program_index(&r.program_ref).unwrap();
            assert_eq!(r.mask, derive_branch_mask(&c.cpgs[i], &r.branch.line_set).unwrap());
            assert_eq!(r.prompt_text.matches(GRAPH_PAD).count(), N_GRAPH_SLOTS);
        }
        let again = curate(&cfg).unwrap();
        assert_eq!(again.records, c.records);
    }
}
