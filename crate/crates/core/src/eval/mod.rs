//! Branch-targeted inference, the four coverage metrics and the ablation
//! matrix.

mod ablation;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{invocation_hint, render_prompt, Corpus, Split};
use crate::cpg::{derive_branch_mask, BranchMask, Cpg};
use crate::exec::{enumerate_branches, execute, trace_to_branch, Branch, BranchSet, ExecutionTrace, Outcome, DEFAULT_STEP_LIMIT};
use crate::frontend::{parse_test, Program};
use crate::lm::{DecodeMode, DEFAULT_MAX_NEW};
use crate::train::{Model, TrainError};

pub use ablation::{render_table, run_ablation_matrix, run_cell, AblationCell, AblationRun, AblationTable, CellKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("EmptyDataset: no outcomes to score")]
    EmptyDataset,
    #[error("MissingBranchSet: program {0}")]
    MissingBranchSet(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Execution record of one generated test.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub record_id: usize,
    pub program: String,
    pub generated: String,
    pub parse_ok: bool,
    pub trace: Option<ExecutionTrace>,
    pub executed_lines: BTreeSet<usize>,
    pub executed_branch_ids: BTreeSet<u64>,
    pub passed: bool,
}

impl GenerationOutcome {
    /// Parses and runs `generated` against `program`. Unparseable or
    /// non-executing tests become outcomes with empty coverage.
    pub fn from_generation(record_id: usize, program: &Program, generated: String) -> Self {
        let mut out = GenerationOutcome {
            record_id,
            program: program.name().into(),
            generated,
            parse_ok: false,
            trace: None,
            executed_lines: BTreeSet::new(),
            executed_branch_ids: BTreeSet::new(),
            passed: false,
        };
        let Ok(test) = parse_test(&out.generated) else {
            return out;
        };
        out.parse_ok = true;
        let Ok(trace) = execute(program, &test, DEFAULT_STEP_LIMIT) else {
            return out;
        };
        out.executed_lines = trace.events.iter().map(|e| e.line).collect();
        if let Ok(b) = trace_to_branch(&trace) {
            out.executed_branch_ids.insert(b.branch_id);
        }
        out.passed = trace.outcome == Outcome::Passed;
        out.trace = Some(trace);
        out
    }
}

/// A target branch and what the generated test did.
pub type Scored = (Branch, GenerationOutcome);

fn nonempty(records: &[Scored]) -> Result<f64, EvalError> {
    if records.is_empty() {
        Err(EvalError::EmptyDataset)
    } else {
        Ok(records.len() as f64)
    }
}

/// Fraction of records whose test executed exactly the target path.
pub fn branch_acc(records: &[Scored]) -> Result<f64, EvalError> {
    let n = nonempty(records)?;
    let hits = records.iter().filter(|(b, o)| o.executed_branch_ids.contains(&b.branch_id)).count();
    Ok(hits as f64 / n)
}

/// Mean fraction of each target's statement lines that the test executed.
pub fn branch_overlap(records: &[Scored]) -> Result<f64, EvalError> {
    let n = nonempty(records)?;
    let mut sum = 0.0;
    for (b, o) in records {
        let covered = b.line_set.intersection(&o.executed_lines).count();
        sum += covered as f64 / b.line_set.len() as f64;
    }
    Ok(sum / n)
}

pub fn pass_at_1(records: &[Scored]) -> Result<f64, EvalError> {
    let n = nonempty(records)?;
    Ok(records.iter().filter(|(_, o)| o.passed).count() as f64 / n)
}

/// Unweighted mean over programs of the fraction of `branch_sets` ids hit
/// by passing tests of that program's suite.
pub fn branch_cov(suites: &BTreeMap<String, Vec<GenerationOutcome>>, branch_sets: &BTreeMap<String, BranchSet>) -> Result<f64, EvalError> {
    if suites.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut sum = 0.0;
    for (name, suite) in suites {
        let set = branch_sets.get(name).filter(|s| s.total() > 0).ok_or_else(|| EvalError::MissingBranchSet(name.clone()))?;
        let ids: BTreeSet<u64> = suite.iter().filter(|o| o.passed).flat_map(|o| o.executed_branch_ids.iter().copied()).collect();
        let covered = ids.iter().filter(|&&id| set.contains_id(id)).count();
        sum += covered as f64 / set.total() as f64;
    }
    Ok(sum / suites.len() as f64)
}

/// Anything that writes one test for a (program, branch) prompt.
pub trait TestGenerator {
    fn generate(&mut self, program: &Program, cpg: &Cpg, branch: &Branch, mask: &BranchMask, prompt: &str) -> String;
}

/// Replays curated tests (empty text for branches without one).
#[derive(Debug, Clone, Default)]
pub struct OracleGenerator {
    tests: BTreeMap<(String, u64), String>,
}

impl OracleGenerator {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let tests = corpus
            .records
            .iter()
            .map(|r| ((r.program_ref.clone(), r.branch.branch_id), r.test.source_text.clone()))
            .collect();
        OracleGenerator { tests }
    }
}

impl TestGenerator for OracleGenerator {
    fn generate(&mut self, program: &Program, _: &Cpg, branch: &Branch, _: &BranchMask, _: &str) -> String {
        self.tests.get(&(program.name().into(), branch.branch_id)).cloned().unwrap_or_default()
    }
}

/// A trained model behind the generator interface; decode failures become
/// empty generations.
pub struct ModelGenerator<'a> {
    pub model: &'a Model,
    pub mode: DecodeMode,
    pub max_new: usize,
    pub seed: u64,
}

impl<'a> ModelGenerator<'a> {
    pub fn new(model: &'a Model, mode: DecodeMode, seed: u64) -> Self {
        ModelGenerator { model, mode, max_new: DEFAULT_MAX_NEW, seed }
    }
}

impl TestGenerator for ModelGenerator<'_> {
    fn generate(&mut self, _: &Program, cpg: &Cpg, branch: &Branch, mask: &BranchMask, prompt: &str) -> String {
        let seed = self.seed ^ branch.branch_id;
        self.model.generate(prompt, cpg, mask, self.mode, self.max_new, seed).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Branch cap per program.
    pub delta: usize,
    pub loop_bound: usize,
    /// When off, only branches with a curated witness are targeted and
    /// counted; when on, every enumerated branch is.
    pub count_infeasible: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { delta: 1000, loop_bound: 2, count_infeasible: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramReport {
    pub program: String,
    pub targets: usize,
    pub branch_acc: f64,
    pub branch_overlap: f64,
    pub pass_at_1: f64,
    pub branch_cov: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub branch_acc: f64,
    pub branch_overlap: f64,
    pub pass_at_1: f64,
    pub branch_cov: f64,
    pub per_program: Vec<ProgramReport>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// Sorted by program, then branch id.
    pub scored: Vec<Scored>,
    pub suites: BTreeMap<String, Vec<GenerationOutcome>>,
    pub branch_sets: BTreeMap<String, BranchSet>,
    pub report: EvalReport,
}

/// One program under test with its graph; `feasible` restricts the
/// targets when infeasible branches are not counted.
pub struct Target<'a> {
    pub program: &'a Program,
    pub cpg: &'a Cpg,
    pub feasible: Option<BTreeSet<u64>>,
}

/// Targets for the programs of `split`, with curated witnesses as the
/// feasible sets.
pub fn split_targets(corpus: &Corpus, split: Split) -> Vec<Target<'_>> {
    corpus
        .programs
        .iter()
        .zip(&corpus.cpgs)
        .zip(&corpus.splits)
        .filter(|(_, &s)| s == split)
        .map(|((p, g), _)| Target {
            program: p,
            cpg: g,
            feasible: Some(corpus.records.iter().filter(|r| r.program_ref == p.name()).map(|r| r.branch.branch_id).collect()),
        })
        .collect()
}

/// Generates and executes one test per target branch of every program,
/// then scores the four metrics.
pub fn run_targeted_inference<G: TestGenerator>(
    generator: &mut G,
    targets: &[Target<'_>],
    cfg: &InferenceConfig,
    fingerprint: &str,
) -> Result<InferenceResult, EvalError> {
    if cfg.delta == 0 {
        return Err(EvalError::InvalidConfig("delta must be at least 1"));
    }
    let mut scored: Vec<Scored> = Vec::new();
    let mut suites = BTreeMap::new();
    let mut branch_sets = BTreeMap::new();
    let mut order: Vec<&Target<'_>> = targets.iter().collect();
    order.sort_by(|a, b| a.program.name().cmp(b.program.name()));
    for t in order {
        let name = String::from(t.program.name());
        let mut set = enumerate_branches(t.cpg, cfg.loop_bound, cfg.delta);
        if !cfg.count_infeasible {
            if let Some(f) = &t.feasible {
                set.branches.retain(|b| f.contains(&b.branch_id));
            }
        }
        set.branches.sort_by_key(|b| b.branch_id);
        let hint = invocation_hint(t.program);
        let mut suite = Vec::with_capacity(set.total());
        for (i, b) in set.branches.iter().enumerate() {
            let mask = derive_branch_mask(t.cpg, &b.line_set).map_err(|_| EvalError::InvalidConfig("branch lines outside program"))?;
            let prompt = render_prompt(t.program, t.cpg, b, mask.is_available(), &hint);
            let text = generator.generate(t.program, t.cpg, b, &mask, &prompt);
            let outcome = GenerationOutcome::from_generation(i, t.program, text);
            suite.push(outcome.clone());
            scored.push((b.clone(), outcome));
        }
        if set.total() > 0 {
            suites.insert(name.clone(), suite);
            branch_sets.insert(name, set);
        }
    }
    let report = score(&scored, &suites, &branch_sets, fingerprint)?;
    Ok(InferenceResult { scored, suites, branch_sets, report })
}

/// All four metrics, overall and per program.
pub fn score(
    scored: &[Scored],
    suites: &BTreeMap<String, Vec<GenerationOutcome>>,
    branch_sets: &BTreeMap<String, BranchSet>,
    fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    let mut per_program = Vec::new();
    for (name, suite) in suites {
        let mine: Vec<Scored> = scored.iter().filter(|(_, o)| &o.program == name).cloned().collect();
        let one_suite: BTreeMap<String, Vec<GenerationOutcome>> = [(name.clone(), suite.clone())].into_iter().collect();
        per_program.push(ProgramReport {
            program: name.clone(),
            targets: mine.len(),
            branch_acc: branch_acc(&mine)?,
            branch_overlap: branch_overlap(&mine)?,
            pass_at_1: pass_at_1(&mine)?,
            branch_cov: branch_cov(&one_suite, branch_sets)?,
        });
    }
    Ok(EvalReport {
        branch_acc: branch_acc(scored)?,
        branch_overlap: branch_overlap(scored)?,
        pass_at_1: pass_at_1(scored)?,
        branch_cov: branch_cov(suites, branch_sets)?,
        per_program,
        fingerprint: String::from(fingerprint),
    })
}

/// Short description of a model and inference setup for reports.
pub fn fingerprint(model: &Model, mode: DecodeMode, cfg: &InferenceConfig) -> String {
    let mode = match mode {
        DecodeMode::Greedy => String::from("greedy"),
        DecodeMode::Temperature(t) => format!("temp:{t}"),
    };
    format!(
        "variant={} agg={} params={} decode={} delta={} loop_bound={} count_infeasible={}",
        model.gnn_cfg.variant.as_str(),
        model.gnn_cfg.branch_agg.as_str(),
        model.store.num_scalars(),
        mode,
        cfg.delta,
        cfg.loop_bound,
        cfg.count_infeasible
    )
}

#[cfg(test)]
mod tests;
