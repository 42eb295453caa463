//! Randomized outcome sets and a brute-force recount of the four metrics,
//! working from raw traces rather than the derived outcome fields.

use std::collections::{BTreeMap, BTreeSet};

use branchforge_core::corpus::Corpus;
use branchforge_core::eval::{branch_acc, branch_cov, branch_overlap, pass_at_1, GenerationOutcome, Scored};
use branchforge_core::exec::{enumerate_branches, path_id, run, BranchSet, Outcome};
use branchforge_core::frontend::Value;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OutcomeSet {
    pub scored: Vec<Scored>,
    pub suites: BTreeMap<String, Vec<GenerationOutcome>>,
    pub branch_sets: BTreeMap<String, BranchSet>,
}

fn random_args(rng: &mut ChaCha8Rng, params: usize) -> Vec<Value> {
    (0..params)
        .map(|_| if rng.random_bool(0.2) { Value::Bool(rng.random()) } else { Value::Int(rng.random_range(-9..=9)) })
        .collect()
}

/// A few programs from `corpus`, a random subset of their enumerated
/// branches as targets, and a mix of generations per target: the curated
/// test, another branch's test, random calls with right or wrong expected
/// values, broken text and empty output.
pub fn random_outcome_set(corpus: &Corpus, seed: u64) -> OutcomeSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_programs = rng.random_range(1..=6).min(corpus.programs.len());
    let picks = rand::seq::index::sample(&mut rng, corpus.programs.len(), n_programs).into_vec();
    let mut scored = Vec::new();
    let mut suites = BTreeMap::new();
    let mut branch_sets = BTreeMap::new();
    for pi in picks {
        let program = &corpus.programs[pi];
        let set = enumerate_branches(&corpus.cpgs[pi], 2, 1000);
        let curated: Vec<_> = corpus.records.iter().filter(|r| r.program_ref == program.name()).collect();
        let entry = program.entry_name().to_string();
        let params = program.entry_params().len();
        let mut suite = Vec::new();
        for b in &set.branches {
            if !rng.random_bool(0.7) {
                continue;
            }
            let text = match rng.random_range(0..6) {
                0 => curated.iter().find(|r| r.branch.branch_id == b.branch_id).map(|r| r.test.source_text.clone()).unwrap_or_default(),
                1 => curated.choose(&mut rng).map(|r| r.test.source_text.clone()).unwrap_or_default(),
                2 | 3 => {
                    let args = random_args(&mut rng, params);
                    let res = run(program, &args, 10_000);
                    let expected = match (&res.result, rng.random_bool(0.5)) {
                        (Ok(v), true) => v.to_string(),
                        _ => rng.random_range(-9..=9).to_string(),
                    };
                    let args: Vec<String> = args.iter().map(Value::to_string).collect();
                    format!("check {entry}({}) == {expected}", args.join(", "))
                }
                4 => format!("check {entry}("),
                _ => String::new(),
            };
            let o = GenerationOutcome::from_generation(scored.len(), program, text);
            suite.push(o.clone());
            scored.push((b.clone(), o));
        }
        if let Some(b) = set.branches.first().filter(|_| suite.is_empty()) {
            let o = GenerationOutcome::from_generation(scored.len(), program, String::new());
            suite.push(o.clone());
            scored.push((b.clone(), o));
        }
        suites.insert(program.name().to_string(), suite);
        branch_sets.insert(program.name().to_string(), set);
    }
    OutcomeSet { scored, suites, branch_sets }
}

fn executed(o: &GenerationOutcome) -> (Option<u64>, BTreeSet<usize>, bool) {
    match &o.trace {
        Some(t) if !t.events.is_empty() => {
            let nodes: Vec<usize> = t.events.iter().map(|e| e.node).collect();
            let lines = t.events.iter().map(|e| e.line).collect();
            (Some(path_id(&nodes)), lines, t.outcome == Outcome::Passed)
        }
        Some(t) => (None, BTreeSet::new(), t.outcome == Outcome::Passed),
        None => (None, BTreeSet::new(), false),
    }
}

/// BranchAcc, BranchOverlap, Pass@1, BranchCov by explicit counting.
pub fn recount(set: &OutcomeSet) -> [f64; 4] {
    let n = set.scored.len();
    let (mut hits, mut passes) = (0usize, 0usize);
    let mut overlap = 0.0;
    for (b, o) in &set.scored {
        let (id, lines, passed) = executed(o);
        hits += usize::from(id == Some(b.branch_id));
        passes += usize::from(passed);
        let common = b.line_set.iter().filter(|l| lines.contains(l)).count();
        overlap += common as f64 / b.line_set.len() as f64;
    }
    let mut cov = 0.0;
    for (name, suite) in &set.suites {
        let total = &set.branch_sets[name].branches;
        let mut seen = BTreeSet::new();
        for o in suite {
            if let (Some(id), _, true) = executed(o) {
                seen.insert(id);
            }
        }
        let covered = total.iter().filter(|b| seen.contains(&b.branch_id)).count();
        cov += covered as f64 / total.len() as f64;
    }
    [hits as f64 / n as f64, overlap / n as f64, passes as f64 / n as f64, cov / set.suites.len() as f64]
}

/// The harness metrics on the same set, in the same order as [`recount`].
pub fn harness_metrics(set: &OutcomeSet) -> Result<[f64; 4], branchforge_core::eval::EvalError> {
    Ok([branch_acc(&set.scored)?, branch_overlap(&set.scored)?, pass_at_1(&set.scored)?, branch_cov(&set.suites, &set.branch_sets)?])
}

/// Runs `count` randomized sets; returns the seeds whose metrics differ in
/// any bit.
pub fn metric_oracle_mismatches(corpus: &Corpus, count: u64) -> Vec<u64> {
    (0..count)
        .filter(|&seed| {
            let set = random_outcome_set(corpus, seed);
            match harness_metrics(&set) {
                Ok(got) => got.iter().zip(recount(&set)).any(|(g, w)| g.to_bits() != w.to_bits()),
                Err(_) => true,
            }
        })
        .collect()
}
