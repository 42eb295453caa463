use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::corpus::{curate, CorpusConfig};
use crate::exec::run;
use crate::frontend::Value;

const SIBLING: &str = "def f(a):\n  x = 0\n  if a < 0:\n    x = 1\n  else:\n    x = 2\n  return x\n";

fn branch(id: u64, lines: &[usize]) -> Branch {
    Branch { path: Vec::new(), line_set: lines.iter().copied().collect(), branch_id: id }
}

fn outcome(program: &str, ids: &[u64], lines: &[usize], passed: bool) -> GenerationOutcome {
    GenerationOutcome {
        record_id: 0,
        program: program.into(),
        generated: String::new(),
        parse_ok: passed || !ids.is_empty(),
        trace: None,
        executed_lines: lines.iter().copied().collect(),
        executed_branch_ids: ids.iter().copied().collect(),
        passed,
    }
}

#[test]
fn acc_counts_hits() {
    let recs = vec![
        (branch(1, &[2]), outcome("p", &[1], &[2], true)),
        (branch(2, &[2]), outcome("p", &[3], &[2], true)),
        (branch(3, &[2]), outcome("p", &[3], &[2], false)),
    ];
    assert_eq!(branch_acc(&recs).unwrap(), 2.0 / 3.0);
    let none: Vec<Scored> = recs.iter().map(|(b, _)| (b.clone(), outcome("p", &[], &[], false))).collect();
    assert_eq!(branch_acc(&none).unwrap(), 0.0);
    assert_eq!(branch_overlap(&none).unwrap(), 0.0);
    assert_eq!(branch_acc(&[]), Err(EvalError::EmptyDataset));
    assert_eq!(branch_overlap(&[]), Err(EvalError::EmptyDataset));
    assert_eq!(pass_at_1(&[]), Err(EvalError::EmptyDataset));
}

#[test]
fn overlap_of_sibling_arm() {
    let p = Program::parse("t", SIBLING).unwrap();
    let target = Branch::from_events(&run(&p, &[Value::Int(-1)], 100).events).unwrap();
    assert_eq!(target.line_set, [2, 3, 4, 7].into_iter().collect());
    let o = GenerationOutcome::from_generation(0, &p, "check f(5) == 2".into());
    assert!(o.passed);
    let recs = vec![(target, o)];
    assert_eq!(branch_overlap(&recs).unwrap(), 3.0 / 4.0);
    assert_eq!(branch_acc(&recs).unwrap(), 0.0);

    let three = vec![(branch(9, &[3, 4, 5]), outcome("p", &[1], &[1, 3, 4], true))];
    assert_eq!(branch_overlap(&three).unwrap(), 2.0 / 3.0);
}

#[test]
fn pass_rate_mix() {
    let mut recs = Vec::new();
    for i in 0..10u64 {
        let o = match i {
            0..=3 => outcome("p", &[i], &[1], true),
            4 => outcome("p", &[], &[], false),
            _ => outcome("p", &[i], &[1], false),
        };
        recs.push((branch(i, &[1]), o));
    }
    assert_eq!(pass_at_1(&recs).unwrap(), 0.4);
}

#[test]
fn generation_outcomes() {
    let p = Program::parse("t", SIBLING).unwrap();
    let bad = GenerationOutcome::from_generation(0, &p, "check f(".into());
    assert!(!bad.parse_ok && !bad.passed && bad.trace.is_none() && bad.executed_lines.is_empty());
    let wrong_name = GenerationOutcome::from_generation(0, &p, "check g(1) == 2".into());
    assert!(wrong_name.parse_ok && wrong_name.trace.is_none() && wrong_name.executed_branch_ids.is_empty());
    // failing assertion still records what ran
    let failed = GenerationOutcome::from_generation(0, &p, "check f(-3) == 2".into());
    assert!(failed.parse_ok && !failed.passed);
    assert_eq!(failed.executed_lines, [2, 3, 4, 7].into_iter().collect());
    assert_eq!(failed.executed_branch_ids.len(), 1);
}

fn set_of(ids: &[u64]) -> BranchSet {
    BranchSet { branches: ids.iter().map(|&i| branch(i, &[1])).collect() }
}

#[test]
fn coverage_uses_passing_tests_only() {
    let sets: BTreeMap<String, BranchSet> = [("a".to_string(), set_of(&[1, 2, 3, 4])), ("b".to_string(), set_of(&[7, 8]))].into_iter().collect();
    let mut suites: BTreeMap<String, Vec<GenerationOutcome>> = BTreeMap::new();
    suites.insert(
        "a".into(),
        vec![outcome("a", &[1], &[], true), outcome("a", &[2], &[], true), outcome("a", &[3], &[], true), outcome("a", &[4], &[], false), outcome("a", &[99], &[], true)],
    );
    suites.insert("b".into(), Vec::new());
    assert_eq!(branch_cov(&suites, &sets).unwrap(), (0.75 + 0.0) / 2.0);
    suites.insert("c".into(), Vec::new());
    assert_eq!(branch_cov(&suites, &sets), Err(EvalError::MissingBranchSet("c".into())));
    assert_eq!(branch_cov(&BTreeMap::new(), &sets), Err(EvalError::EmptyDataset));
}

fn small_corpus() -> Corpus {
    curate(&CorpusConfig { programs: 30, ..CorpusConfig::default() }).unwrap()
}

#[test]
fn oracle_replay_scores_one_on_every_split() {
    let c = small_corpus();
    let mut oracle = OracleGenerator::from_corpus(&c);
    for split in Split::ALL {
        let targets = split_targets(&c, split);
        if c.records_in(split).next().is_none() {
            continue;
        }
        let r = run_targeted_inference(&mut oracle, &targets, &InferenceConfig::default(), "oracle").unwrap();
        assert_eq!(r.scored.len(), c.records_in(split).count());
        let rep = &r.report;
        assert_eq!((rep.branch_acc, rep.branch_overlap, rep.pass_at_1, rep.branch_cov), (1.0, 1.0, 1.0, 1.0), "{split:?}");
        assert!(rep.per_program.iter().all(|p| p.branch_acc == 1.0));
    }
}

#[test]
fn delta_caps_generations_per_program() {
    let c = small_corpus();
    let mut oracle = OracleGenerator::from_corpus(&c);
    let targets = split_targets(&c, Split::Train);
    let cfg = InferenceConfig { delta: 1, count_infeasible: true, ..InferenceConfig::default() };
    let r = run_targeted_inference(&mut oracle, &targets, &cfg, "").unwrap();
    assert_eq!(r.scored.len(), targets.len());
    assert!(r.suites.values().all(|s| s.len() == 1));
    let zero = InferenceConfig { delta: 0, ..cfg };
    assert!(run_targeted_inference(&mut oracle, &targets, &zero, "").is_err());
}

#[test]
fn counting_infeasible_branches_lowers_coverage_only() {
    let c = small_corpus();
    let mut oracle = OracleGenerator::from_corpus(&c);
    let targets = split_targets(&c, Split::Train);
    let all = InferenceConfig { count_infeasible: true, ..InferenceConfig::default() };
    let r = run_targeted_inference(&mut oracle, &targets, &all, "").unwrap();
    let total: usize = r.branch_sets.values().map(|s| s.total()).sum();
    let feasible: usize = targets.iter().map(|t| t.feasible.as_ref().unwrap().len()).sum();
    assert!(total >= feasible);
    if total > feasible {
        assert!(r.report.branch_cov < 1.0);
    }
}

#[test]
fn ordering_is_stable() {
    let c = small_corpus();
    let mut oracle = OracleGenerator::from_corpus(&c);
    let mut targets = split_targets(&c, Split::Train);
    let a = run_targeted_inference(&mut oracle, &targets, &InferenceConfig::default(), "x").unwrap();
    targets.reverse();
    let b = run_targeted_inference(&mut oracle, &targets, &InferenceConfig::default(), "x").unwrap();
    assert_eq!(a, b);
    let keys: Vec<(String, u64)> = a.scored.iter().map(|(b, o)| (o.program.clone(), b.branch_id)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn cells_cover_both_axes() {
    let kinds: BTreeSet<CellKind> = CellKind::ALL.into_iter().collect();
    assert_eq!(kinds.len(), 4);
    let base = crate::train::TrainConfig::default();
    assert_eq!(CellKind::TextOnly.config(&base), base.text_only());
    assert_eq!(CellKind::AttentionPool.config(&base).gnn.branch_agg, crate::gnn::BranchAgg::GraphPool);
    for k in CellKind::ALL {
        assert_eq!(CellKind::parse(k.as_str()), Some(k));
    }
    let table = AblationTable::from_runs(vec![0], Vec::new());
    assert_eq!(table.cells.len(), 5);
    assert_eq!(table.cells.iter().filter(|c| c.kind == CellKind::AttentionNode).count(), 2);
}

// Recount with integer tallies kept apart from the metric code.
fn recount(recs: &[Scored], suites: &BTreeMap<String, Vec<GenerationOutcome>>, sets: &BTreeMap<String, BranchSet>) -> [f64; 4] {
    let n = recs.len() as f64;
    let mut hits = 0u32;
    let mut passes = 0u32;
    let mut overlap = 0.0;
    for (b, o) in recs {
        if o.executed_branch_ids.iter().any(|&i| i == b.branch_id) {
            hits += 1;
        }
        if o.passed {
            passes += 1;
        }
        let mut k = 0u32;
        for l in &b.line_set {
            if o.executed_lines.iter().any(|e| e == l) {
                k += 1;
            }
        }
        overlap += f64::from(k) / b.line_set.len() as f64;
    }
    let mut cov = 0.0;
    for (name, suite) in suites {
        let set = &sets[name];
        let mut covered = 0u32;
        for b in &set.branches {
            if suite.iter().any(|o| o.passed && o.executed_branch_ids.contains(&b.branch_id)) {
                covered += 1;
            }
        }
        cov += f64::from(covered) / set.branches.len() as f64;
    }
    [f64::from(hits) / n, overlap / n, f64::from(passes) / n, cov / suites.len() as f64]
}

prop_compose! {
    fn record()(id in 0u64..6, lines in prop::collection::btree_set(1usize..10, 1..6),
                ids in prop::collection::btree_set(0u64..6, 0..2), exec in prop::collection::btree_set(1usize..10, 0..8),
                passed in any::<bool>(), prog in 0usize..3) -> Scored {
        let program = ["p0", "p1", "p2"][prog];
        (Branch { path: Vec::new(), line_set: lines, branch_id: id }, GenerationOutcome {
            record_id: 0, program: program.into(), generated: String::new(), parse_ok: true, trace: None,
            executed_lines: exec, executed_branch_ids: ids, passed,
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn metrics_match_recount(recs in prop::collection::vec(record(), 1..30)) {
        let mut suites: BTreeMap<String, Vec<GenerationOutcome>> = BTreeMap::new();
        for (_, o) in &recs {
            suites.entry(o.program.clone()).or_default().push(o.clone());
        }
        let sets: BTreeMap<String, BranchSet> = suites.keys().map(|k| (k.clone(), set_of(&[0, 1, 2, 3, 4, 5]))).collect();
        let got = [branch_acc(&recs).unwrap(), branch_overlap(&recs).unwrap(), pass_at_1(&recs).unwrap(), branch_cov(&suites, &sets).unwrap()];
        let want = recount(&recs, &suites, &sets);
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.to_bits(), w.to_bits());
            prop_assert!((0.0..=1.0).contains(g));
        }
    }
}
