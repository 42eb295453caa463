use branchforge_core::corpus::{curate, CorpusConfig, Split};
use branchforge_core::exec::{enumerate_branches, execute, trace_to_branch, Outcome, DEFAULT_STEP_LIMIT};
use branchforge_core::frontend::parse_test;

#[test]
fn curated_tests_replay_onto_their_branches() {
    let c = curate(&CorpusConfig { programs: 20, ..CorpusConfig::default() }).unwrap();
    assert_eq!(c.manifest.record_count, c.records.len());
    assert_eq!(c.manifest.split_counts.iter().sum::<usize>(), c.records.len());
    for r in &c.records {
        let p = c.program_index(&r.program_ref).unwrap();
        let test = parse_test(&r.test.source_text).unwrap();
        let trace = execute(&c.programs[p], &test, DEFAULT_STEP_LIMIT).unwrap();
        assert_eq!(trace.outcome, Outcome::Passed, "{}", r.test.source_text);
        let b = trace_to_branch(&trace).unwrap();
        assert_eq!(b.branch_id, r.branch.branch_id);
        let enumerated = enumerate_branches(&c.cpgs[p], 2, 1000);
        assert!(enumerated.branches.iter().any(|e| e.branch_id == b.branch_id));
        assert_eq!(r.mask.bits.len(), c.cpgs[p].len());
    }
}

#[test]
fn splits_partition_programs() {
    let c = curate(&CorpusConfig { programs: 20, ..CorpusConfig::default() }).unwrap();
    for r in &c.records {
        let p = c.program_index(&r.program_ref).unwrap();
        assert_eq!(r.split, c.splits[p]);
    }
    assert!(Split::ALL.iter().all(|&s| c.records_in(s).count() > 0));
}
