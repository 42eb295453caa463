use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bf(args: &[&str], env_data: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_branchforge"));
    c.args(args).env_remove("BRANCHFORGE_DATA");
    if let Some(d) = env_data {
        c.env("BRANCHFORGE_DATA", d);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bf(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Relative path -> content hash of every file under `dir`.
fn digest_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                let h = Sha256::digest(std::fs::read(&p).unwrap());
                out.insert(rel, h.iter().map(|b| format!("{b:02x}")).collect::<String>());
            }
        }
    }
    out
}

#[test]
fn corpus_commands_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let d = d.to_str().unwrap();
        ok(&["gen-corpus", "--seed", "7", "--programs", "12", "--data-dir", d]);
        ok(&["curate", "--data-dir", d]);
        ok(&["build-cpg", "--data-dir", d]);
    }
    let (ha, hb) = (digest_tree(&a), digest_tree(&b));
    assert!(ha.contains_key("dataset.jsonl") && ha.contains_key("manifest.txt") && ha.contains_key("cpg/p0000.cpg"));
    assert_eq!(ha, hb);
    // a rerun in place leaves the bytes alone
    ok(&["curate", "--data-dir", a.to_str().unwrap()]);
    assert_eq!(digest_tree(&a), hb);
    // no stray temporary files
    assert!(ha.keys().all(|k| !k.contains(".tmp")));
}

#[test]
fn missing_checkpoint_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bf(&["eval", "--checkpoint", tmp.path().join("none.ckpt").to_str().unwrap()], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: CheckpointNotFound"), "{err}");
}

#[test]
fn errors_are_single_line_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bf(&["curate"], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: DataNotFound"));
    let out = bf(&["train", "--variant", "gcn"], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: UsageError"));
    let out = bf(&["curate"], None);
    assert!(String::from_utf8(out.stderr).unwrap().contains("BRANCHFORGE_DATA"));
}

#[test]
fn config_file_and_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "programs=5\nseed=3\n").unwrap();
    let out = bf(&["gen-corpus", "--config", cfg.to_str().unwrap(), "--programs", "4"], Some(&data));
    assert!(out.status.success());
    let index = std::fs::read_to_string(data.join("programs/index.txt")).unwrap();
    assert!(index.contains("seed: 3\ncount: 4\n"), "{index}");
}

#[test]
fn train_and_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    ok(&["gen-corpus", "--programs", "16", "--data-dir", d]);
    ok(&["curate", "--data-dir", d]);
    ok(&["train", "--data-dir", d, "--steps", "2", "--batch", "2"]);
    ok(&["train-ft", "--data-dir", d, "--steps", "2", "--batch", "2"]);
    let ft = std::fs::read_to_string(tmp.path().join("model-ft/best.ckpt")).unwrap();
    assert!(ft.contains("\"gnn.variant\":\"none\"") && !ft.contains("\"name\":\"gnn."));
    let ckpt = tmp.path().join("model/best.ckpt");
    let line = ok(&["eval", "--data-dir", d, "--checkpoint", ckpt.to_str().unwrap(), "--emit-plot-data", "--dump-traces", "--delta", "3"]);
    assert!(line.starts_with("branch_acc "));
    let eval = tmp.path().join("eval");
    let report = std::fs::read_to_string(eval.join("report.txt")).unwrap();
    assert!(report.starts_with("format_version: 1\nfingerprint: variant=attention"));
    assert!(eval.join("plot.tsv").is_file() && eval.join("outcomes.jsonl").is_file());
    ok(&["infer", "--data-dir", d, "--checkpoint", ckpt.to_str().unwrap(), "--delta", "3", "--decode", "temp:0.8"]);
    assert!(tmp.path().join("infer/suites").is_dir());
}
