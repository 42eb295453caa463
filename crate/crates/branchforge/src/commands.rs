//! One function per subcommand. Each returns the lines it prints on
//! success; files go through [`write_atomic`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use branchforge_core::corpus::{curate_sources, generate_programs, CorpusConfig, GenConfig, Split};
use branchforge_core::cpg::build_cpg;
use branchforge_core::eval::{
    fingerprint, render_table, run_ablation_matrix, run_targeted_inference, split_targets, EvalReport, InferenceConfig, InferenceResult,
    ModelGenerator, OracleGenerator,
};
use branchforge_core::frontend::{pretty_print_program, Program};
use branchforge_core::gnn::{GnnConfig, Variant};
use branchforge_core::lm::LmConfig;
use branchforge_core::selfcheck::{gnn_layer_checks, joint_model_check, primitive_checks, CheckResult};
use branchforge_core::train::{train_with, Model, TrainConfig, TrainReport};

use crate::config::Settings;
use crate::error::CliError;
use crate::formats::{hex_f64, parse_hex_f64, read_cpg, write_cpg, write_trace};
use crate::oracle::metric_oracle_mismatches;
use crate::store::{cpg_path, load_corpus, load_model, load_sources, save_corpus, save_model, save_sources, write_atomic};

pub const CORPUS_SEED: u64 = 7;

fn output_dir(s: &Settings, fallback: &str) -> Result<PathBuf, CliError> {
    match &s.out {
        Some(o) => Ok(o.clone()),
        None => Ok(s.require_data_dir()?.join(fallback)),
    }
}

pub fn gen_corpus(s: &Settings) -> Result<Vec<String>, CliError> {
    let dir = match (&s.out, &s.data_dir) {
        (Some(o), _) | (None, Some(o)) => o.clone(),
        (None, None) => return Err(CliError::Usage("gen-corpus needs --out or --data-dir".into())),
    };
    let seed = s.seed.unwrap_or(CORPUS_SEED);
    let sources = generate_programs(seed, s.programs, &GenConfig::default())?;
    save_sources(&dir, seed, &sources)?;
    Ok(vec![format!("generated {} programs into {}", sources.len(), dir.display())])
}

pub fn build_cpgs(s: &Settings) -> Result<Vec<String>, CliError> {
    let data = s.require_data_dir()?;
    let out = s.out.clone().unwrap_or_else(|| data.clone());
    let (_, sources) = load_sources(&data)?;
    let mut nodes = 0;
    for sp in &sources {
        let p = Program::parse(sp.name.clone(), sp.text.clone()).map_err(|e| CliError::Corrupt(format!("{}: {e}", sp.name)))?;
        let g = build_cpg(&p);
        nodes += g.len();
        write_atomic(&cpg_path(&out, p.name()), write_cpg(&g).as_bytes())?;
    }
    Ok(vec![format!("wrote {} graphs ({} nodes)", sources.len(), nodes)])
}

pub fn corpus_config(s: &Settings, seed: u64, programs: usize) -> CorpusConfig {
    CorpusConfig { seed, programs, loop_bound: s.loop_bound, branch_cap: s.delta, ..CorpusConfig::default() }
}

pub fn curate(s: &Settings) -> Result<Vec<String>, CliError> {
    let data = s.require_data_dir()?;
    let out = s.out.clone().unwrap_or_else(|| data.clone());
    let (index_seed, sources) = load_sources(&data)?;
    let cfg = corpus_config(s, s.seed.unwrap_or(index_seed), sources.len());
    let corpus = curate_sources(&cfg, sources)?;
    if out != data {
        let sources: Vec<_> = corpus.programs.iter().map(|p| p.source.clone()).collect();
        save_sources(&out, index_seed, &sources)?;
    }
    save_corpus(&out, &corpus)?;
    let m = &corpus.manifest;
    Ok(vec![format!(
        "curated {} records from {} programs (train {}, val {}, test {}; {} infeasible branches)",
        m.record_count, m.program_count, m.split_counts[0], m.split_counts[1], m.split_counts[2], m.infeasible_count
    )])
}

pub fn train_config(s: &Settings, text_only: bool) -> TrainConfig {
    let variant = if text_only { Variant::None } else { s.variant };
    TrainConfig {
        steps: s.steps,
        batch_size: s.batch,
        lr: s.lr,
        weight_decay: s.weight_decay,
        seed: s.seed.unwrap_or(0),
        gnn: GnnConfig { variant, branch_agg: s.branch_agg, ..GnnConfig::default() },
        lm: LmConfig::default(),
        ..TrainConfig::default()
    }
}

pub fn render_train_report(r: &TrainReport) -> String {
    let mut out = String::from("format_version: 1\n");
    let _ = writeln!(out, "steps: {}", r.train_loss.len());
    let _ = writeln!(out, "best_step: {}", r.best_step);
    let _ = writeln!(out, "best_val: {}", r.best_val);
    for (step, v) in &r.val_loss {
        let _ = writeln!(out, "val {step} {v}");
    }
    for (i, l) in r.train_loss.iter().enumerate() {
        let _ = writeln!(out, "train {} {l}", i + 1);
    }
    out
}

/// Writes `best.ckpt`, `final.ckpt` and `train_report.txt`.
pub fn train(s: &Settings, text_only: bool) -> Result<Vec<String>, CliError> {
    let data = s.require_data_dir()?;
    let out = output_dir(s, if text_only { "model-ft" } else { "model" })?;
    let corpus = load_corpus(&data)?;
    let cfg = train_config(s, text_only);
    let start = std::time::Instant::now();
    let outcome = train_with(&corpus, &cfg, |step, loss| {
        if step % cfg.val_every == 0 {
            eprintln!("step {step} loss {loss:.4} ({:.0}s)", start.elapsed().as_secs_f64());
        }
    })?;
    let best = Model::from_store(cfg.gnn, cfg.lm, outcome.best.clone())?;
    save_model(&out.join("best.ckpt"), &best)?;
    save_model(&out.join("final.ckpt"), &outcome.model)?;
    write_atomic(&out.join("train_report.txt"), render_train_report(&outcome.report).as_bytes())?;
    Ok(vec![format!(
        "trained {} steps in {:.0}s; best val {:.4} at step {}; checkpoints in {}",
        cfg.steps,
        start.elapsed().as_secs_f64(),
        outcome.report.best_val,
        outcome.report.best_step,
        out.display()
    )])
}

fn inference_config(s: &Settings) -> InferenceConfig {
    InferenceConfig { delta: s.delta, loop_bound: s.loop_bound, count_infeasible: false }
}

fn run_inference(s: &Settings) -> Result<InferenceResult, CliError> {
    let ckpt = s.checkpoint.clone().ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let model = load_model(&ckpt)?;
    let corpus = load_corpus(&s.require_data_dir()?)?;
    let infer = inference_config(s);
    let mut generator = ModelGenerator::new(&model, s.decode, s.seed.unwrap_or(0));
    let print = fingerprint(&model, s.decode, &infer);
    Ok(run_targeted_inference(&mut generator, &split_targets(&corpus, s.split), &infer, &print)?)
}

#[derive(serde::Serialize)]
struct OutcomeLine<'a> {
    program: &'a str,
    target_branch_id: u64,
    generated: &'a str,
    parse_ok: bool,
    outcome: Option<&'static str>,
    executed_branch_ids: Vec<u64>,
    passed: bool,
}

fn write_suites(out: &Path, result: &InferenceResult, dump_traces: bool) -> Result<(), CliError> {
    let mut lines = String::from("{\"format_version\":1}\n");
    for (b, o) in &result.scored {
        let line = OutcomeLine {
            program: &o.program,
            target_branch_id: b.branch_id,
            generated: &o.generated,
            parse_ok: o.parse_ok,
            outcome: o.trace.as_ref().map(|t| t.outcome.as_str()),
            executed_branch_ids: o.executed_branch_ids.iter().copied().collect(),
            passed: o.passed,
        };
        lines.push_str(&serde_json::to_string(&line).expect("plain struct"));
        lines.push('\n');
        if let (true, Some(t)) = (dump_traces, &o.trace) {
            write_atomic(&out.join("traces").join(&o.program).join(format!("{:016x}.trace", b.branch_id)), write_trace(t).as_bytes())?;
        }
    }
    write_atomic(&out.join("outcomes.jsonl"), lines.as_bytes())?;
    for (name, suite) in &result.suites {
        let mut text = String::new();
        for o in suite.iter().filter(|o| o.parse_ok) {
            text.push_str(o.generated.trim());
            text.push('\n');
        }
        write_atomic(&out.join("suites").join(format!("{name}.mlt")), text.as_bytes())?;
    }
    Ok(())
}

pub fn infer(s: &Settings) -> Result<Vec<String>, CliError> {
    let out = output_dir(s, "infer")?;
    let result = run_inference(s)?;
    write_suites(&out, &result, s.dump_traces)?;
    Ok(vec![format!("generated {} tests for {} programs into {}", result.scored.len(), result.suites.len(), out.display())])
}

pub fn render_report(r: &EvalReport) -> String {
    let mut out = String::from("format_version: 1\n");
    let _ = writeln!(out, "fingerprint: {}", r.fingerprint);
    let _ = writeln!(out, "branch_acc: {}", r.branch_acc);
    let _ = writeln!(out, "branch_overlap: {}", r.branch_overlap);
    let _ = writeln!(out, "pass_at_1: {}", r.pass_at_1);
    let _ = writeln!(out, "branch_cov: {}", r.branch_cov);
    let _ = writeln!(out, "\nprogram    targets  branch_acc  branch_overlap  pass_at_1  branch_cov");
    for p in &r.per_program {
        let _ = writeln!(
            out,
            "{:<10} {:>7}  {:>10.4}  {:>14.4}  {:>9.4}  {:>10.4}",
            p.program, p.targets, p.branch_acc, p.branch_overlap, p.pass_at_1, p.branch_cov
        );
    }
    out
}

/// Tab-separated per-program series, one column per metric.
pub fn render_plot_data(r: &EvalReport) -> String {
    let mut out = String::from("program\ttargets\tbranch_acc\tbranch_overlap\tpass_at_1\tbranch_cov\n");
    for p in &r.per_program {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", p.program, p.targets, p.branch_acc, p.branch_overlap, p.pass_at_1, p.branch_cov);
    }
    out
}

pub fn eval(s: &Settings) -> Result<Vec<String>, CliError> {
    let out = output_dir(s, "eval")?;
    let result = run_inference(s)?;
    write_suites(&out, &result, s.dump_traces)?;
    let r = &result.report;
    write_atomic(&out.join("report.txt"), render_report(r).as_bytes())?;
    if s.emit_plot_data {
        write_atomic(&out.join("plot.tsv"), render_plot_data(r).as_bytes())?;
    }
    Ok(vec![format!(
        "branch_acc {:.4}  branch_overlap {:.4}  pass_at_1 {:.4}  branch_cov {:.4}  ({} targets)",
        r.branch_acc,
        r.branch_overlap,
        r.pass_at_1,
        r.branch_cov,
        result.scored.len()
    )])
}

pub fn ablate(s: &Settings) -> Result<Vec<String>, CliError> {
    let out = output_dir(s, "ablate")?;
    let corpus = load_corpus(&s.require_data_dir()?)?;
    let base = train_config(s, false);
    let start = std::time::Instant::now();
    let table = run_ablation_matrix(&corpus, &base, &s.seeds, &inference_config(s), |kind, seed, step, loss| {
        if step % base.val_every == 0 {
            eprintln!("{} seed {seed} step {step} loss {loss:.4} ({:.0}s)", kind.as_str(), start.elapsed().as_secs_f64());
        }
    })?;
    let rendered = render_table(&table);
    write_atomic(&out.join("table.txt"), rendered.as_bytes())?;
    let mut runs = String::from("cell seed best_step best_val branch_acc branch_overlap pass_at_1 branch_cov\n");
    for r in &table.runs {
        let e = &r.eval;
        let _ = writeln!(
            runs,
            "{} {} {} {} {} {} {} {}",
            r.kind.as_str(),
            r.seed,
            r.train.best_step,
            r.train.best_val,
            e.branch_acc,
            e.branch_overlap,
            e.pass_at_1,
            e.branch_cov
        );
    }
    write_atomic(&out.join("runs.txt"), runs.as_bytes())?;
    if s.emit_plot_data {
        let mut plot = String::from("axis\trow\tbranch_acc\tbranch_cov\n");
        for c in &table.cells {
            let _ = writeln!(plot, "{}\t{}\t{}\t{}", c.axis, c.row, c.branch_acc, c.branch_cov);
        }
        write_atomic(&out.join("plot.tsv"), plot.as_bytes())?;
    }
    Ok(rendered.lines().map(String::from).collect())
}

fn suite_line(name: &str, ok: bool, detail: String) -> String {
    format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" })
}

fn summarize(name: &str, results: &[CheckResult]) -> (bool, String) {
    let ok = results.iter().all(CheckResult::passed);
    let worst = results.iter().filter_map(|r| r.max_rel_err.as_ref().ok()).fold(0.0f64, |a, &b| a.max(b));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let detail = if failed.is_empty() {
        format!("{} checks, max rel err {worst:.2e}", results.len())
    } else {
        format!("failed {}", failed.join(", "))
    };
    (ok, suite_line(name, ok, detail))
}

/// Gradient, round-trip, metric-oracle and harness suites on a small
/// corpus; one line per suite.
pub fn selfcheck(s: &Settings) -> Result<Vec<String>, CliError> {
    let mut lines = Vec::new();
    let mut failures = 0;
    let mut record = |(ok, line): (bool, String)| {
        failures += usize::from(!ok);
        lines.push(line);
    };
    let cfg = corpus_config(s, s.seed.unwrap_or(CORPUS_SEED), 24);
    let corpus = curate_sources(&cfg, generate_programs(cfg.seed, cfg.programs, &cfg.gen)?)?;

    record(summarize("gradients/primitives", &primitive_checks()));
    record(summarize("gradients/gnn-layer", &gnn_layer_checks()));
    let joint = joint_model_check(&corpus, GnnConfig::default(), LmConfig::default());
    record(summarize("gradients/joint-model", &[joint]));

    let tmp = tempfile::tempdir().map_err(|e| CliError::io("tempdir", e))?;
    record(round_trips(&corpus, tmp.path()));

    let bad = metric_oracle_mismatches(&corpus, 50);
    record((bad.is_empty(), suite_line("metric-oracle", bad.is_empty(), format!("50 randomized sets, {} mismatched", bad.len()))));

    let mut oracle = OracleGenerator::from_corpus(&corpus);
    let mut perfect = true;
    for split in Split::ALL {
        let targets = split_targets(&corpus, split);
        if targets.iter().all(|t| t.feasible.as_ref().is_none_or(|f| f.is_empty())) {
            continue;
        }
        let r = run_targeted_inference(&mut oracle, &targets, &InferenceConfig::default(), "oracle")?.report;
        perfect &= [r.branch_acc, r.branch_overlap, r.pass_at_1, r.branch_cov] == [1.0; 4];
    }
    record((perfect, suite_line("harness-oracle", perfect, "curated tests replayed on every split".into())));

    if failures > 0 {
        for l in &lines {
            println!("{l}");
        }
        return Err(CliError::SelfCheckFailed(failures));
    }
    Ok(lines)
}

fn round_trips(corpus: &branchforge_core::corpus::Corpus, dir: &Path) -> (bool, String) {
    let mut problems = Vec::new();
    for p in &corpus.programs {
        let printed = pretty_print_program(&p.ast);
        match Program::parse(p.name(), printed.clone()) {
            Ok(q) if q.ast.structurally_eq(&p.ast) && pretty_print_program(&q.ast) == printed => {}
            _ => problems.push(format!("source {}", p.name())),
        }
    }
    for (p, g) in corpus.programs.iter().zip(&corpus.cpgs) {
        if read_cpg(&write_cpg(g)).ok().as_ref() != Some(g) {
            problems.push(format!("cpg {}", p.name()));
        }
        for &x in &g.features {
            if parse_hex_f64(&hex_f64(x)).map(f64::to_bits) != Some(x.to_bits()) {
                problems.push("hex float".into());
                break;
            }
        }
    }
    let sources: Vec<_> = corpus.programs.iter().map(|p| p.source.clone()).collect();
    let saved = save_sources(dir, corpus.manifest.seed, &sources).and_then(|_| save_corpus(dir, corpus));
    match saved.and_then(|_| load_corpus(dir)) {
        Ok(back) if back.records == corpus.records && back.manifest == corpus.manifest && back.splits == corpus.splits => {}
        _ => problems.push("dataset".into()),
    }
    let tiny = GnnConfig { layers: 1, d_h: 8, heads: 2, ..GnnConfig::default() };
    let lm = LmConfig { layers: 1, d_model: 8, heads: 2, d_ff: 16, d_graph: 8, ..LmConfig::default() };
    let ckpt = dir.join("m.ckpt");
    match Model::init(tiny, lm, 3) {
        Ok(m) => match save_model(&ckpt, &m).and_then(|_| load_model(&ckpt)) {
            Ok(back) if back == m => {}
            _ => problems.push("checkpoint".into()),
        },
        Err(_) => problems.push("checkpoint init".into()),
    }
    let ok = problems.is_empty();
    let detail = if ok {
        format!("{} programs, graphs, dataset, checkpoint", corpus.programs.len())
    } else {
        format!("mismatch in {}", problems.join(", "))
    };
    (ok, suite_line("round-trip", ok, detail))
}
