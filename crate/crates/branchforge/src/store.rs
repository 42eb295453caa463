//! Data-directory layout, atomic writes, and corpus/checkpoint loading.
//!
//! ```text
//! <data-dir>/programs/index.txt   generation order and seed
//! <data-dir>/programs/<name>.ml   program sources
//! <data-dir>/splits.txt           program -> split
//! <data-dir>/manifest.txt         corpus summary
//! <data-dir>/dataset.jsonl        one record per line
//! <data-dir>/cpg/<name>.cpg       serialized graphs (build-cpg)
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use branchforge_core::corpus::{invocation_hint, render_prompt, Corpus, CorpusManifest, DatasetRecord, Split};
use branchforge_core::cpg::{build_cpg, derive_branch_mask};
use branchforge_core::exec::{execute, Branch, DEFAULT_STEP_LIMIT};
use branchforge_core::frontend::{parse_test, Program, SourceProgram};
use branchforge_core::train::Model;

use crate::error::CliError;
use crate::formats::{
    model_config_entries, model_config_from_entries, read_checkpoint, read_header_file, read_records, rle_encode, write_checkpoint,
    write_header_file, write_records, RecordLine,
};

pub const PROGRAMS_DIR: &str = "programs";
pub const INDEX_FILE: &str = "programs/index.txt";
pub const SPLITS_FILE: &str = "splits.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CPG_DIR: &str = "cpg";

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::DataNotFound(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn save_sources(dir: &Path, seed: u64, sources: &[SourceProgram]) -> Result<(), CliError> {
    let mut entries = vec![("seed".to_string(), seed.to_string()), ("count".to_string(), sources.len().to_string())];
    for sp in sources {
        write_atomic(&dir.join(PROGRAMS_DIR).join(format!("{}.ml", sp.name)), sp.text.as_bytes())?;
        entries.push(("program".into(), sp.name.clone()));
    }
    write_atomic(&dir.join(INDEX_FILE), write_header_file(&entries).as_bytes())
}

/// Programs in generation order, with the seed they were generated from.
pub fn load_sources(dir: &Path) -> Result<(u64, Vec<SourceProgram>), CliError> {
    let index = read_header_file("program index", &read_text(&dir.join(INDEX_FILE))?)?;
    let mut seed = None;
    let mut sources = Vec::new();
    for (k, v) in index {
        match k.as_str() {
            "seed" => seed = v.parse().ok(),
            "program" => {
                let text = read_text(&dir.join(PROGRAMS_DIR).join(format!("{v}.ml")))?;
                sources.push(SourceProgram::new(v, text));
            }
            _ => {}
        }
    }
    let seed = seed.ok_or_else(|| CliError::Corrupt("program index has no seed".into()))?;
    Ok((seed, sources))
}

pub fn record_line(r: &DatasetRecord) -> RecordLine {
    RecordLine {
        id: r.id,
        program: r.program_ref.clone(),
        prompt: r.prompt_text.clone(),
        branch_id: r.branch.branch_id,
        line_path: r.line_path.clone(),
        mask: rle_encode(&r.mask.bits),
        test_source: r.test.source_text.clone(),
        split: r.split.as_str().into(),
    }
}

fn manifest_entries(m: &CorpusManifest) -> Vec<(String, String)> {
    let mut e = vec![
        ("seed".to_string(), m.seed.to_string()),
        ("program_count".into(), m.program_count.to_string()),
        ("record_count".into(), m.record_count.to_string()),
    ];
    for s in Split::ALL {
        e.push((format!("split.{}", s.as_str()), m.split_counts[s as usize].to_string()));
    }
    e.push(("infeasible_count".into(), m.infeasible_count.to_string()));
    for (k, v) in &m.generation_config {
        e.push((format!("gen.{k}"), v.clone()));
    }
    e
}

fn parse_manifest(entries: &[(String, String)]) -> Result<CorpusManifest, CliError> {
    let map: BTreeMap<&str, &str> = entries.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let num = |k: &str| -> Result<usize, CliError> {
        map.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::Corrupt(format!("manifest lacks {k}")))
    };
    let mut split_counts = [0; 3];
    for s in Split::ALL {
        split_counts[s as usize] = num(&format!("split.{}", s.as_str()))?;
    }
    Ok(CorpusManifest {
        seed: num("seed")? as u64,
        program_count: num("program_count")?,
        record_count: num("record_count")?,
        split_counts,
        infeasible_count: num("infeasible_count")?,
        generation_config: entries.iter().filter_map(|(k, v)| k.strip_prefix("gen.").map(|k| (k.to_string(), v.clone()))).collect(),
    })
}

/// Dataset, manifest and split assignment of a curated corpus.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<(), CliError> {
    let lines: Vec<RecordLine> = corpus.records.iter().map(record_line).collect();
    write_atomic(&dir.join(DATASET_FILE), write_records(&lines).as_bytes())?;
    write_atomic(&dir.join(MANIFEST_FILE), write_header_file(&manifest_entries(&corpus.manifest)).as_bytes())?;
    let splits: Vec<(String, String)> = corpus.programs.iter().zip(&corpus.splits).map(|(p, s)| (p.name().to_string(), s.as_str().to_string())).collect();
    write_atomic(&dir.join(SPLITS_FILE), write_header_file(&splits).as_bytes())
}

/// Reads a curated corpus back, re-executing every stored test to recover
/// its branch and checking the stored path, mask and prompt against it.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    let (_, sources) = load_sources(dir)?;
    let manifest = parse_manifest(&read_header_file("manifest", &read_text(&dir.join(MANIFEST_FILE))?)?)?;
    let split_of: BTreeMap<String, String> = read_header_file("splits", &read_text(&dir.join(SPLITS_FILE))?)?.into_iter().collect();
    let mut programs = Vec::with_capacity(sources.len());
    let mut cpgs = Vec::with_capacity(sources.len());
    let mut splits = Vec::with_capacity(sources.len());
    for sp in sources {
        let split = split_of
            .get(&sp.name)
            .and_then(|s| Split::parse(s))
            .ok_or_else(|| CliError::Corrupt(format!("no split for program {}", sp.name)))?;
        let p = Program::parse(sp.name, sp.text).map_err(|e| CliError::Corrupt(e.to_string()))?;
        cpgs.push(build_cpg(&p));
        programs.push(p);
        splits.push(split);
    }
    let lines = read_records(&read_text(&dir.join(DATASET_FILE))?)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut hints = BTreeMap::new();
    for l in lines {
        let bad = |why: &str| CliError::Corrupt(format!("record {}: {why}", l.id));
        let pi = programs.iter().position(|p| p.name() == l.program).ok_or_else(|| bad("unknown program"))?;
        let (program, cpg) = (&programs[pi], &cpgs[pi]);
        let test = parse_test(&l.test_source).map_err(|_| bad("test does not parse"))?;
        let trace = execute(program, &test, DEFAULT_STEP_LIMIT).map_err(|_| bad("test does not fit its program"))?;
        let branch = Branch::from_events(&trace.events).map_err(|_| bad("test executes nothing"))?;
        if branch.branch_id != l.branch_id {
            return Err(bad("test takes another branch"));
        }
        let line_path = branch.line_path(cpg);
        if line_path != l.line_path {
            return Err(bad("line path differs"));
        }
        let mask = derive_branch_mask(cpg, &branch.line_set).map_err(|e| bad(&e.to_string()))?;
        if rle_encode(&mask.bits) != l.mask {
            return Err(bad("mask differs"));
        }
        let hint = hints.entry(pi).or_insert_with(|| invocation_hint(program));
        if render_prompt(program, cpg, &branch, mask.is_available(), hint) != l.prompt {
            return Err(bad("prompt differs"));
        }
        let split = Split::parse(&l.split).ok_or_else(|| bad("unknown split"))?;
        records.push(DatasetRecord { id: l.id, program_ref: l.program, prompt_text: l.prompt, branch, line_path, mask, test, split });
    }
    if records.len() != manifest.record_count {
        return Err(CliError::Corrupt(format!("manifest lists {} records, dataset holds {}", manifest.record_count, records.len())));
    }
    Ok(Corpus { manifest, programs, cpgs, splits, records })
}

pub fn save_model(path: &Path, model: &Model) -> Result<(), CliError> {
    let cfg = model_config_entries(&model.gnn_cfg, &model.lm_cfg);
    write_atomic(path, write_checkpoint(&model.store, &cfg).as_bytes())
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.is_file() {
        return Err(CliError::CheckpointNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (store, cfg) = read_checkpoint(&text)?;
    let (gnn, lm) = model_config_from_entries(&cfg).map_err(|e| CliError::Corrupt(format!("checkpoint config: {e}")))?;
    Ok(Model::from_store(gnn, lm, store)?)
}

pub fn cpg_path(dir: &Path, program: &str) -> PathBuf {
    dir.join(CPG_DIR).join(format!("{program}.cpg"))
}
