//! Encoder-structure and branch-embedding ablations.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{Corpus, Split};
use crate::gnn::{BranchAgg, Variant};
use crate::lm::DecodeMode;
use crate::train::{train_with, Model, TrainConfig, TrainReport};

use super::{fingerprint, run_targeted_inference, split_targets, EvalError, EvalReport, InferenceConfig, ModelGenerator};

/// One trained configuration. Four trainings fill the five table cells,
/// since attention with node stacking sits on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellKind {
    AttentionNode,
    MeanNode,
    TextOnly,
    AttentionPool,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::AttentionNode, CellKind::MeanNode, CellKind::TextOnly, CellKind::AttentionPool];

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::AttentionNode => "attention-node",
            CellKind::MeanNode => "mean-node",
            CellKind::TextOnly => "ft",
            CellKind::AttentionPool => "attention-pool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CellKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// `base` with this cell's encoder settings.
    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let (variant, agg) = match self {
            CellKind::AttentionNode => (Variant::Attention, BranchAgg::NodeStack),
            CellKind::MeanNode => (Variant::MeanSample, BranchAgg::NodeStack),
            CellKind::TextOnly => return base.text_only(),
            CellKind::AttentionPool => (Variant::Attention, BranchAgg::GraphPool),
        };
        let mut cfg = *base;
        cfg.gnn.variant = variant;
        cfg.gnn.branch_agg = agg;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub kind: CellKind,
    pub seed: u64,
    pub train: TrainReport,
    pub eval: EvalReport,
}

/// A row of the table: seed-mean held-out metrics of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub axis: &'static str,
    pub row: &'static str,
    pub kind: CellKind,
    pub branch_acc: f64,
    pub branch_cov: f64,
    pub per_seed_acc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    /// Assembles the five cells from finished runs.
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<AblationRun>) -> Self {
        let layout: [(&'static str, &'static str, CellKind); 5] = [
            ("structure", "attention", CellKind::AttentionNode),
            ("structure", "mean", CellKind::MeanNode),
            ("structure", "none", CellKind::TextOnly),
            ("embedding", "node", CellKind::AttentionNode),
            ("embedding", "pool", CellKind::AttentionPool),
        ];
        let cells = layout
            .into_iter()
            .map(|(axis, row, kind)| {
                let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.kind == kind).collect();
                let n = mine.len().max(1) as f64;
                AblationCell {
                    axis,
                    row,
                    kind,
                    branch_acc: mine.iter().map(|r| r.eval.branch_acc).sum::<f64>() / n,
                    branch_cov: mine.iter().map(|r| r.eval.branch_cov).sum::<f64>() / n,
                    per_seed_acc: mine.iter().map(|r| r.eval.branch_acc).collect(),
                }
            })
            .collect();
        AblationTable { seeds, runs, cells }
    }

    pub fn mean_acc(&self, kind: CellKind) -> Option<f64> {
        self.cells.iter().find(|c| c.kind == kind).map(|c| c.branch_acc)
    }

    pub fn mean_cov(&self, kind: CellKind) -> Option<f64> {
        self.cells.iter().find(|c| c.kind == kind).map(|c| c.branch_cov)
    }
}

/// Trains one configuration and scores the best-validation checkpoint on
/// the test split with greedy decoding.
pub fn run_cell<F: FnMut(usize, f64)>(
    corpus: &Corpus,
    kind: CellKind,
    base: &TrainConfig,
    seed: u64,
    infer: &InferenceConfig,
    progress: F,
) -> Result<(AblationRun, Model), EvalError> {
    let cfg = TrainConfig { seed, ..kind.config(base) };
    let out = train_with(corpus, &cfg, progress)?;
    let model = Model::from_store(cfg.gnn, cfg.lm, out.best)?;
    let mode = DecodeMode::Greedy;
    let mut generator = ModelGenerator::new(&model, mode, seed);
    let targets = split_targets(corpus, Split::Test);
    let print = fingerprint(&model, mode, infer);
    let result = run_targeted_inference(&mut generator, &targets, infer, &print)?;
    Ok((AblationRun { kind, seed, train: out.report, eval: result.report }, model))
}

/// Every cell for every seed. `progress` sees the cell, the seed, and
/// each training step with its loss.
pub fn run_ablation_matrix<F: FnMut(CellKind, u64, usize, f64)>(
    corpus: &Corpus,
    base: &TrainConfig,
    seeds: &[u64],
    infer: &InferenceConfig,
    mut progress: F,
) -> Result<AblationTable, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::InvalidConfig("at least one seed"));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        for kind in CellKind::ALL {
            let (run, _) = run_cell(corpus, kind, base, seed, infer, |s, l| progress(kind, seed, s, l))?;
            runs.push(run);
        }
    }
    Ok(AblationTable::from_runs(seeds.to_vec(), runs))
}

/// Plain-text rendering of the table.
pub fn render_table(table: &AblationTable) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "axis       row        branch_acc  branch_cov  per_seed_acc");
    for c in &table.cells {
        let per: Vec<String> = c.per_seed_acc.iter().map(|a| alloc::format!("{a:.4}")).collect();
        let _ = writeln!(s, "{:<10} {:<10} {:<11.4} {:<11.4} {}", c.axis, c.row, c.branch_acc, c.branch_cov, per.join(" "));
    }
    s
}
