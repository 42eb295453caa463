//! The joint model: graph encoder (absent for the text-only baseline) and
//! language model sharing one parameter store.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{without_graph, Corpus, DatasetRecord};
use crate::cpg::{BranchMask, Cpg};
use crate::gnn::{gnn_forward, GnnConfig, GnnParams, Variant};
use crate::lm::{decode, encode_prompt, lm_forward, training_loss, DecodeMode, LmConfig, LmParams, PromptEncoding, Vocab};
use crate::numerics::{ParameterStore, Tape, Var};

use super::TrainError;

const GNN_SALT: u64 = 0x6e6e_0001;
const LM_SALT: u64 = 0x1a4e_0002;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocab: Vocab,
    pub gnn_cfg: GnnConfig,
    pub lm_cfg: LmConfig,
    pub store: ParameterStore,
    pub gnn: Option<GnnParams>,
    pub lm: LmParams,
}

/// One training example: an encoded prompt with target plus where to find
/// its graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub record_id: usize,
    pub program: usize,
    pub enc: PromptEncoding,
    pub mask: BranchMask,
}

impl Model {
    /// Fresh parameters. Encoder and LM draw from separate streams, so the
    /// LM initialization is the same with or without a graph encoder.
    pub fn init(gnn_cfg: GnnConfig, lm_cfg: LmConfig, seed: u64) -> Result<Self, TrainError> {
        let vocab = Vocab::new();
        let mut store = ParameterStore::new();
        let gnn = if gnn_cfg.variant == Variant::None {
            None
        } else {
            if gnn_cfg.d_h != lm_cfg.d_graph {
                return Err(TrainError::InvalidConfig("gnn d_h must equal lm d_graph"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ GNN_SALT);
            Some(GnnParams::init(&gnn_cfg, &mut store, &mut rng)?)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LM_SALT);
        let lm = LmParams::init(&lm_cfg, vocab.len(), &mut store, &mut rng)?;
        Ok(Model { vocab, gnn_cfg, lm_cfg, store, gnn, lm })
    }

    /// Rebinds a loaded store.
    pub fn from_store(gnn_cfg: GnnConfig, lm_cfg: LmConfig, store: ParameterStore) -> Result<Self, TrainError> {
        let gnn = if gnn_cfg.variant == Variant::None {
            None
        } else {
            Some(GnnParams::from_store(&gnn_cfg, &store)?)
        };
        let lm = LmParams::from_store(&lm_cfg, &store)?;
        let expected = gnn.as_ref().map_or(0, |g| g.all_ids().len()) + store.names().filter(|n| n.starts_with("lm.")).count();
        if expected != store.len() {
            return Err(TrainError::InvalidConfig("checkpoint holds parameters the config does not use"));
        }
        Ok(Model { vocab: Vocab::new(), gnn_cfg, lm_cfg, store, gnn, lm })
    }

    /// True for the text-only baseline.
    pub fn is_text_only(&self) -> bool {
        self.gnn.is_none()
    }

    /// Prompt as seen by this model: the graph section is dropped when
    /// there is no encoder.
    pub fn view_prompt(&self, prompt: &str) -> String {
        if self.is_text_only() {
            without_graph(prompt)
        } else {
            String::from(prompt)
        }
    }

    pub fn example(&self, corpus: &Corpus, record: &DatasetRecord) -> Result<Example, TrainError> {
        let program = corpus
            .program_index(&record.program_ref)
            .ok_or(TrainError::InvalidConfig("record refers to an unknown program"))?;
        let enc = encode_prompt(&self.vocab, &self.view_prompt(&record.prompt_text), Some(&record.test.source_text))?;
        Ok(Example { record_id: record.id, program, enc, mask: record.mask.clone() })
    }

    /// Branch embedding on `tape`, or `None` on the fallback path.
    pub fn graph_rows(&self, tape: &mut Tape, cpg: &Cpg, mask: &BranchMask, slots: usize) -> Result<Option<Var>, TrainError> {
        match &self.gnn {
            Some(g) if slots > 0 && mask.is_available() => {
                Ok(Some(gnn_forward(tape, &self.store, g, &self.gnn_cfg, cpg, mask)?))
            }
            _ => Ok(None),
        }
    }

    /// Masked cross-entropy of one example.
    pub fn example_loss(&self, tape: &mut Tape, cpgs: &[Cpg], ex: &Example) -> Result<Var, TrainError> {
        let e_b = self.graph_rows(tape, &cpgs[ex.program], &ex.mask, ex.enc.graph_slot_positions.len())?;
        let logits = lm_forward(tape, &self.store, &self.lm, &self.lm_cfg, &ex.enc, e_b)?;
        Ok(training_loss(tape, &ex.enc, logits)?)
    }

    /// Decodes a test for a rendered prompt (which must match the mask's
    /// availability). Returns the generated text.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        &self,
        prompt: &str,
        cpg: &Cpg,
        mask: &BranchMask,
        mode: DecodeMode,
        max_new: usize,
        seed: u64,
    ) -> Result<String, TrainError> {
        let enc = encode_prompt(&self.vocab, &self.view_prompt(prompt), None)?;
        let mut tape = Tape::new();
        let rows = self.graph_rows(&mut tape, cpg, mask, enc.graph_slot_positions.len())?;
        let e_b: Option<Vec<f64>> = rows.map(|r| tape.value(r).to_vec());
        let ids = decode(&self.store, &self.lm, &self.lm_cfg, &enc, e_b.as_deref(), mode, max_new, seed)?;
        Ok(self.vocab.decode(&ids))
    }
}
