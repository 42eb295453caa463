use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::corpus::{curate, without_graph, CorpusConfig, DatasetRecord};
use crate::cpg::BranchMask;
use crate::lm::{DecodeMode, DEFAULT_MAX_NEW};

fn small_corpus() -> Corpus {
    curate(&CorpusConfig { programs: 12, ..CorpusConfig::default() }).unwrap()
}

fn tiny(variant: Variant) -> TrainConfig {
    let d = 16;
    TrainConfig {
        steps: 20,
        batch_size: 2,
        lr: 3e-3,
        val_every: 10,
        gnn: GnnConfig { layers: 2, d_h: d, heads: 2, variant, ..GnnConfig::default() },
        lm: LmConfig { layers: 1, d_model: d, heads: 2, d_ff: 32, d_graph: d, ..LmConfig::default() },
        ..TrainConfig::default()
    }
}

/// Corpus reduced to one training record (also used for validation).
fn single_record(corpus: &Corpus) -> Corpus {
    let mut c = corpus.clone();
    let r = c.records.iter().find(|r| r.split == Split::Train).unwrap().clone();
    c.records = vec![r];
    c
}

fn is_gnn(store: &ParameterStore, id: crate::numerics::ParamId) -> bool {
    store.name(id).starts_with("gnn.")
}

#[test]
fn overfits_one_record() {
    let c = single_record(&small_corpus());
    for variant in [Variant::Attention, Variant::None] {
        let cfg = TrainConfig { steps: 150, batch_size: 1, ..tiny(variant) };
        let out = train(&c, &cfg).unwrap();
        let l = &out.report.train_loss;
        assert!(l[l.len() - 1] <= 0.1 * l[0], "{variant:?}: {} -> {}", l[0], l[l.len() - 1]);
        let r = &c.records[0];
        let p = c.program_index(&r.program_ref).unwrap();
        let text = out.model.generate(&r.prompt_text, &c.cpgs[p], &r.mask, DecodeMode::Greedy, DEFAULT_MAX_NEW, 0).unwrap();
        assert_eq!(text, r.test.source_text);
    }
}

#[test]
fn huge_decay_shrinks_norm_every_step() {
    let cfg = tiny(Variant::Attention);
    let mut m = Model::init(cfg.gnn, cfg.lm, 1).unwrap();
    let adam = AdamConfig { lr: 1e-2, weight_decay: 1.0, ..AdamConfig::default() };
    let mut prev = m.store.norm();
    for _ in 0..20 {
        m.store.zero_grads();
        adam_step(&mut m.store, &adam);
        let n = m.store.norm();
        assert!(n < prev);
        prev = n;
    }
}

#[test]
fn same_seed_same_checkpoint() {
    let c = small_corpus();
    let cfg = tiny(Variant::MeanSample);
    let a = train(&c, &cfg).unwrap();
    let b = train(&c, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    for id in a.model.store.ids() {
        let (x, y) = (&a.model.store.value(id).data, &b.model.store.value(id).data);
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert!(a.report.train_loss.iter().all(|l| l.is_finite()));
    assert_eq!(a.report.val_loss.len(), 2);
    let c2 = train(&c, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.report.train_loss, c2.report.train_loss);
}

fn unavailable(r: &DatasetRecord) -> DatasetRecord {
    DatasetRecord {
        prompt_text: without_graph(&r.prompt_text),
        mask: BranchMask::from_bits(vec![false; r.mask.bits.len()]),
        ..r.clone()
    }
}

#[test]
fn gnn_gradients_partition_by_mask_availability() {
    let c = small_corpus();
    let cfg = tiny(Variant::Attention);
    let mut m = Model::init(cfg.gnn, cfg.lm, 2).unwrap();
    let recs: Vec<&DatasetRecord> = c.records.iter().take(3).collect();

    let plain: Vec<Example> = recs.iter().map(|r| m.example(&c, &unavailable(r)).unwrap()).collect();
    m.store.zero_grads();
    accumulate_batch(&mut m, &c.cpgs, &plain.iter().collect::<Vec<_>>(), 1).unwrap();
    let ids: Vec<_> = m.store.ids().collect();
    for &id in &ids {
        if is_gnn(&m.store, id) {
            assert!(m.store.grad(id).iter().all(|&g| g == 0.0), "{}", m.store.name(id));
        } else if m.store.name(id) == "lm.out" {
            assert!(m.store.grad(id).iter().any(|&g| g != 0.0));
        }
    }

    let mut mixed = plain.clone();
    mixed[1] = m.example(&c, recs[1]).unwrap();
    m.store.zero_grads();
    accumulate_batch(&mut m, &c.cpgs, &mixed.iter().collect::<Vec<_>>(), 1).unwrap();
    let first = m.store.id("gnn.l0.self").unwrap();
    assert!(m.store.grad(first).iter().any(|&g| g != 0.0));
    let w = m.store.id("gnn.l0.ast.w").unwrap();
    assert!(m.store.grad(w).iter().any(|&g| g != 0.0));
}

#[test]
fn text_only_model_has_no_encoder_parameters() {
    let cfg = tiny(Variant::Attention);
    let full = Model::init(cfg.gnn, cfg.lm, 3).unwrap();
    let ft_cfg = cfg.text_only();
    let ft = Model::init(ft_cfg.gnn, ft_cfg.lm, 3).unwrap();
    assert!(ft.is_text_only());
    assert!(ft.store.names().all(|n| !n.starts_with("gnn.")));
    assert_eq!(ft.vocab, full.vocab);
    let lm_shapes = |m: &Model| -> Vec<(alloc::string::String, Vec<usize>)> {
        m.store.ids().filter(|&i| m.store.name(i).starts_with("lm.")).map(|i| (m.store.name(i).into(), m.store.value(i).shape.clone())).collect()
    };
    assert_eq!(lm_shapes(&full), lm_shapes(&ft));
    // separate streams: identical LM initialization
    for id in ft.store.ids() {
        let fid = full.store.id(ft.store.name(id)).unwrap();
        assert_eq!(ft.store.value(id), full.store.value(fid));
    }
    let c = small_corpus();
    let ex = ft.example(&c, &c.records[0]).unwrap();
    assert!(ex.enc.graph_slot_positions.is_empty());
}

#[test]
fn from_store_checks_parameter_set() {
    let cfg = tiny(Variant::Attention);
    let full = Model::init(cfg.gnn, cfg.lm, 4).unwrap();
    let again = Model::from_store(cfg.gnn, cfg.lm, full.store.clone()).unwrap();
    assert_eq!(again, full);
    let ft = cfg.text_only();
    assert!(matches!(Model::from_store(ft.gnn, ft.lm, full.store.clone()), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn non_finite_loss_names_the_record() {
    let c = single_record(&small_corpus());
    let cfg = tiny(Variant::None);
    let mut m = Model::init(cfg.gnn, cfg.lm, 5).unwrap();
    let out = m.store.id("lm.out").unwrap();
    m.store.value_mut(out).data[0] = f64::NAN;
    let ex = m.example(&c, &c.records[0]).unwrap();
    let err = accumulate_batch(&mut m, &c.cpgs, &[&ex], 7).unwrap_err();
    assert_eq!(err, TrainError::NonFiniteLoss { record: c.records[0].id, step: 7 });
}

#[test]
fn config_validation() {
    let c = small_corpus();
    assert!(train(&c, &TrainConfig { steps: 0, ..tiny(Variant::None) }).is_err());
    assert!(train(&c, &TrainConfig { weight_decay: -1.0, ..tiny(Variant::None) }).is_err());
    let mut empty = c.clone();
    empty.records.retain(|r| r.split != Split::Train);
    assert_eq!(train(&empty, &tiny(Variant::None)).unwrap_err(), TrainError::EmptyDataset("train"));
}
