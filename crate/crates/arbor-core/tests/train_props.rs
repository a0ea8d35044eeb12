//! End-to-end properties of the training loops: finite-difference checks
//! through the whole model, learnability of the synthetic task, checkpoint
//! round-trips, attention-mass accounting, and op-count scaling ratios.

use arbor_core::model::{FloatWidth, ModelConfig, TaskKind, TreeModel, Vocab};
use arbor_core::train::{
    attention_mass_stats, bench_accumulation, build_vocabs, evaluate_accuracy, grad_check_model,
    make_synthetic_dataset, train_classifier, LabelMap, TrainPlan,
};
use arbor_core::treebank::{parse_bracketed, LabeledTrees};

fn check_cfg() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_ffn: 16,
        layers_enc: 1,
        heads: 2,
        table_rows: 6,
        float_width: FloatWidth::F64,
        seed: 5,
        ..ModelConfig::default()
    }
}

// ---------------------------------------------------------------------------
// gradient checks through the training entry point
// ---------------------------------------------------------------------------

#[test]
fn classifier_gradients_match_finite_differences() {
    let fixture = parse_bracketed("(A (B x y) (C z (D w v)))").unwrap();
    let report = grad_check_model(&check_cfg(), &fixture).unwrap();
    assert!(report.passed());
    assert!(
        report.max_rel_err < 1e-5,
        "max relative error {}",
        report.max_rel_err
    );
}

#[test]
fn seq2seq_gradients_match_finite_differences() {
    let mut cfg = check_cfg();
    cfg.task = TaskKind::Seq2seq;
    cfg.layers_dec = 1;
    let fixture = parse_bracketed("(S (NP a) (VP b c))").unwrap();
    let report = grad_check_model(&cfg, &fixture).unwrap();
    assert!(report.passed());
    assert!(
        report.max_rel_err < 1e-5,
        "max relative error {}",
        report.max_rel_err
    );
}

#[test]
fn gradients_survive_the_ablation_toggles() {
    let fixture = parse_bracketed("(A (B x y) (C z))").unwrap();
    for (hier, mask) in [(false, true), (true, false), (false, false)] {
        let mut cfg = check_cfg();
        cfg.use_hier_embeddings = hier;
        cfg.use_subtree_mask = mask;
        let report = grad_check_model(&cfg, &fixture).unwrap();
        assert!(
            report.passed(),
            "hier={hier} mask={mask}: worst {:?}",
            report.worst
        );
    }
}

// ---------------------------------------------------------------------------
// learning
// ---------------------------------------------------------------------------

#[test]
fn the_synthetic_task_is_learnable_at_desk_scale() {
    let train = make_synthetic_dataset(11, 240, 2).unwrap();
    let dev = make_synthetic_dataset(12, 60, 2).unwrap();
    let cfg = ModelConfig {
        d: 32,
        d_ffn: 64,
        layers_enc: 2,
        heads: 4,
        table_rows: 10,
        seed: 9,
        ..ModelConfig::default()
    };
    let plan = TrainPlan {
        lr: 2e-3,
        warmup: 30,
        max_updates: 300,
        batch_tokens: 256,
        dropout: 0.0,
        eval_every: 30,
        seed: 13,
        ..TrainPlan::default()
    };
    let (_, _, report) = train_classifier::<f32>(&cfg, &plan, &train, &dev).unwrap();
    let best = report.best_dev_accuracy.expect("dev set given");
    assert!(
        best >= 0.9,
        "best dev accuracy {best}, trajectory {:?}",
        report.evals
    );
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[test]
fn trained_checkpoints_reload_and_evaluate_identically() {
    use arbor_core::model::{load_checkpoint, save_checkpoint, CheckpointInfo};

    let corpus = make_synthetic_dataset(3, 24, 1).unwrap();
    let cfg = ModelConfig {
        d: 16,
        d_ffn: 32,
        layers_enc: 1,
        heads: 2,
        table_rows: 6,
        seed: 2,
        ..ModelConfig::default()
    };
    let plan = TrainPlan {
        lr: 1e-3,
        warmup: 5,
        max_updates: 20,
        batch_tokens: 64,
        dropout: 0.1,
        eval_every: 10,
        seed: 3,
        ..TrainPlan::default()
    };
    let (model, labels, report) = train_classifier::<f32>(&cfg, &plan, &corpus, &corpus).unwrap();
    let acc = evaluate_accuracy(&model, &labels, &corpus).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.arbc");
    let info = CheckpointInfo {
        step: report.best_update as u64,
        seed: plan.seed,
        metrics: vec![("dev_accuracy".to_string(), acc)],
    };
    save_checkpoint(&path, &model, &info).unwrap();

    let (loaded, back) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back.step, report.best_update as u64);
    let restored_labels = LabelMap::from_class_vocab(&loaded.vocabs.targets).unwrap();
    assert_eq!(restored_labels, labels);
    assert_eq!(evaluate_accuracy(&loaded, &restored_labels, &corpus).unwrap(), acc);
    for ex in &corpus {
        let a = model.classify(&ex.trees).unwrap();
        let b = loaded.classify(&ex.trees).unwrap();
        assert_eq!(a.data(), b.data(), "logits changed across the round trip");
    }
}

// ---------------------------------------------------------------------------
// attention mass for sequence models
// ---------------------------------------------------------------------------

#[test]
fn cross_attention_masses_sum_to_one_for_sequence_models() {
    let tree = parse_bracketed("(S (NP a) (VP b c))").unwrap();
    let corpus = vec![LabeledTrees {
        label: "unused".to_string(),
        trees: vec![tree],
    }];
    let mut cfg = ModelConfig {
        d: 16,
        d_ffn: 32,
        layers_enc: 1,
        heads: 2,
        table_rows: 6,
        seed: 4,
        ..ModelConfig::default()
    };
    cfg.task = TaskKind::Seq2seq;
    cfg.layers_dec = 2;
    let mut vocabs = build_vocabs(&cfg, &corpus).unwrap();
    vocabs.targets = Vocab::build(["y", "z"]);
    let model = TreeModel::<f32>::build(cfg, vocabs).unwrap();
    let mass = attention_mass_stats(&model, &corpus).unwrap();
    assert!((mass.node_mass + mass.leaf_mass - 1.0).abs() < 1e-9);
    // one probe row per decoder layer per head
    assert_eq!(mass.query_rows, 4);
    // the fixture has 3 internal nodes over 3 leaves
    assert!((mass.node_count_share - 0.5).abs() < 1e-12);
}

// ---------------------------------------------------------------------------
// scaling
// ---------------------------------------------------------------------------

#[test]
fn doubling_leaves_doubles_accumulation_and_quadruples_layer_work() {
    let report = bench_accumulation(&[128, 256, 512], 1, 8).unwrap();
    assert_eq!(report.rows.len(), 3);
    for pair in report.rows.windows(2) {
        let accum_ratio = pair[1].accum_ops as f64 / pair[0].accum_ops as f64;
        assert!(
            (2.0..=2.5).contains(&accum_ratio),
            "accumulation doubling ratio {accum_ratio}"
        );
        let layer_ratio = pair[1].layer_ops as f64 / pair[0].layer_ops as f64;
        assert!(
            (3.5..=4.5).contains(&layer_ratio),
            "layer doubling ratio {layer_ratio}"
        );
    }
    assert!(
        report.max_residual < 0.2,
        "n·log n fit residual {}",
        report.max_residual
    );
}
