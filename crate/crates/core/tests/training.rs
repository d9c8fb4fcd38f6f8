//! Training-loop behaviour on tiny models.

use bsnn::analysis::max_sparsity_jump;
use bsnn::formats::io::Dtype;
use bsnn::rnn::{
    iters_per_epoch, load_checkpoint, planned_hyper, prune_to_sparsity, save_checkpoint,
    synthetic_corpus, train, Checkpoint, TrainingConfig,
};
use bsnn::Error;

fn config(kv: &str) -> TrainingConfig {
    let mut cfg = TrainingConfig::default();
    for pair in kv.split_whitespace() {
        let (k, v) = pair.split_once('=').unwrap();
        cfg.set(k, v).unwrap();
    }
    cfg
}

const TINY: &str = "model.hidden=16 model.layers=2 train.epochs=5 train.batch=8 train.seq_len=16";

#[test]
fn same_seed_same_run() {
    let corpus = synthetic_corpus(2, 30_000);
    let cfg = config(&format!("{TINY} prune.enabled=true prune.freq=10"));
    let a = train(&cfg, &corpus).unwrap();
    let b = train(&cfg, &corpus).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.model, b.model);
    let c = train(&config(&format!("{TINY} prune.enabled=true prune.freq=10 train.seed=2")), &corpus).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn dead_blocks_stay_dead_and_zero() {
    let corpus = synthetic_corpus(3, 30_000);
    let cfg = config(&format!("{TINY} model.kind=rnn prune.enabled=true prune.freq=10"));
    let out = train(&cfg, &corpus).unwrap();
    out.check().unwrap();
    let r = &out.report;
    let sched = r.schedule.unwrap();
    assert!(r.final_block_sparsity > 0.0);
    assert!(r.records.windows(2).all(|w| w[1].block_sparsity >= w[0].block_sparsity));
    // nothing changes after the last update
    let frozen = &r.records[sched.end_itr..];
    assert!(frozen.iter().all(|x| x.block_sparsity == frozen[0].block_sparsity));
    assert!(frozen.iter().all(|x| x.epsilon_recurrent == frozen[0].epsilon_recurrent));
    assert!(max_sparsity_jump(r) < 1.0);
    for (&i, mask) in out.model.prunable().iter().zip(&out.masks) {
        let mut w = out.model.params()[i].clone();
        mask.apply_in_place(&mut w).unwrap();
        assert_eq!(w, out.model.params()[i], "{}", out.model.names()[i]);
    }
}

#[test]
fn report_matches_planning_helpers() {
    let corpus = synthetic_corpus(4, 30_000);
    let cfg = config(&format!("{TINY} prune.enabled=true prune.theta=0.002 prune.freq=10"));
    let out = train(&cfg, &corpus).unwrap();
    let ipe = iters_per_epoch(&cfg, corpus.len()).unwrap();
    assert_eq!(out.report.iters_per_epoch, ipe);
    assert_eq!(out.report.total_iters, ipe * cfg.epochs);
    assert_eq!(out.report.records.len(), ipe * cfg.epochs);
    assert_eq!(out.report.valid_loss.len(), cfg.epochs);
    let (rec, lin) = planned_hyper(&cfg, ipe, None).unwrap();
    assert_eq!(out.report.hyper_recurrent, Some(rec));
    assert_eq!(out.report.hyper_linear, Some(lin));
    assert_eq!(rec.ramp_slope, 1.5 * rec.start_slope);
    assert_eq!(rec.start_itr, ipe);
}

#[test]
fn dense_run_has_no_schedule_and_no_zeros() {
    let corpus = synthetic_corpus(5, 30_000);
    let out = train(&config(TINY), &corpus).unwrap();
    out.check().unwrap();
    assert!(out.report.schedule.is_none());
    assert_eq!(out.report.final_block_sparsity, 0.0);
    assert!(out.report.records.iter().all(|r| r.epsilon_linear == 0.0));
    // learned something beyond the uniform baseline
    assert!(out.report.final_valid_loss < (out.vocab.size() as f64).ln() * 0.8);
}

#[test]
fn final_cut_hits_the_requested_sparsity() {
    let corpus = synthetic_corpus(6, 30_000);
    let cfg = config(&format!("{TINY} reg.kind=group_lasso reg.lambda=1e-4 reg.final_sparsity=0.6"));
    let out = train(&cfg, &corpus).unwrap();
    assert!((out.report.final_block_sparsity - 0.6).abs() < 0.01);
    let mut model = out.model.clone();
    let mut masks = out.masks.clone();
    prune_to_sparsity(&mut model, &mut masks, 0.3).unwrap();
    // already past the target: nothing changes
    assert_eq!(model, out.model);
}

#[test]
fn divergence_is_reported_not_hidden() {
    let corpus = synthetic_corpus(7, 30_000);
    let out = train(&config(&format!("{TINY} model.kind=rnn train.lr=1e308 train.clip=1e308")), &corpus).unwrap();
    let d = out.report.diverged.expect("lr 1e308 must overflow");
    assert!(matches!(out.check(), Err(Error::Diverged { .. })));
    assert!(out.model.params().iter().all(|p| p.values().iter().all(|v| v.is_finite())));
    assert_eq!(out.report.records.len(), d.iteration);
}

#[test]
fn checkpoint_file_round_trip() {
    let corpus = synthetic_corpus(8, 30_000);
    let cfg = config(&format!("{TINY} prune.enabled=true prune.freq=10 checkpoint.dtype=f32"));
    let out = train(&cfg, &corpus).unwrap();
    let ck = Checkpoint {
        config_hash: cfg.hash(),
        model: out.model,
        vocab: out.vocab,
        block_h: 4,
        block_w: 4,
        masks: out.masks,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bsnn");
    save_checkpoint(&path, &ck, Dtype::F64).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ck);
    // f32 storage is lossy but keeps the masks and zero pattern
    save_checkpoint(&path, &ck, Dtype::F32).unwrap();
    let narrow = load_checkpoint(&path).unwrap();
    assert_eq!(narrow.masks, ck.masks);
    for (a, b) in narrow.model.params().iter().zip(ck.model.params()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*x == 0.0, *y == 0.0);
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-30));
        }
    }
}

#[test]
fn bad_configs_are_rejected() {
    let mut cfg = TrainingConfig::default();
    assert!(matches!(cfg.set("model.colour", "red"), Err(Error::Config(_))));
    assert!(cfg.set("train.epochs", "four").is_err());
    cfg.set("train.epochs", "3").unwrap();
    assert!(cfg.validate().is_err());
    let corpus = synthetic_corpus(1, 2_000);
    assert!(train(&config("model.hidden=16 train.batch=64 train.seq_len=64"), &corpus).is_err());
    assert!(train(&config("model.hidden=18 train.epochs=5"), &synthetic_corpus(1, 30_000)).is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let cfg = TrainingConfig::from_file(dir.join("char_lm.cfg")).unwrap();
    assert!(cfg.prune.enabled);
    assert_eq!(cfg.data_path.unwrap(), dir.join("corpus.txt"));
    let grid = std::fs::read_to_string(dir.join("glp.grid")).unwrap();
    assert_eq!(bsnn::analysis::SweepGrid::parse(&grid).unwrap().points().len(), 9);
}
