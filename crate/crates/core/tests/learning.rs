use gcspn_core::grid::CameraIntrinsics;
use gcspn_core::learning::{
    forward, gradcheck, train, GradCheckOptions, LossSpec, Model, ParamStore, Sample, TrainConfig, CHECKPOINT_MAGIC,
};
use gcspn_core::propagation::{BackwardHook, PropagationConfig};
use gcspn_core::synth::{render_scene, sample_sparse, SceneSpec};
use proptest::prelude::*;

fn scene(seed: u64, size: usize, samples: usize) -> Sample {
    let intr = CameraIntrinsics::centered(size, size, 0.9 * size as f64);
    let spec = SceneSpec::random(seed, size, size, intr, 1.0, 8.0).unwrap();
    let (gt, gray) = render_scene(&spec).unwrap();
    let sparse = sample_sparse(&gt, samples, seed ^ 0x55).unwrap();
    Sample::new(format!("s{seed}"), gt, Some(gray), sparse, intr).unwrap()
}

fn small_config() -> PropagationConfig {
    PropagationConfig {
        steps: 2,
        k: 4,
        patch_h: 2,
        patch_w: 2,
        ..PropagationConfig::default()
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let model = Model::random(4, 2, 2, 10.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gcsp");
    model.to_store().save(&path).unwrap();
    let back = Model::from_store(&ParamStore::load(&path).unwrap()).unwrap();
    assert_eq!(back, model);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    assert_eq!(bytes[4], 1);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = Model::random(4, 2, 2, 10.0).unwrap().to_store().to_bytes();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(ParamStore::from_bytes(&magic).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(ParamStore::from_bytes(&version).is_err());
    assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(ParamStore::from_bytes(&extra).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn truncation_never_panics(cut in 0usize..4000) {
        let bytes = Model::random(1, 2, 2, 10.0).unwrap().to_store().to_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(ParamStore::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn full_pipeline_gradients_match_finite_differences() {
    let s = scene(7, 8, 16);
    let model = Model::random(3, 2, 2, 10.0).unwrap();
    let report = gradcheck(
        &model,
        &s,
        &small_config(),
        LossSpec::default(),
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report}");
    assert!(report.max_rel_err() < 1e-4);
}

#[test]
fn broken_softmax_backward_is_caught() {
    let s = scene(7, 8, 16);
    let model = Model::random(3, 2, 2, 10.0).unwrap();
    let options = GradCheckOptions {
        hook: BackwardHook {
            drop_softmax_centering: true,
        },
        ..GradCheckOptions::default()
    };
    let report = gradcheck(&model, &s, &small_config(), LossSpec::default(), options).unwrap();
    assert!(!report.passed());
}

#[test]
fn training_reduces_loss_and_repeats_exactly() {
    let data: Vec<Sample> = (0..4).map(|i| scene(40 + i, 16, 60)).collect();
    let cfg = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let prop = PropagationConfig { k: 4, ..small_config() };
    let a = train(&data, &cfg, &prop).unwrap();
    let b = train(&data, &cfg, &prop).unwrap();
    assert_eq!(a.store.to_bytes(), b.store.to_bytes());
    let totals: Vec<f64> = a.log.iter().map(|r| r.total).collect();
    assert_eq!(totals, b.log.iter().map(|r| r.total).collect::<Vec<_>>());
    assert!(totals.last().unwrap() < totals.first().unwrap(), "{totals:?}");
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let data = vec![scene(1, 16, 60)];
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.0,
        ..TrainConfig::default()
    };
    let prop = small_config();
    let out = train(&data, &cfg, &prop).unwrap();
    let init = Model::random(cfg.seed, 2, 2, prop.scale).unwrap();
    assert_eq!(out.store.to_bytes(), init.to_store().to_bytes());
    let rec = forward(&init, &data[0], &prop, cfg.loss_spec(), None).unwrap();
    assert_eq!(out.log[0].total, rec.report.total);
}
