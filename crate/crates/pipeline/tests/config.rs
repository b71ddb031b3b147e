use mvx_pipeline::config::TrainConfig;
use mvx_pipeline::{PipelineConfig, PipelineError};

fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn presets_round_trip_through_toml() {
    for cfg in [PipelineConfig::default(), PipelineConfig::desk()] {
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn shipped_files_match_presets() {
    let full = PipelineConfig::load(&configs_dir().join("full.toml")).unwrap();
    let desk = PipelineConfig::load(&configs_dir().join("desk.toml")).unwrap();
    assert_eq!(full, PipelineConfig::default());
    assert_eq!(desk, PipelineConfig::desk());
}

#[test]
fn design_values_appear_in_the_file() {
    let text = PipelineConfig::default().to_toml();
    for key in [
        "[stage1]", "[stage2]", "lr = 0.00003", "lr = 0.0001", "decay_every = 20", "decay_factor = 0.5", "epochs = 70",
        "batch_size", "perturb_deg", "distance_threshold = 50.0", "freeze_prefix = true", "frozen_epochs",
        "ranges_deg = [20.0, 5.0]", "distance_thresholds = [30.0, 50.0, 80.0]", "frames = 4", "iterations = 10",
        "lambda_r", "lambda_p", "gamma = 0.8",
    ] {
        assert!(text.contains(key), "missing {key:?} in\n{text}");
    }
}

#[test]
fn learning_rate_halves_every_twenty_epochs() {
    let s1 = TrainConfig::stage1();
    assert_eq!(s1.lr_at(0), 3e-5);
    assert_eq!(s1.lr_at(19), 3e-5);
    assert_eq!(s1.lr_at(20), 1.5e-5);
    assert_eq!(s1.lr_at(45), 7.5e-6);
    assert_eq!(s1.lr_at(69), 3.75e-6);
    let s2 = TrainConfig::stage2();
    assert_eq!(s2.lr_at(0), 1e-4);
    assert_eq!(s2.lr_at(40), 2.5e-5);
    let flat = TrainConfig { decay_every: 0, ..s2 };
    assert_eq!(flat.lr_at(1000), 1e-4);
}

#[test]
fn joint_rate_restarts_the_schedule_at_unfreeze() {
    let s2 = TrainConfig {
        lr: 1e-3,
        decay_every: 8,
        frozen_epochs: 16,
        epochs: 40,
        joint_lr: Some(6e-5),
        ..TrainConfig::stage2()
    };
    assert_eq!(s2.lr_at(15), 5e-4);
    assert_eq!(s2.lr_at(16), 6e-5);
    assert_eq!(s2.lr_at(23), 6e-5);
    assert_eq!(s2.lr_at(24), 3e-5);
    let unfrozen = TrainConfig { freeze_prefix: false, ..s2 };
    assert_eq!(unfrozen.lr_at(16), 2.5e-4);
}

fn rejected(edit: impl FnOnce(&mut PipelineConfig)) -> String {
    let mut cfg = PipelineConfig::desk();
    edit(&mut cfg);
    match cfg.validate() {
        Err(PipelineError::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn invalid_settings_are_rejected() {
    rejected(|c| c.stage1.stage = 3);
    rejected(|c| c.stage2.stage = 1);
    rejected(|c| c.stage1.batch_size = 0);
    rejected(|c| c.stage1.lr = 0.0);
    rejected(|c| c.stage2.decay_factor = 1.5);
    rejected(|c| c.stage2.distance_threshold = Some(-1.0));
    rejected(|c| c.stage2.joint_lr = Some(0.0));
    rejected(|c| c.stage1.freeze_prefix = true);
    rejected(|c| c.stage2.frozen_epochs = c.stage2.epochs + 1);
    rejected(|c| c.chain.ranges_deg = vec![5.0, 20.0]);
    rejected(|c| c.chain.ranges_deg.clear());
    rejected(|c| c.eval.distance_thresholds = vec![30.0, 0.0]);
    rejected(|c| c.data.scene.image_width = 200);
    rejected(|c| c.data.scene.trajectory_len = 2);
    rejected(|c| c.net.image_height = 60);
    rejected(|c| c.loss.gamma = 0.0);
}

#[test]
fn unknown_keys_and_bad_syntax_fail() {
    let mut text = PipelineConfig::desk().to_toml();
    text = text.replace("[stage1]\n", "[stage1]\nlearning_rate = 1.0\n");
    assert!(matches!(PipelineConfig::from_toml(&text), Err(PipelineError::Config(_))));
    assert!(PipelineConfig::from_toml("net = [").is_err());
}

#[test]
fn omitted_threshold_means_no_filter() {
    let mut cfg = PipelineConfig::desk();
    cfg.stage2.distance_threshold = None;
    let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back.stage2.distance_threshold, None);
}
