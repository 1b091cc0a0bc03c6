use std::path::Path;

use fedproc::harness::{evaluate, DatasetConfig, NetworkConfig, METRICS_FILE, METRICS_HEADER, RUN_RECORD_FILE};
use fedproc::{run_experiment, Experiment, ExperimentConfig, ModelParameters, StrategyKind};

fn small(strategy: StrategyKind, seed: u64, rounds: usize, dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        seed,
        rounds,
        local_epochs: 1,
        batch_size: 16,
        num_clients: 4,
        learning_rate: 0.1,
        beta: 0.5,
        output_dir: dir.to_path_buf(),
        network: NetworkConfig {
            hidden_dims: vec![12],
            projection_dim: 8,
            ..NetworkConfig::default()
        },
        dataset: DatasetConfig::Blobs {
            classes: 4,
            dim: 6,
            per_class: 40,
            spread: 0.3,
            test_fraction: 0.2,
        },
        ..ExperimentConfig::default()
    }
}

fn run_csv(cfg: &ExperimentConfig, dir: &Path) -> String {
    Experiment::prepare(cfg).unwrap().run_to_dir(dir).unwrap();
    std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn no_op_run_reports_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(StrategyKind::FedProc, 2, 1, dir.path());
    cfg.learning_rate = 0.0;
    let exp = Experiment::prepare(&cfg).unwrap();
    let history = exp.run_to_dir(dir.path()).unwrap();
    assert_eq!(history.len(), 1);
    let fed = exp.federation();
    let w0 = fed.initial_state().unwrap().global_params;
    assert_eq!(
        history[0].top1_accuracy,
        evaluate(fed.network(), &w0, fed.test_set()).unwrap()
    );
    let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for strategy in [StrategyKind::FedProc, StrategyKind::FedAvg, StrategyKind::Solo] {
        let cfg = small(strategy, 5, 3, dir.path());
        let a = run_csv(&cfg, &dir.path().join("a"));
        let b = run_csv(&cfg, &dir.path().join("b"));
        assert_eq!(a, b, "{strategy}");
    }
}

#[test]
fn zero_alpha_fedproc_writes_fedavg_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut forced = small(StrategyKind::FedProc, 6, 4, dir.path());
    forced.alpha_override = Some(0.0);
    let plain = small(StrategyKind::FedAvg, 6, 4, dir.path());
    assert_eq!(
        run_csv(&forced, &dir.path().join("a")),
        run_csv(&plain, &dir.path().join("b"))
    );
}

#[test]
fn metrics_schema_and_alpha_column() {
    let dir = tempfile::tempdir().unwrap();
    let rounds = 6;
    let csv = run_csv(&small(StrategyKind::FedProc, 7, rounds, dir.path()), dir.path());
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), rounds);
    let alphas: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(alphas.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(alphas[0], 1.0);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 5);
        assert_eq!(row[0], t.to_string());
        assert_eq!(row[4], "4");
        let acc: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn changing_the_seed_changes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_csv(&small(StrategyKind::FedProc, 1, 3, dir.path()), &dir.path().join("a"));
    let b = run_csv(&small(StrategyKind::FedProc, 2, 3, dir.path()), &dir.path().join("b"));
    assert_ne!(a, b);
    assert_eq!(a.lines().next(), b.lines().next());
    assert_eq!(a.lines().count(), b.lines().count());
}

#[test]
fn run_record_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(StrategyKind::FedAvg, 3, 2, dir.path());
    cfg.checkpoints = true;
    for name in ["a", "b"] {
        Experiment::prepare(&cfg)
            .unwrap()
            .run_to_dir(&dir.path().join(name))
            .unwrap();
    }
    let ckpt = |run: &str| dir.path().join(run).join("checkpoints/round_0001.fpck");
    assert_eq!(std::fs::read(ckpt("a")).unwrap(), std::fs::read(ckpt("b")).unwrap());

    let (_, state) = Experiment::prepare(&cfg).unwrap().run_in_memory().unwrap();
    assert_eq!(ModelParameters::load(&ckpt("a")).unwrap(), state.global_params);

    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a").join(RUN_RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(record["config"]["seed"], 3);
    assert_eq!(record["summary"]["rounds_completed"], 2);
    assert!(record["seeds"]["partition"].is_u64());
    let sizes: u64 = record["client_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(sizes, 128);
}

#[test]
fn solo_reports_spread_across_clients() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(StrategyKind::Solo, 4, 2, dir.path());
    cfg.sample_rate = 0.5;
    let (history, state) = Experiment::prepare(&cfg).unwrap().run_in_memory().unwrap();
    assert_eq!(history[0].participants.len(), 4);
    assert_eq!(state.solo_params.unwrap().len(), 4);
    assert!(history.iter().all(|m| m.top1_std >= 0.0));
}

#[test]
fn config_errors_surface_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut cfg = small(StrategyKind::FedProc, 0, 2, &out);
    cfg.beta = 0.0;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.is_config());
    assert!(!out.exists());

    let mut cfg = small(StrategyKind::FedProc, 0, 2, &out);
    cfg.num_clients = 500;
    assert!(run_experiment(&cfg).unwrap_err().is_config());
    assert!(!out.exists());
}

#[test]
fn small_cnn_on_image_shaped_data() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("img");
    let labels = dir.path().join("lbl");
    let (n, side) = (24u32, 16u32);
    let mut img = Vec::new();
    for w in [0x0803u32, n, side, side] {
        img.extend_from_slice(&w.to_be_bytes());
    }
    let mut lbl = Vec::new();
    for w in [0x0801u32, n] {
        lbl.extend_from_slice(&w.to_be_bytes());
    }
    for i in 0..n {
        let class = (i % 3) as u8;
        lbl.push(class);
        img.extend((0..side * side).map(|p| if p % 3 == u32::from(class) { 200 } else { 10 }));
    }
    std::fs::write(&images, &img).unwrap();
    std::fs::write(&labels, &lbl).unwrap();
    let cfg = ExperimentConfig {
        rounds: 2,
        local_epochs: 1,
        batch_size: 8,
        num_clients: 2,
        learning_rate: 0.05,
        network: NetworkConfig {
            encoder: fedproc::EncoderKind::SmallCnn,
            hidden_dims: vec![8],
            projection_dim: 4,
            conv_channels: [2, 3],
        },
        dataset: DatasetConfig::Idx {
            train_images: images.clone(),
            train_labels: labels.clone(),
            test_images: images,
            test_labels: labels,
        },
        ..ExperimentConfig::default()
    };
    let (history, _) = Experiment::prepare(&cfg).unwrap().run_in_memory().unwrap();
    assert_eq!(history.len(), 2);
}
