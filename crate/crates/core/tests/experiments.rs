//! Training behaviour and the output contracts of the experiment commands.

use std::fs;

use predfuse::datagen::{generate, load_batch, GeneratorSpec, ModalitySpec, NoiseKind, NoiseSpec};
use predfuse::experiment::{
    ablation, compare, gdp_study, manifest_file, run, sweep, train_model, train_runs, Command,
    CompareAxis, ExperimentConfig, GdpConfig, RunManifest, TrainingConfig,
};
use predfuse::fusion::FusionStrategy;
use predfuse::metrics::accuracy;
use predfuse::model::{load_checkpoint, ModelConfig, ModelOptions, Optimizer, PdfModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        classes: 3,
        modalities: vec![
            ModalitySpec {
                dim: 6,
                signal_scale: 3.0,
                noise_std: 0.0,
                flip_rate: 0.0,
            },
            ModalitySpec {
                dim: 5,
                signal_scale: 3.0,
                noise_std: 0.0,
                flip_rate: 0.0,
            },
        ],
        train: 120,
        val: 60,
        test: 60,
        seed,
    }
}

fn tiny_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.generator.train = 64;
    config.generator.val = 32;
    config.generator.test = 48;
    config.training.epochs = 3;
    config.seeds = vec![3, 4];
    config.gdp = GdpConfig {
        models: 2,
        ..GdpConfig::default()
    };
    config
}

#[test]
fn default_training_separates_the_toy_set() {
    let splits = generate(&toy_spec(11)).unwrap();
    let outcome = train_model(
        &splits,
        &ModelOptions::default(),
        &TrainingConfig::default(),
        1,
    )
    .unwrap();
    assert_eq!(outcome.log.len(), 100);
    assert_eq!(outcome.log.last().unwrap().val_accuracy, 1.0);
}

#[test]
fn toy_loss_falls_every_epoch_for_every_strategy() {
    let splits = generate(&toy_spec(5)).unwrap();
    let train = &splits.train;
    for strategy in FusionStrategy::ALL {
        let options = ModelOptions {
            strategy,
            ..ModelOptions::default()
        };
        let config = ModelConfig::new(train.dims(), train.classes(), options);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = PdfModel::new(config, &mut rng).unwrap();
        let mut opt = Optimizer::new(&model, TrainingConfig::default().adam(), None).unwrap();
        let total = |m: &PdfModel| {
            m.compute_loss(train, &m.evaluate(train).unwrap())
                .unwrap()
                .total
        };
        let mut prev = total(&model);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..10 {
            order.shuffle(&mut rng);
            for chunk in order.chunks(16) {
                model
                    .train_step(&train.select(chunk), &mut opt, Some(&mut rng))
                    .unwrap();
            }
            let now = total(&model);
            assert!(
                now < prev,
                "{strategy}: epoch {epoch} loss {now} after {prev}"
            );
            prev = now;
        }
    }
}

#[test]
fn flipped_labels_make_a_modality_weaker() {
    let mut spec = GeneratorSpec::default();
    spec.modalities[0].flip_rate = 0.3;
    spec.modalities[1].flip_rate = 0.0;
    let splits = generate(&spec).unwrap();
    let outcome = train_model(
        &splits,
        &ModelOptions::default(),
        &TrainingConfig::default(),
        2,
    )
    .unwrap();
    let result = outcome.model.evaluate(&splits.test).unwrap();
    let labels = splits.test.labels();
    let weak = accuracy(&result.modality_predictions(0), labels).unwrap();
    let strong = accuracy(&result.modality_predictions(1), labels).unwrap();
    assert!(strong - weak >= 0.10, "weak {weak}, strong {strong}");
}

#[test]
fn sweep_has_one_row_per_strategy_noise_and_seed() {
    let mut config = tiny_config();
    config.seeds = vec![1, 2, 3, 4, 5];
    config.training.epochs = 1;
    let report = sweep(&config, 1).unwrap();
    // ccb, equal_weight, unimodal_0, unimodal_1
    assert_eq!(report.records.len(), 5 * 3 * 4);
    assert_eq!(report.summary.len(), 3 * 4);
    for s in &report.summary {
        let cell: Vec<f64> = report
            .records
            .iter()
            .filter(|r| r.arm == s.arm && r.noise_degree == s.noise_degree)
            .map(|r| r.accuracy)
            .collect();
        assert_eq!(cell.len(), 5);
        assert!((s.avg - cell.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    }
    assert_eq!(report.traces.len(), 5);
    assert!(report.traces.iter().all(|(_, t)| t.len() == 1));
}

#[test]
fn sweep_with_one_noise_level_has_a_constant_noise_column() {
    let mut config = tiny_config();
    config.noise = vec![NoiseSpec {
        kind: NoiseKind::SaltPepper,
        degree: 0.0,
        ..NoiseSpec::default()
    }];
    let report = sweep(&config, 1).unwrap();
    assert!(report
        .records
        .iter()
        .all(|r| r.noise_degree == 0.0 && r.noise_kind == NoiseKind::SaltPepper));
}

#[test]
fn train_with_zero_epochs_saves_the_initial_model() {
    let mut config = tiny_config();
    config.training.epochs = 0;
    config.seeds = vec![8];
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(Command::Train, &config, dir.path(), 1).unwrap();
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1, "header only: {log}");
    let saved = load_checkpoint(dir.path().join("checkpoints/model_seed8.pfck")).unwrap();
    let fresh = train_runs(&config, 1).unwrap();
    assert_eq!(&saved, fresh.model(8).unwrap());
    let splits = generate(&config.generator).unwrap();
    assert_eq!(
        load_batch(dir.path().join("data/test.pfb")).unwrap(),
        splits.test
    );
    assert!(manifest.verify(dir.path()).unwrap().is_empty());
}

#[test]
fn gdp_of_equal_weights_is_zero() {
    let mut config = tiny_config();
    config.gdp.strategies = vec![FusionStrategy::EqualWeight];
    let study = gdp_study(&config, 1).unwrap();
    assert_eq!(study.reports.len(), 3);
    for r in &study.reports {
        assert_eq!(r.ac_values.len(), 2);
        assert!(
            r.ac_values.iter().all(|v| v.abs() < 1e-12),
            "{:?}",
            r.ac_values
        );
        assert_eq!(r.gdp, 0.0);
    }
}

#[test]
fn gdp_needs_two_models() {
    let mut config = tiny_config();
    config.gdp.seeds = vec![1];
    let err = gdp_study(&config, 1).unwrap_err().to_string();
    assert!(err.contains("gdp.seeds"), "{err}");
}

#[test]
fn gdp_json_has_the_documented_fields() {
    let config = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    run(Command::Gdp, &config, dir.path(), 1).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("gdp.json")).unwrap()).unwrap();
    assert_eq!(json["ensemble_seeds"], serde_json::json!([1, 2]));
    let reports = json["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3 * 3);
    for r in reports {
        for key in ["strategy", "noise_kind", "noise_degree", "ac_values", "gdp"] {
            assert!(r.get(key).is_some(), "missing {key} in {r}");
        }
        let gdp = r["gdp"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&gdp));
    }
    let dist = fs::read_to_string(dir.path().join("ac_distribution.csv")).unwrap();
    assert_eq!(dist.lines().count(), 1 + 3 * 3 * 2);
}

#[test]
fn ablation_arms_share_unimodal_rows() {
    let config = tiny_config();
    let report = ablation(&config, 1).unwrap();
    let arms: Vec<&str> = FusionStrategy::ABLATION_ARMS
        .iter()
        .map(|s| s.components().unwrap())
        .collect();
    assert_eq!(
        arms,
        ["MC", "HC", "RC", "MC+HC", "HC+RC", "MC+RC", "MC+HC+RC"]
    );
    for arm in &arms {
        for degree in [0.0, 5.0, 10.0] {
            assert!(report
                .records
                .iter()
                .any(|r| r.arm == *arm && r.model == "fused" && r.noise_degree == degree));
        }
    }
    let unimodal = |arm: &str| -> Vec<f64> {
        report
            .records
            .iter()
            .filter(|r| r.arm == arm && r.model.starts_with("unimodal") && r.noise_degree == 0.0)
            .map(|r| r.accuracy)
            .collect()
    };
    let first = unimodal(arms[0]);
    assert_eq!(first.len(), 2 * 2);
    for arm in &arms[1..] {
        assert_eq!(unimodal(arm), first);
    }
}

#[test]
fn compare_rows_per_cell() {
    let config = tiny_config();
    let by_measure = compare(&config, CompareAxis::Uncertainty, 1).unwrap();
    assert_eq!(by_measure.records.len(), 4 * 3 * 2);
    for seed in [3, 4] {
        let cell: Vec<&str> = by_measure
            .records
            .iter()
            .filter(|r| r.seed == seed && r.noise_degree == 5.0)
            .map(|r| r.arm.as_str())
            .collect();
        assert_eq!(cell, ["du", "entropy", "mcp", "energy"]);
    }
    let by_target = compare(&config, CompareAxis::PredictorTarget, 1).unwrap();
    assert_eq!(by_target.records.len(), 2 * 3 * 2);
    let cell: Vec<&str> = by_target
        .records
        .iter()
        .filter(|r| r.seed == 3 && r.noise_degree == 0.0)
        .map(|r| r.arm.as_str())
        .collect();
    assert_eq!(cell, ["p_true", "loss"]);
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let config = tiny_config();
    for command in [
        Command::Sweep,
        Command::Compare(CompareAxis::PredictorTarget),
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run(command, &config, a.path(), 1).unwrap();
        let mb = run(command, &config, b.path(), 3).unwrap();
        assert_eq!(ma, mb);
        let name = manifest_file(&command.stem());
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap()
        );
        for f in &ma.files {
            assert_eq!(
                fs::read(a.path().join(&f.path)).unwrap(),
                fs::read(b.path().join(&f.path)).unwrap()
            );
        }
        assert_eq!(RunManifest::load(b.path().join(&name)).unwrap(), ma);
    }
}

#[test]
fn csv_cells_use_fixed_precision() {
    let config = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    run(Command::Sweep, &config, dir.path(), 1).unwrap();
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,noise_kind,noise_degree,seed,accuracy,conflict_fraction,conflict_accuracy"
    );
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7);
        for cell in [cells[2], cells[4], cells[5], cells[6]] {
            assert!(
                cell == "NA" || cell.split('.').nth(1).is_some_and(|d| d.len() == 6),
                "{line}"
            );
        }
    }
}

#[test]
fn invalid_jobs_and_config_fields_are_named() {
    let config = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let err = run(Command::Sweep, &config, dir.path(), 0)
        .unwrap_err()
        .to_string();
    assert!(err.contains("jobs"), "{err}");
    let mut bad = tiny_config();
    bad.training.lr = -1.0;
    let err = run(Command::Train, &bad, dir.path(), 1)
        .unwrap_err()
        .to_string();
    assert!(err.contains("training.lr"), "{err}");
}
