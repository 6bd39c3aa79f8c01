//! End-to-end runs through the public runner API.

use cpalab_core::runner::{self, run_experiment, ExperimentConfig, Overrides, RunReport};
use cpalab_core::train::{Evaluation, TrainingHistory};
use cpalab_core::{LabeledDataset, MlpModel};

fn config(seed: u64) -> ExperimentConfig {
    ExperimentConfig::parse_with(
        r#"
        id = "ecb-small"
        [dataset]
        game = "alg1-single"
        cipher = { kind = "symmetric", algorithm = "aes-ecb" }
        [split]
        train = 300
        val = 100
        test = 100
        [schedule]
        max_epochs = 20
        "#,
        &Overrides {
            seed: Some(seed),
            ..Overrides::default()
        },
    )
    .unwrap()
}

#[test]
fn artifacts_are_consistent_with_the_report() {
    let root = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(4), root.path()).unwrap();
    let dir = root.path().join("ecb-small");

    let d = LabeledDataset::load(&dir.join(runner::DATASET_FILE)).unwrap();
    assert_eq!(d.class_counts(), (500, 500));
    assert_eq!(d.digest(), report.digests.dataset);

    let model = MlpModel::load(&dir.join(runner::MODEL_FILE)).unwrap();
    let (_, _, test) = runner::split(&report.config, &d).unwrap();
    assert_eq!(test.digest(), report.digests.test);
    let eval = cpalab_core::train::evaluate(&model, &test).unwrap();
    assert_eq!((eval.correct, eval.total), (report.k, report.n_test));

    let preds = Evaluation::from_csv(&std::fs::read_to_string(dir.join(runner::PREDICTIONS_FILE)).unwrap()).unwrap();
    assert_eq!(preds.correct, report.k);

    let history = TrainingHistory::load_csv(&dir.join(runner::HISTORY_FILE)).unwrap();
    assert_eq!(history.best_epoch, report.best_epoch);
    assert_eq!(history.records.len(), report.epochs_run);

    let svg = std::fs::read_to_string(dir.join(runner::PLOT_FILE)).unwrap();
    roxmltree::Document::parse(&svg).unwrap();

    // a deterministic cipher leaks equality, even this small
    assert!(report.accuracy > 0.9 && report.reject, "{}", report.accuracy);
    assert!(!dir.join(runner::FAILED_MARKER).exists());
}

#[test]
fn report_alone_repeats_the_run() {
    let root = tempfile::tempdir().unwrap();
    let first = run_experiment(&config(9), &root.path().join("a")).unwrap();
    let report_path = root.path().join("a/ecb-small").join(runner::REPORT_FILE);
    let saved = RunReport::load(&report_path).unwrap();
    let again_cfg = ExperimentConfig::load(&report_path, &Overrides::default()).unwrap();
    let again = run_experiment(&again_cfg, &root.path().join("b")).unwrap();
    assert_eq!(saved.digests, first.digests);
    assert_eq!(again.digests, first.digests);

    let other = run_experiment(&config(10), &root.path().join("c")).unwrap();
    assert_ne!(other.digests.dataset, first.digests.dataset);
}
