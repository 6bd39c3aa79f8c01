//! Experiment orchestration: generate, split, train, evaluate, test, report.

mod config;
mod matrix;
mod plot;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, NetworkConfig, Overrides, Preset};
pub use matrix::{cascade_entries, run_matrix, CellOutcome, CellResult, MatrixEntry, MatrixReport};
pub use plot::{emit_plot, render_svg};

use crate::datagen::{split_dataset, LabeledDataset};
use crate::error::{Error, Result, StageExt};
use crate::mlp::MlpModel;
use crate::stats::{binomial_test, BinomialTestResult};
use crate::train::{evaluate, train_with_observer, Evaluation, StopReason, TrainingHistory, TrainingOutcome};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CPALAB_OUT";
pub const DEFAULT_OUT: &str = "results";
pub const FAILED_MARKER: &str = "FAILED";

pub const DATASET_FILE: &str = "dataset.icpa";
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "plot.svg";
pub const CONFIG_FILE: &str = "config.toml";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digests {
    pub dataset: String,
    pub train: String,
    pub val: String,
    pub test: String,
    pub model: String,
    pub history: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub generate_s: f64,
    pub train_s: f64,
    pub evaluate_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment_id: String,
    pub game: String,
    pub schemes: Vec<String>,
    pub net: String,
    pub n_test: u64,
    pub k: u64,
    pub accuracy: f64,
    /// Display form: two decimals or `2^e`.
    pub p_value: String,
    pub reject: bool,
    pub seed: u64,
    pub digests: Digests,
    pub test: BinomialTestResult,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub history_file: String,
    pub timings: Timings,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn generate(config: &ExperimentConfig) -> Result<LabeledDataset> {
    config.game_spec().build()
}

pub fn split(config: &ExperimentConfig, d: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    split_dataset(d, config.split, config.split_seed())
}

pub fn initial_model(config: &ExperimentConfig, feature_len: usize) -> Result<MlpModel<f32>> {
    MlpModel::glorot(&config.network.dims(feature_len), config.network.scaling, config.init_seed())
}

/// Trains on the config's train/validation split, logging each epoch.
pub fn train_config(config: &ExperimentConfig, train_set: &LabeledDataset, val_set: &LabeledDataset) -> Result<TrainingOutcome> {
    let model = initial_model(config, train_set.feature_len())?;
    train_with_observer(model, train_set, val_set, &config.schedule, |ev| {
        log::debug!(
            "{} epoch {:>4} loss {:.6} acc {:.4} val_loss {:.6} val_acc {:.4} lr {:e}{}",
            config.id,
            ev.record.epoch,
            ev.record.train_loss,
            ev.record.train_acc,
            ev.record.val_loss,
            ev.record.val_acc,
            ev.record.lr,
            if ev.improved { " *" } else { "" }
        );
        Ok(())
    })
}

pub fn test_predictions(eval: &Evaluation, alpha: f64) -> Result<BinomialTestResult> {
    binomial_test(eval.correct, eval.total, 0.5, alpha)
}

/// Runs the whole pipeline into `config.output_dir(out_root)`.
///
/// On failure the directory receives a `FAILED` file holding the stage-tagged error.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunReport> {
    let dir = config.output_dir(out_root);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = run_in(config, &dir);
    if let Err(e) = &result {
        let _ = std::fs::write(&marker, format!("{e}\n"));
        log::error!("{}: {e}", config.id);
    }
    result
}

fn run_in(config: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let t0 = Instant::now();
    write(&dir.join(CONFIG_FILE), config.to_toml()).stage("config")?;
    log::info!("{}: generating {} samples per class", config.id, config.split.per_class_total());
    let dataset = generate(config).stage("generate")?;
    let dataset_bytes = dataset.to_bytes();
    write(&dir.join(DATASET_FILE), &dataset_bytes).stage("generate")?;
    let (train_set, val_set, test_set) = split(config, &dataset).stage("split")?;
    let t_gen = t0.elapsed().as_secs_f64();

    log::info!("{}: training on {} rows of {} bytes", config.id, train_set.len(), train_set.feature_len());
    let outcome = train_config(config, &train_set, &val_set).stage("train")?;
    let checkpoint = outcome.model.to_checkpoint();
    write(&dir.join(MODEL_FILE), &checkpoint).stage("train")?;
    let history_csv = outcome.history.to_csv();
    write(&dir.join(HISTORY_FILE), &history_csv).stage("train")?;
    let t_train = t0.elapsed().as_secs_f64() - t_gen;

    let eval = evaluate(&outcome.model, &test_set).stage("evaluate")?;
    write(&dir.join(PREDICTIONS_FILE), eval.to_csv()).stage("evaluate")?;
    let test = test_predictions(&eval, config.alpha).stage("test")?;
    emit_plot(&[(config.id.as_str(), &outcome.history)], &dir.join(PLOT_FILE)).stage("plot")?;
    let t_eval = t0.elapsed().as_secs_f64() - t_gen - t_train;

    let report = RunReport {
        experiment_id: config.id.clone(),
        game: config.dataset.name().into(),
        schemes: config.dataset.schemes(),
        net: config.network.label(),
        n_test: eval.total,
        k: eval.correct,
        accuracy: eval.accuracy,
        p_value: test.p_value_display(),
        reject: test.reject,
        seed: config.seed,
        digests: Digests {
            dataset: sha256_hex(&dataset_bytes),
            train: train_set.digest(),
            val: val_set.digest(),
            test: test_set.digest(),
            model: sha256_hex(&checkpoint),
            history: sha256_hex(history_csv.as_bytes()),
        },
        test,
        best_epoch: outcome.history.best_epoch,
        epochs_run: outcome.history.records.len(),
        stop_reason: outcome.stop_reason,
        history_file: HISTORY_FILE.into(),
        timings: Timings {
            generate_s: t_gen,
            train_s: t_train,
            evaluate_s: t_eval,
            total_s: t0.elapsed().as_secs_f64(),
        },
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&dir.join(REPORT_FILE), json + "\n").stage("report")?;
    log::info!(
        "{}: accuracy {:.4} ({}/{}), p = {}, reject = {}",
        config.id,
        report.accuracy,
        report.k,
        report.n_test,
        report.p_value,
        report.reject
    );
    Ok(report)
}

/// Loads the history CSV referenced by a report next to it.
pub fn load_history(report_path: &Path) -> Result<TrainingHistory> {
    let dir = report_path.parent().unwrap_or(Path::new("."));
    TrainingHistory::load_csv(&dir.join(HISTORY_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(id: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
            id = "{id}"
            seed = 11
            [dataset]
            game = "alg2-hybrid"
            asym = "plaintext-identity"
            kem = {{ kind = "degenerate-mock", ct_len = 8, ss_len = 8 }}
            [network]
            hidden = [16]
            [split]
            train = 100
            val = 30
            test = 30
            [schedule]
            max_epochs = 5
            batch_size = 32
            learning_rate = 0.01
            "#
        ))
        .unwrap()
    }

    #[test]
    fn pipeline_writes_artifacts_deterministically() {
        let root = tempfile::tempdir().unwrap();
        let a = run_experiment(&tiny("a"), root.path()).unwrap();
        let b = run_experiment(&tiny("a"), &root.path().join("again")).unwrap();
        assert_eq!(a.digests, b.digests);
        for f in [DATASET_FILE, MODEL_FILE, HISTORY_FILE, PREDICTIONS_FILE, REPORT_FILE, PLOT_FILE, CONFIG_FILE] {
            assert!(root.path().join("a").join(f).exists(), "{f}");
        }
        let rep = RunReport::load(&root.path().join("a").join(REPORT_FILE)).unwrap();
        assert_eq!(rep.digests, a.digests);
        assert_eq!(rep.n_test, 60);
        let from_report = ExperimentConfig::load(&root.path().join("a").join(REPORT_FILE), &Overrides::default()).unwrap();
        assert_eq!(from_report, tiny("a"));
        let d = LabeledDataset::load(&root.path().join("a").join(DATASET_FILE)).unwrap();
        assert_eq!(d.digest(), a.digests.dataset);
    }

    #[test]
    fn failures_leave_marker() {
        let root = tempfile::tempdir().unwrap();
        let mut c = tiny("bad");
        if let crate::datagen::Game::Hybrid { kem, .. } = &mut c.dataset {
            kem.kind = crate::kem::KemKind::ExternalCorpus;
            kem.corpus = Some(root.path().join("missing.icks"));
        }
        let err = run_experiment(&c, root.path()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "generate", .. }));
        let marker = std::fs::read_to_string(root.path().join("bad").join(FAILED_MARKER)).unwrap();
        assert!(marker.contains("generate"));
    }
}
