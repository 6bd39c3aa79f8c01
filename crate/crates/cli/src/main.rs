use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cpalab_core::datagen::LabeledDataset;
use cpalab_core::runner::{
    self, cascade_entries, emit_plot, run_experiment, run_matrix, ExperimentConfig, MatrixEntry, Overrides, Preset,
    RunReport,
};
use cpalab_core::stats::{binomial_test, render_rows, summarize, DEFAULT_ALPHA};
use cpalab_core::train::{evaluate, Evaluation, TrainingHistory};
use cpalab_core::MlpModel;

#[derive(Parser)]
#[command(name = "cpalab", version, about = "IND-CPA distinguishing experiments with a neural classifier")]
struct Cli {
    /// Output root (one subdirectory per experiment)
    #[arg(long, global = true, env = runner::OUT_ENV, default_value = runner::DEFAULT_OUT)]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML, or a report.json to repeat a run)
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the size/budget preset
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Keep (true) or strip (false) the outer IV/nonce in single-cipher features
    #[arg(long)]
    include_iv: Option<bool>,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            preset: self.preset,
            include_iv: self.include_iv,
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.overrides())
            .with_context(|| format!("loading {}", self.config.display()))
    }
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: cpalab_core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Build the labelled dataset only
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write a CSV export
        #[arg(long)]
        csv: bool,
    },
    /// Train on a config's split (generating the dataset unless given)
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a config's test split
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Binomial test on a predictions CSV, or on explicit counts
    Test {
        #[arg(long, conflicts_with_all = ["k", "n"])]
        predictions: Option<PathBuf>,
        #[arg(long, requires = "n")]
        k: Option<u64>,
        #[arg(long, requires = "k")]
        n: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Full pipeline: generate, train, evaluate, test, report
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Several experiments, or the full cascade table from one base config
    Matrix {
        /// Experiment configs
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[arg(long)]
        include_iv: Option<bool>,
        /// Expand the (single) config into all outer/inner cascade cells
        #[arg(long)]
        cascade: bool,
        /// Experiments to run concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Overlay validation-accuracy curves from history CSVs
    Plot {
        #[arg(long = "history", required = true)]
        histories: Vec<PathBuf>,
        /// Legend labels, in the same order (defaults to the parent directory names)
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Tabulate report.json files found in the given directories
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Print JSON instead of a table
        #[arg(long)]
        json: bool,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { cfg, csv } => {
            let config = cfg.load()?;
            let dir = experiment_dir(&config, &cli.out)?;
            let d = runner::generate(&config)?;
            d.save(&dir.join(runner::DATASET_FILE))?;
            if csv {
                write(&dir.join("dataset.csv"), d.to_csv())?;
            }
            println!("{} rows x {} bytes, sha256 {}", d.len(), d.feature_len(), d.digest());
        }
        Command::Train { cfg, dataset } => {
            let config = cfg.load()?;
            let dir = experiment_dir(&config, &cli.out)?;
            let d = dataset_for(&config, dataset.as_deref())?;
            let (train, val, _) = runner::split(&config, &d)?;
            let outcome = runner::train_config(&config, &train, &val)?;
            outcome.model.save(&dir.join(runner::MODEL_FILE))?;
            outcome.history.save_csv(&dir.join(runner::HISTORY_FILE))?;
            emit_plot(&[(config.id.as_str(), &outcome.history)], &dir.join(runner::PLOT_FILE))?;
            let best = outcome.history.best().expect("non-empty history");
            println!(
                "best epoch {} of {}: val_loss {:.6} val_acc {:.4} ({:?})",
                best.epoch,
                outcome.history.records.len(),
                best.val_loss,
                best.val_acc,
                outcome.stop_reason
            );
        }
        Command::Evaluate { cfg, model, dataset } => {
            let config = cfg.load()?;
            let dir = experiment_dir(&config, &cli.out)?;
            let d = dataset_for(&config, dataset.as_deref())?;
            let (_, _, test) = runner::split(&config, &d)?;
            let m = MlpModel::load(&model)?;
            let eval = evaluate(&m, &test)?;
            write(&dir.join(runner::PREDICTIONS_FILE), eval.to_csv())?;
            let t = runner::test_predictions(&eval, config.alpha)?;
            println!(
                "accuracy {:.4} ({}/{}), p = {}, reject = {}",
                eval.accuracy,
                eval.correct,
                eval.total,
                t.p_value_display(),
                t.reject
            );
        }
        Command::Test {
            predictions,
            k,
            n,
            alpha,
        } => {
            let (k, n) = match (predictions, k, n) {
                (Some(p), _, _) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    let e = Evaluation::from_csv(&text)?;
                    (e.correct, e.total)
                }
                (None, Some(k), Some(n)) => (k, n),
                _ => bail!("give --predictions or both --k and --n"),
            };
            let t = binomial_test(k, n, 0.5, alpha)?;
            println!("{}", serde_json::to_string_pretty(&t)?);
            println!("p = {}, reject = {}", t.p_value_display(), t.reject);
        }
        Command::Run { cfg } => {
            let config = cfg.load()?;
            let r = run_experiment(&config, &cli.out)?;
            print!("{}", render_rows(&summarize([(r.experiment_id.as_str(), &r.test)])));
        }
        Command::Matrix {
            configs,
            seed,
            preset,
            include_iv,
            cascade,
            jobs,
        } => {
            let ov = Overrides {
                seed,
                preset,
                include_iv,
            };
            let loaded = configs
                .iter()
                .map(|p| ExperimentConfig::load(p, &ov).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let entries = if cascade {
                if loaded.len() != 1 {
                    bail!("--cascade expands exactly one base config");
                }
                cascade_entries(&loaded[0])
            } else {
                loaded.into_iter().map(MatrixEntry::Run).collect()
            };
            std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
            let report = run_matrix(entries, &cli.out, jobs);
            let table = if cascade {
                report.render_cascade_table()
            } else {
                report.render_list()
            };
            write(&cli.out.join("matrix.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            write(&cli.out.join("matrix.txt"), &table)?;
            print!("{table}");
        }
        Command::Plot {
            histories,
            labels,
            output,
        } => {
            if !labels.is_empty() && labels.len() != histories.len() {
                bail!("{} labels for {} histories", labels.len(), histories.len());
            }
            let loaded = histories
                .iter()
                .map(|p| TrainingHistory::load_csv(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let names: Vec<String> = if labels.is_empty() {
                histories.iter().map(|p| default_label(p)).collect()
            } else {
                labels
            };
            let series: Vec<(&str, &TrainingHistory)> = names.iter().map(String::as_str).zip(&loaded).collect();
            emit_plot(&series, &output)?;
        }
        Command::Report { dirs, json } => {
            let mut reports = Vec::new();
            for d in &dirs {
                collect_reports(d, &mut reports)?;
            }
            reports.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
            if json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            } else {
                let rows = summarize(reports.iter().map(|r| (r.experiment_id.as_str(), &r.test)));
                print!("{}", render_rows(&rows));
            }
        }
    }
    Ok(())
}

fn experiment_dir(config: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    let dir = config.output_dir(root);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn dataset_for(config: &ExperimentConfig, path: Option<&Path>) -> Result<LabeledDataset> {
    Ok(match path {
        Some(p) => LabeledDataset::load(p)?,
        None => runner::generate(config)?,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn default_label(history: &Path) -> String {
    history
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| history.display().to_string())
}

/// `dir/report.json` and `dir/*/report.json`.
fn collect_reports(dir: &Path, out: &mut Vec<RunReport>) -> Result<()> {
    let direct = dir.join(runner::REPORT_FILE);
    if direct.is_file() {
        out.push(RunReport::load(&direct)?);
    }
    let entries = std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for e in entries {
        let p = e?.path().join(runner::REPORT_FILE);
        if p.is_file() {
            out.push(RunReport::load(&p)?);
        }
    }
    Ok(())
}
