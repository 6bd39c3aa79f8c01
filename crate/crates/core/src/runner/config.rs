//! TOML experiment configuration.
//!
//! ```toml
//! id = "plain-rsa"
//! seed = 1
//! preset = "desk"            # or "paper"
//!
//! [dataset]
//! game = "alg1-single"
//! plaintext_len = 16
//! include_iv = true
//! cipher = { kind = "rsa-textbook", modulus_bits = 2048 }
//!
//! [network]
//! preset = "small"           # or hidden = [64, 64]
//!
//! [split]                    # per-class counts; defaults come from the preset
//! train = 5000
//!
//! [schedule]                 # any TrainingSchedule field; defaults from the preset
//! max_epochs = 150
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{Game, GameSpec, SplitSizes};
use crate::error::{Error, Result};
use crate::mlp::{FeatureScaling, ModelPreset};
use crate::seed::derive_seed;
use crate::stats::DEFAULT_ALPHA;
use crate::train::TrainingSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-scale sizes and budgets.
    Paper,
    /// Minutes on one CPU core.
    #[default]
    Desk,
}

impl Preset {
    pub fn schedule(self) -> TrainingSchedule {
        match self {
            Preset::Paper => TrainingSchedule::default(),
            Preset::Desk => TrainingSchedule::desk(),
        }
    }

    pub fn split(self) -> SplitSizes {
        match self {
            Preset::Paper => SplitSizes {
                train: 500_000,
                val: 100_000,
                test: 100_000,
            },
            Preset::Desk => SplitSizes {
                train: 5000,
                val: 1000,
                test: 1000,
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub preset: ModelPreset,
    /// Explicit hidden widths; overrides `preset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub scaling: FeatureScaling,
}

impl NetworkConfig {
    pub fn dims(&self, input_len: usize) -> Vec<usize> {
        let mut d = vec![input_len];
        d.extend(self.hidden.clone().unwrap_or_else(|| self.preset.hidden()));
        d.push(1);
        d
    }

    pub fn label(&self) -> String {
        match &self.hidden {
            Some(h) => h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x"),
            None => match self.preset {
                ModelPreset::Small => "small".into(),
                ModelPreset::Big => "big".into(),
            },
        }
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    pub preset: Preset,
    pub dataset: Game,
    pub network: NetworkConfig,
    pub split: SplitSizes,
    /// `seed` is always derived from the master seed.
    pub schedule: TrainingSchedule,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Command-line overrides applied before defaults are resolved.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub include_iv: Option<bool>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &Overrides::default())
    }

    pub fn parse_with(text: &str, ov: &Overrides) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(raw, ov)
    }

    pub fn from_table(mut raw: toml::Table, ov: &Overrides) -> Result<Self> {
        let cfg_err = |e: toml::de::Error| Error::Config(e.to_string());
        if let Some(p) = ov.preset {
            raw.insert("preset".into(), toml::Value::String(preset_name(p).into()));
        }
        if let Some(s) = ov.seed {
            raw.insert("seed".into(), toml::Value::Integer(seed_to_toml(s)));
        }
        if let Some(iv) = ov.include_iv {
            if let Some(toml::Value::Table(d)) = raw.get_mut("dataset") {
                d.insert("include_iv".into(), toml::Value::Boolean(iv));
            }
        }
        let preset: Preset = match raw.get("preset") {
            Some(v) => v.clone().try_into().map_err(cfg_err)?,
            None => Preset::default(),
        };
        merge_defaults(&mut raw, "schedule", &preset.schedule())?;
        merge_defaults(&mut raw, "split", &preset.split())?;
        raw.entry("preset").or_insert(toml::Value::String(preset_name(preset).into()));
        raw.entry("network").or_insert(toml::Value::Table(toml::Table::new()));
        raw.entry("alpha").or_insert(toml::Value::Float(DEFAULT_ALPHA));
        // u64 seeds above i64::MAX arrive wrapped; deserialize a placeholder and restore
        let seed = match raw.remove("seed") {
            None => 0,
            Some(toml::Value::Integer(i)) => i as u64,
            Some(_) => return Err(Error::Config("`seed` must be an integer".into())),
        };
        raw.insert("seed".into(), toml::Value::Integer(0));
        let mut cfg: ExperimentConfig = toml::Value::Table(raw).try_into().map_err(cfg_err)?;
        cfg.seed = seed;
        cfg.schedule.seed = cfg.train_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the `config` echo inside a run report JSON.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let echo = v
                .get("config")
                .ok_or_else(|| Error::Config(format!("{} has no `config` field", path.display())))?;
            let cfg: ExperimentConfig = serde_json::from_value(echo.clone()).map_err(|e| Error::Config(e.to_string()))?;
            return Self::from_table(cfg.to_table(), ov);
        }
        Self::parse_with(&text, ov)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("config serializes")
    }

    fn to_table(&self) -> toml::Table {
        let mut c = self.clone();
        c.seed = 0;
        c.schedule.seed = 0;
        let mut table = toml::Table::try_from(&c).expect("config serializes");
        table.insert("seed".into(), toml::Value::Integer(seed_to_toml(self.seed)));
        table
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(Error::Config(format!("experiment id `{}` is not a valid directory name", self.id)));
        }
        if self.split.train == 0 || self.split.val == 0 || self.split.test == 0 {
            return Err(Error::Config("split sizes must all be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.network.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.game_spec().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn game_spec(&self) -> GameSpec {
        GameSpec {
            game: self.dataset.clone(),
            samples_per_class: self.split.per_class_total(),
            seed: self.dataset_seed(),
        }
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, "dataset")
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, "train")
    }

    /// Output directory for this experiment under `root` (or `out_dir` if set).
    pub fn output_dir(&self, root: &Path) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| root.join(&self.id))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.schedule.seed = c.train_seed();
        c
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Paper => "paper",
        Preset::Desk => "desk",
    }
}

/// TOML integers are signed; u64 seeds above i64::MAX are stored wrapped.
fn seed_to_toml(seed: u64) -> i64 {
    seed as i64
}

fn merge_defaults<T: Serialize>(raw: &mut toml::Table, key: &str, defaults: &T) -> Result<()> {
    let mut base = toml::Table::try_from(defaults).map_err(|e| Error::Config(e.to_string()))?;
    match raw.remove(key) {
        None => {}
        Some(toml::Value::Table(user)) => {
            for (k, v) in user {
                if !base.contains_key(&k) {
                    return Err(Error::Config(format!("unknown key `{key}.{k}`")));
                }
                base.insert(k, v);
            }
        }
        Some(_) => return Err(Error::Config(format!("`{key}` must be a table"))),
    }
    raw.insert(key.into(), toml::Value::Table(base));
    Ok(())
}
