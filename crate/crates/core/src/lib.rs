//! Empirical IND-CPA testing: labelled ciphertext corpora, a dense neural
//! distinguisher, and an exact binomial test of its accuracy.

pub mod crypto;
pub mod datagen;
pub mod error;
pub mod kem;
pub mod mlp;
pub mod runner;
pub mod seed;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use crypto::{CascadePair, RsaKeyPair, SymmetricAlgorithm, SymmetricScheme};
pub use datagen::{AsymComponent, CipherSpec, Game, GameSpec, KemSource, LabeledDataset, SplitSizes};
pub use kem::{CombinerFunction, CombinerSpec, KemKind, KemProvider};
pub use mlp::{FeatureScaling, MlpModel, ModelPreset, OptimizerState};
pub use runner::{ExperimentConfig, Preset, RunReport};
pub use stats::BinomialTestResult;
pub use train::{Evaluation, TrainingHistory, TrainingSchedule};
