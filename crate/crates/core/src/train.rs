//! Mini-batch training with plateau learning-rate reduction, early stopping
//! and best-on-validation model selection.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::mlp::{bce_loss, feature_matrix, sgd_nag_step, MlpModel, OptimizerState, DEFAULT_MOMENTUM};
use crate::seed::rng_for;

/// Rows per forward pass when evaluating.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min_delta: f64,
    pub lr_min: f64,
    /// Restart the LR patience window after each reduction.
    pub lr_reset_on_reduce: bool,
    pub es_patience: usize,
    pub es_min_delta: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            max_epochs: 1000,
            batch_size: 1024,
            learning_rate: 1e-4,
            lr_factor: 0.5,
            lr_patience: 20,
            lr_min_delta: 1e-5,
            lr_min: 1e-7,
            lr_reset_on_reduce: true,
            es_patience: 100,
            es_min_delta: 1e-6,
            momentum: DEFAULT_MOMENTUM,
            nesterov: true,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    /// Budget sized for minutes on one CPU core.
    ///
    /// With 100x fewer samples a 1024-row batch leaves ~10 steps per epoch, so
    /// the batch is shrunk and the step size raised to keep the controls trainable.
    pub fn desk() -> Self {
        TrainingSchedule {
            max_epochs: 150,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_patience: 10,
            es_patience: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_epochs >= 1
            && self.batch_size >= 1
            && self.learning_rate > 0.0
            && self.lr_factor > 0.0
            && self.lr_factor < 1.0
            && self.lr_min > 0.0
            && self.lr_min <= self.learning_rate
            && self.lr_min_delta >= 0.0
            && self.es_min_delta >= 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("inconsistent training schedule {self:?}")))
        }
    }

    pub fn plateau(&self) -> PlateauScheduler {
        PlateauScheduler {
            lr: self.learning_rate,
            factor: self.lr_factor,
            patience: self.lr_patience,
            min_delta: self.lr_min_delta,
            min_lr: self.lr_min,
            reset_on_reduce: self.lr_reset_on_reduce,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn early_stopping(&self) -> EarlyStopping {
        EarlyStopping {
            patience: self.es_patience,
            min_delta: self.es_min_delta,
            best: f64::INFINITY,
            wait: 0,
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has failed
/// to beat its best by more than `min_delta` for `patience` consecutive calls.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    min_delta: f64,
    min_lr: f64,
    reset_on_reduce: bool,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn update(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                if self.reset_on_reduce {
                    self.wait = 0;
                }
            }
        }
        self.lr
    }
}

#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    /// Returns true once `patience` consecutive calls brought no improvement beyond `min_delta`.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch number (1-based) of the retained model.
    pub best_epoch: usize,
}

const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            );
        }
        out
    }

    /// Parses [`to_csv`](Self::to_csv) output; the best epoch is recovered as the minimum validation loss.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::format("history CSV header mismatch"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::format(format!("history CSV line {}", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |j: usize| f[j].trim().parse::<f64>().map_err(|_| bad());
            records.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                train_loss: num(1)?,
                train_acc: num(2)?,
                val_loss: num(3)?,
                val_acc: num(4)?,
                lr: num(5)?,
            });
        }
        let best_epoch = records
            .iter()
            .fold(None::<&EpochRecord>, |b, r| match b {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
            .map(|r| r.epoch)
            .unwrap_or(0);
        Ok(TrainingHistory { records, best_epoch })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Model with the lowest validation loss seen.
    pub model: MlpModel<f32>,
    pub history: TrainingHistory,
    pub stop_reason: StopReason,
}

/// Passed to the observer after every epoch.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub model: &'a MlpModel<f32>,
    /// Whether this epoch produced a new best model.
    pub improved: bool,
}

pub fn train(
    model: MlpModel<f32>,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    schedule: &TrainingSchedule,
) -> Result<TrainingOutcome> {
    train_with_observer(model, train_set, val_set, schedule, |_| Ok(()))
}

pub fn train_with_observer<F>(
    mut model: MlpModel<f32>,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    schedule: &TrainingSchedule,
    mut observer: F,
) -> Result<TrainingOutcome>
where
    F: FnMut(&EpochEvent<'_>) -> Result<()>,
{
    schedule.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::param("training and validation sets must be non-empty"));
    }
    for d in [train_set, val_set] {
        if d.feature_len() != model.input_len() {
            return Err(Error::Shape(format!(
                "dataset has {} features, model expects {}",
                d.feature_len(),
                model.input_len()
            )));
        }
    }
    let x_train: Array2<f32> = feature_matrix(train_set.features(), train_set.feature_len(), model.scaling())?;
    let y_train = train_set.labels();
    let n = y_train.len();

    let mut opt = OptimizerState::new(&model, schedule.learning_rate, schedule.momentum, schedule.nesterov)?;
    let mut plateau = schedule.plateau();
    let mut stopper = schedule.early_stopping();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, MlpModel<f32>)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut y_batch = Vec::with_capacity(schedule.batch_size);

    for epoch in 1..=schedule.max_epochs {
        let lr = opt.learning_rate;
        order.sort_unstable();
        order.shuffle(&mut rng_for(schedule.seed, "epoch-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for idx in order.chunks(schedule.batch_size) {
            let xb = x_train.select(Axis(0), idx);
            y_batch.clear();
            y_batch.extend(idx.iter().map(|&i| y_train[i]));
            let (loss, grads, probs) = model.backward_with_probs(xb.view(), &y_batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss * idx.len() as f64;
            correct += count_correct(&probs, &y_batch);
            sgd_nag_step(&mut model, &grads, &mut opt)?;
        }
        if model
            .layers()
            .iter()
            .any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let (val_loss, val_acc) = loss_and_accuracy(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
            lr,
        };
        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, model.clone()));
            history.best_epoch = epoch;
        }
        history.records.push(record);
        observer(&EpochEvent {
            record: &record,
            model: &model,
            improved,
        })?;
        opt.learning_rate = plateau.update(val_loss);
        if stopper.update(val_loss) {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok(TrainingOutcome {
        model,
        history,
        stop_reason,
    })
}

fn count_correct(probs: &[f64], labels: &[u8]) -> usize {
    probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| predict(p) == y)
        .count()
}

/// Class decision; ties at exactly 0.5 go to class 1.
pub fn predict(prob: f64) -> u8 {
    (prob >= 0.5) as u8
}

fn probabilities(model: &MlpModel<f32>, d: &LabeledDataset) -> Result<Vec<f64>> {
    if d.feature_len() != model.input_len() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            d.feature_len(),
            model.input_len()
        )));
    }
    let x: Array2<f32> = feature_matrix(d.features(), d.feature_len(), model.scaling())?;
    let mut probs = Vec::with_capacity(d.len());
    let mut start = 0;
    while start < d.len() {
        let end = (start + EVAL_CHUNK).min(d.len());
        probs.extend(model.forward(x.slice(s![start..end, ..]))?);
        start = end;
    }
    Ok(probs)
}

/// Mean BCE loss and accuracy of a model on a dataset.
pub fn loss_and_accuracy(model: &MlpModel<f32>, d: &LabeledDataset) -> Result<(f64, f64)> {
    let probs = probabilities(model, d)?;
    let loss = bce_loss(d.labels(), &probs)?;
    Ok((loss, count_correct(&probs, d.labels()) as f64 / d.len().max(1) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
    pub predicted: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    pub fn from_predictions(predictions: Vec<Prediction>) -> Self {
        let correct = predictions.iter().filter(|p| p.predicted == p.label).count() as u64;
        let total = predictions.len() as u64;
        Evaluation {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            correct,
            total,
            predictions,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,label,probability,predicted\n");
        for (i, p) in self.predictions.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{:?},{}", p.label, p.probability, p.predicted);
        }
        out
    }

    /// Reads `label` and `predicted` columns from a predictions CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::format("empty predictions file"))?
            .split(',')
            .map(str::trim)
            .collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| Error::format(format!("predictions file lacks a `{name}` column")))
        };
        let (li, pi) = (col("label")?, col("predicted")?);
        let prob_i = header.iter().position(|h| *h == "probability");
        let mut preds = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::format(format!("predictions line {}", n + 2));
            let bit = |j: usize| match f.get(j).copied() {
                Some("0") => Ok(0u8),
                Some("1") => Ok(1u8),
                _ => Err(bad()),
            };
            let probability = match prob_i {
                Some(j) => f.get(j).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
                None => f64::NAN,
            };
            preds.push(Prediction {
                label: bit(li)?,
                predicted: bit(pi)?,
                probability,
            });
        }
        Ok(Self::from_predictions(preds))
    }
}

pub fn evaluate(model: &MlpModel<f32>, test_set: &LabeledDataset) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(Error::param("test set is empty"));
    }
    let probs = probabilities(model, test_set)?;
    let predictions = probs
        .iter()
        .zip(test_set.labels())
        .map(|(&p, &label)| Prediction {
            label,
            probability: p,
            predicted: predict(p),
        })
        .collect();
    Ok(Evaluation::from_predictions(predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Game, GameSpec, KemSource};
    use crate::kem::KemKind;
    use crate::mlp::{FeatureScaling, ModelPreset};

    fn paper() -> TrainingSchedule {
        TrainingSchedule::default()
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut p = paper().plateau();
        assert_eq!(p.update(0.6931), 1e-4);
        for _ in 0..19 {
            assert_eq!(p.update(0.6931), 1e-4);
        }
        assert_eq!(p.update(0.6931), 5e-5);
        // counter restarted: another 20 needed
        for _ in 0..19 {
            assert_eq!(p.update(0.6931), 5e-5);
        }
        assert_eq!(p.update(0.6931), 2.5e-5);
    }

    #[test]
    fn plateau_improvement_resets_window() {
        let mut p = paper().plateau();
        p.update(1.0);
        for _ in 0..19 {
            p.update(1.0);
        }
        assert_eq!(p.update(1.0 - 2e-5), 1e-4);
        for _ in 0..19 {
            assert_eq!(p.update(1.0), 1e-4);
        }
        // sub-threshold improvements do not count
        assert_eq!(p.update(1.0 - 2e-5 - 1e-6), 5e-5);
    }

    #[test]
    fn plateau_floor() {
        let mut p = paper().plateau();
        for _ in 0..5000 {
            let lr = p.update(0.5);
            assert!(lr >= 1e-7);
        }
        assert_eq!(p.learning_rate(), 1e-7);
    }

    #[test]
    fn plateau_without_reset_reduces_every_epoch_past_patience() {
        let mut s = paper();
        s.lr_reset_on_reduce = false;
        let mut p = s.plateau();
        for _ in 0..21 {
            p.update(0.5);
        }
        assert_eq!(p.update(0.5), 2.5e-5);
    }

    #[test]
    fn early_stopping_window() {
        let mut e = paper().early_stopping();
        assert!(!e.update(0.6931));
        for _ in 0..99 {
            assert!(!e.update(0.6931));
        }
        assert!(e.update(0.6931));

        let mut e = paper().early_stopping();
        e.update(0.6931);
        for _ in 0..98 {
            assert!(!e.update(0.6931));
        }
        assert!(!e.update(0.6931 - 1e-5));
        for _ in 0..99 {
            assert!(!e.update(0.6931 - 1e-5));
        }
        assert!(e.update(0.6931 - 1e-5));
    }

    fn balanced(n: usize, feature_len: usize) -> LabeledDataset {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        LabeledDataset::new(feature_len, vec![0; n * feature_len], labels, 0).unwrap()
    }

    #[test]
    fn tie_rule_on_constant_half() {
        let m = MlpModel::<f32>::zeros(&[3, 2, 1], FeatureScaling::UnitInterval).unwrap();
        let ev = evaluate(&m, &balanced(10, 3)).unwrap();
        assert_eq!((ev.correct, ev.total, ev.accuracy), (5, 10, 0.5));
        assert!(ev.predictions.iter().all(|p| p.predicted == 1));
        assert!(evaluate(&m, &balanced(0, 3)).is_err());
        assert!(evaluate(&m, &balanced(4, 2)).is_err());
    }

    #[test]
    fn predictions_csv_round_trip() {
        let m = MlpModel::<f32>::zeros(&[3, 2, 1], FeatureScaling::UnitInterval).unwrap();
        let ev = evaluate(&m, &balanced(6, 3)).unwrap();
        assert_eq!(Evaluation::from_csv(&ev.to_csv()).unwrap(), ev);
        assert!(Evaluation::from_csv("label,predicted\n1,2\n").is_err());
    }

    fn degenerate(n: usize, seed: u64) -> LabeledDataset {
        GameSpec {
            game: Game::Hybrid {
                kem: KemSource {
                    ct_len: 16,
                    ss_len: 16,
                    ..KemSource::mock(KemKind::DegenerateMock)
                },
                asym: crate::datagen::AsymComponent::PlaintextIdentity,
                asym_modulus_bits: 1024,
            },
            samples_per_class: n,
            seed,
        }
        .build()
        .unwrap()
    }

    fn quick_schedule() -> TrainingSchedule {
        TrainingSchedule {
            max_epochs: 8,
            batch_size: 64,
            learning_rate: 1e-2,
            es_patience: 3,
            lr_patience: 2,
            seed: 3,
            ..TrainingSchedule::desk()
        }
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let train_set = degenerate(200, 1);
        let val = degenerate(50, 2);
        let init = || MlpModel::glorot(&ModelPreset::Small.dims(32), FeatureScaling::UnitInterval, 9).unwrap();
        let a = train(init(), &train_set, &val, &quick_schedule()).unwrap();
        let b = train(init(), &train_set, &val, &quick_schedule()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.to_checkpoint(), b.model.to_checkpoint());

        let best = a.history.best().unwrap();
        let min = a.history.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(best.val_loss, min);
        assert_eq!(loss_and_accuracy(&a.model, &val).unwrap().0, best.val_loss);
        assert!(a.history.records.windows(2).all(|w| w[1].lr <= w[0].lr && w[1].epoch == w[0].epoch + 1));
        assert_eq!(a.history.records[0].epoch, 1);
        assert!(best.val_acc > 0.9, "{best:?}");

        let parsed = TrainingHistory::from_csv(&a.history.to_csv()).unwrap();
        assert_eq!(parsed, a.history);
    }

    #[test]
    fn shape_and_schedule_errors() {
        let d = degenerate(10, 1);
        let m = MlpModel::glorot(&[31, 4, 1], FeatureScaling::UnitInterval, 0).unwrap();
        assert!(matches!(train(m, &d, &d, &quick_schedule()), Err(Error::Shape(_))));
        let m = MlpModel::glorot(&[32, 4, 1], FeatureScaling::UnitInterval, 0).unwrap();
        let bad = TrainingSchedule {
            learning_rate: 0.0,
            ..quick_schedule()
        };
        assert!(train(m, &d, &d, &bad).is_err());
    }

    #[test]
    fn non_finite_parameters_abort() {
        let d = degenerate(20, 1);
        let mut m = MlpModel::glorot(&[32, 4, 1], FeatureScaling::Raw, 0).unwrap();
        m.layers_mut()[1].bias[0] = f32::NAN;
        assert!(matches!(
            train(m, &d, &d, &quick_schedule()),
            Err(Error::NonFiniteLoss { epoch: 1 })
        ));
    }

    #[test]
    fn desk_preset_values() {
        let d = TrainingSchedule::desk();
        assert_eq!((d.max_epochs, d.es_patience, d.lr_patience, d.batch_size), (150, 30, 10, 32));
        assert_eq!(d.learning_rate, 1e-3);
        let p = TrainingSchedule::default();
        assert_eq!((p.max_epochs, p.es_patience, p.lr_patience, p.batch_size), (1000, 100, 20, 1024));
        assert_eq!((p.learning_rate, p.lr_min, p.lr_min_delta, p.es_min_delta), (1e-4, 1e-7, 1e-5, 1e-6));
    }
}
