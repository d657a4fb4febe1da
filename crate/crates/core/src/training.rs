//! Mini-batch training with Adam and per-epoch evaluation.
//!
//! Epoch `e` shuffles with `derive(derive(seed, SHUFFLE), e)` and draws
//! dropout masks from `derive(derive(seed, DROPOUT), e)`, so a run is fixed
//! by its seed alone.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::metrics::{confusion, derive_metrics, MetricsReport};
use crate::model::{argmax_rows, batch_from_segments, CadModel, ModelConfig};
use crate::nn::{adam_step, cross_entropy_loss, fused_softmax_ce_grad, AdamState, Real};
use crate::nn::network::Pass;
use crate::rng::{self, stream};
use crate::signal_io::{Label, Segment, SegmentDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Inference-mode accuracy on the whole training set after the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpochBudget,
    EarlyStopping,
    TargetAccuracy,
    /// The epoch observer asked to stop.
    Observer,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EpochBudget => "epoch_budget",
            StopReason::EarlyStopping => "early_stopping",
            StopReason::TargetAccuracy => "target_accuracy",
            StopReason::Observer => "observer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
    pub final_epoch: usize,
    pub seed: u64,
    pub stop_reason: StopReason,
    pub config: ModelConfig,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
        for e in &self.epochs {
            let test = e.test_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.train_accuracy, test);
        }
        out
    }

    /// Key/value summary. Wall-clock time is left out when `with_timing`
    /// is false so repeated runs can be compared byte for byte.
    pub fn summary(&self, with_timing: bool) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("final_epoch", self.final_epoch);
        kv.set("seed", self.seed);
        kv.set("stop_reason", self.stop_reason.as_str());
        if let Some(last) = self.last() {
            kv.set("train_loss", last.train_loss);
            kv.set("train_accuracy", last.train_accuracy);
            if let Some(t) = last.test_accuracy {
                kv.set("test_accuracy", t);
            }
        }
        if with_timing {
            kv.set("wall_seconds", format!("{:.3}", self.wall_seconds));
        }
        kv.extend(&self.config.to_kv());
        kv
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        self.summary(true).write(summary_path)
    }
}

fn check_length<T: Real>(model: &CadModel<T>, data: &SegmentDataset, what: &str) -> Result<()> {
    if data.segment_length != model.input_length() {
        return Err(Error::Shape(format!(
            "{what} has segment length {}, model expects {}",
            data.segment_length,
            model.input_length()
        )));
    }
    Ok(())
}

fn labels_of(segments: &[&Segment]) -> Vec<usize> {
    segments.iter().map(|s| s.label.index()).collect()
}

/// Inference-mode predictions and mean loss over a dataset, in chunks of
/// `chunk` segments.
fn predict_all<T: Real>(model: &CadModel<T>, data: &SegmentDataset, chunk: usize) -> Result<(Vec<usize>, f64)> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    let refs: Vec<&Segment> = data.segments.iter().collect();
    for part in refs.chunks(chunk.max(1)) {
        let x = batch_from_segments::<T>(part)?;
        let probs = model.predict(&x)?;
        loss += cross_entropy_loss(&probs, &labels_of(part))? * part.len() as f64;
        predicted.extend(argmax_rows(&probs));
    }
    Ok((predicted, loss / data.len() as f64))
}

fn accuracy(predicted: &[usize], data: &SegmentDataset) -> f64 {
    let correct = predicted
        .iter()
        .zip(&data.segments)
        .filter(|(&p, s)| p == s.label.index())
        .count();
    correct as f64 / data.len() as f64
}

pub fn train<T: Real>(
    model: &mut CadModel<T>,
    train_set: &SegmentDataset,
    test_set: &SegmentDataset,
    config: &ModelConfig,
) -> Result<TrainReport> {
    train_observed(model, train_set, test_set, config, |_, _| Ok(true))
}

/// [`train`] that calls `observer` with the model after every epoch;
/// returning `false` ends training.
pub fn train_observed<T: Real>(
    model: &mut CadModel<T>,
    train_set: &SegmentDataset,
    test_set: &SegmentDataset,
    config: &ModelConfig,
    mut observer: impl FnMut(&EpochRecord, &CadModel<T>) -> Result<bool>,
) -> Result<TrainReport> {
    config.validate()?;
    check_length(model, train_set, "training set")?;
    if !test_set.is_empty() {
        check_length(model, test_set, "test set")?;
    }
    let counts = train_set.class_counts();
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Data(format!(
            "training set needs both classes, has {} non-CAD and {} CAD segments",
            counts[0], counts[1]
        )));
    }
    let started = Instant::now();
    let shapes: Vec<usize> = model.network().params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::<T>::new(&shapes, config.learning_rate);
    let shuffle_seed = rng::derive_seed(config.seed, stream::SHUFFLE);
    let dropout_seed = rng::derive_seed(config.seed, stream::DROPOUT);

    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::EpochBudget;
    let mut best_test_loss = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<&Segment> = train_set.segments.iter().collect();
        order.shuffle(&mut rng::seeded(rng::derive_seed(shuffle_seed, epoch as u64)));
        let mut drop_rng = rng::seeded(rng::derive_seed(dropout_seed, epoch as u64));
        let mut loss_sum = 0.0;
        for (b, part) in order.chunks(config.batch_size).enumerate() {
            let diverged = |loss: f64| Error::Divergence { epoch, batch: b, loss };
            let x = batch_from_segments::<T>(part)?;
            let labels = labels_of(part);
            let net = model.network_mut();
            let probs = match net.forward(&x, Pass::Train, &mut drop_rng) {
                Err(Error::Numeric(_)) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            let loss = cross_entropy_loss(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            loss_sum += loss * part.len() as f64;
            let grads = net.backward_from_logits(&fused_softmax_ce_grad(&probs, &labels)?)?;
            adam_step(&mut net.params_mut(), &grads.params, &mut adam)?;
        }
        model.network_mut().clear_tape();

        let (train_pred, _) = predict_all(model, train_set, config.batch_size)?;
        let train_accuracy = accuracy(&train_pred, train_set);
        let (test_accuracy, test_loss) = if test_set.is_empty() {
            (None, None)
        } else {
            let (pred, loss) = predict_all(model, test_set, config.batch_size)?;
            (Some(accuracy(&pred, test_set)), Some(loss))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy,
            test_accuracy,
            test_loss,
        };
        let go_on = observer(&record, model)?;
        epochs.push(record);
        if !go_on {
            stop_reason = StopReason::Observer;
            break;
        }

        if let Some(target) = config.target_train_accuracy {
            if train_accuracy >= target {
                stop_reason = StopReason::TargetAccuracy;
                break;
            }
        }
        if let (Some(patience), Some(loss)) = (config.early_stopping_patience, test_loss) {
            if loss < best_test_loss {
                best_test_loss = loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    stop_reason = StopReason::EarlyStopping;
                    break;
                }
            }
        }
    }
    Ok(TrainReport {
        final_epoch: epochs.len(),
        epochs,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed: config.seed,
        stop_reason,
        config: config.clone(),
    })
}

/// Inference-mode argmax predictions scored against the dataset labels.
pub fn evaluate<T: Real>(model: &CadModel<T>, dataset: &SegmentDataset) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    check_length(model, dataset, "evaluation set")?;
    let (pred, _) = predict_all(model, dataset, model.config().batch_size)?;
    let predicted = pred
        .into_iter()
        .map(Label::try_from)
        .collect::<Result<Vec<_>>>()?;
    derive_metrics(&confusion(&predicted, &dataset.labels())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_length: 24,
            conv_filters: vec![6, 4],
            kernel: 5,
            conv_dropout: vec![0.2, 0.0],
            pool: 8,
            dense_units: 8,
            head_dropout: 0.5,
            learning_rate: 1e-2,
            batch_size: 8,
            epochs: 15,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    /// Class 1 carries a negative notch, class 0 a positive bump.
    fn toy(n: usize, seed: u64) -> SegmentDataset {
        let segments = (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Cad } else { Label::NonCad };
                let shift = ((i as u64 * 7 + seed) % 10) as usize;
                let sign = if label == Label::Cad { -1.0 } else { 1.0 };
                let values = (0..24)
                    .map(|k| {
                        let d = k as f64 - (7 + shift) as f64;
                        sign * (-d * d / 4.0).exp() + 0.05 * ((k + i) as f64).sin()
                    })
                    .collect();
                Segment {
                    values,
                    label,
                    source_id: format!("toy{i}"),
                    normalized: false,
                }
            })
            .collect();
        SegmentDataset::new(segments, 24).unwrap()
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let cfg = tiny_config();
        let mut model = build_model::<f32>(&cfg).unwrap();
        let report = train(&mut model, &toy(40, 0), &toy(20, 5), &cfg).unwrap();
        let first = &report.epochs[0];
        let last = report.last().unwrap();
        assert!(last.train_loss < first.train_loss);
        assert!(last.train_accuracy >= 0.95, "{report:?}");
        assert!(evaluate(&model, &toy(20, 5)).unwrap().accuracy.unwrap() >= 0.9);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = ModelConfig { learning_rate: 0.0, epochs: 3, ..tiny_config() };
        let mut model = build_model::<f32>(&cfg).unwrap();
        let before: Vec<Vec<f32>> = model.network().params().iter().map(|p| p.to_vec()).collect();
        let initial = evaluate(&model, &toy(40, 0)).unwrap().accuracy;
        let report = train(&mut model, &toy(40, 0), &toy(10, 1), &cfg).unwrap();
        let after: Vec<Vec<f32>> = model.network().params().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
        assert!(report.epochs.iter().all(|e| Some(e.train_accuracy) == initial));
    }

    #[test]
    fn runs_are_bit_identical() {
        let cfg = ModelConfig { epochs: 4, ..tiny_config() };
        let run = || {
            let mut m = build_model::<f32>(&cfg).unwrap();
            let r = train(&mut m, &toy(32, 0), &toy(8, 2), &cfg).unwrap();
            (r.epochs.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>(), r.to_csv())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_single_class_and_bad_lengths() {
        let cfg = tiny_config();
        let mut model = build_model::<f32>(&cfg).unwrap();
        let mut one_class = toy(10, 0);
        one_class.segments.retain(|s| s.label == Label::Cad);
        assert!(matches!(train(&mut model, &one_class, &toy(4, 0), &cfg), Err(Error::Data(_))));
        let short = SegmentDataset::new(vec![], 10).unwrap();
        assert!(matches!(train(&mut model, &short, &toy(4, 0), &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = ModelConfig { learning_rate: 1e30, epochs: 5, ..tiny_config() };
        let mut model = build_model::<f32>(&cfg).unwrap();
        match train(&mut model, &toy(32, 0), &toy(8, 0), &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.final_epoch)),
        }
    }

    #[test]
    fn evaluate_perfect_and_flipped() {
        let cfg = ModelConfig { epochs: 20, ..tiny_config() };
        let mut model = build_model::<f32>(&cfg).unwrap();
        train(&mut model, &toy(40, 0), &toy(8, 0), &cfg).unwrap();
        let data = toy(40, 0);
        let (pred, _) = predict_all(&model, &data, 8).unwrap();
        let mut agreed = data.clone();
        for (s, &p) in agreed.segments.iter_mut().zip(&pred) {
            s.label = Label::try_from(p).unwrap();
        }
        assert_eq!(evaluate(&model, &agreed).unwrap().accuracy, Some(1.0));
        for s in &mut agreed.segments {
            s.label = s.label.flipped();
        }
        assert_eq!(evaluate(&model, &agreed).unwrap().accuracy, Some(0.0));
        let empty = SegmentDataset::new(vec![], 24).unwrap();
        assert!(matches!(evaluate(&model, &empty), Err(Error::Data(_))));
    }
}
