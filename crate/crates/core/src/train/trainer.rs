use super::loss::softmax_xent;
use super::model::Model;
use super::optim::{OptimState, OptimizerKind};
use crate::error::{KfcError, Result};
use crate::linalg::{Matrix, Rng};

/// Rows of features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(KfcError::shape(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(KfcError::arg(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { features, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end).collect();
        Dataset {
            features: self.features.select_rows(&idx),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
        }
    }

    /// First `len - tail` rows and the last `tail` rows.
    pub fn split_tail(&self, tail: usize) -> Result<(Dataset, Dataset)> {
        if tail >= self.len() {
            return Err(KfcError::arg(format!("cannot hold out {tail} of {} rows", self.len())));
        }
        let cut = self.len() - tail;
        Ok((self.slice(0, cut), self.slice(cut, self.len())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout_keep: f64,
    pub optimizer: OptimizerKind,
    /// Rows held out from the end of the training file for validation.
    pub val_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            seed: 1,
            lr: 1e-4,
            weight_decay: 1e-4,
            dropout_keep: 0.5,
            optimizer: OptimizerKind::Adam,
            val_size: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(KfcError::arg("batch_size must be at least 1"));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(KfcError::arg(format!("dropout_keep {} outside (0, 1]", self.dropout_keep)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(KfcError::arg(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(KfcError::arg(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// Independent random streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Epoch of the lowest validation error; ties keep the earliest.
    pub best_epoch: usize,
    /// Parameters as they were at `best_epoch`.
    pub best: Model,
}

impl TrainOutcome {
    pub fn best_val_error(&self) -> f64 {
        self.history[self.best_epoch - 1].val_error
    }
}

/// Mini-batch training with per-epoch validation. `model` ends at the final
/// epoch's parameters; the outcome carries the minimum-validation snapshot.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(KfcError::Data("training and validation sets must be non-empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(KfcError::arg("epochs must be at least 1"));
    }
    for (what, d) in [("training", train_set), ("validation", val_set)] {
        if d.features.cols() != model.input_dim() {
            return Err(KfcError::shape(format!(
                "{what} rows have {} features, model takes {}",
                d.features.cols(),
                model.input_dim()
            )));
        }
        if d.classes > model.output_dim() {
            return Err(KfcError::shape(format!(
                "{what} data has {} classes, model outputs {}",
                d.classes,
                model.output_dim()
            )));
        }
    }

    let mut shuffle_rng = Rng::derive(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = Rng::derive(cfg.seed, streams::DROPOUT);
    let mut opt = OptimState::new(cfg.optimizer, cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_set.features.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let trace = model.forward_train(&x, &mut dropout_rng)?;
            let (loss, grad) = softmax_xent(&trace.output, &labels)?;
            if !loss.is_finite() {
                return Err(KfcError::Numeric { what: "training (non-finite loss)", iterations: epoch });
            }
            loss_sum += loss * batch.len() as f64;
            let (grads, _) = model.backward(&trace, &grad)?;
            opt.step(model.param_slices_mut(), &grads)?;
        }
        let stats =
            EpochStats { epoch, train_loss: loss_sum / train_set.len() as f64, val_error: evaluate(model, val_set)? };
        on_epoch(&stats);
        history.push(stats);
        if best.as_ref().is_none_or(|b| stats.val_error < b.1) {
            best = Some((epoch, stats.val_error, model.clone()));
        }
    }
    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { history, best_epoch, best })
}

const EVAL_CHUNK: usize = 1000;

/// Misclassified rows (argmax of the logits, first maximum on ties).
pub fn error_count(model: &Model, data: &Dataset) -> Result<usize> {
    let mut errors = 0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let logits = model.predict(&data.features.select_rows(&idx))?;
        for (r, &label) in idx.iter().zip(&data.labels[start..end]) {
            let row = logits.row(r - start);
            let mut arg = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            errors += usize::from(arg != label);
        }
    }
    Ok(errors)
}

/// Fraction of misclassified rows; 0 for an empty set.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    Ok(error_count(model, data)? as f64 / data.len() as f64)
}

/// Same result as [`evaluate`], computed by `parts` threads over contiguous
/// partitions whose integer error counts are summed.
pub fn evaluate_partitioned(model: &Model, data: &Dataset, parts: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let parts = parts.clamp(1, data.len());
    let step = data.len().div_ceil(parts);
    let counts: Vec<Result<usize>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..data.len())
            .step_by(step)
            .map(|start| {
                let part = data.slice(start, (start + step).min(data.len()));
                s.spawn(move || error_count(model, &part))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut total = 0;
    for c in counts {
        total += c?;
    }
    Ok(total as f64 / data.len() as f64)
}
