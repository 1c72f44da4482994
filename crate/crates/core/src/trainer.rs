//! RMSprop training loop, hold-out validation with best-model checkpointing,
//! and evaluation metrics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{model_forward, save_checkpoint, ModelConfig, ModelParams};
use crate::rng::{derive_seed, hash_str, Rng};
use crate::tensor::{Scalar, Tape, Tensor};
use crate::video::{prepare_clip_eval, prepare_clip_train, Label, PipelineConfig, VideoClip};

/// RMSprop hyperparameters. Weight decay couples into the gradient as L2.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub alpha: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            alpha: 0.99,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Per-parameter running square-gradient accumulators plus hyperparameters.
pub struct OptimizerState<T: Scalar> {
    pub config: OptimizerConfig,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            v: BTreeMap::new(),
        }
    }

    /// Accumulators for checkpointing.
    pub fn accumulators(&self) -> &BTreeMap<String, Vec<T>> {
        &self.v
    }

    pub fn restore_accumulators(&mut self, v: BTreeMap<String, Vec<T>>) {
        self.v = v;
    }

    /// One update over every registered parameter:
    /// `g <- grad + weight_decay * theta`,
    /// `v <- alpha * v + (1 - alpha) * g^2`,
    /// `theta <- theta - lr * g / (sqrt(v) + eps)`.
    /// Rejected, naming the parameter, if any gradient is missing.
    pub fn step(&mut self, params: &mut ModelParams<T>) -> Result<()> {
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        // Validate up front so a failure cannot leave a half-applied step.
        let mut grads = Vec::with_capacity(names.len());
        for name in &names {
            let tensor = params.get(name)?;
            let grad = tensor
                .grad()
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            grads.push(grad);
        }

        let lr = T::from_f64(self.config.learning_rate);
        let alpha = T::from_f64(self.config.alpha);
        let one_minus_alpha = T::from_f64(1.0 - self.config.alpha);
        let eps = T::from_f64(self.config.eps);
        let decay = T::from_f64(self.config.weight_decay);

        for (name, grad) in names.iter().zip(grads) {
            let tensor = params.get(name)?.clone();
            let theta = tensor.data();
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![T::ZERO; theta.len()]);
            let mut updated = Vec::with_capacity(theta.len());
            for ((&t, &g0), vi) in theta.iter().zip(&grad).zip(v.iter_mut()) {
                let g = g0 + decay * t;
                *vi = alpha * *vi + one_minus_alpha * g * g;
                updated.push(t - lr * g / (vi.sqrt() + eps));
            }
            params.set(name, Tensor::param(updated, tensor.shape())?)?;
        }
        Ok(())
    }
}

/// 2x2 actual-by-predicted counts over {violence, non-violence}.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual: Label, predicted: Label) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn count(&self, actual: Label, predicted: Label) -> usize {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Normalized trace: (TP + TN) / total.
    pub fn accuracy(&self) -> f64 {
        let correct = self.counts[0][0] + self.counts[1][1];
        if self.total() == 0 {
            0.0
        } else {
            correct as f64 / self.total() as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:>14}  {:>12}  {:>12}\n",
            "", "violence", "non-violence"
        ));
        for actual in [Label::Violence, Label::NonViolence] {
            s.push_str(&format!(
                "{:>14}  {:>12}  {:>12}\n",
                actual.as_str(),
                self.count(actual, Label::Violence),
                self.count(actual, Label::NonViolence),
            ));
        }
        s.push_str(&format!(
            "accuracy = {} ({}/{})\n",
            self.accuracy(),
            self.counts[0][0] + self.counts[1][1],
            self.total()
        ));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("actual,predicted_violence,predicted_non_violence\n");
        for actual in [Label::Violence, Label::NonViolence] {
            s.push_str(&format!(
                "{},{},{}\n",
                actual.as_str(),
                self.count(actual, Label::Violence),
                self.count(actual, Label::NonViolence),
            ));
        }
        s
    }
}

/// Predicted class from a probability pair; ties resolve to violence
/// (the lower class index), keeping confusion matrices reproducible.
pub fn argmax_label(probs: &[f32]) -> Label {
    if probs[0] >= probs[1] {
        Label::Violence
    } else {
        Label::NonViolence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub accuracy: f64,
}

/// Progress of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_period: usize,
    pub best_val_accuracy: f64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn new(epochs: usize, batch_size: usize, validation_period: usize) -> Self {
        TrainRun {
            epochs,
            batch_size,
            validation_period,
            // Below any reachable accuracy, so the first validation always
            // checkpoints.
            best_val_accuracy: -1.0,
            best_epoch: None,
            history: Vec::new(),
        }
    }
}

/// Append-only metrics CSV: `epoch,phase,loss,accuracy`.
pub struct MetricsLog {
    writer: BufWriter<File>,
    pub path: PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        writer
            .write_all(b"epoch,phase,loss,accuracy\n")
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        writeln!(
            self.writer,
            "{},{},{},{}",
            record.epoch, record.phase, record.loss, record.accuracy
        )
        .map_err(|e| Error::io(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Everything a training loop needs besides the data.
pub struct TrainContext<'a> {
    pub model: &'a ModelConfig,
    pub pipeline: &'a PipelineConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_period: usize,
}

/// One pass over the training split in seed-shuffled batches, one optimizer
/// step per batch. Returns the epoch's mean per-clip loss and accuracy.
/// Clips that fail preprocessing are skipped with a warning, never silently.
pub fn train_epoch(
    params: &mut ModelParams<f32>,
    optimizer: &mut OptimizerState<f32>,
    clips: &[VideoClip],
    ctx: &TrainContext,
    epoch: usize,
) -> Result<(f64, f64)> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let epoch_seed = derive_seed(ctx.seed, epoch as u64);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    Rng::new(epoch_seed).shuffle(&mut order);

    let mut total_loss = 0.0f64;
    let mut correct = 0usize;
    let mut counted = 0usize;
    for batch in order.chunks(ctx.batch_size.max(1)) {
        let tape = Tape::new();
        let mut losses = Vec::with_capacity(batch.len());
        for &clip_idx in batch {
            let clip = &clips[clip_idx];
            let clip_seed = derive_seed(epoch_seed, hash_str(&clip.source_id));
            let frames = match prepare_clip_train(clip, ctx.pipeline, clip_seed) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!(
                        "warning: skipping clip {} in epoch {epoch}: {e}",
                        clip.source_id
                    );
                    continue;
                }
            };
            let (logits, _) = model_forward(&tape, &frames, params, ctx.model)?;
            let (probs, loss) = tape.softmax_cross_entropy(&logits, clip.label.index())?;
            total_loss += loss.item()?.to_f64();
            if argmax_label(probs.data()) == clip.label {
                correct += 1;
            }
            counted += 1;
            losses.push(loss);
        }
        if losses.is_empty() {
            continue;
        }
        let mut batch_loss = losses[0].clone();
        for l in &losses[1..] {
            batch_loss = tape.add(&batch_loss, l)?;
        }
        let batch_loss = tape.scale(&batch_loss, 1.0 / losses.len() as f32);
        tape.backward(&batch_loss)?;
        optimizer.step(params)?;
    }
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "every training clip failed preprocessing".into(),
        ));
    }
    Ok((total_loss / counted as f64, correct as f64 / counted as f64))
}

/// Evaluation-mode pass over a clip list: center crop, no augmentation.
fn eval_pass(
    params: &ModelParams<f32>,
    clips: &[VideoClip],
    ctx: &TrainContext,
) -> Result<(f64, ConfusionMatrix)> {
    let mut matrix = ConfusionMatrix::default();
    let mut total_loss = 0.0f64;
    for clip in clips {
        let frames = prepare_clip_eval(clip, ctx.pipeline)?;
        let tape = Tape::inference();
        let (logits, _) = model_forward(&tape, &frames, params, ctx.model)?;
        let (probs, loss) = tape.softmax_cross_entropy(&logits, clip.label.index())?;
        total_loss += loss.item()?.to_f64();
        matrix.record(clip.label, argmax_label(probs.data()));
    }
    Ok((total_loss / clips.len() as f64, matrix))
}

/// Full validation pass. Strict improvement over the best accuracy so far
/// writes a checkpoint; ties do not.
pub fn holdout_validate(
    params: &ModelParams<f32>,
    clips: &[VideoClip],
    ctx: &TrainContext,
    epoch: usize,
    run: &mut TrainRun,
    checkpoint_path: Option<&Path>,
) -> Result<EpochRecord> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("empty validation split".into()));
    }
    let (loss, matrix) = eval_pass(params, clips, ctx)?;
    let accuracy = matrix.accuracy();
    if accuracy > run.best_val_accuracy {
        run.best_val_accuracy = accuracy;
        run.best_epoch = Some(epoch);
        if let Some(path) = checkpoint_path {
            save_checkpoint(params, None, path)?;
        }
    }
    let record = EpochRecord {
        epoch,
        phase: Phase::Val,
        loss,
        accuracy,
    };
    run.history.push(record.clone());
    Ok(record)
}

/// Test-split evaluation: argmax per clip, confusion matrix and accuracy.
pub fn evaluate(
    params: &ModelParams<f32>,
    clips: &[VideoClip],
    ctx: &TrainContext,
) -> Result<(f64, ConfusionMatrix)> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("empty test split".into()));
    }
    let (_, matrix) = eval_pass(params, clips, ctx)?;
    Ok((matrix.accuracy(), matrix))
}

/// Predict one clip: label plus class probabilities in class-index order.
pub fn predict_frames(
    params: &ModelParams<f32>,
    frames: &[crate::video::RawFrame],
    ctx: &TrainContext,
) -> Result<(Label, [f32; 2])> {
    let prepared = crate::video::prepare_frames_eval(frames, ctx.pipeline)?;
    let tape = Tape::inference();
    let (_, probs) = model_forward(&tape, &prepared, params, ctx.model)?;
    let p = probs.data();
    Ok((argmax_label(p), [p[0], p[1]]))
}

/// The whole training protocol: epochs of batched RMSprop, hold-out
/// validation every `validation_period` epochs and at the final epoch,
/// best-checkpoint retention. Optionally stops once training accuracy
/// reaches `stop_at_train_accuracy`.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    params: &mut ModelParams<f32>,
    train_clips: &[VideoClip],
    val_clips: &[VideoClip],
    ctx: &TrainContext,
    checkpoint_path: Option<&Path>,
    mut metrics: Option<&mut MetricsLog>,
    stop_at_train_accuracy: Option<f64>,
) -> Result<TrainRun> {
    let mut optimizer = OptimizerState::new(ctx.optimizer.clone());
    let mut run = TrainRun::new(ctx.epochs, ctx.batch_size, ctx.validation_period);
    for epoch in 1..=ctx.epochs {
        let (loss, accuracy) = train_epoch(params, &mut optimizer, train_clips, ctx, epoch)?;
        let record = EpochRecord {
            epoch,
            phase: Phase::Train,
            loss,
            accuracy,
        };
        run.history.push(record.clone());
        if let Some(m) = metrics.as_deref_mut() {
            m.append(&record)?;
        }

        let reached_target = stop_at_train_accuracy
            .map(|t| accuracy >= t)
            .unwrap_or(false);
        let is_final = epoch == ctx.epochs || reached_target;
        if !val_clips.is_empty() && (epoch % ctx.validation_period == 0 || is_final) {
            let record =
                holdout_validate(params, val_clips, ctx, epoch, &mut run, checkpoint_path)?;
            if let Some(m) = metrics.as_deref_mut() {
                m.append(&record)?;
            }
        }
        if reached_target {
            break;
        }
    }
    // Without a validation split there is no best checkpoint; persist the
    // final parameters instead so downstream commands have a model to load.
    if val_clips.is_empty() {
        if let Some(path) = checkpoint_path {
            save_checkpoint(params, None, path)?;
        }
    }
    Ok(run)
}
