use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_ppm, Manifest, Split};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::argmax;
use crate::model::Model;
use crate::optim::{apply_phase, OptimizerState, Phase};
use crate::seed::{derive_seed, shuffled};
use crate::tensor::Tensor;
use crate::zoo::{Architecture, ModelConfig, INPUT_CHANNELS, INPUT_SIZE, NUM_CLASSES};

use super::checkpoint::Checkpoint;
use super::loss::{cross_entropy_from_logits, one_hot};

/// Quantity watched by early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Second-phase budget; ignored for models without a fine-tuning phase.
    pub fine_tune_epochs: usize,
    pub patience: usize,
    pub monitor: Monitor,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        TrainConfig {
            model,
            seed,
            batch_size: 8,
            epochs: 70,
            fine_tune_epochs: 30,
            patience: 10,
            monitor: Monitor::ValLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn phases(&self) -> Vec<(Phase, usize)> {
        let mut out = vec![(Phase::One, self.epochs)];
        if self.model.architecture == Architecture::Resnet50 && self.fine_tune_epochs > 0 {
            out.push((Phase::Two, self.fine_tune_epochs));
        }
        out
    }
}

/// Images scaled to `[0, 1]` with their class indices.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let expected = [INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS];
        if let Some(bad) = images.iter().position(|t| t.shape() != expected) {
            return Err(Error::Data(format!(
                "image {bad} has shape {:?}, expected {expected:?}",
                images[bad].shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Label(format!("class index {bad} out of range")));
        }
        Ok(Dataset { images, labels })
    }

    /// Load one split of a manifest; relative paths resolve against `base`.
    pub fn from_manifest(manifest: &Manifest, split: Split, base: &Path) -> Result<Self> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for rec in manifest.records.iter().filter(|r| r.split == split) {
            let path = base.join(&rec.path);
            let img = read_ppm(&path)?;
            if img.shape() != [INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS] {
                return Err(Error::Image {
                    path,
                    detail: format!("expected 99x99 RGB, got {:?}", img.shape()),
                });
            }
            images.push(img.map(|v| v / 255.0));
            labels.push(rec.class.index());
        }
        Dataset::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    /// Stack the given samples into an `(N, 99, 99, 3)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let imgs: Vec<Tensor> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Ok((Tensor::stack(&imgs)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counting across phases.
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    /// The epoch callback asked to stop.
    Requested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    /// Epoch whose weights were restored at the end of the phase.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub phases: Vec<PhaseSummary>,
}

impl History {
    pub fn best_epoch(&self) -> Option<usize> {
        self.phases.last().map(|p| p.best_epoch)
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.phases.last().map(|p| p.stop_reason)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// SHA-256 over everything except wall-clock times, so identical runs
    /// hash identically.
    pub fn digest(&self) -> String {
        let mut timeless = self.clone();
        timeless.records.iter_mut().for_each(|r| r.seconds = 0.0);
        let json = serde_json::to_vec(&timeless).expect("history serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Patience bookkeeping; epochs are compared by number, not by count of
/// calls, so a phase may start at any epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    monitor: Monitor,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize, monitor: Monitor) -> Self {
        EarlyStopping {
            patience,
            monitor,
            best: None,
        }
    }

    fn score(&self, val_loss: f64, val_accuracy: f64) -> f64 {
        match self.monitor {
            Monitor::ValLoss => -val_loss,
            Monitor::ValAccuracy => val_accuracy,
        }
    }

    /// Record an epoch; returns true when it is the new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, val_accuracy: f64) -> bool {
        let s = self.score(val_loss, val_accuracy);
        let better = match self.best {
            None => true,
            Some((_, b)) => s > b,
        };
        if better {
            self.best = Some((epoch, s));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(b, _)| epoch.saturating_sub(b) >= self.patience)
    }
}

/// What the epoch callback wants next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    pub optimizer: OptimizerState,
    pub checkpoint: Checkpoint,
}

/// One forward/backward/update on a batch; returns `(mean loss, correct)`.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    x: &Tensor,
    labels: &[usize],
    seed: u64,
) -> Result<(f64, usize)> {
    model.zero_grad();
    let logits = model.forward_logits(x, Mode::Train, seed)?;
    let out = cross_entropy_from_logits(&logits, &one_hot(labels, NUM_CLASSES)?)?;
    if !out.loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {}", out.loss)));
    }
    model.backward_logits(&out.grad)?;
    optimizer.step(model)?;
    model.clear_caches();
    let correct = out
        .probs
        .data()
        .chunks_exact(NUM_CLASSES)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok((out.loss, correct))
}

/// Class probabilities for every sample, in order, computed in eval mode.
pub fn predict(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<Vec<[f32; NUM_CLASSES]>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk)?;
        let probs = model.forward(&x, Mode::Eval, 0)?;
        for row in probs.data().chunks_exact(NUM_CLASSES) {
            out.push(row.try_into().expect("row width"));
        }
    }
    Ok(out)
}

/// Mean cross-entropy and accuracy over a split, in eval mode.
pub fn evaluate_split(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk)?;
        let logits = model.forward_logits(&x, Mode::Eval, 0)?;
        let out = cross_entropy_from_logits(&logits, &one_hot(&labels, NUM_CLASSES)?)?;
        total += out.loss * chunk.len() as f64;
        correct += out
            .probs
            .data()
            .chunks_exact(NUM_CLASSES)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    let n = data.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Run the configured phases with per-epoch validation, early stopping and
/// best-weights restore. `on_epoch` sees every record and may end training.
pub fn train(
    model: &mut Model,
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord) -> Control,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("train and validation splits must be non-empty".into()));
    }
    let mut optimizer = OptimizerState::new(config.model.optimizer, config.model.learning_rate)?;
    let mut history = History::default();
    let mut epoch = 0usize;
    let mut step = 0u64;
    let mut last_phase = Phase::One;
    let mut requested_stop = false;

    for (phase, budget) in config.phases() {
        if requested_stop {
            break;
        }
        apply_phase(&config.model, model, &mut optimizer, phase)?;
        last_phase = phase;
        log::info!(
            "phase {} with lr {} and {} trainable parameters",
            phase.number(),
            optimizer.learning_rate,
            model.summary().trainable
        );
        let mut stopper = EarlyStopping::new(config.patience, config.monitor);
        let mut best = model.snapshot();
        let mut reason = StopReason::MaxEpochs;
        for _ in 0..budget {
            epoch += 1;
            let started = Instant::now();
            let order = shuffled(train_set.len(), derive_seed(config.seed, "shuffle", epoch as u64));
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let (x, labels) = train_set.batch(chunk)?;
                step += 1;
                let seed = derive_seed(config.seed, "dropout", step);
                let (loss, ok) = train_step(model, &mut optimizer, &x, &labels, seed).map_err(|e| match e {
                    Error::Numeric(detail) => Error::TrainingAborted {
                        epoch,
                        batch: b + 1,
                        detail,
                    },
                    other => other,
                })?;
                loss_sum += loss * chunk.len() as f64;
                correct += ok;
            }
            let (val_loss, val_accuracy) = evaluate_split(model, val_set, config.batch_size)?;
            let n = train_set.len() as f64;
            let record = EpochRecord {
                epoch,
                phase,
                train_loss: loss_sum / n,
                train_accuracy: correct as f64 / n,
                val_loss,
                val_accuracy,
                seconds: started.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch} (phase {}): loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} | {:.1}s",
                phase.number(),
                record.train_loss,
                record.train_accuracy,
                record.val_loss,
                record.val_accuracy,
                record.seconds
            );
            if stopper.observe(epoch, val_loss, val_accuracy) {
                best = model.snapshot();
            }
            let control = on_epoch(&record);
            history.records.push(record);
            if control == Control::Stop {
                reason = StopReason::Requested;
                requested_stop = true;
                break;
            }
            if stopper.should_stop(epoch) {
                reason = StopReason::EarlyStop;
                break;
            }
        }
        model.restore(&best)?;
        history.phases.push(PhaseSummary {
            phase,
            best_epoch: stopper.best_epoch().unwrap_or(epoch),
            stop_reason: reason,
        });
    }

    let checkpoint = Checkpoint::capture(
        &config.model,
        config.seed,
        model,
        &optimizer,
        epoch,
        last_phase,
        history.digest(),
    );
    Ok(TrainOutcome {
        history,
        optimizer,
        checkpoint,
    })
}
