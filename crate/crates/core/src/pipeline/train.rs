//! Minibatch training with mixup, KL loss, L2 regularization and Adam.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::combine::argmax;
use super::mixup::{mixup_batch, Batch};
use super::PipelineError;
use crate::models::{save_checkpoint, Model};
use crate::nn::{flush_denormals, AdamConfig, AdamState, Graph, Mode, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 coefficient; the penalty is `lambda / 2 * sum ||w||^2`.
    pub lambda: f64,
    /// Beta distribution parameter; 0 disables mixup.
    pub mixup_alpha: f64,
    pub seed: u64,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 100, lambda: 1e-4, mixup_alpha: 0.4, seed: 0, lr: 1e-4 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lambda >= 0.0) || !(self.mixup_alpha >= 0.0) {
            return bad("lambda and mixup_alpha must be nonnegative");
        }
        Ok(())
    }
}

/// In-memory training examples: `n` patches of `rows x cols` with soft
/// labels over `n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<f32>,
    pub labels: Vec<f32>,
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_classes: usize,
}

impl TrainingSet {
    pub fn new(rows: usize, cols: usize, n_classes: usize) -> Self {
        Self { inputs: Vec::new(), labels: Vec::new(), n: 0, rows, cols, n_classes }
    }

    pub fn push(&mut self, patch: &[f32], class: usize) -> Result<(), PipelineError> {
        if patch.len() != self.rows * self.cols || class >= self.n_classes {
            return Err(PipelineError::ShapeMismatch(format!("patch of {} values, class {class}", patch.len())));
        }
        self.inputs.extend_from_slice(patch);
        self.labels.extend((0..self.n_classes).map(|c| if c == class { 1.0 } else { 0.0 }));
        self.n += 1;
        Ok(())
    }

    fn feature_len(&self) -> usize {
        self.rows * self.cols
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        let (f, c) = (self.feature_len(), self.n_classes);
        let mut inputs = Vec::with_capacity(idx.len() * f);
        let mut labels = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            inputs.extend_from_slice(&self.inputs[i * f..(i + 1) * f]);
            labels.extend_from_slice(&self.labels[i * c..(i + 1) * c]);
        }
        Batch { inputs, labels, n: idx.len(), feature_len: f, n_classes: c }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example KL plus the per-batch L2 term, averaged over
    /// examples.
    pub loss: f64,
    /// Fraction of examples whose predicted class matches the argmax of
    /// their (mixed) target, measured during the epoch.
    pub train_acc: f64,
    pub seconds: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!("{}\t{:.6}\t{:.4}\t{:.2}", self.epoch, self.loss, self.train_acc, self.seconds)
    }
}

/// Owns a model and its optimizer state; advances one epoch at a time.
/// All randomness (shuffling, mixup, dropout) comes from one generator
/// seeded by the config, so equal seeds give identical runs.
pub struct Trainer {
    model: Model,
    adam: AdamState,
    config: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let adam = AdamState::new(model.store(), AdamConfig { lr: config.lr, ..AdamConfig::default() });
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_7EA1);
        Ok(Self { model, adam, config, rng, epoch: 0 })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<EpochStats, PipelineError> {
        if data.n == 0 {
            return Err(PipelineError::SplitEmpty);
        }
        if data.n_classes != self.model.config().n_classes {
            return Err(PipelineError::ShapeMismatch(format!("{} label classes, model has {}", data.n_classes, self.model.config().n_classes)));
        }
        let start = Instant::now();
        self.epoch += 1;
        let mut order: Vec<usize> = (0..data.n).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (bi, idx) in order.chunks(self.config.batch_size).enumerate() {
            let mut batch = data.gather(idx);
            // A trailing singleton batch has no mixup partner.
            if self.config.mixup_alpha > 0.0 && batch.n >= 2 {
                batch = mixup_batch(&batch, self.config.mixup_alpha, &mut self.rng)?.0;
            }
            let (loss, hits) = self.step(&batch, data.rows, data.cols)?;
            if !loss.is_finite() {
                return Err(PipelineError::NonFiniteLoss { epoch: self.epoch, batch: bi, loss });
            }
            loss_sum += loss;
            correct += hits;
        }
        Ok(EpochStats {
            epoch: self.epoch,
            loss: loss_sum / data.n as f64,
            train_acc: correct as f64 / data.n as f64,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn step(&mut self, batch: &Batch, rows: usize, cols: usize) -> Result<(f64, usize), PipelineError> {
        flush_denormals();
        let n = batch.n;
        let (grads, bn_updates, loss, hits) = {
            let mut g = Graph::new(self.model.store(), Mode::Train);
            let x = g.input(Tensor::new(&[n, rows, cols, 1], batch.inputs.clone())?);
            let fwd = self.model.forward(&mut g, x, &mut self.rng)?;
            let target = Tensor::new(&[n, batch.n_classes], batch.labels.clone())?;
            let kl = g.kl_div(fwd.probs, &target)?;
            let decayed: Vec<_> = self.model.decayed().into_iter().map(|id| g.param(id)).collect();
            let l2 = g.l2_penalty(&decayed, self.config.lambda);
            let total = g.add(kl, l2)?;
            let loss = f64::from(g.value(total).data()[0]);
            let probs = g.value(fwd.probs).data();
            let c = batch.n_classes;
            let hits = (0..n).filter(|&i| argmax(&probs[i * c..(i + 1) * c]) == argmax(batch.label_row(i))).count();
            if !f64::is_finite(loss) {
                return Ok((loss, hits));
            }
            (g.backward(total), g.take_bn_updates(), loss, hits)
        };
        let store = self.model.store_mut();
        store.zero_grad();
        grads.accumulate_into(store);
        self.adam.step(store);
        self.model.apply_bn_updates(&bn_updates);
        Ok((loss, hits))
    }
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// Epoch of the lowest loss; 0 when no epoch ran.
    pub best_epoch: usize,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train.log";

/// Full training run writing `final.ckpt`, `best.ckpt` (lowest epoch loss)
/// and `train.log` (`epoch loss train_acc seconds`) into `out_dir`.
pub fn train(model: Model, data: &TrainingSet, config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    let best_checkpoint = out_dir.join(BEST_CHECKPOINT);
    let mut log = fs::File::create(out_dir.join(TRAIN_LOG))?;
    writeln!(log, "epoch\tloss\ttrain_acc\tseconds")?;
    let mut trainer = Trainer::new(model, config.clone())?;
    save_checkpoint(trainer.model(), &best_checkpoint)?;
    let mut best = (f64::INFINITY, 0);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch(data)?;
        writeln!(log, "{}", stats.log_line())?;
        log::info!("epoch {}", stats.log_line());
        if stats.loss < best.0 {
            best = (stats.loss, stats.epoch);
            save_checkpoint(trainer.model(), &best_checkpoint)?;
        }
        history.push(stats);
    }
    save_checkpoint(trainer.model(), &final_checkpoint)?;
    Ok(TrainOutcome { history, final_checkpoint, best_checkpoint, best_epoch: best.1 })
}
