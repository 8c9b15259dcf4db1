//! Supervised training of the transformer.
//!
//! Training windows of `seq_len` epochs are sampled from every recording at
//! a fixed step, shuffled, and batched. Each step minimises the masked
//! cross-entropy with AdamW after global-norm gradient clipping. After
//! every pass over the windows the validation loss is computed on whole
//! recordings through [`crate::tiling`]; training stops once it has not
//! improved for `patience` passes and the best weights are restored.

mod optim;

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, ParamId};
use crate::config::ConfigFile;
use crate::metrics::{map_stages, Hypnogram, Strategy};
use crate::model::{Batch, Model, Pass, PatchedInputs};
use crate::tiling::{infer_long, window_starts};
use crate::{Error, Result, Scalar};

pub use optim::{clip_grad_norm, AdamW, AdamWConfig};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Step between sampled window starts, in epochs.
    pub sample_step: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub max_epochs: usize,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub bn_momentum: f64,
    /// Caps the optimizer steps per pass; 0 means a full pass.
    pub max_batches_per_epoch: usize,
    /// Tiling step used for the validation loss, in epochs.
    pub val_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-3,
            batch_size: 8,
            seq_len: 240,
            sample_step: 10,
            patience: 3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            max_epochs: 50,
            grad_clip: 1.0,
            bn_momentum: 0.1,
            max_batches_per_epoch: 0,
            val_step: crate::tiling::DEFAULT_STEP_EPOCHS,
        }
    }
}

const KEYS: &[&str] = &[
    "lr",
    "weight_decay",
    "batch_size",
    "seq_len",
    "sample_step",
    "patience",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
    "max_epochs",
    "grad_clip",
    "bn_momentum",
    "max_batches_per_epoch",
    "val_step",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size >= 1
            && self.seq_len >= 1
            && self.sample_step >= 1
            && self.patience >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.max_epochs >= 1
            && self.grad_clip > 0.0
            && (0.0..=1.0).contains(&self.bn_momentum)
            && self.val_step >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn from_config(cfg: &ConfigFile, section: &str) -> Result<Self> {
        cfg.check_known(section, KEYS)?;
        let mut c = Self::default();
        cfg.read_into(section, "lr", &mut c.lr)?;
        cfg.read_into(section, "weight_decay", &mut c.weight_decay)?;
        cfg.read_into(section, "batch_size", &mut c.batch_size)?;
        cfg.read_into(section, "seq_len", &mut c.seq_len)?;
        cfg.read_into(section, "sample_step", &mut c.sample_step)?;
        cfg.read_into(section, "patience", &mut c.patience)?;
        cfg.read_into(section, "beta1", &mut c.beta1)?;
        cfg.read_into(section, "beta2", &mut c.beta2)?;
        cfg.read_into(section, "adam_eps", &mut c.adam_eps)?;
        cfg.read_into(section, "seed", &mut c.seed)?;
        cfg.read_into(section, "max_epochs", &mut c.max_epochs)?;
        cfg.read_into(section, "grad_clip", &mut c.grad_clip)?;
        cfg.read_into(section, "bn_momentum", &mut c.bn_momentum)?;
        cfg.read_into(
            section,
            "max_batches_per_epoch",
            &mut c.max_batches_per_epoch,
        )?;
        cfg.read_into(section, "val_step", &mut c.val_step)?;
        c.validate()?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut ConfigFile, section: &str) {
        cfg.set(section, "lr", self.lr);
        cfg.set(section, "weight_decay", self.weight_decay);
        cfg.set(section, "batch_size", self.batch_size);
        cfg.set(section, "seq_len", self.seq_len);
        cfg.set(section, "sample_step", self.sample_step);
        cfg.set(section, "patience", self.patience);
        cfg.set(section, "beta1", self.beta1);
        cfg.set(section, "beta2", self.beta2);
        cfg.set(section, "adam_eps", self.adam_eps);
        cfg.set(section, "seed", self.seed);
        cfg.set(section, "max_epochs", self.max_epochs);
        cfg.set(section, "grad_clip", self.grad_clip);
        cfg.set(section, "bn_momentum", self.bn_momentum);
        cfg.set(section, "max_batches_per_epoch", self.max_batches_per_epoch);
        cfg.set(section, "val_step", self.val_step);
    }
}

/// Patched inputs with per-epoch targets in the model's class space.
#[derive(Debug, Clone)]
pub struct Recording {
    pub name: String,
    pub inputs: PatchedInputs,
    pub labels: Vec<usize>,
}

impl Recording {
    /// Pairs inputs with a hypnogram, mapping five-class labels to
    /// `target`. Labels beyond the last whole input epoch are dropped.
    pub fn new(
        name: impl Into<String>,
        inputs: PatchedInputs,
        hyp: &Hypnogram,
        target: Strategy,
    ) -> Result<Self> {
        let mapped = if hyp.strategy == target {
            hyp.clone()
        } else {
            map_stages(hyp, target)?
        };
        let n = inputs.n();
        if mapped.len() < n {
            return Err(Error::Shape(format!(
                "{} labels for {n} input epochs",
                mapped.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels: mapped.stages[..n].to_vec(),
        })
    }
}

/// Mean of `−ln p[label]` over unmasked epochs of a `[C, N]` probability
/// matrix.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let n = probs.ncols();
    if labels.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "{n} epochs but {} labels and {} mask flags",
            labels.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (j, (&y, &keep)) in labels.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        if y >= probs.nrows() {
            return Err(Error::Label(format!(
                "class {y} with {} classes",
                probs.nrows()
            )));
        }
        total -= probs[[y, j]].ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Undefined(
            "cross-entropy with every epoch masked".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Start epochs of the training windows sampled from a recording.
pub fn sample_sequences(total_epochs: usize, seq_len: usize, step: usize) -> Vec<usize> {
    window_starts(total_epochs, seq_len, step)
}

/// Losses after one pass over the training windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("epoch,train_loss,val_loss") {
            return Err(Error::Format(
                "history CSV must start with `epoch,train_loss,val_loss`".into(),
            ));
        }
        let records = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || Error::Format(format!("bad history row `{l}`"));
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(EpochRecord {
                    epoch: f[0].trim().parse().map_err(|_| bad())?,
                    train_loss: f[1].trim().parse().map_err(|_| bad())?,
                    val_loss: f[2].trim().parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

/// Patience-based stopping on a strictly decreasing validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    /// 1-based epoch of the best loss, 0 before any observation.
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records the loss of `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Weights of the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub history: History,
    pub best_epoch: usize,
    pub steps: u64,
}

/// Training batch assembled from sampled windows.
pub struct LabelledBatch<T> {
    pub batch: Batch<T>,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> LabelledBatch<T> {
    /// Windows `(recording, start)` of `seq_len` epochs, zero-padded and
    /// masked where they run past a recording's end.
    pub fn gather(set: &[Recording], picks: &[(usize, usize)], seq_len: usize) -> Result<Self> {
        let mut windows = Vec::with_capacity(picks.len());
        let mut labels = Vec::with_capacity(picks.len() * seq_len);
        let mut mask = Vec::with_capacity(picks.len() * seq_len);
        for &(r, start) in picks {
            let rec = &set[r];
            let (w, m) = rec.inputs.window(start, seq_len);
            for (j, &valid) in m.iter().enumerate() {
                labels.push(if valid { rec.labels[start + j] } else { 0 });
            }
            mask.extend(m);
            windows.push(w);
        }
        let refs: Vec<&PatchedInputs> = windows.iter().collect();
        Ok(Self {
            batch: Batch::from_windows(&refs)?,
            labels,
            mask,
        })
    }
}

/// Loss of a batch under training-mode semantics without updating anything.
pub fn batch_loss<T: Scalar>(
    model: &Model<T>,
    lb: &LabelledBatch<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &lb.batch, Pass::train(rng))?;
    let loss = g.softmax_cross_entropy(out.logits, &lb.labels, &lb.mask);
    Ok(g.value(loss)[[0, 0]].f64())
}

/// One optimizer step; returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    lb: &LabelledBatch<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &lb.batch, Pass::train(rng))?;
    let loss = g.softmax_cross_entropy(out.logits, &lb.labels, &lb.mask);
    let value = g.value(loss)[[0, 0]].f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    g.backward(loss);
    let mut grads: Vec<(ParamId, Array2<T>)> = g
        .param_grads()
        .into_iter()
        .map(|(id, gr)| (id, gr.clone()))
        .collect();
    clip_grad_norm(&mut grads, cfg.grad_clip);
    let weights = model.store.weights();
    opt.step(&mut model.store, &weights, &grads)?;
    model.apply_bn_updates(&out.bn_updates, cfg.bn_momentum);
    Ok(value)
}

/// Cross-entropy over every epoch of every recording, using the
/// nearest-centre window's probabilities for each epoch.
pub fn validation_loss<T: Scalar>(model: &Model<T>, set: &[Recording], step: usize) -> Result<f64> {
    let sums = set
        .par_iter()
        .map(|rec| {
            let probs = infer_long(model, &rec.inputs, step)?
                .probs()
                .mapv(|v| v.f64());
            let n = rec.labels.len();
            Ok((
                cross_entropy(&probs, &rec.labels, &vec![true; n])? * n as f64,
                n,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (total, count) = sums.iter().fold((0.0, 0), |(t, c), &(s, n)| (t + s, c + n));
    Ok(total / count as f64)
}

/// All `(recording, start)` training windows.
pub fn training_windows(set: &[Recording], seq_len: usize, step: usize) -> Vec<(usize, usize)> {
    set.iter()
        .enumerate()
        .flat_map(|(r, rec)| {
            sample_sequences(rec.inputs.n(), seq_len, step)
                .into_iter()
                .map(move |s| (r, s))
        })
        .collect()
}

/// Trains `model` with early stopping; deterministic given `cfg.seed`.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_set: &[Recording],
    val_set: &[Recording],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if cfg.seq_len != model.config.seq_len {
        return Err(Error::Config(format!(
            "training seq_len {} differs from the model's {}",
            cfg.seq_len, model.config.seq_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.adamw(), model.store.len());
    let mut windows = training_windows(train_set, cfg.seq_len, cfg.sample_step);
    let mut history = History::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();

    for epoch in 1..=cfg.max_epochs {
        windows.shuffle(&mut rng);
        let mut chunks: Vec<&[(usize, usize)]> = windows.chunks(cfg.batch_size).collect();
        if cfg.max_batches_per_epoch > 0 {
            chunks.truncate(cfg.max_batches_per_epoch);
        }
        let mut loss_sum = 0.0;
        for picks in &chunks {
            let lb = LabelledBatch::gather(train_set, picks, cfg.seq_len)?;
            match train_step(&mut model, &mut opt, &lb, cfg, &mut rng) {
                Ok(l) => loss_sum += l,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, history }),
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / chunks.len() as f64;
        let val_loss = validation_loss(&model, val_set, cfg.val_step)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::info!("epoch {epoch}: train loss {train_loss:.4}, validation loss {val_loss:.4}");
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, history });
        }
        if stopper.observe(epoch, val_loss) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch,
        steps: opt.step,
    })
}

#[cfg(test)]
mod tests;
