//! Minibatch training with input corruption, dropout and best-validation
//! model selection.
//!
//! Every example draws its corruption mask and dropout masks from its own
//! fork of the run seed (keyed by epoch and record index), and per-example
//! gradients are summed in batch order. Results are therefore bitwise
//! identical for a given seed whatever the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::data::{prepare, write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::eval::{check_compatible, outcomes};
use crate::layers::Mode;
use crate::model::{corrupt, loss, DaeModel, LossBreakdown, ModelGrads};
use crate::numeric::{Matrix, Rng, Stream};
use crate::optim::{clip_global_norm, AdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub lambda: f64,
    pub mask_rate: f64,
    pub dropout_rate: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub workers: usize,
    /// Rescale minibatch gradients to at most this global L2 norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 128,
            lr: 0.001,
            seed: 0,
            lambda: 0.1,
            mask_rate: 0.1,
            dropout_rate: 0.2,
            split: [0.5, 0.25, 0.25],
            workers: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return bad("epochs, batch_size and workers must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("split {:?} must be fractions summing to 1", self.split));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip {c} must be positive"));
            }
        }
        Ok(())
    }
}

/// Record indices of each partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `data` so every (class, SNR) group is divided by the same
/// fractions. Group members are shuffled with the seed before cutting.
pub fn stratified_split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    let mut groups: BTreeMap<(usize, i16), Vec<usize>> = BTreeMap::new();
    for (i, r) in data.records.iter().enumerate() {
        groups.entry((r.label, r.snr_db)).or_default().push(i);
    }
    let root = Rng::new(seed).substream(Stream::Split);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (g, members) in groups.values_mut().enumerate() {
        root.fork(g as u64).shuffle(members);
        let len = members.len();
        let n_train = ((len as f64 * fractions[0]).round() as usize).min(len);
        let n_val = ((len as f64 * fractions[1]).round() as usize).min(len - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub clf: f64,
    /// NaN when the validation split is empty.
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

impl TrainLog {
    pub const HEADER: &'static str = "# epoch\ttotal\trecon\tclf\tval_acc\tseconds";

    /// One tab-separated line per epoch after a comment header.
    pub fn to_tsv(&self) -> String {
        self.render(true)
    }

    /// Same as [`TrainLog::to_tsv`] without the wall-clock column, which is
    /// the only part that varies between identical runs.
    pub fn to_tsv_untimed(&self) -> String {
        self.render(false)
    }

    fn render(&self, timed: bool) -> String {
        let mut out = String::new();
        if timed {
            out.push_str(Self::HEADER);
        } else {
            out.push_str("# epoch\ttotal\trecon\tclf\tval_acc");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}\t{}\t{}\t{}\t{}", r.epoch, r.total, r.recon, r.clf, r.val_acc);
            if timed {
                let _ = write!(out, "\t{:.3}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DaeModel,
    pub log: TrainLog,
    pub split: Split,
}

/// Clean model inputs (after the feature transform) and labels.
pub fn model_inputs(model: &DaeModel, data: &Dataset) -> Result<Vec<(Matrix, usize)>> {
    check_compatible(model, data)?;
    data.records
        .iter()
        .map(|r| Ok((prepare(&r.features, model.config.features)?, r.label)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct LossSums {
    total: f64,
    recon: f64,
    clf: f64,
}

impl LossSums {
    fn add(&mut self, l: &LossBreakdown) {
        self.total += l.total;
        self.recon += l.recon;
        self.clf += l.clf;
    }
}

fn example_rngs(root: &Rng, epoch: usize, index: usize) -> (Rng, Rng) {
    let fork = |s: Stream| root.substream(s).fork(epoch as u64).fork(index as u64);
    (fork(Stream::Masking), fork(Stream::Dropout))
}

/// Corrupt → forward(Train) → loss against the clean input → backward.
/// Adds the gradient into `grads`.
fn example_gradient(
    model: &DaeModel,
    clean: &Matrix,
    label: usize,
    masking: &mut Rng,
    dropout: &mut Rng,
    grads: &mut ModelGrads,
) -> Result<LossBreakdown> {
    let (tilde, _) = corrupt(clean, model.config.mask_rate, masking)?;
    let pass = model.forward(&tilde, Mode::Train, dropout)?;
    let l = loss(clean, &pass.x_hat, label, &pass.probs, model.config.lambda)?;
    if !l.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", l.total)));
    }
    model.backward_acc(&pass, clean, label, grads)?;
    Ok(l)
}

/// Mean gradient over `batch` (record indices into `inputs`) written to
/// `acc`, plus the summed losses.
fn batch_gradient(
    model: &DaeModel,
    inputs: &[(Matrix, usize)],
    batch: &[usize],
    epoch: usize,
    root: &Rng,
    workers: usize,
    acc: &mut ModelGrads,
) -> Result<LossSums> {
    acc.zero();
    let mut sums = LossSums::default();
    let one = |idx: usize, scratch: &mut ModelGrads| -> Result<LossBreakdown> {
        scratch.zero();
        let (mut masking, mut dropout) = example_rngs(root, epoch, idx);
        let (x, label) = &inputs[idx];
        example_gradient(model, x, *label, &mut masking, &mut dropout, scratch)
    };
    if workers <= 1 || batch.len() < 2 {
        let mut scratch = ModelGrads::zeros_like(model);
        for &idx in batch {
            sums.add(&one(idx, &mut scratch)?);
            acc.add_assign(&scratch);
        }
    } else {
        let chunk = batch.len().div_ceil(workers);
        let per_worker: Vec<Result<Vec<(ModelGrads, LossBreakdown)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|&idx| {
                                let mut g = ModelGrads::zeros_like(model);
                                let l = one(idx, &mut g)?;
                                Ok((g, l))
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        });
        for part in per_worker {
            for (g, l) in part? {
                sums.add(&l);
                acc.add_assign(&g);
            }
        }
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok(sums)
}

fn accuracy(model: &DaeModel, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let scored = outcomes(model, data, indices)?;
    let hits = scored.iter().filter(|(t, p, _)| t == p).count();
    Ok(hits as f64 / scored.len() as f64)
}

/// Trains `model` on the training partition of `data` and returns the
/// weights with the best validation accuracy (ties go to the later epoch).
pub fn train(mut model: DaeModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.config.lambda = cfg.lambda;
    model.config.mask_rate = cfg.mask_rate;
    model.config.dropout_rate = cfg.dropout_rate;
    model.validate()?;
    let inputs = model_inputs(&model, data)?;
    let split = stratified_split(data, cfg.split, cfg.seed)?;
    if split.train.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    if split.val.is_empty() {
        log::warn!("validation split is empty; the last epoch's weights are returned");
    }

    let root = Rng::new(cfg.seed);
    let mut adam = AdamState::for_model(&model, cfg.lr);
    let mut grads = ModelGrads::zeros_like(&model);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, DaeModel)> = None;
    let mut order = split.train.clone();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.copy_from_slice(&split.train);
        root.substream(Stream::Shuffle).fork(epoch as u64).shuffle(&mut order);
        let mut sums = LossSums::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |detail: String| Error::Divergence {
                epoch,
                batch: b,
                detail,
            };
            let s = batch_gradient(&model, &inputs, batch, epoch, &root, cfg.workers, &mut grads)
                .map_err(|e| match e {
                    Error::NonFinite(d) => diverged(d),
                    other => other,
                })?;
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut grads, max);
            }
            adam.step(&mut model, &grads).map_err(|e| match e {
                Error::NonFinite(d) => diverged(d),
                other => other,
            })?;
            sums.total += s.total;
            sums.recon += s.recon;
            sums.clf += s.clf;
        }
        let count = order.len() as f64;
        let val_acc = accuracy(&model, data, &split.val)?;
        let record = EpochRecord {
            epoch,
            total: sums.total / count,
            recon: sums.recon / count,
            clf: sums.clf / count,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (recon {:.5}, clf {:.5}), val acc {:.4}, {:.1}s",
            record.total,
            record.recon,
            record.clf,
            record.val_acc,
            record.seconds
        );
        log.records.push(record);
        let better = match &best {
            None => true,
            Some((acc, _)) => val_acc.is_nan() || val_acc >= *acc,
        };
        if better {
            best = Some((val_acc, model.clone()));
            log.best_epoch = epoch;
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, log, split })
}
