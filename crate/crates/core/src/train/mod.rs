//! The optimization loop: per-minibatch parameter sampling, L1 loss over
//! level subbatches, and Adam with step decay.

mod adam;
mod config;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use funcnet_tensor::{Element, Tape, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

pub use adam::{AdamHyper, AdamState};
pub use config::TrainConfig;

use crate::data::{make_batch, ImageBuffer, PatchBatch};
use crate::error::{Error, Result};
use crate::eval::{evaluate_at, Checkpoint};
use crate::model::{Model, ModelKind, ModelVars, NetworkConfig};
use crate::rng::{stream, Purpose};

/// Loss above this multiple of the first loss counts towards divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive diverged iterations that abort training.
pub const DIVERGENCE_PATIENCE: u64 = 500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Scalar trainer state stored alongside the optimizer moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerState {
    pub initial_loss: Option<f64>,
    pub diverge_run: u64,
    pub adam_step: u64,
}

/// One parameter level's share of a minibatch.
pub struct LevelGroup<T> {
    pub x: f64,
    pub degraded: Tensor<T>,
    pub clean: Tensor<T>,
}

/// Mean absolute error over all groups, each group run through the network
/// at its own level.
pub fn batch_loss<'t, T: Element>(
    model: &Model<T>,
    vars: &ModelVars<'t, T>,
    tape: &'t Tape<T>,
    groups: &[LevelGroup<T>],
) -> Result<Var<'t, T>> {
    let total: usize = groups.iter().map(|g| g.clean.numel()).sum();
    let mut loss: Option<Var<'t, T>> = None;
    for g in groups {
        let input = tape.constant(g.degraded.clone())?;
        let target = tape.constant(g.clean.clone())?;
        let out = model.forward_tape(vars, g.x, input)?;
        let weight = T::from_f64_lossy(g.clean.numel() as f64 / total as f64);
        let term = out.sub(target)?.mean_abs()?.scale(weight)?;
        loss = Some(match loss {
            Some(l) => l.add(term)?,
            None => term,
        });
    }
    loss.ok_or_else(|| Error::Config("empty batch".into()))
}

/// Splits a batch into contiguous per-level groups.
pub fn level_groups(batch: &PatchBatch, levels: &[f64]) -> Result<Vec<LevelGroup<f32>>> {
    let dims = batch.clean.dims();
    let n = dims[0];
    let per = n / levels.len();
    let sample = batch.clean.numel() / n;
    let mut sub_dims = dims.to_vec();
    sub_dims[0] = per;
    let slice = |t: &Tensor<f32>, l: usize| {
        Tensor::from_vec(
            &sub_dims,
            t.data()[l * per * sample..(l + 1) * per * sample].to_vec(),
        )
    };
    levels
        .iter()
        .enumerate()
        .map(|(l, &x)| {
            Ok(LevelGroup {
                x,
                degraded: slice(&batch.degraded, l)?,
                clean: slice(&batch.clean, l)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub adam: AdamState<f32>,
    /// Completed iterations.
    pub iteration: u64,
    pub initial_loss: Option<f64>,
    pub diverge_run: u64,
}

impl Trainer {
    pub fn new(kind: ModelKind, network: NetworkConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::build(kind, network, config.seed)?;
        Trainer::from_model(model, config)
    }

    pub fn from_model(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let task_domain = config.task.domain();
        let d = model.config().domain;
        if d.lo > task_domain.lo || d.hi < task_domain.hi {
            return Err(Error::Config(format!(
                "network domain {d} does not cover the {} training range {task_domain}",
                config.task
            )));
        }
        let adam = AdamState::new(model.named_tensors().into_iter().map(|(_, t)| t));
        Ok(Trainer {
            model,
            config,
            adam,
            iteration: 0,
            initial_loss: None,
            diverge_run: 0,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            initial_loss: self.initial_loss,
            diverge_run: self.diverge_run,
            adam_step: self.adam.step,
        }
    }

    /// Parameter levels of iteration `iter`.
    pub fn levels(&self, iter: u64) -> Vec<f64> {
        let mut rng = stream(self.config.seed, Purpose::Levels, iter, 0);
        (0..self.config.levels_per_batch)
            .map(|_| self.config.task.sample_parameter(&mut rng))
            .collect()
    }

    /// Runs one optimization step on patches drawn from `images`.
    pub fn step(&mut self, images: &[ImageBuffer]) -> Result<LossReport> {
        let start = Instant::now();
        let iter = self.iteration;
        let c = &self.config;
        if images.first().map(ImageBuffer::channels) != Some(self.model.config().input_channels) {
            return Err(Error::Data(format!(
                "training images must have {} channel(s)",
                self.model.config().input_channels
            )));
        }
        let levels = self.levels(iter);
        let batch = make_batch(images, c.task, c.patch, c.batch_n, &levels, c.seed, iter)?;
        let groups = level_groups(&batch, &levels)?;

        let (loss, grads) = {
            let tape = Tape::new();
            let vars = self.model.register(&tape).map_err(|e| diverged(e, iter))?;
            let loss =
                batch_loss(&self.model, &vars, &tape, &groups).map_err(|e| diverged(e, iter))?;
            let value = loss.value().item()?.as_f64();
            let grads = tape.backward(loss).map_err(|e| diverged(e.into(), iter))?;
            let grads: Vec<_> = vars
                .all()
                .into_iter()
                .map(|v| grads.get_or_zeros(v))
                .collect();
            (value, grads)
        };
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                reason: format!("loss is {loss}"),
            });
        }

        let lr = c.lr_at(iter);
        let hyper = AdamHyper {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        };
        let mut params = self.model.tensors_mut();
        self.adam
            .update(&mut params, &grads, lr, hyper)
            .map_err(|e| match e {
                Error::Divergence { reason, .. } => Error::Divergence {
                    iteration: iter,
                    reason,
                },
                other => other,
            })?;

        let initial = *self.initial_loss.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * initial {
            self.diverge_run += 1;
            if self.diverge_run >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    iteration: iter,
                    reason: format!(
                        "loss stayed above {DIVERGENCE_FACTOR}x the initial {initial:.6} for {DIVERGENCE_PATIENCE} iterations"
                    ),
                });
            }
        } else {
            self.diverge_run = 0;
        }
        self.iteration += 1;
        Ok(LossReport {
            iteration: iter,
            loss,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Mean validation PSNR at each probe level of the task.
    pub fn validate(&self, images: &[ImageBuffer]) -> Result<Vec<f64>> {
        self.config
            .task
            .probes()
            .into_iter()
            .map(|x| {
                evaluate_at(
                    &self.model,
                    images,
                    self.config.task,
                    x,
                    self.config.eval_seed,
                    false,
                )
            })
            .collect()
    }
}

fn diverged(e: Error, iteration: u64) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op, index }) => Error::Divergence {
            iteration,
            reason: format!("non-finite value in {op} at element {index}"),
        },
        other => other,
    }
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Header of the training log for `task` probes.
pub fn log_header(trainer: &Trainer) -> Vec<String> {
    let mut cols = vec!["iteration".to_string(), "loss".into(), "lr".into()];
    cols.extend(
        trainer
            .config
            .task
            .probes()
            .iter()
            .map(|x| format!("val_{x}")),
    );
    cols
}

/// Opens the log for appending after `iteration` completed steps, dropping
/// rows beyond that point left by an interrupted run.
fn open_log(path: &Path, trainer: &Trainer) -> Result<BufWriter<File>> {
    let header = log_header(trainer).join(",");
    let mut kept = vec![header.clone()];
    if trainer.iteration > 0 {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        match lines.next() {
            Some(Ok(h)) if h == header => {}
            _ => {
                return Err(Error::Data(format!(
                    "{} is not a matching training log",
                    path.display()
                )))
            }
        }
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let it: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    Error::Data(format!("{}: malformed row {line:?}", path.display()))
                })?;
            if it <= trainer.iteration {
                kept.push(line);
            }
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for line in kept {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Trains until `config.total_iters`, writing one log row per iteration
/// and checkpoints at the configured interval and at the end. A trainer
/// restored from a checkpoint continues exactly where it stopped.
pub fn run_training(
    trainer: &mut Trainer,
    train_images: &[ImageBuffer],
    val_images: &[ImageBuffer],
    out: &TrainOutputs,
    progress: &mut dyn FnMut(&LossReport, Option<&[f64]>),
) -> Result<()> {
    if let Some(dir) = out
        .checkpoint
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
    {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = open_log(&out.log, trainer)?;
    let total = trainer.config.total_iters;
    while trainer.iteration < total {
        let report = trainer.step(train_images)?;
        let done = trainer.iteration;
        let c = &trainer.config;
        let val = if (c.val_every > 0 && done % c.val_every == 0) || done == total {
            Some(trainer.validate(val_images)?)
        } else {
            None
        };
        let mut row = format!("{done},{},{}", report.loss, report.lr);
        for i in 0..c.task.probes().len() {
            row.push(',');
            if let Some(v) = &val {
                row.push_str(&format!("{}", v[i]));
            }
        }
        writeln!(log, "{row}").map_err(|e| Error::io(&out.log, e))?;
        progress(&report, val.as_deref());
        if (c.checkpoint_every > 0 && done % c.checkpoint_every == 0) || done == total {
            log.flush().map_err(|e| Error::io(&out.log, e))?;
            Checkpoint::from_trainer(trainer).save(&out.checkpoint)?;
        }
    }
    log.flush().map_err(|e| Error::io(&out.log, e))?;
    if total == 0 {
        Checkpoint::from_trainer(trainer).save(&out.checkpoint)?;
    }
    Ok(())
}
