use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SegmentationPair;
use crate::error::{Error, Result};
use crate::loss::combined_loss_parts;
use crate::metrics::{aggregate, evaluate_case, MetricReport};
use crate::model::{save_checkpoint, CheckpointMeta, TfcnsModel};
use crate::par;
use crate::tensor::{Float, Session, Tape, Tensor};
use crate::training::{augment, lr_at, sgd_step, OptimizerState, TrainConfig};

pub const TRAIN_LOG: &str = "train.log";
pub const EVAL_LOG: &str = "eval.log";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Batches the pipeline thread may prepare ahead of the optimizer.
const PIPELINE_DEPTH: usize = 2;

/// Salt separating the shuffle stream from the per-iteration stream.
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One training step of the log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub dice_loss: f64,
    pub ce_loss: f64,
}

impl IterRecord {
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.iteration, self.lr, self.loss, self.dice_loss, self.ce_loss)
    }
}

/// One evaluation, after `iteration` completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub report: MetricReport,
}

impl EvalRecord {
    pub fn log_line(&self) -> String {
        let hd = self.report.hd95_avg.map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!(
            "EVAL\t{}\t{}\t{}\t{}",
            self.iteration, self.report.dice_avg, hd, self.report.jaccard_avg
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<IterRecord>,
    pub evals: Vec<EvalRecord>,
    pub best_dice: Option<f64>,
}

/// Stacked inputs of one iteration.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub masks: Tensor<u8>,
    pub dropout_seed: u64,
}

/// The batch of `iteration`, a pure function of the seed and the index:
/// each epoch reshuffles with its own stream, and augmentation and dropout
/// draw from a stream keyed by the iteration.
pub fn make_batch<T: Float>(set: &[SegmentationPair], cfg: &TrainConfig, iteration: u64) -> Result<Batch<T>> {
    if set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let per_epoch = set.len().div_ceil(cfg.batch_size) as u64;
    let (epoch, slot) = (iteration / per_epoch, (iteration % per_epoch) as usize);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    shuffle.set_stream(epoch);
    order.shuffle(&mut shuffle);
    let picked = &order[slot * cfg.batch_size..((slot + 1) * cfg.batch_size).min(set.len())];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration);
    let dropout_seed = rng.next_u64();
    let pairs = picked
        .iter()
        .map(|&i| augment(&set[i], &mut rng, cfg.augment_rotate, cfg.augment_flip))
        .collect::<Result<Vec<_>>>()?;
    let first = &pairs[0];
    let (c, h, w) = (first.image.shape()[0], first.height(), first.width());
    let mut images = Vec::with_capacity(pairs.len() * c * h * w);
    let mut masks = Vec::with_capacity(pairs.len() * h * w);
    for p in &pairs {
        if p.image.shape() != first.image.shape() {
            return Err(Error::Dataset(format!(
                "case {} has shape {:?}, expected {:?}",
                p.case_id,
                p.image.shape(),
                first.image.shape()
            )));
        }
        images.extend(p.image.data().iter().map(|&v| T::lit(v as f64)));
        masks.extend_from_slice(p.mask.data());
    }
    Ok(Batch {
        images: Tensor::from_vec(&[pairs.len(), c, h, w], images)?,
        masks: Tensor::from_vec(&[pairs.len(), h, w], masks)?,
        dropout_seed,
    })
}

fn check_set<T: Float>(model: &TfcnsModel<T>, set: &[SegmentationPair]) -> Result<()> {
    let s = model.cfg.input_size;
    for p in set {
        if p.image.shape() != [model.cfg.in_channels, s, s] {
            return Err(Error::Dataset(format!(
                "case {}: image {:?} does not match model input {}×{s}×{s}",
                p.case_id,
                p.image.shape(),
                model.cfg.in_channels
            )));
        }
        p.check_classes(model.cfg.num_classes)?;
    }
    Ok(())
}

/// Dataset-level metrics of the model's predictions, cases in parallel.
pub fn evaluate<T: Float>(model: &TfcnsModel<T>, set: &[SegmentationPair]) -> Result<MetricReport> {
    if set.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    check_set(model, set)?;
    let cases = par::map_slice(set, |p| {
        let mut shape = vec![1];
        shape.extend_from_slice(p.image.shape());
        let pred = model.predict(&p.image.cast::<T>().reshape(&shape)?)?;
        evaluate_case(&pred.reshape(p.mask.shape())?, &p.mask, model.cfg.num_classes, 1.0)
    });
    aggregate(&cases.into_iter().collect::<Result<Vec<_>>>()?)
}

fn non_finite_as_loss(e: Error, iteration: u64, last: &Option<PathBuf>) -> Error {
    match e {
        Error::NonFiniteValue { .. } | Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
            iteration,
            last_checkpoint: last.clone(),
        },
        other => other,
    }
}

struct Outputs {
    dir: PathBuf,
    log: BufWriter<File>,
    eval_log: BufWriter<File>,
}

/// Trains from `state.iteration` to the configured budget.
///
/// With `out_dir`, appends one line per iteration to `train.log` and one per
/// evaluation to `eval.log`, keeps `best.ckpt` at
/// the best evaluation dice and writes `last.ckpt` at the end. Evaluation
/// runs every `eval_every` iterations and at the end when `eval_set` is
/// nonempty. A non-finite loss aborts with the last saved checkpoint.
pub fn train<T: Float>(
    model: &mut TfcnsModel<T>,
    state: &mut OptimizerState<T>,
    train_set: &[SegmentationPair],
    eval_set: &[SegmentationPair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    check_set(model, train_set)?;
    check_set(model, eval_set)?;
    let mut out = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let open = |name| -> Result<BufWriter<File>> {
                let file = std::fs::OpenOptions::new().create(true).append(true).open(dir.join(name))?;
                Ok(BufWriter::new(file))
            };
            Some(Outputs {
                dir: dir.to_path_buf(),
                log: open(TRAIN_LOG)?,
                eval_log: open(EVAL_LOG)?,
            })
        }
        None => None,
    };
    let total = cfg.total_iterations(train_set.len());
    let start = state.iteration;
    let mut summary = TrainSummary {
        records: Vec::new(),
        evals: Vec::new(),
        best_dice: None,
    };
    let mut last_saved: Option<PathBuf> = None;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<Batch<T>>>(PIPELINE_DEPTH);
        scope.spawn(move || {
            for i in start..total {
                if tx.send(make_batch(train_set, cfg, i)).is_err() {
                    break;
                }
            }
        });
        for i in start..total {
            let batch = rx
                .recv()
                .map_err(|_| Error::Dataset("data pipeline stopped".into()))??;
            let record = step(model, state, cfg, batch, i).map_err(|e| non_finite_as_loss(e, i, &last_saved))?;
            if let Some(o) = out.as_mut() {
                writeln!(o.log, "{}", record.log_line())?;
            }
            summary.records.push(record);
            let done = i + 1;
            let due = (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == total;
            if due && !eval_set.is_empty() {
                let eval = EvalRecord {
                    iteration: done,
                    report: evaluate(model, eval_set)?,
                };
                let improved = summary.best_dice.is_none_or(|b| eval.report.dice_avg > b);
                if improved {
                    summary.best_dice = Some(eval.report.dice_avg);
                }
                if let Some(o) = out.as_mut() {
                    writeln!(o.eval_log, "{}", eval.log_line())?;
                    o.log.flush()?;
                    o.eval_log.flush()?;
                    if improved {
                        let path = o.dir.join(BEST_CHECKPOINT);
                        save(&path, model, state, cfg, summary.best_dice)?;
                        last_saved = Some(path);
                    }
                }
                summary.evals.push(eval);
            }
        }
        Ok(())
    })?;

    if let Some(mut o) = out {
        o.log.flush()?;
        o.eval_log.flush()?;
        save(&o.dir.join(LAST_CHECKPOINT), model, state, cfg, summary.best_dice)?;
    }
    Ok(summary)
}

fn save<T: Float>(
    path: &Path,
    model: &TfcnsModel<T>,
    state: &OptimizerState<T>,
    cfg: &TrainConfig,
    best_dice: Option<f64>,
) -> Result<()> {
    let meta = CheckpointMeta {
        iteration: state.iteration,
        rng_seed: cfg.seed,
        best_dice,
    };
    save_checkpoint(path, model, Some(&state.momentum), &meta)
}

fn step<T: Float>(
    model: &mut TfcnsModel<T>,
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
    batch: Batch<T>,
    iteration: u64,
) -> Result<IterRecord> {
    let tape = Tape::new();
    let s = Session::new(&tape, &model.params, true, batch.dropout_seed);
    let logits = model.forward(&s, tape.constant(batch.images))?;
    let parts = combined_loss_parts(logits, &batch.masks)?;
    let scalar = |v: crate::tensor::Var<'_, T>| v.value().item().map(|x| x.as_f64());
    let record = IterRecord {
        iteration,
        lr: lr_at(state.iteration, cfg),
        loss: scalar(parts.total)?,
        dice_loss: scalar(parts.dice)?,
        ce_loss: scalar(parts.ce)?,
    };
    if !record.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            last_checkpoint: None,
        });
    }
    let grads = s.param_grads(&tape.backward(parts.total)?);
    drop(s);
    sgd_step(&mut model.params, &grads, state, cfg)?;
    Ok(record)
}
