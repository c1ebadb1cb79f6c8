//! Training loop, evaluation and run logs.
//!
//! A run directory holds `config.resolved`, the append-only `run.log`,
//! `best.ckpt` (lowest validation loss so far) and `last.ckpt`. Every log line
//! is `key=value` pairs and starts with the config hash.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{TaskName, TrainConfig, MNIST_SIDE};
use crate::data::{
    make_batches, permutation_hash, pixel_permutation, read_idx, read_pianoroll, synthetic_pianoroll, BatchSource,
    ImageDataset, PianoRollDataset,
};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::rnn_cells::Cell;
use crate::tasks::{count_cell_params_against, model_name, BatchEval, ModelReport, SequenceModel, Task, NOTES};
use crate::tt_format::seeded_rng;
use crate::tt_linear::LinearMap;

/// Batch size for validation and evaluation passes, fixed so pooled sums are reproducible.
pub const EVAL_BATCH: usize = 500;
pub const MNIST_CLASSES: usize = 10;

pub fn task_of(cfg: &TrainConfig) -> Task {
    match cfg.task {
        TaskName::PianoRoll => Task::Prediction,
        _ => Task::Classification { classes: MNIST_CLASSES },
    }
}

/// Freshly initialized model; everything is drawn from `init_seed`.
pub fn build_model(cfg: &TrainConfig) -> Result<SequenceModel> {
    let mut rng = seeded_rng(cfg.init_seed);
    let projection = (cfg.projection > 0)
        .then(|| LinearMap::dense_glorot(cfg.projection, cfg.task.raw_input_dim(), true, &mut rng));
    let cell = Cell::init(&cfg.cell_description(), &mut rng)?;
    let task = task_of(cfg);
    let outputs = match task {
        Task::Classification { classes } => classes,
        Task::Prediction => NOTES,
    };
    let output = LinearMap::dense_glorot(outputs, cfg.hidden, true, &mut rng);
    SequenceModel::new(task, projection, cell, output)
}

pub fn model_report(cfg: &TrainConfig) -> Result<ModelReport> {
    count_cell_params_against(&cfg.cell_description(), &cfg.baseline_description())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::config("split", format!("expected train, valid or test, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SplitData {
    Images(ImageDataset),
    Songs(PianoRollDataset),
}

fn need<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(field, "required for this task"))
}

pub fn load_split(cfg: &TrainConfig, split: Split) -> Result<SplitData> {
    if cfg.task == TaskName::PianoRoll {
        if cfg.synthetic_songs > 0 {
            let seed = cfg.data_seed.wrapping_add(split as u64 + 1);
            return Ok(SplitData::Songs(synthetic_pianoroll(
                cfg.synthetic_songs,
                cfg.synthetic_min_len,
                cfg.synthetic_max_len,
                seed,
            )));
        }
        let (path, field) = match split {
            Split::Train => (&cfg.train_songs, "train_songs"),
            Split::Valid => (&cfg.valid_songs, "valid_songs"),
            Split::Test => (&cfg.test_songs, "test_songs"),
        };
        return Ok(SplitData::Songs(read_pianoroll(need(path, field)?)?));
    }
    let data = match split {
        Split::Test => read_idx(need(&cfg.test_images, "test_images")?, need(&cfg.test_labels, "test_labels")?)?,
        _ => {
            let all = read_idx(need(&cfg.train_images, "train_images")?, need(&cfg.train_labels, "train_labels")?)?;
            let (train, valid) = all.split_validation()?;
            let (part, limit) = if split == Split::Train { (train, cfg.train_limit) } else { (valid, cfg.valid_limit) };
            if limit > 0 && limit < part.len() {
                part.slice(0, limit)
            } else {
                part
            }
        }
    };
    if (data.rows, data.cols) != (MNIST_SIDE, MNIST_SIDE) {
        return Err(Error::Data(format!("images are {}x{}, expected 28x28", data.rows, data.cols)));
    }
    Ok(SplitData::Images(data))
}

pub fn permutation_for(cfg: &TrainConfig) -> Option<Vec<usize>> {
    (cfg.task == TaskName::MnistPermuted).then(|| pixel_permutation(cfg.permutation_seed, MNIST_SIDE * MNIST_SIDE))
}

fn source<'a>(cfg: &TrainConfig, data: &'a SplitData, perm: Option<&'a [usize]>) -> BatchSource<'a> {
    match data {
        SplitData::Images(d) => BatchSource::Images {
            data: d,
            mode: cfg.task.serialize_mode().expect("image task"),
            permutation: perm,
        },
        SplitData::Songs(s) => BatchSource::Songs(s),
    }
}

/// Pooled metrics over a split in fixed batch order.
pub fn evaluate(model: &SequenceModel, cfg: &TrainConfig, data: &SplitData, perm: Option<&[usize]>) -> Result<BatchEval> {
    let mut total = BatchEval::default();
    for batch in make_batches(source(cfg, data, perm), EVAL_BATCH, None)? {
        total.add(&model.evaluate(&batch)?);
    }
    Ok(total)
}

/// Accuracy for classification, frame accuracy for prediction.
pub fn headline_metric(task: Task, eval: &BatchEval) -> f64 {
    match task {
        Task::Classification { .. } => eval.accuracy(),
        Task::Prediction => eval.frames.accuracy(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub train_metric: f64,
    pub valid_loss: f64,
    pub valid_metric: f64,
    /// Seconds; not part of the deterministic record.
    pub wall_time: f64,
}

impl EpochRecord {
    pub fn to_line(&self, hash: &str) -> String {
        format!(
            "config_hash={hash} epoch={} steps={} train_loss={} train_metric={} valid_loss={} valid_metric={} wall_time={:.3}",
            self.epoch, self.steps, self.train_loss, self.train_metric, self.valid_loss, self.valid_metric, self.wall_time
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config_hash: String,
    pub model_name: String,
    pub report: ModelReport,
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub model: SequenceModel,
    pub run_dir: PathBuf,
}

struct RunLog {
    file: File,
    hash: String,
}

impl RunLog {
    fn open(dir: &Path, hash: &str) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        Ok(RunLog { file, hash: hash.into() })
    }

    fn line(&mut self, body: &str) -> Result<()> {
        writeln!(self.file, "config_hash={} {body}", self.hash)?;
        Ok(())
    }

    fn raw(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

/// Trains for `cfg.epochs` epochs, writing logs and checkpoints under `cfg.out`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let hash = cfg.hash();
    let name = model_name(&cfg.cell_description());
    let report = model_report(cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.resolved"), cfg.to_text())?;
    let mut log = RunLog::open(&cfg.out, &hash)?;
    log.line(&format!("event=start task={} {}", cfg.task.as_str(), report.to_kv(&name)))?;

    let mut model = build_model(cfg)?;
    let mut outcome = TrainOutcome {
        config_hash: hash.clone(),
        model_name: name,
        report,
        records: Vec::new(),
        best_epoch: None,
        model: model.clone(),
        run_dir: cfg.out.clone(),
    };
    if cfg.epochs == 0 {
        log.line("event=done epochs=0")?;
        return Ok(outcome);
    }

    let perm = permutation_for(cfg);
    if let Some(p) = &perm {
        log.line(&format!("permutation_seed={} permutation_hash={}", cfg.permutation_seed, permutation_hash(p)))?;
    }
    if cfg.task == TaskName::PianoRoll {
        log.line("nll_reduction=mean_over_all_valid_steps")?;
    }
    let train_data = load_split(cfg, Split::Train)?;
    let valid_data = load_split(cfg, Split::Valid)?;
    let task = task_of(cfg);
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
    });
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut train_eval = BatchEval::default();
        let shuffle = cfg.data_seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64);
        for batch in make_batches(source(cfg, &train_data, perm.as_deref()), cfg.batch_size, Some(shuffle))? {
            let (eval, mut grads) = model.loss_and_grad(&batch)?;
            if !eval.loss_sum.is_finite() {
                let msg = format!("non-finite loss at epoch {epoch} step {}", adam.step_count() + 1);
                log.line(&format!("event=abort reason=\"{msg}\""))?;
                return Err(Error::Numeric(msg));
            }
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm)?;
            }
            if let Err(e) = adam.step(&mut model, &grads) {
                log.line(&format!("event=abort reason=\"{e} at epoch {epoch} step {}\"", adam.step_count() + 1))?;
                return Err(e);
            }
            train_eval.add(&eval);
        }
        let valid_eval = evaluate(&model, cfg, &valid_data, perm.as_deref())?;
        let record = EpochRecord {
            epoch,
            steps: adam.step_count(),
            train_loss: train_eval.mean_loss(),
            train_metric: headline_metric(task, &train_eval),
            valid_loss: valid_eval.mean_loss(),
            valid_metric: headline_metric(task, &valid_eval),
            wall_time: start.elapsed().as_secs_f64(),
        };
        log.raw(&record.to_line(&hash))?;
        let ck = |model: &SequenceModel, adam: &Adam| Checkpoint {
            config: cfg.clone(),
            config_hash: hash.clone(),
            epoch: epoch as u64,
            model: model.clone(),
            optimizer: Some(adam.clone()),
        };
        if record.valid_loss < best {
            best = record.valid_loss;
            since_best = 0;
            outcome.best_epoch = Some(epoch);
            save_checkpoint(&cfg.out.join("best.ckpt"), &ck(&model, &adam))?;
        } else {
            since_best += 1;
        }
        save_checkpoint(&cfg.out.join("last.ckpt"), &ck(&model, &adam))?;
        outcome.records.push(record);
        if cfg.early_stopping && since_best >= cfg.patience {
            log.line(&format!("event=early_stop epoch={epoch} patience={}", cfg.patience))?;
            break;
        }
    }
    log.line(&format!(
        "event=done best_epoch={} best_valid_loss={best}",
        outcome.best_epoch.map_or(0, |e| e)
    ))?;
    outcome.model = model;
    Ok(outcome)
}
