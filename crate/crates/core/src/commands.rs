//! Subcommand logic behind the `ttrnn` binary. Each returns the text to print.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::bench::{run_bench_config, BenchConfig};
use crate::checkpoint::{load_checkpoint, read_blobs, BlobKind, Checkpoint, CHECKPOINT_MAGIC};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::tasks::{count_cell_params_against, model_name, BatchEval, SequenceModel, Task};
use crate::train::{build_model, evaluate, headline_metric, load_split, permutation_for, train, Split, TrainOutcome};
use crate::tt_linear::LinearMap;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    /// Sets both `init_seed` and `data_seed`.
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out: Option<String>,
}

pub fn resolve_config(path: &Path, ov: &Overrides) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_path(path)?;
    if let Some(s) = ov.seed {
        cfg.apply_override("init_seed", &s.to_string())?;
        cfg.apply_override("data_seed", &s.to_string())?;
    }
    if let Some(e) = ov.epochs {
        cfg.apply_override("epochs", &e.to_string())?;
    }
    if let Some(o) = &ov.out {
        cfg.apply_override("out", o)?;
    }
    Ok(cfg)
}

pub fn cmd_train(config_path: &Path, ov: &Overrides) -> Result<TrainOutcome> {
    train(&resolve_config(config_path, ov)?)
}

/// Human summary of a finished run.
pub fn train_summary(o: &TrainOutcome) -> String {
    let mut s = format!(
        "config_hash={} model={} rnn_params={} baseline_params={} compression={:.2}\n",
        o.config_hash,
        o.model_name,
        o.report.rnn_param_count,
        o.report.baseline_param_count,
        o.report.compression_ratio()
    );
    if let Some(r) = o.records.last() {
        let _ = writeln!(
            s,
            "epochs={} steps={} final_valid_loss={} final_valid_metric={} best_epoch={}",
            r.epoch,
            r.steps,
            r.valid_loss,
            r.valid_metric,
            o.best_epoch.unwrap_or(0)
        );
        let _ = writeln!(s, "run_dir={}", o.run_dir.display());
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub split: Split,
    pub task: Task,
    pub eval: BatchEval,
}

impl EvalSummary {
    pub fn loss(&self) -> f64 {
        self.eval.mean_loss()
    }

    pub fn metric(&self) -> f64 {
        headline_metric(self.task, &self.eval)
    }

    pub fn to_line(&self) -> String {
        let split = match self.split {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        match self.task {
            Task::Classification { .. } => format!(
                "split={split} samples={} loss={} accuracy={}",
                self.eval.count,
                self.loss(),
                self.metric()
            ),
            Task::Prediction => format!(
                "split={split} steps={} nll={} acc={}",
                self.eval.count,
                self.loss(),
                self.metric()
            ),
        }
    }
}

pub fn eval_model(model: &SequenceModel, cfg: &TrainConfig, split: Split) -> Result<EvalSummary> {
    let data = load_split(cfg, split)?;
    let perm = permutation_for(cfg);
    Ok(EvalSummary {
        split,
        task: model.task,
        eval: evaluate(model, cfg, &data, perm.as_deref())?,
    })
}

/// Evaluates a checkpoint. A given config must describe the same architecture; its data paths are used.
pub fn cmd_eval(checkpoint: &Path, config: Option<&Path>, split: Split) -> Result<EvalSummary> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = match config {
        None => ck.config.clone(),
        Some(p) => {
            let cfg = TrainConfig::from_path(p)?;
            if !cfg.structure_matches(&ck.config) {
                return Err(Error::Compatibility(format!(
                    "checkpoint holds {} but the config describes {}",
                    model_name(&ck.config.cell_description()),
                    model_name(&cfg.cell_description())
                )));
            }
            cfg
        }
    };
    eval_model(&ck.model, &cfg, split)
}

fn map_kind(map: &LinearMap) -> String {
    match map {
        LinearMap::Dense { weight, .. } => format!("dense {}x{}", weight.nrows(), weight.ncols()),
        LinearMap::Tt(m) => format!(
            "tt {}x{} row_modes={} col_modes={} ranks={}",
            m.rows(),
            m.cols(),
            m.spec().row_modes(),
            m.spec().col_modes(),
            m.spec().ranks().iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
        ),
    }
}

fn inspect_model(cfg: &TrainConfig, model: &SequenceModel, header: &str) -> Result<String> {
    let mut out = String::new();
    out.push_str(header);
    let desc = cfg.cell_description();
    let _ = writeln!(out, "model={} task={}", model_name(&desc), cfg.task.as_str());
    let mut maps: Vec<(String, &LinearMap)> = Vec::new();
    if let Some(p) = &model.projection {
        maps.push(("projection".into(), p));
    }
    for (n, m) in model.cell.maps() {
        maps.push((format!("cell.{n}"), m));
    }
    maps.push(("output".into(), &model.output));
    for (name, m) in &maps {
        let _ = writeln!(out, "{name:<12} {:<48} params={}", map_kind(m), m.param_count());
    }
    for (n, b) in model.cell.biases() {
        let _ = writeln!(out, "cell.{n:<7} {:<48} params={}", format!("vector {}", b.len()), b.len());
    }
    let report = count_cell_params_against(&desc, &cfg.baseline_description())?;
    let _ = writeln!(out, "total_params={}", model.param_count());
    let _ = writeln!(
        out,
        "rnn_params={} baseline={} baseline_params={} compression={:.2}",
        report.rnn_param_count,
        model_name(&cfg.baseline_description()),
        report.baseline_param_count,
        report.compression_ratio()
    );
    Ok(out)
}

/// Structure dump of a checkpoint, or of the freshly initialized model a config describes.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let mut head = [0u8; 4];
    let magic = std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut head)).is_ok() && &head == CHECKPOINT_MAGIC;
    let is_checkpoint = magic || path.extension().is_some_and(|e| e == "ckpt");
    if !is_checkpoint {
        let cfg = TrainConfig::from_path(path)?;
        let model = build_model(&cfg)?;
        return inspect_model(&cfg, &model, &format!("config_hash={} (untrained)\n", cfg.hash()));
    }
    let bytes = std::fs::read(path)?;
    let blobs = read_blobs(&mut std::io::Cursor::new(&bytes))?;
    let tt_blobs = blobs.iter().filter(|b| b.kind == BlobKind::Tt).count();
    let Checkpoint {
        config,
        config_hash,
        epoch,
        model,
        optimizer,
    } = crate::checkpoint::decode_checkpoint(blobs)?;
    let header = format!(
        "config_hash={config_hash} epoch={epoch} tt_blobs={tt_blobs} optimizer_steps={}\n",
        optimizer.map_or(0, |a| a.step_count())
    );
    inspect_model(&config, &model, &header)
}

pub fn cmd_bench(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    run_bench_config(&BenchConfig::parse(&text)?)
}
