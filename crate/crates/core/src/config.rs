//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Unknown or repeated keys
//! are errors. [`TrainConfig::to_text`] writes every key in a fixed order and
//! is what the config hash is computed over.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{SerializeMode, DEFAULT_PERMUTATION_SEED};
use crate::error::{Error, Result};
use crate::rnn_cells::{CellDescription, CellKind, Parameterization};
use crate::tasks::NOTES;

/// Side length of an MNIST image.
pub const MNIST_SIDE: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskName {
    MnistRow,
    MnistPixel,
    MnistPermuted,
    PianoRoll,
}

impl TaskName {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::MnistRow => "mnist-row",
            TaskName::MnistPixel => "mnist-pixel",
            TaskName::MnistPermuted => "mnist-permuted",
            TaskName::PianoRoll => "pianoroll",
        }
    }

    pub fn serialize_mode(self) -> Option<SerializeMode> {
        match self {
            TaskName::MnistRow => Some(SerializeMode::Row),
            TaskName::MnistPixel => Some(SerializeMode::Pixel),
            TaskName::MnistPermuted => Some(SerializeMode::PermutedPixel),
            TaskName::PianoRoll => None,
        }
    }

    /// Width of one raw input step.
    pub fn raw_input_dim(self) -> usize {
        match self {
            TaskName::MnistRow => MNIST_SIDE,
            TaskName::MnistPixel | TaskName::MnistPermuted => 1,
            TaskName::PianoRoll => NOTES,
        }
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TaskName::MnistRow, TaskName::MnistPixel, TaskName::MnistPermuted, TaskName::PianoRoll]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config("task", format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskName,
    pub cell: CellKind,
    pub tt: bool,
    pub hidden: usize,
    pub hidden_modes: Vec<usize>,
    pub input_modes: Vec<usize>,
    /// Full chain `1, r_1, .., 1`; empty for dense cells.
    pub ranks: Vec<usize>,
    /// Width of the linear input projection; 0 feeds raw inputs to the cell.
    pub projection: usize,
    /// Hidden size of the dense cell that compression ratios are quoted against.
    pub baseline_hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stopping: bool,
    pub patience: usize,
    pub init_seed: u64,
    pub data_seed: u64,
    pub permutation_seed: u64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first `train_limit` training images; 0 uses all.
    pub train_limit: usize,
    pub valid_limit: usize,
    pub train_songs: Option<PathBuf>,
    pub valid_songs: Option<PathBuf>,
    pub test_songs: Option<PathBuf>,
    /// Generate this many 8-periodic songs per split instead of reading files.
    pub synthetic_songs: usize,
    pub synthetic_min_len: usize,
    pub synthetic_max_len: usize,
    pub out: PathBuf,
    /// Keys set from the command line, in order.
    pub overrides: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskName::MnistRow,
            cell: CellKind::Gru,
            tt: true,
            hidden: 0,
            hidden_modes: Vec::new(),
            input_modes: Vec::new(),
            ranks: Vec::new(),
            projection: 0,
            baseline_hidden: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 0.0,
            batch_size: 32,
            epochs: 1,
            early_stopping: false,
            patience: 10,
            init_seed: 1,
            data_seed: 2,
            permutation_seed: DEFAULT_PERMUTATION_SEED,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: 0,
            valid_limit: 0,
            train_songs: None,
            valid_songs: None,
            test_songs: None,
            synthetic_songs: 0,
            synthetic_min_len: 16,
            synthetic_max_len: 48,
            out: PathBuf::from("runs/default"),
            overrides: Vec::new(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| {
            let n: usize = parse_num(key, v.trim())?;
            if n == 0 {
                return Err(Error::config(key, "entries must be at least 1"));
            }
            Ok(n)
        })
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got {value:?}"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut rank: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::config(key, "given more than once"));
            }
            seen.push(key.to_string());
            if key == "rank" {
                rank = Some(parse_num(key, value)?);
            } else {
                cfg.set(key, value)?;
            }
        }
        if let Some(r) = rank {
            if seen.iter().any(|k| k == "ranks") {
                return Err(Error::config("rank", "give either rank or ranks"));
            }
            cfg.set_uniform_rank(r)?;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        TrainConfig::parse(&text)
    }

    fn set_uniform_rank(&mut self, r: usize) -> Result<()> {
        if r == 0 {
            return Err(Error::config("rank", "must be at least 1"));
        }
        let d = self.hidden_modes.len();
        if d == 0 {
            return Err(Error::config("rank", "needs hidden_modes"));
        }
        self.ranks = vec![r; d + 1];
        self.ranks[0] = 1;
        self.ranks[d] = 1;
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse()?,
            "cell" => {
                self.cell = match value {
                    "srnn" => CellKind::Srnn,
                    "gru" => CellKind::Gru,
                    _ => return Err(Error::config(key, format!("expected srnn or gru, got {value:?}"))),
                }
            }
            "parameterization" => {
                self.tt = match value {
                    "tt" => true,
                    "dense" => false,
                    _ => return Err(Error::config(key, format!("expected tt or dense, got {value:?}"))),
                }
            }
            "hidden" => self.hidden = parse_num(key, value)?,
            "hidden_modes" => self.hidden_modes = parse_list(key, value)?,
            "input_modes" => self.input_modes = parse_list(key, value)?,
            "ranks" => self.ranks = parse_list(key, value)?,
            "rank" => self.set_uniform_rank(parse_num(key, value)?)?,
            "projection" => self.projection = parse_num(key, value)?,
            "baseline_hidden" => self.baseline_hidden = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "early_stopping" => self.early_stopping = parse_bool(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "init_seed" => self.init_seed = parse_num(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "permutation_seed" => self.permutation_seed = parse_num(key, value)?,
            "train_images" => self.train_images = path_value(value),
            "train_labels" => self.train_labels = path_value(value),
            "test_images" => self.test_images = path_value(value),
            "test_labels" => self.test_labels = path_value(value),
            "train_limit" => self.train_limit = parse_num(key, value)?,
            "valid_limit" => self.valid_limit = parse_num(key, value)?,
            "train_songs" => self.train_songs = path_value(value),
            "valid_songs" => self.valid_songs = path_value(value),
            "test_songs" => self.test_songs = path_value(value),
            "synthetic_songs" => self.synthetic_songs = parse_num(key, value)?,
            "synthetic_min_len" => self.synthetic_min_len = parse_num(key, value)?,
            "synthetic_max_len" => self.synthetic_max_len = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "overrides" => self.overrides = value.split(',').map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect(),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Command-line override, recorded in the resolved dump.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value)?;
        self.overrides.push(key.to_string());
        self.resolve()
    }

    /// Fills derived fields and checks cross-field constraints.
    fn resolve(&mut self) -> Result<()> {
        if self.tt {
            if self.hidden_modes.is_empty() {
                return Err(Error::config("hidden_modes", "required for tt cells"));
            }
            if self.input_modes.is_empty() {
                return Err(Error::config("input_modes", "required for tt cells"));
            }
            if self.input_modes.len() != self.hidden_modes.len() {
                return Err(Error::config("input_modes", "must have as many modes as hidden_modes"));
            }
            let product: usize = self.hidden_modes.iter().product();
            if self.hidden != 0 && self.hidden != product {
                return Err(Error::config("hidden_modes", format!("product {product} differs from hidden = {}", self.hidden)));
            }
            self.hidden = product;
            if self.ranks.is_empty() {
                return Err(Error::config("rank", "required for tt cells"));
            }
            let d = self.hidden_modes.len();
            if self.ranks.len() != d + 1 || self.ranks[0] != 1 || self.ranks[d] != 1 || self.ranks.contains(&0) {
                return Err(Error::config("ranks", format!("need {} positive entries starting and ending with 1", d + 1)));
            }
            let input: usize = self.input_modes.iter().product();
            if input != self.cell_input_dim() {
                return Err(Error::config(
                    "input_modes",
                    format!("product {input} differs from the cell input width {}", self.cell_input_dim()),
                ));
            }
        } else {
            if self.hidden == 0 && !self.hidden_modes.is_empty() {
                self.hidden = self.hidden_modes.iter().product();
            }
            if self.hidden == 0 {
                return Err(Error::config("hidden", "required for dense cells"));
            }
            self.ranks.clear();
        }
        if self.baseline_hidden == 0 {
            self.baseline_hidden = self.hidden;
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta1", "betas must lie in [0, 1)"));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::config("clip_norm", "must be non-negative"));
        }
        if self.synthetic_min_len > self.synthetic_max_len {
            return Err(Error::config("synthetic_min_len", "exceeds synthetic_max_len"));
        }
        Ok(())
    }

    pub fn cell_input_dim(&self) -> usize {
        if self.projection > 0 {
            self.projection
        } else {
            self.task.raw_input_dim()
        }
    }

    pub fn cell_description(&self) -> CellDescription {
        let input_dim = self.cell_input_dim();
        if self.tt {
            CellDescription {
                kind: self.cell,
                input_dim,
                hidden_dim: self.hidden,
                parameterization: Parameterization::Tt {
                    input_modes: self.input_modes.clone(),
                    hidden_modes: self.hidden_modes.clone(),
                    ranks: self.ranks.clone(),
                },
            }
        } else {
            CellDescription::dense(self.cell, input_dim, self.hidden)
        }
    }

    pub fn baseline_description(&self) -> CellDescription {
        CellDescription::dense(self.cell, self.cell_input_dim(), self.baseline_hidden)
    }

    /// Every key in a fixed order, followed by the recorded overrides.
    pub fn to_text(&self) -> String {
        let mut out = self.canonical();
        let _ = writeln!(out, "out = {}", self.out.display());
        if !self.overrides.is_empty() {
            let _ = writeln!(out, "overrides = {}", self.overrides.join(","));
        }
        out
    }

    fn canonical(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task", self.task.as_str().into());
        kv("cell", self.cell.name().into());
        kv("parameterization", if self.tt { "tt" } else { "dense" }.into());
        kv("hidden", self.hidden.to_string());
        kv("hidden_modes", join(&self.hidden_modes));
        kv("input_modes", join(&self.input_modes));
        kv("ranks", join(&self.ranks));
        kv("projection", self.projection.to_string());
        kv("baseline_hidden", self.baseline_hidden.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("early_stopping", self.early_stopping.to_string());
        kv("patience", self.patience.to_string());
        kv("init_seed", self.init_seed.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("permutation_seed", self.permutation_seed.to_string());
        kv("train_images", opt_path(&self.train_images));
        kv("train_labels", opt_path(&self.train_labels));
        kv("test_images", opt_path(&self.test_images));
        kv("test_labels", opt_path(&self.test_labels));
        kv("train_limit", self.train_limit.to_string());
        kv("valid_limit", self.valid_limit.to_string());
        kv("train_songs", opt_path(&self.train_songs));
        kv("valid_songs", opt_path(&self.valid_songs));
        kv("test_songs", opt_path(&self.test_songs));
        kv("synthetic_songs", self.synthetic_songs.to_string());
        kv("synthetic_min_len", self.synthetic_min_len.to_string());
        kv("synthetic_max_len", self.synthetic_max_len.to_string());
        out
    }

    /// First 16 hex digits of SHA-256 over the canonical dump. `out` and the override list are
    /// excluded, so the same experiment written to two directories shares a hash.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Fields that fix the shapes of saved parameters.
    pub fn structure_matches(&self, other: &TrainConfig) -> bool {
        self.task == other.task
            && self.cell_description() == other.cell_description()
            && self.projection == other.projection
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TT_GRU: &str = "
        # row MNIST
        task = mnist-row
        cell = gru
        parameterization = tt
        hidden_modes = 10,10
        input_modes = 4,8   # 32 after projection
        rank = 3
        projection = 32
        baseline_hidden = 256
    ";

    #[test]
    fn parses_and_resolves() {
        let c = TrainConfig::parse(TT_GRU).unwrap();
        assert_eq!(c.hidden, 100);
        assert_eq!(c.ranks, vec![1, 3, 1]);
        assert_eq!(c.cell_description(), CellDescription::tt(CellKind::Gru, &[4, 8], &[10, 10], 3));
        assert_eq!(c.baseline_description(), CellDescription::dense(CellKind::Gru, 32, 256));
        assert_eq!(c.permutation_seed, 8888);
    }

    #[test]
    fn dump_round_trips() {
        let c = TrainConfig::parse(TT_GRU).unwrap();
        let again = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::parse(TT_GRU).unwrap();
        let b = TrainConfig::parse(&format!("{TT_GRU}\nepochs = 3")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let elsewhere = TrainConfig::parse(&format!("{TT_GRU}\nout = somewhere/else")).unwrap();
        assert_eq!(elsewhere.hash(), a.hash());
        assert!(elsewhere.to_text().contains("out = somewhere/else\n"));
    }

    #[test]
    fn overrides_are_recorded() {
        let mut c = TrainConfig::parse(TT_GRU).unwrap();
        c.apply_override("epochs", "7").unwrap();
        assert_eq!(c.epochs, 7);
        assert!(c.to_text().ends_with("overrides = epochs\n"));
        let again = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again.epochs, 7);
        assert_eq!(again.hash(), c.hash());
    }

    fn field_of(text: &str) -> String {
        match TrainConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&TT_GRU.replace("input_modes = 4,8", "input_modes = 4,7")), "input_modes");
        assert_eq!(field_of(&TT_GRU.replace("cell = gru", "cell = lstm")), "cell");
        assert_eq!(field_of(&format!("{TT_GRU}\nlearning_rate = fast")), "learning_rate");
        assert_eq!(field_of(&format!("{TT_GRU}\nbogus = 1")), "bogus");
        assert_eq!(field_of(&format!("{TT_GRU}\ntask = pianoroll")), "task");
        assert_eq!(field_of(&format!("{TT_GRU}\nranks = 1,3,1")), "rank");
        assert_eq!(field_of(&TT_GRU.replace("rank = 3", "ranks = 1,3")), "ranks");
        assert_eq!(field_of(&format!("{TT_GRU}\nbatch_size = 0")), "batch_size");
        assert_eq!(field_of("task = mnist-row\nparameterization = dense"), "hidden");
        assert_eq!(field_of("task = mnist-row\nnonsense"), "line 2");
    }

    #[test]
    fn dense_config() {
        let c = TrainConfig::parse("task = pianoroll\ncell = srnn\nparameterization = dense\nhidden = 64").unwrap();
        assert_eq!(c.cell_description(), CellDescription::dense(CellKind::Srnn, 88, 64));
        assert!(c.ranks.is_empty());
    }
}
