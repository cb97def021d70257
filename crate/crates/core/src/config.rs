//! Experiment configuration as a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Paths are kept as
//! written; relative paths resolve against the working directory. Optional
//! keys are omitted when unset, and `auto` sizes are derived from the data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::spike::SurrogateConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Toy,
    SeqImageClassify,
    CharLm,
    WordLm,
    ChunkClassify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Toy => "toy",
            Task::SeqImageClassify => "seq-image-classify",
            Task::CharLm => "char-lm",
            Task::WordLm => "word-lm",
            Task::ChunkClassify => "chunk-classify",
        }
    }

    pub fn is_language_model(self) -> bool {
        matches!(self, Task::CharLm | Task::WordLm)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Task::Toy, Task::SeqImageClassify, Task::CharLm, Task::WordLm, Task::ChunkClassify]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Where the classification loss is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Only the last step of each sequence is scored.
    Final,
    /// Every step is scored.
    Every,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Final => "final",
            LossMode::Every => "every",
        }
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(LossMode::Final),
            "every" => Ok(LossMode::Every),
            _ => Err(Error::Config(format!("unknown loss mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,

    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// EMNIST stores images transposed.
    pub transpose_images: bool,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,

    pub corpus: Option<PathBuf>,
    pub max_chars: Option<usize>,
    /// Tail fraction of the corpus held out for evaluation.
    pub eval_fraction: f64,
    pub embedding_dim: usize,
    pub embedding_window: usize,
    pub embedding_epochs: usize,

    pub features: Option<PathBuf>,
    pub eval_features: Option<PathBuf>,
    pub chunk: usize,
    pub chunks: usize,

    /// `None` means derived from the data.
    pub input_size: Option<usize>,
    pub hidden_size: usize,
    pub output_size: Option<usize>,
    /// Sequence length for the toy task and the language models.
    pub steps: usize,
    pub batch: usize,
    pub iterations: usize,
    pub seed: u64,

    pub surrogate: SurrogateConfig,
    pub adam: AdamConfig,
    pub loss_mode: LossMode,
    pub head_init_std: f64,
    /// Multiplies the standard-normal layer weights after drawing them.
    pub init_scale: f64,

    pub eval_every: usize,
    /// Evaluation sequences used for the periodic metrics rows; the final
    /// evaluation always uses the whole test split.
    pub eval_limit: Option<usize>,
    pub repeats: usize,
    /// Record real wall-clock time in metrics rows instead of 0.
    pub timing: bool,
    pub save_optimizer: bool,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for a task; data paths still have to be supplied.
    pub fn new(task: Task) -> Self {
        let mut c = ExperimentConfig {
            task,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            transpose_images: false,
            train_subset: None,
            test_subset: None,
            corpus: None,
            max_chars: None,
            eval_fraction: 0.1,
            embedding_dim: 100,
            embedding_window: 5,
            embedding_epochs: 5,
            features: None,
            eval_features: None,
            chunk: 48,
            chunks: 8,
            input_size: None,
            hidden_size: 100,
            output_size: None,
            steps: 100,
            batch: 128,
            iterations: 2000,
            seed: 0,
            surrogate: SurrogateConfig::default(),
            adam: AdamConfig::default(),
            loss_mode: LossMode::Final,
            head_init_std: 1.0,
            init_scale: 1.0,
            eval_every: 50,
            eval_limit: None,
            repeats: 1,
            timing: false,
            save_optimizer: false,
            checkpoint: None,
            metrics: None,
        };
        match task {
            Task::Toy => {
                c.input_size = Some(20);
                c.output_size = Some(1);
                c.batch = 1;
                c.loss_mode = LossMode::Every;
            }
            Task::SeqImageClassify => {
                c.input_size = Some(28);
                c.output_size = Some(10);
                c.steps = 28;
            }
            Task::CharLm | Task::WordLm => {
                c.hidden_size = 200;
                c.batch = 1;
                c.loss_mode = LossMode::Every;
            }
            Task::ChunkClassify => {
                c.input_size = Some(48);
                c.steps = 8;
            }
        }
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parses a config. `task` must be given before any other key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<ExperimentConfig> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match cfg.as_mut() {
                None if key == "task" => cfg = Some(ExperimentConfig::new(value.parse()?)),
                None => {
                    return Err(Error::Config(format!(
                        "line {}: `task` must come before `{key}`",
                        n + 1
                    )))
                }
                Some(c) => c
                    .set(key, value)
                    .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?,
            }
        }
        let cfg = cfg.ok_or_else(|| Error::Config("missing `task`".into()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form; used by the file parser and the
    /// command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
            if v == "auto" {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config(format!("bad value {v:?} for {key}, expected true or false"))),
            }
        }
        let v = value;
        match key {
            "task" => {
                let task: Task = v.parse()?;
                if task != self.task {
                    return Err(Error::Config("task cannot be changed after the first line".into()));
                }
            }
            "train_images" => self.train_images = path(v),
            "train_labels" => self.train_labels = path(v),
            "test_images" => self.test_images = path(v),
            "test_labels" => self.test_labels = path(v),
            "transpose_images" => self.transpose_images = flag(key, v)?,
            "train_subset" => self.train_subset = opt(key, v)?,
            "test_subset" => self.test_subset = opt(key, v)?,
            "corpus" => self.corpus = path(v),
            "max_chars" => self.max_chars = opt(key, v)?,
            "eval_fraction" => self.eval_fraction = num(key, v)?,
            "embedding_dim" => self.embedding_dim = num(key, v)?,
            "embedding_window" => self.embedding_window = num(key, v)?,
            "embedding_epochs" => self.embedding_epochs = num(key, v)?,
            "features" => self.features = path(v),
            "eval_features" => self.eval_features = path(v),
            "chunk" => self.chunk = num(key, v)?,
            "chunks" => self.chunks = num(key, v)?,
            "input_size" => self.input_size = opt(key, v)?,
            "hidden_size" => self.hidden_size = num(key, v)?,
            "output_size" => self.output_size = opt(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "theta1" => self.surrogate.theta1 = num(key, v)?,
            "theta2" => self.surrogate.theta2 = num(key, v)?,
            "alpha1" => self.surrogate.alpha1 = num(key, v)?,
            "alpha2" => self.surrogate.alpha2 = num(key, v)?,
            "gamma2" => self.surrogate.gamma2 = num(key, v)?,
            "lr" => self.adam.lr = num(key, v)?,
            "beta1" => self.adam.beta1 = num(key, v)?,
            "beta2" => self.adam.beta2 = num(key, v)?,
            "eps" => self.adam.eps = num(key, v)?,
            "loss_mode" => self.loss_mode = v.parse()?,
            "head_init_std" => self.head_init_std = num(key, v)?,
            "init_scale" => self.init_scale = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "eval_limit" => self.eval_limit = opt(key, v)?,
            "repeats" => self.repeats = num(key, v)?,
            "timing" => self.timing = flag(key, v)?,
            "save_optimizer" => self.save_optimizer = flag(key, v)?,
            "checkpoint" => self.checkpoint = path(v),
            "metrics" => self.metrics = path(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serializes every field; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let size = |v: Option<usize>| v.map_or("auto".to_string(), |n| n.to_string());
        kv("task", self.task.name().into());
        for (k, p) in [
            ("train_images", &self.train_images),
            ("train_labels", &self.train_labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
            ("corpus", &self.corpus),
            ("features", &self.features),
            ("eval_features", &self.eval_features),
            ("checkpoint", &self.checkpoint),
            ("metrics", &self.metrics),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        kv("transpose_images", self.transpose_images.to_string());
        kv("train_subset", size(self.train_subset));
        kv("test_subset", size(self.test_subset));
        kv("max_chars", size(self.max_chars));
        kv("eval_fraction", format!("{:?}", self.eval_fraction));
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("embedding_window", self.embedding_window.to_string());
        kv("embedding_epochs", self.embedding_epochs.to_string());
        kv("chunk", self.chunk.to_string());
        kv("chunks", self.chunks.to_string());
        kv("input_size", size(self.input_size));
        kv("hidden_size", self.hidden_size.to_string());
        kv("output_size", size(self.output_size));
        kv("steps", self.steps.to_string());
        kv("batch", self.batch.to_string());
        kv("iterations", self.iterations.to_string());
        kv("seed", self.seed.to_string());
        let sc = &self.surrogate;
        for (k, v) in [
            ("theta1", sc.theta1),
            ("theta2", sc.theta2),
            ("alpha1", sc.alpha1),
            ("alpha2", sc.alpha2),
            ("gamma2", sc.gamma2),
            ("lr", self.adam.lr),
            ("beta1", self.adam.beta1),
            ("beta2", self.adam.beta2),
            ("eps", self.adam.eps),
            ("head_init_std", self.head_init_std),
            ("init_scale", self.init_scale),
        ] {
            kv(k, format!("{v:?}"));
        }
        kv("loss_mode", self.loss_mode.name().into());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_limit", size(self.eval_limit));
        kv("repeats", self.repeats.to_string());
        kv("timing", self.timing.to_string());
        kv("save_optimizer", self.save_optimizer.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("steps", self.steps),
            ("batch", self.batch),
            ("eval_every", self.eval_every),
            ("repeats", self.repeats),
            ("chunk", self.chunk),
            ("chunks", self.chunks),
            ("embedding_dim", self.embedding_dim),
            ("embedding_window", self.embedding_window),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        for (k, v) in [
            ("input_size", self.input_size),
            ("output_size", self.output_size),
            ("train_subset", self.train_subset),
            ("test_subset", self.test_subset),
            ("max_chars", self.max_chars),
            ("eval_limit", self.eval_limit),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("{k} must be at least 1 or auto")));
            }
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!(
                "eval_fraction must lie in (0, 1), got {}",
                self.eval_fraction
            )));
        }
        if !(self.head_init_std >= 0.0 && self.head_init_std.is_finite()) {
            return Err(Error::Config("head_init_std must be finite and non-negative".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be finite and positive".into()));
        }
        self.surrogate.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.adam.validate()?;

        let need = |name: &str, v: &Option<PathBuf>| {
            v.as_ref()
                .map(|_| ())
                .ok_or_else(|| Error::Config(format!("task {} requires `{name}`", self.task.name())))
        };
        match self.task {
            Task::Toy => {}
            Task::SeqImageClassify => {
                need("train_images", &self.train_images)?;
                need("train_labels", &self.train_labels)?;
                need("test_images", &self.test_images)?;
                need("test_labels", &self.test_labels)?;
            }
            Task::CharLm | Task::WordLm => need("corpus", &self.corpus)?,
            Task::ChunkClassify => need("features", &self.features)?,
        }
        if self.task == Task::Toy && self.output_size.is_some_and(|n| n != 1) {
            return Err(Error::Config("the toy task has a single output".into()));
        }
        if self.task == Task::Toy && self.loss_mode == LossMode::Final {
            return Err(Error::Config("the toy task is scored at every step".into()));
        }
        Ok(())
    }
}
