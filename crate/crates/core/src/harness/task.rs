//! Task data: loading, sizes, and per-presentation samples.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, LossMode, Task};
use crate::data::{
    bernoulli_encode_rows, bernoulli_spike_encode, char_corpus, chunk_features, load_feature_csv, load_idx,
    one_hot_encode, sinusoid_dataset, train_word_embeddings, word_corpus, EmbeddingConfig, EmbeddingTable,
    FeatureSet, IdxDataset, SpikeTrain, Vocab,
};
use crate::error::{Error, Result};
use crate::head::HeadKind;
use crate::model::{Readout, Targets};
use crate::numerics::{Matrix, RngStream, Vector};

/// What one presented sequence is scored against.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleTarget {
    /// A label for every step (a class task repeats its label).
    Classes(Vec<usize>),
    Values(Vec<Vector>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vector>,
    pub target: SampleTarget,
}

impl Sample {
    pub fn input_refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(|x| &x[..]).collect()
    }

    pub fn targets(&self, mode: LossMode) -> Targets<'_> {
        match (&self.target, mode) {
            (SampleTarget::Classes(c), LossMode::Final) => Targets::FinalClass(*c.last().expect("non-empty sample")),
            (SampleTarget::Classes(c), LossMode::Every) => Targets::EveryClass(c),
            (SampleTarget::Values(v), _) => Targets::EveryValue(v),
        }
    }
}

/// A language-model token stream split into training head and held-out tail.
#[derive(Clone, Debug, PartialEq)]
pub struct TextStreams {
    pub vocab: Vocab,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum TaskData {
    Toy {
        steps: usize,
        input_size: usize,
    },
    Images {
        train: IdxDataset,
        test: IdxDataset,
    },
    Chars(TextStreams),
    Words {
        text: TextStreams,
        table: EmbeddingTable,
    },
    Features {
        train: FeatureSet,
        eval: FeatureSet,
    },
}

/// Sidecar file holding the word embeddings next to a checkpoint.
pub fn embedding_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".emb.tsv");
    PathBuf::from(s)
}

/// One line per vocabulary entry: the symbol, then the vector, tab separated.
pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (id, sym) in table.vocab.symbols().iter().enumerate() {
        out.push_str(sym);
        for v in table.vector(id) {
            out.push('\t');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut symbols = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let mut cells = line.split('\t');
        let sym = cells.next().unwrap_or_default();
        let row: Vec<f64> = cells
            .map(|c| c.parse().map_err(|_| Error::format(path, format!("line {}: bad number {c:?}", n + 1))))
            .collect::<Result<_>>()?;
        if *dim.get_or_insert(row.len()) != row.len() || row.is_empty() {
            return Err(Error::format(path, format!("line {}: ragged embedding row", n + 1)));
        }
        symbols.push(sym.to_string());
        data.extend(row);
    }
    let dim = dim.ok_or_else(|| Error::format(path, "no embeddings"))?;
    let vocab = Vocab::from_symbols(symbols).map_err(|e| Error::format(path, e.to_string()))?;
    let vectors = Matrix::from_vec(vocab.len(), dim, data)?;
    EmbeddingTable::new(vocab, vectors)
}

fn split_stream(vocab: Vocab, ids: Vec<usize>, eval_fraction: f64) -> Result<TextStreams> {
    let n_eval = ((ids.len() as f64) * eval_fraction).round() as usize;
    if n_eval < 2 || ids.len() - n_eval < 2 {
        return Err(Error::Data(format!(
            "corpus of {} symbols is too short to hold out {eval_fraction}",
            ids.len()
        )));
    }
    let split = ids.len() - n_eval;
    Ok(TextStreams {
        vocab,
        train: ids[..split].to_vec(),
        eval: ids[split..].to_vec(),
    })
}

fn required<'a>(cfg: &ExperimentConfig, name: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("task {} requires `{name}`", cfg.task.name())))
}

fn load_images(cfg: &ExperimentConfig, images: &Path, labels: &Path, subset: Option<usize>) -> Result<IdxDataset> {
    let mut ds = load_idx(images, labels)?;
    if let Some(n) = subset {
        ds.truncate(n);
    }
    if cfg.transpose_images {
        ds.transpose_images();
    }
    if ds.is_empty() {
        return Err(Error::Data(format!("{} holds no images", images.display())));
    }
    Ok(ds)
}

fn split_features(set: FeatureSet, eval_fraction: f64) -> Result<(FeatureSet, FeatureSet)> {
    let n_eval = ((set.vectors.len() as f64) * eval_fraction).round().max(1.0) as usize;
    if n_eval >= set.vectors.len() {
        return Err(Error::Data(format!(
            "{} feature rows are too few to hold out an evaluation split",
            set.vectors.len()
        )));
    }
    let split = set.vectors.len() - n_eval;
    let FeatureSet { mut vectors, mut labels } = set;
    let eval = FeatureSet {
        vectors: vectors.split_off(split),
        labels: labels.split_off(split),
    };
    Ok((FeatureSet { vectors, labels }, eval))
}

impl TaskData {
    /// Loads the task's data. Word embeddings are trained from `rng` unless
    /// `embeddings` supplies them.
    pub fn load(cfg: &ExperimentConfig, embeddings: Option<EmbeddingTable>, rng: &mut RngStream) -> Result<Self> {
        Ok(match cfg.task {
            Task::Toy => TaskData::Toy {
                steps: cfg.steps,
                input_size: cfg.input_size.unwrap_or(20),
            },
            Task::SeqImageClassify => {
                let train = load_images(
                    cfg,
                    required(cfg, "train_images", &cfg.train_images)?,
                    required(cfg, "train_labels", &cfg.train_labels)?,
                    cfg.train_subset,
                )?;
                let test = load_images(
                    cfg,
                    required(cfg, "test_images", &cfg.test_images)?,
                    required(cfg, "test_labels", &cfg.test_labels)?,
                    cfg.test_subset,
                )?;
                if (train.rows, train.cols) != (test.rows, test.cols) {
                    return Err(Error::Data(format!(
                        "train images are {}x{} but test images are {}x{}",
                        train.rows, train.cols, test.rows, test.cols
                    )));
                }
                TaskData::Images { train, test }
            }
            Task::CharLm => {
                let (vocab, ids) = char_corpus(required(cfg, "corpus", &cfg.corpus)?, cfg.max_chars)?;
                TaskData::Chars(split_stream(vocab, ids, cfg.eval_fraction)?)
            }
            Task::WordLm => {
                let (vocab, ids) = word_corpus(required(cfg, "corpus", &cfg.corpus)?, cfg.max_chars)?;
                let table = match embeddings {
                    Some(t) => {
                        if t.vocab != vocab {
                            return Err(Error::Data("saved embeddings do not match the corpus vocabulary".into()));
                        }
                        t
                    }
                    None => {
                        let ecfg = EmbeddingConfig {
                            window: cfg.embedding_window,
                            dim: cfg.embedding_dim,
                            epochs: cfg.embedding_epochs,
                            adam: cfg.adam,
                            ..EmbeddingConfig::default()
                        };
                        train_word_embeddings(&vocab, &ids, &ecfg, rng)?
                    }
                };
                TaskData::Words {
                    text: split_stream(vocab, ids, cfg.eval_fraction)?,
                    table,
                }
            }
            Task::ChunkClassify => {
                let train = load_feature_csv(required(cfg, "features", &cfg.features)?)?;
                let (train, eval) = match &cfg.eval_features {
                    Some(p) => (train, load_feature_csv(p)?),
                    None => split_features(train, cfg.eval_fraction)?,
                };
                TaskData::Features { train, eval }
            }
        })
    }

    pub fn head_kind(&self) -> HeadKind {
        match self {
            TaskData::Toy { .. } | TaskData::Words { .. } => HeadKind::Linear,
            _ => HeadKind::Softmax,
        }
    }

    pub fn readout(&self) -> Readout<'_> {
        match self {
            TaskData::Words { table, .. } => Readout::Projected(&table.vectors),
            _ => Readout::Direct,
        }
    }

    /// Input and output sizes implied by the data.
    pub fn sizes(&self, cfg: &ExperimentConfig) -> (usize, usize) {
        match self {
            TaskData::Toy { input_size, .. } => (*input_size, 1),
            TaskData::Images { train, test } => {
                let max = train.labels.iter().chain(&test.labels).max().copied().unwrap_or(0);
                (train.cols, max as usize + 1)
            }
            TaskData::Chars(t) => (t.vocab.len(), t.vocab.len()),
            TaskData::Words { table, .. } => (table.dim(), table.dim()),
            TaskData::Features { train, eval } => {
                let max = train.labels.iter().chain(&eval.labels).max().copied().unwrap_or(0);
                (cfg.chunk, max + 1)
            }
        }
    }

    /// Sizes after reconciling with explicit config values.
    pub fn resolve_sizes(&self, cfg: &ExperimentConfig) -> Result<(usize, usize)> {
        let (input, output) = self.sizes(cfg);
        if let Some(n) = cfg.input_size {
            if n != input {
                return Err(Error::Config(format!("input_size = {n} but the data has {input} features per step")));
            }
        }
        let output = match cfg.output_size {
            Some(n) if n < output && self.head_kind() == HeadKind::Softmax => {
                return Err(Error::Config(format!("output_size = {n} but the data has {output} classes")));
            }
            Some(n) if n != output && self.head_kind() == HeadKind::Linear => {
                return Err(Error::Config(format!("output_size = {n} but the data needs {output}")));
            }
            Some(n) => n,
            None => output,
        };
        Ok((input, output))
    }

    /// One training presentation, drawn with replacement.
    pub fn train_sample(&self, cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<Sample> {
        match self {
            TaskData::Toy { steps, input_size } => toy_sample(*steps, *input_size, rng),
            TaskData::Images { train, .. } => image_sample(train, rng.below(train.len()), rng),
            TaskData::Chars(t) => {
                let start = window_start(t.train.len(), cfg.steps, rng);
                lm_window(&t.train[start..], cfg.steps, |id| one_hot_encode(id, t.vocab.len()))
            }
            TaskData::Words { text, table } => {
                let start = window_start(text.train.len(), cfg.steps, rng);
                lm_window(&text.train[start..], cfg.steps, |id| Ok(table.vector(id).to_vec()))
            }
            TaskData::Features { train, .. } => feature_sample(cfg, train, rng.below(train.vectors.len()), rng),
        }
    }

    /// Number of held-out classification sequences.
    pub fn eval_len(&self) -> usize {
        match self {
            TaskData::Images { test, .. } => test.len(),
            TaskData::Features { eval, .. } => eval.vectors.len(),
            _ => 0,
        }
    }

    /// Held-out classification sequence `k`.
    pub fn eval_sample(&self, cfg: &ExperimentConfig, k: usize, rng: &mut RngStream) -> Result<Sample> {
        match self {
            TaskData::Images { test, .. } => image_sample(test, k, rng),
            TaskData::Features { eval, .. } => feature_sample(cfg, eval, k, rng),
            _ => Err(Error::Config("not a classification task".into())),
        }
    }

    /// Held-out stream for language models.
    pub fn eval_stream(&self) -> Option<&[usize]> {
        match self {
            TaskData::Chars(t) | TaskData::Words { text: t, .. } => Some(&t.eval),
            _ => None,
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match self {
            TaskData::Chars(t) | TaskData::Words { text: t, .. } => Some(&t.vocab),
            _ => None,
        }
    }

    /// Network input for symbol `id` of a language model.
    pub fn symbol_input(&self, id: usize) -> Result<Vector> {
        match self {
            TaskData::Chars(t) => one_hot_encode(id, t.vocab.len()),
            TaskData::Words { table, .. } => {
                if id >= table.vocab.len() {
                    return Err(Error::Index { index: id, len: table.vocab.len() });
                }
                Ok(table.vector(id).to_vec())
            }
            _ => Err(Error::Config("not a language-model task".into())),
        }
    }

    /// The spike train fed to the network for item `k` of the training data;
    /// `None` for word models, whose inputs are real-valued.
    pub fn preview(&self, cfg: &ExperimentConfig, k: usize, rng: &mut RngStream) -> Result<Option<SpikeTrain>> {
        let sample = match self {
            TaskData::Toy { steps, input_size } => toy_sample(*steps, *input_size, rng)?,
            TaskData::Images { train, .. } => {
                check_index(k, train.len())?;
                image_sample(train, k, rng)?
            }
            TaskData::Chars(t) => {
                check_index(k, t.train.len())?;
                lm_window(&t.train[k..], cfg.steps, |id| one_hot_encode(id, t.vocab.len()))?
            }
            TaskData::Words { .. } => return Ok(None),
            TaskData::Features { train, .. } => {
                check_index(k, train.vectors.len())?;
                feature_sample(cfg, train, k, rng)?
            }
        };
        let features = sample.inputs.first().map_or(0, Vec::len);
        let data = sample.inputs.concat();
        SpikeTrain::from_data(sample.inputs.len(), 1, features, data).map(Some)
    }
}

fn check_index(k: usize, len: usize) -> Result<()> {
    if k >= len {
        return Err(Error::Index { index: k, len });
    }
    Ok(())
}

fn train_rows(train: &SpikeTrain) -> Vec<Vector> {
    (0..train.steps()).map(|t| train.step(t, 0).to_vec()).collect()
}

fn toy_sample(steps: usize, input_size: usize, rng: &mut RngStream) -> Result<Sample> {
    let (train, target) = sinusoid_dataset(steps, input_size, rng)?;
    Ok(Sample {
        inputs: train_rows(&train),
        target: SampleTarget::Values(target.into_iter().map(|v| vec![v]).collect()),
    })
}

fn image_sample(ds: &IdxDataset, k: usize, rng: &mut RngStream) -> Result<Sample> {
    let p = ds.probabilities(k);
    let rows: Vec<&[f64]> = p.chunks(ds.cols).collect();
    let train = bernoulli_encode_rows(&rows, rng)?;
    Ok(Sample {
        inputs: train_rows(&train),
        target: SampleTarget::Classes(vec![ds.labels[k] as usize; ds.rows]),
    })
}

fn feature_sample(cfg: &ExperimentConfig, set: &FeatureSet, k: usize, rng: &mut RngStream) -> Result<Sample> {
    let chunks = chunk_features(&set.vectors[k], cfg.chunk, cfg.chunks)?;
    let inputs = chunks
        .iter()
        .map(|c| Ok(bernoulli_spike_encode(c, 1, rng)?.step(0, 0).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        inputs,
        target: SampleTarget::Classes(vec![set.labels[k]; cfg.chunks]),
    })
}

/// Start of a random window of `steps + 1` symbols; short streams start at 0.
fn window_start(len: usize, steps: usize, rng: &mut RngStream) -> usize {
    if len > steps + 1 {
        rng.below(len - steps)
    } else {
        0
    }
}

/// Inputs are symbols `0..n`, targets are symbols `1..=n`, with `n` at most
/// `steps`.
fn lm_window(ids: &[usize], steps: usize, encode: impl Fn(usize) -> Result<Vector>) -> Result<Sample> {
    let n = steps.min(ids.len().saturating_sub(1));
    if n == 0 {
        return Err(Error::Data("text stream too short for one prediction".into()));
    }
    Ok(Sample {
        inputs: ids[..n].iter().map(|&id| encode(id)).collect::<Result<_>>()?,
        target: SampleTarget::Classes(ids[1..=n].to_vec()),
    })
}
