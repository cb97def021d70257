//! Experiment driver: training, evaluation, generation and the α sweep.
//!
//! Every random draw comes from one root stream seeded by the config:
//! fork 0 initializes the network, fork 1 pretrains word embeddings (its
//! fork 0) and feeds training presentations (its fork 1), fork 2 (then
//! forked by iteration) drives evaluation encodings, and fork 3 drives text
//! sampling.

mod task;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, LossMode, Task};
use crate::data::text::word_tokens;
use crate::error::{Error, Result};
use crate::head::{perplexity, softmax};
use crate::layer::{forward_step, LayerState};
use crate::metrics::{pearson, MetricsRow, MetricsWriter};
use crate::model::{class_scores, sequence_loss, Network, Targets};
use crate::numerics::RngStream;
use crate::optim::{adam_step, AdamState};

pub use task::{embedding_path, load_embeddings, save_embeddings, Sample, SampleTarget, TaskData, TextStreams};

const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

/// Which number an evaluation reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Perplexity,
    Correlation,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Toy => MetricKind::Correlation,
            Task::CharLm | Task::WordLm => MetricKind::Perplexity,
            Task::SeqImageClassify | Task::ChunkClassify => MetricKind::Accuracy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Perplexity => "perplexity",
            MetricKind::Correlation => "correlation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub kind: MetricKind,
    pub value: f64,
    /// Sequences (classification, toy) or predicted symbols (language models).
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub network: Network,
    pub optimizer: AdamState,
    pub rows: Vec<MetricsRow>,
    pub final_eval: Evaluation,
}

/// Loads data and builds the initial network for `cfg`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(TaskData, Network)> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let data = TaskData::load(cfg, None, &mut root.fork(DATA_STREAM).fork(0))?;
    let (input, output) = data.resolve_sizes(cfg)?;
    let mut init_rng = root.fork(INIT_STREAM);
    let mut net = Network::init(input, cfg.hidden_size, output, data.head_kind(), cfg.head_init_std, &mut init_rng)?;
    net.layer.scale(cfg.init_scale);
    Ok((data, net))
}

/// Loads the data behind a saved model, reusing saved word embeddings.
pub fn load_for_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(TaskData, Checkpoint)> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let embeddings = match cfg.task {
        Task::WordLm => Some(load_embeddings(&embedding_path(checkpoint))?),
        _ => None,
    };
    let root = RngStream::new(cfg.seed);
    let data = TaskData::load(cfg, embeddings, &mut root.fork(DATA_STREAM).fork(0))?;
    check_dims(&ckpt.network, &data, cfg, checkpoint)?;
    Ok((data, ckpt))
}

fn check_dims(net: &Network, data: &TaskData, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let (input, output) = data.resolve_sizes(cfg)?;
    for (name, have, want) in [
        ("input size", net.input_size(), input),
        ("hidden size", net.hidden_size(), cfg.hidden_size),
        ("output size", net.output_size(), output),
    ] {
        if have != want {
            return Err(Error::Config(format!(
                "checkpoint {} has {name} {have} but the config needs {want}",
                path.display()
            )));
        }
    }
    if net.head.kind != data.head_kind() {
        return Err(Error::Config(format!(
            "checkpoint {} has a {:?} head but task {} needs {:?}",
            path.display(),
            net.head.kind,
            cfg.task.name(),
            data.head_kind()
        )));
    }
    Ok(())
}

fn save_model(cfg: &ExperimentConfig, data: &TaskData, net: &Network, opt: &AdamState) -> Result<()> {
    let Some(path) = &cfg.checkpoint else {
        return Ok(());
    };
    Checkpoint {
        network: net.clone(),
        optimizer: cfg.save_optimizer.then(|| opt.clone()),
    }
    .save(path)?;
    if let TaskData::Words { table, .. } = data {
        save_embeddings(table, &embedding_path(path))?;
    }
    Ok(())
}

/// Running sums between two metrics rows.
#[derive(Default)]
struct Window {
    loss: f64,
    sequences: usize,
    correct: usize,
    scored: usize,
    log_prob: f64,
    symbols: usize,
    last_corr: f64,
}

impl Window {
    fn metric(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Accuracy if self.scored > 0 => self.correct as f64 / self.scored as f64,
            MetricKind::Perplexity if self.symbols > 0 => (-self.log_prob / self.symbols as f64).exp(),
            MetricKind::Correlation => self.last_corr,
            _ => f64::NAN,
        }
    }
}

/// Trains from the config's seed, writing metrics and the final checkpoint.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let (data, net) = prepare(cfg)?;
    train_prepared(cfg, &data, net)
}

/// Training loop over already loaded data and initial parameters.
pub fn train_prepared(cfg: &ExperimentConfig, data: &TaskData, mut net: Network) -> Result<TrainReport> {
    let root = RngStream::new(cfg.seed);
    let mut data_rng = root.fork(DATA_STREAM).fork(1);
    let mut adam = AdamState::new(cfg.adam, &net);
    let mut writer = MetricsWriter::create(cfg.metrics.as_deref())?;
    let kind = MetricKind::for_task(cfg.task);
    let readout = data.readout();
    let start = Instant::now();
    let wall_ms = || if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
    let mut window = Window::default();

    for it in 1..=cfg.iterations {
        let mut grads = net.zero_grads();
        let scale = 1.0 / cfg.batch as f64;
        for _ in 0..cfg.batch {
            let sample = data.train_sample(cfg, &mut data_rng)?;
            let out = sequence_loss(
                &net,
                &cfg.surrogate,
                &sample.input_refs(),
                &LayerState::zeros(net.hidden_size()),
                sample.targets(cfg.loss_mode),
                readout,
                Some((&mut grads, scale)),
            )?;
            if !out.loss.is_finite() {
                save_model(cfg, data, &net, &adam)?;
                return Err(Error::Numerical(format!(
                    "non-finite loss {} at iteration {it}; {}",
                    out.loss,
                    last_good(cfg)
                )));
            }
            window.loss += out.loss;
            window.sequences += 1;
            window.correct += out.correct;
            window.scored += out.scored;
            window.log_prob += out.target_probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).sum::<f64>();
            window.symbols += out.target_probs.len();
            if let SampleTarget::Values(v) = &sample.target {
                let pred: Vec<f64> = out.outputs.iter().map(|y| y[0]).collect();
                let target: Vec<f64> = v.iter().map(|y| y[0]).collect();
                window.last_corr = pearson(&pred, &target);
            }
        }
        if !grads.is_finite() {
            save_model(cfg, data, &net, &adam)?;
            return Err(Error::Numerical(format!(
                "non-finite gradient at iteration {it}; {}",
                last_good(cfg)
            )));
        }
        adam_step(&mut adam, &mut net, &grads)?;

        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let eval = evaluate(&net, data, cfg, cfg.eval_limit, &root.fork(EVAL_STREAM).fork(it as u64))?;
            writer.write(MetricsRow {
                iter: it,
                wall_ms: wall_ms(),
                train_loss: window.loss / window.sequences as f64,
                train_metric: window.metric(kind),
                eval_metric: eval.value,
            })?;
            window = Window::default();
        }
    }

    let final_eval = evaluate(&net, data, cfg, None, &root.fork(EVAL_STREAM).fork(u64::MAX))?;
    save_model(cfg, data, &net, &adam)?;
    Ok(TrainReport {
        network: net,
        optimizer: adam,
        rows: writer.rows().to_vec(),
        final_eval,
    })
}

fn last_good(cfg: &ExperimentConfig) -> String {
    match &cfg.checkpoint {
        Some(p) => format!("parameters before this iteration saved to {}", p.display()),
        None => "no checkpoint path configured".into(),
    }
}

/// Evaluates on the held-out split. `limit` caps the number of sequences
/// (classification) or predicted symbols (language models).
pub fn evaluate(
    net: &Network,
    data: &TaskData,
    cfg: &ExperimentConfig,
    limit: Option<usize>,
    rng: &RngStream,
) -> Result<Evaluation> {
    let mut rng = rng.clone();
    let kind = MetricKind::for_task(cfg.task);
    let readout = data.readout();
    let zero = LayerState::zeros(net.hidden_size());
    match kind {
        MetricKind::Accuracy => {
            let n = limit.map_or(data.eval_len(), |l| l.min(data.eval_len()));
            let mut correct = 0;
            for k in 0..n {
                let sample = data.eval_sample(cfg, k, &mut rng)?;
                // accuracy is always decided on the final step
                let out = sequence_loss(
                    net,
                    &cfg.surrogate,
                    &sample.input_refs(),
                    &zero,
                    sample.targets(LossMode::Final),
                    readout,
                    None,
                )?;
                correct += out.correct;
            }
            Ok(Evaluation {
                kind,
                value: if n == 0 { f64::NAN } else { correct as f64 / n as f64 },
                count: n,
            })
        }
        MetricKind::Perplexity => {
            let stream = data.eval_stream().expect("language model has a stream");
            let n = limit.map_or(stream.len() - 1, |l| l.min(stream.len() - 1));
            let mut probs = Vec::with_capacity(n);
            let mut state = zero;
            for chunk_start in (0..n).step_by(cfg.steps) {
                let end = (chunk_start + cfg.steps).min(n);
                let inputs = stream[chunk_start..end]
                    .iter()
                    .map(|&id| data.symbol_input(id))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f64]> = inputs.iter().map(|x| &x[..]).collect();
                let out = sequence_loss(
                    net,
                    &cfg.surrogate,
                    &refs,
                    &state,
                    Targets::EveryClass(&stream[chunk_start + 1..end + 1]),
                    readout,
                    None,
                )?;
                probs.extend(out.target_probs);
                state = out.final_state.expect("non-empty chunk");
            }
            Ok(Evaluation {
                kind,
                value: perplexity(&probs)?.value,
                count: probs.len(),
            })
        }
        MetricKind::Correlation => {
            let sample = data.train_sample(cfg, &mut rng)?;
            let out = sequence_loss(
                net,
                &cfg.surrogate,
                &sample.input_refs(),
                &zero,
                sample.targets(LossMode::Every),
                readout,
                None,
            )?;
            let SampleTarget::Values(target) = &sample.target else {
                unreachable!("toy samples carry values")
            };
            let pred: Vec<f64> = out.outputs.iter().map(|y| y[0]).collect();
            let target: Vec<f64> = target.iter().map(|y| y[0]).collect();
            Ok(Evaluation {
                kind,
                value: pearson(&pred, &target),
                count: 1,
            })
        }
    }
}

/// Evaluates a checkpoint against the config's held-out data.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Evaluation> {
    let (data, ckpt) = load_for_checkpoint(cfg, checkpoint)?;
    evaluate(&ckpt.network, &data, cfg, None, &RngStream::new(cfg.seed).fork(EVAL_STREAM).fork(u64::MAX))
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub seed_text: String,
    /// Symbols to append.
    pub length: usize,
    /// Softmax temperature; 0 picks the most likely symbol.
    pub temperature: f64,
    pub seed: u64,
}

/// Continues `seed_text` by sampling one symbol at a time. Characters are
/// appended directly; words are appended separated by spaces.
pub fn generate(net: &Network, data: &TaskData, cfg: &ExperimentConfig, opts: &GenerateOptions) -> Result<String> {
    if !(opts.temperature >= 0.0 && opts.temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be finite and non-negative, got {}", opts.temperature)));
    }
    let vocab = data
        .vocab()
        .ok_or_else(|| Error::Config(format!("task {} cannot generate text", cfg.task.name())))?;
    if opts.length == 0 {
        return Ok(opts.seed_text.clone());
    }
    let words = cfg.task == Task::WordLm;
    let symbols: Vec<String> = if words {
        word_tokens(&opts.seed_text)
    } else {
        opts.seed_text.chars().flat_map(char::to_lowercase).map(String::from).collect()
    };
    if symbols.is_empty() {
        return Err(Error::Data("seed text has no symbols to condition on".into()));
    }
    let ids = symbols
        .iter()
        .map(|s| {
            vocab
                .id(s)
                .ok_or_else(|| Error::Data(format!("seed text symbol {s:?} is not in the vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = RngStream::new(opts.seed).fork(SAMPLE_STREAM);
    let mut state = LayerState::zeros(net.hidden_size());
    let mut out = opts.seed_text.clone();
    let mut next = None;
    let mut feed = |id: usize, state: &mut LayerState| -> Result<usize> {
        let x = data.symbol_input(id)?;
        let cache = forward_step(&net.layer, &cfg.surrogate, &x, &state.h, &state.c)?;
        *state = cache.state();
        let scores = class_scores(&net.head, data.readout(), &cache.h)?;
        Ok(pick(&scores, opts.temperature, &mut rng))
    };
    for &id in &ids {
        next = Some(feed(id, &mut state)?);
    }
    for k in 0..opts.length {
        let id = next.expect("seed text fed");
        let sym = vocab.symbol(id).expect("sampled id in vocabulary");
        if words && (k > 0 || !out.is_empty()) {
            out.push(' ');
        }
        out.push_str(sym);
        if k + 1 < opts.length {
            next = Some(feed(id, &mut state)?);
        }
    }
    Ok(out)
}

fn pick(scores: &[f64], temperature: f64, rng: &mut RngStream) -> usize {
    if temperature == 0.0 {
        return scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &s)| if s > b.1 { (i, s) } else { b })
            .0;
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let p = softmax(&scaled);
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Generation from a saved language model.
pub fn generate_from_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path, opts: &GenerateOptions) -> Result<String> {
    let (data, ckpt) = load_for_checkpoint(cfg, checkpoint)?;
    generate(&ckpt.network, &data, cfg, opts)
}

/// File name for one sweep curve.
pub fn curve_file_name(alpha1: f64, alpha2: f64) -> String {
    format!("curve_a1_{alpha1}_a2_{alpha2}.csv")
}

#[derive(Clone, Debug)]
pub struct SweepCurve {
    pub alpha1: f64,
    pub alpha2: f64,
    pub path: PathBuf,
    pub rows: Vec<MetricsRow>,
}

/// Trains one model per `(α₁, α₂)` pair from the same seed. Each curve goes
/// to its own file in `out_dir`, and `sweep.csv` there collects all of them.
pub fn sweep_alpha(cfg: &ExperimentConfig, pairs: &[(f64, f64)], out_dir: &Path) -> Result<Vec<SweepCurve>> {
    if pairs.is_empty() {
        return Err(Error::Config("the alpha sweep needs at least one pair".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (data, net0) = prepare(cfg)?;
    let mut curves = Vec::new();
    for &(alpha1, alpha2) in pairs {
        let mut run = cfg.clone();
        run.surrogate.alpha1 = alpha1;
        run.surrogate.alpha2 = alpha2;
        run.validate()?;
        let path = out_dir.join(curve_file_name(alpha1, alpha2));
        run.metrics = Some(path.clone());
        run.checkpoint = None;
        let report = train_prepared(&run, &data, net0.clone())?;
        curves.push(SweepCurve {
            alpha1,
            alpha2,
            path,
            rows: report.rows,
        });
    }
    let mut combined = String::from("alpha1,alpha2,iter,train_loss,eval_metric\n");
    for c in &curves {
        for r in &c.rows {
            let _ = writeln!(
                combined,
                "{:?},{:?},{},{:?},{:?}",
                c.alpha1, c.alpha2, r.iter, r.train_loss, r.eval_metric
            );
        }
    }
    let p = out_dir.join("sweep.csv");
    fs::write(&p, combined.replace("NaN", "nan")).map_err(|e| Error::io(&p, e))?;
    Ok(curves)
}

#[derive(Clone, Debug)]
pub struct RepeatSummary {
    pub kind: MetricKind,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl RepeatSummary {
    pub fn render(&self) -> String {
        format!(
            "{} {:.4} ± {:.4} over {} runs (seeds {})",
            self.kind.name(),
            self.mean,
            self.std,
            self.values.len(),
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        )
    }
}

/// Per-run output path: `<stem>.run<k>.<ext>`.
pub fn run_path(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.run{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}.run{k}"),
    };
    path.with_file_name(name)
}

/// Trains `cfg.repeats` models with seeds `seed, seed+1, …`. With more than
/// one run, each run's files get a `.run<k>` suffix.
pub fn train_repeats(cfg: &ExperimentConfig) -> Result<(Vec<TrainReport>, RepeatSummary)> {
    let mut reports = Vec::new();
    let mut seeds = Vec::new();
    for k in 0..cfg.repeats {
        let mut run = cfg.clone();
        run.seed = cfg.seed.wrapping_add(k as u64);
        if cfg.repeats > 1 {
            run.checkpoint = cfg.checkpoint.as_deref().map(|p| run_path(p, k));
            run.metrics = cfg.metrics.as_deref().map(|p| run_path(p, k));
        }
        seeds.push(run.seed);
        reports.push(train(&run)?);
    }
    let values: Vec<f64> = reports.iter().map(|r| r.final_eval.value).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((
        reports,
        RepeatSummary {
            kind: MetricKind::for_task(cfg.task),
            seeds,
            values,
            mean,
            std,
        },
    ))
}

/// Renders item `k`'s spike train, one line per step with `1` for a spike
/// and `.` for silence.
pub fn encode_preview(cfg: &ExperimentConfig, k: usize) -> Result<String> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let data = TaskData::load(cfg, None, &mut root.fork(DATA_STREAM).fork(0))?;
    let train = data
        .preview(cfg, k, &mut root.fork(DATA_STREAM).fork(1))?
        .ok_or_else(|| Error::Config("word-level inputs are embeddings, not spike trains".into()))?;
    let mut s = String::new();
    for t in 0..train.steps() {
        let line: String = train.step(t, 0).iter().map(|&v| if v == 1.0 { '1' } else { '.' }).collect();
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(
        s,
        "{} steps x {} channels, firing rate {:.4}",
        train.steps(),
        train.features(),
        train.firing_rate()
    );
    Ok(s)
}
