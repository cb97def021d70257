use std::fs;
use std::path::Path;

use spiking_lstm::checkpoint::Checkpoint;
use spiking_lstm::config::{ExperimentConfig, Task};
use spiking_lstm::harness::{
    embedding_path, encode_preview, evaluate, evaluate_checkpoint, generate_from_checkpoint, prepare,
    sweep_alpha, train, train_prepared, train_repeats, GenerateOptions, MetricKind,
};
use spiking_lstm::metrics::read_metrics;
use spiking_lstm::model::{sequence_loss, Readout, Targets};
use spiking_lstm::{Error, Gate, LayerState, RngStream};

fn toy(iterations: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::Toy);
    cfg.hidden_size = 24;
    cfg.steps = 40;
    cfg.iterations = iterations;
    cfg.head_init_std = 0.05;
    cfg.init_scale = 0.1;
    cfg.eval_every = 10;
    cfg.seed = 3;
    cfg
}

fn write_corpus(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn char_lm(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::CharLm);
    let text: String = "abcd".chars().cycle().take(2000).collect();
    cfg.corpus = Some(write_corpus(dir, "abcd.txt", &text));
    cfg.hidden_size = 16;
    cfg.steps = 20;
    cfg.batch = 4;
    cfg.iterations = 20;
    cfg.head_init_std = 0.01;
    cfg.init_scale = 0.1;
    cfg.eval_every = 10;
    cfg
}

#[test]
fn toy_loss_drops_below_its_initial_value() {
    let cfg = toy(200);
    let (data, net0) = prepare(&cfg).unwrap();
    let sample = data.train_sample(&cfg, &mut RngStream::new(99)).unwrap();
    let loss = |net: &spiking_lstm::Network| {
        sequence_loss(
            net,
            &cfg.surrogate,
            &sample.input_refs(),
            &LayerState::zeros(cfg.hidden_size),
            sample.targets(cfg.loss_mode),
            Readout::Direct,
            None,
        )
        .unwrap()
        .loss
    };
    let before = loss(&net0);
    let report = train_prepared(&cfg, &data, net0).unwrap();
    let after = loss(&report.network);
    assert!(after < before, "{after} vs {before}");
    assert_eq!(report.rows.len(), 20);
    assert_eq!(report.final_eval.kind, MetricKind::Correlation);
}

#[test]
fn zero_iterations_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(0);
    cfg.checkpoint = Some(dir.path().join("init.ckpt"));
    cfg.metrics = Some(dir.path().join("m.csv"));
    train(&cfg).unwrap();
    let (_, net) = prepare(&cfg).unwrap();
    assert_eq!(Checkpoint::load(cfg.checkpoint.as_ref().unwrap()).unwrap().network, net);
    assert!(read_metrics(cfg.metrics.as_ref().unwrap()).unwrap().is_empty());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let mut cfg = char_lm(dir.path());
        cfg.checkpoint = Some(dir.path().join(format!("{k}.ckpt")));
        cfg.metrics = Some(dir.path().join(format!("{k}.csv")));
        cfg.save_optimizer = true;
        train(&cfg).unwrap();
        bytes.push((
            fs::read(cfg.checkpoint.unwrap()).unwrap(),
            fs::read(cfg.metrics.unwrap()).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn untrained_char_model_is_near_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = char_lm(dir.path());
    let (data, net) = prepare(&cfg).unwrap();
    let e = evaluate(&net, &data, &cfg, None, &RngStream::new(0)).unwrap();
    assert_eq!(e.kind, MetricKind::Perplexity);
    assert_eq!(e.count, 199);
    assert!((e.value - 4.0).abs() / 4.0 < 0.05, "{}", e.value);
}

/// Two-feature rows whose label is the index of the lit feature, and a
/// network built by hand to read it off.
#[test]
fn constructed_weights_classify_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("label,f0,f1\n");
    for k in 0..40 {
        let lit = k % 2;
        csv.push_str(&format!("{lit},{},{}\n", 1 - lit, lit));
    }
    let features = write_corpus(dir.path(), "f.csv", &csv);
    let mut cfg = ExperimentConfig::new(Task::ChunkClassify);
    cfg.features = Some(features);
    cfg.input_size = None;
    cfg.chunk = 2;
    cfg.chunks = 1;
    cfg.hidden_size = 2;
    cfg.eval_fraction = 0.25;
    let (_, mut net) = prepare(&cfg).unwrap();
    net.layer.fill(0.0);
    for gate in [Gate::Input, Gate::Output] {
        net.layer.gate_mut(gate).b_x.fill(1.0);
    }
    let g = net.layer.gate_mut(Gate::Modulation);
    g.w_x.set(0, 0, 1.0);
    g.w_x.set(1, 1, 1.0);
    net.head.w_y.fill(0.0);
    net.head.w_y.set(0, 0, 5.0);
    net.head.w_y.set(1, 1, 5.0);
    net.head.b_y.fill(0.0);
    let ckpt = dir.path().join("hand.ckpt");
    Checkpoint {
        network: net,
        optimizer: None,
    }
    .save(&ckpt)
    .unwrap();
    let e = evaluate_checkpoint(&cfg, &ckpt).unwrap();
    assert_eq!((e.kind, e.value, e.count), (MetricKind::Accuracy, 1.0, 10));
}

#[test]
fn checkpoint_dimension_mismatch_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(0);
    cfg.checkpoint = Some(dir.path().join("m.ckpt"));
    train(&cfg).unwrap();
    cfg.hidden_size += 1;
    let err = evaluate_checkpoint(&cfg, cfg.checkpoint.as_ref().unwrap()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("hidden size 24"), "{err}");
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_good_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(5);
    cfg.checkpoint = Some(dir.path().join("m.ckpt"));
    let (data, mut net) = prepare(&cfg).unwrap();
    net.head.w_y.fill(1e300);
    let err = train_prepared(&cfg, &data, net.clone()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("iteration 1"), "{err}");
    assert_eq!(Checkpoint::load(cfg.checkpoint.as_ref().unwrap()).unwrap().network, net);
}

#[test]
fn generation_contract() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = char_lm(dir.path());
    cfg.checkpoint = Some(dir.path().join("lm.ckpt"));
    train(&cfg).unwrap();
    let ckpt = cfg.checkpoint.clone().unwrap();
    let opts = |seed_text: &str, length| GenerateOptions {
        seed_text: seed_text.into(),
        length,
        temperature: 1.0,
        seed: 5,
    };
    assert_eq!(generate_from_checkpoint(&cfg, &ckpt, &opts("dAb", 0)).unwrap(), "dAb");
    let a = generate_from_checkpoint(&cfg, &ckpt, &opts("ab", 50)).unwrap();
    let b = generate_from_checkpoint(&cfg, &ckpt, &opts("ab", 50)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.chars().count(), 52);
    assert!(a.chars().all(|c| "abcd".contains(c)));
    let err = generate_from_checkpoint(&cfg, &ckpt, &opts("abz", 5)).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("\"z\""), "{err}");
}

#[test]
fn word_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = "the cat sat on the mat . the dog sat on the log . ".repeat(30);
    let mut cfg = ExperimentConfig::new(Task::WordLm);
    cfg.corpus = Some(write_corpus(dir.path(), "w.txt", &text));
    cfg.embedding_dim = 8;
    cfg.embedding_epochs = 2;
    cfg.hidden_size = 12;
    cfg.steps = 10;
    cfg.iterations = 5;
    cfg.eval_every = 5;
    cfg.head_init_std = 0.1;
    cfg.init_scale = 0.1;
    cfg.checkpoint = Some(dir.path().join("w.ckpt"));
    let report = train(&cfg).unwrap();
    assert_eq!(report.network.output_size(), 8);
    assert!(embedding_path(cfg.checkpoint.as_ref().unwrap()).exists());
    let e = evaluate_checkpoint(&cfg, cfg.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(e.value, report.final_eval.value);
    let opts = GenerateOptions {
        seed_text: "The cat".into(),
        length: 6,
        temperature: 0.0,
        seed: 1,
    };
    let out = generate_from_checkpoint(&cfg, cfg.checkpoint.as_ref().unwrap(), &opts).unwrap();
    let words: Vec<&str> = out.split(' ').collect();
    assert_eq!(words.len(), 8, "{out}");
    assert!(words[2..].iter().all(|w| ["the", "cat", "sat", "on", "mat", ".", "dog", "log"].contains(w)));
}

#[test]
fn sweep_writes_one_curve_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(20);
    let pairs = [(4.0, 0.3), (4.0, 0.05), (0.5, 0.3), (0.5, 0.05)];
    let curves = sweep_alpha(&cfg, &pairs, dir.path()).unwrap();
    assert_eq!(curves.len(), 4);
    for c in &curves {
        assert_eq!(read_metrics(&c.path).unwrap(), c.rows);
    }
    let combined = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(combined.lines().count(), 1 + 4 * 2);
    assert!(sweep_alpha(&cfg, &[], dir.path()).is_err());

    // a single pair is just a training run
    let single = sweep_alpha(&cfg, &[(cfg.surrogate.alpha1, cfg.surrogate.alpha2)], dir.path()).unwrap();
    assert_eq!(single[0].rows, train(&cfg).unwrap().rows);
}

#[test]
fn repeats_report_mean_and_spread() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(10);
    cfg.repeats = 3;
    cfg.metrics = Some(dir.path().join("m.csv"));
    let (reports, summary) = train_repeats(&cfg).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(summary.seeds, vec![3, 4, 5]);
    assert!(dir.path().join("m.run2.csv").exists());
    let mean = summary.values.iter().sum::<f64>() / 3.0;
    assert!((summary.mean - mean).abs() < 1e-15);
    assert!(summary.render().contains("over 3 runs"));
}

#[test]
fn preview_shows_binary_steps() {
    let cfg = toy(0);
    let text = encode_preview(&cfg, 0).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 41);
    assert!(lines[..40].iter().all(|l| l.len() == 20 && l.chars().all(|c| c == '1' || c == '.')));
}

#[test]
fn final_class_targets_use_the_last_label() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = char_lm(dir.path());
    let (data, _) = prepare(&cfg).unwrap();
    let s = data.train_sample(&cfg, &mut RngStream::new(1)).unwrap();
    match (s.targets(spiking_lstm::config::LossMode::Final), s.targets(cfg.loss_mode)) {
        (Targets::FinalClass(c), Targets::EveryClass(all)) => assert_eq!(c, *all.last().unwrap()),
        other => panic!("{other:?}"),
    }
}
