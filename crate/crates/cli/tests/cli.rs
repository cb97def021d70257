use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snnlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snnlstm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy_config(dir: &Path) -> String {
    let p = dir.join("toy.cfg");
    fs::write(
        &p,
        "task = toy\nhidden_size = 12\nsteps = 20\niterations = 30\neval_every = 10\n\
         head_init_std = 0.05\ninit_scale = 0.1\n",
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

fn char_config(dir: &Path) -> String {
    let corpus = dir.join("abc.txt");
    fs::write(&corpus, "abc".repeat(300)).unwrap();
    let p = dir.join("char.cfg");
    fs::write(
        &p,
        format!(
            "task = char-lm\ncorpus = {}\nhidden_size = 8\nsteps = 10\nbatch = 2\niterations = 10\n\
             eval_every = 5\nhead_init_std = 0.01\ninit_scale = 0.1\n",
            corpus.display()
        ),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn gradcheck_passes_by_default() {
    let o = snnlstm(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS"), "{}", stdout(&o));
}

#[test]
fn corrupted_gradcheck_names_the_table() {
    let o = snnlstm(&["gradcheck", "--trials", "3", "--corrupt", "w_i_x"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("w_i_x"), "{}", stdout(&o));
}

#[test]
fn zero_trial_gradcheck_succeeds() {
    let o = snnlstm(&["gradcheck", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(snnlstm(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(snnlstm(&[]).status.code(), Some(1));
    assert_eq!(snnlstm(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let o = snnlstm(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = toy_config(dir.path());
    let o = snnlstm(&["train", "--config", &cfg, "--set", "hidden_size=0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = snnlstm(&["train", "--config", &cfg, "--alpha1=-1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let metrics = dir.path().join("m.csv");
    let o = snnlstm(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("iter,wall_ms,train_loss,train_metric,eval_metric\n10,0,"), "{csv}");
    assert_eq!(csv.lines().count(), 4);
    let o = snnlstm(&["eval", "--config", &cfg, "--seed", "4", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("correlation "), "{}", stdout(&o));

    let o = snnlstm(&[
        "eval",
        "--config",
        &cfg,
        "--set",
        "hidden_size=13",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hidden size 12"), "{}", stderr(&o));
}

#[test]
fn repeats_print_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let o = snnlstm(&["train", "--config", &cfg, "--iterations", "5", "--repeats", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("over 2 runs"), "{}", stdout(&o));
}

#[test]
fn sweep_grid_writes_four_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = dir.path().join("sweep");
    let o = snnlstm(&[
        "sweep-alpha",
        "--config",
        &cfg,
        "--iterations",
        "10",
        "--alpha1",
        "4,0.5",
        "--alpha2",
        "0.3,0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let curves = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("curve_"))
        .count();
    assert_eq!(curves, 4);
    assert!(out.join("sweep.csv").exists());
    assert_eq!(
        snnlstm(&["sweep-alpha", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn generate_keeps_seed_text_for_zero_length() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = char_config(dir.path());
    let ckpt = dir.path().join("lm.ckpt");
    let o = snnlstm(&["train", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let gen = |extra: &[&str]| {
        let mut args = vec!["generate", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()];
        args.extend_from_slice(extra);
        snnlstm(&args)
    };
    let o = gen(&["--seed-text", "cab", "--length", "0"]);
    assert_eq!(stdout(&o), "cab\n");
    let a = gen(&["--seed-text", "ab", "--length", "20", "--temperature", "0.5"]);
    let b = gen(&["--seed-text", "ab", "--length", "20", "--temperature", "0.5"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).trim_end().chars().count(), 22);
    let o = gen(&["--seed-text", "abq"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"q\""), "{}", stderr(&o));
}

#[test]
fn encode_preview_prints_the_spike_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let o = snnlstm(&["encode-preview", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 21);
    assert!(out.contains("20 steps x 20 channels"), "{out}");
}
