use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spiking_lstm::config::ExperimentConfig;
use spiking_lstm::gradcheck::{run_gradcheck, GradcheckOptions};
use spiking_lstm::harness::{
    curve_file_name, encode_preview, evaluate_checkpoint, generate_from_checkpoint, sweep_alpha, train_repeats,
    GenerateOptions,
};
use spiking_lstm::{Error, Result, SurrogateConfig};

/// Train and evaluate LSTM spiking networks.
#[derive(Parser)]
#[command(name = "snnlstm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint and metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Train this many models with consecutive seeds and report mean ± std.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Evaluate a checkpoint on the config's held-out data.
    Eval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Continue a seed text with a trained language model.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "")]
        seed_text: String,
        /// Symbols to generate.
        #[arg(long, default_value_t = 200)]
        length: usize,
        /// Softmax temperature; 0 is greedy.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Train one model per (alpha1, alpha2) pair and write loss curves.
    SweepAlpha {
        #[command(flatten)]
        run: RunArgs,
        /// Directory for the curve files and the combined sweep.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the hand-written backward pass with the graph reference.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        max_input: usize,
        #[arg(long, default_value_t = 6)]
        max_hidden: usize,
        #[arg(long, default_value_t = 5)]
        max_steps: usize,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        /// Perturb this implementation table before comparing (test hook).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Print the spike train presented for one training item.
    EncodePreview {
        #[command(flatten)]
        run: RunArgs,
        /// Item index (image, feature row, or text offset).
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// One value, or a comma-separated list for sweep-alpha.
    #[arg(long, value_delimiter = ',')]
    alpha1: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    alpha2: Vec<f64>,
    /// Override any config key, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        if let Some(p) = &self.checkpoint {
            cfg.checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.metrics {
            cfg.metrics = Some(p.clone());
        }
        if let [a] = self.alpha1[..] {
            cfg.surrogate.alpha1 = a;
        }
        if let [a] = self.alpha2[..] {
            cfg.surrogate.alpha2 = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn checkpoint(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        cfg.checkpoint
            .clone()
            .ok_or_else(|| Error::Config("no checkpoint given (--checkpoint or `checkpoint` in the config)".into()))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, repeats } => {
            let mut cfg = run.config()?;
            if let Some(n) = repeats {
                cfg.repeats = n;
                cfg.validate()?;
            }
            let (reports, summary) = train_repeats(&cfg)?;
            for (k, r) in reports.iter().enumerate() {
                println!(
                    "run {k}: seed {} {} {:.6} on {} held-out items",
                    summary.seeds[k],
                    r.final_eval.kind.name(),
                    r.final_eval.value,
                    r.final_eval.count
                );
            }
            if reports.len() > 1 {
                println!("{}", summary.render());
            }
        }
        Command::Eval { run } => {
            let cfg = run.config()?;
            let e = evaluate_checkpoint(&cfg, &run.checkpoint(&cfg)?)?;
            println!("{} {:.6} on {} held-out items", e.kind.name(), e.value, e.count);
        }
        Command::Generate {
            run,
            seed_text,
            length,
            temperature,
        } => {
            let cfg = run.config()?;
            let opts = GenerateOptions {
                seed_text,
                length,
                temperature,
                seed: cfg.seed,
            };
            println!("{}", generate_from_checkpoint(&cfg, &run.checkpoint(&cfg)?, &opts)?);
        }
        Command::SweepAlpha { run, out } => {
            let cfg = run.config()?;
            if run.alpha1.is_empty() || run.alpha2.is_empty() {
                return Err(Error::Config("sweep-alpha needs --alpha1 and --alpha2 lists".into()));
            }
            let pairs: Vec<(f64, f64)> = run
                .alpha1
                .iter()
                .flat_map(|&a1| run.alpha2.iter().map(move |&a2| (a1, a2)))
                .collect();
            let curves = sweep_alpha(&cfg, &pairs, &out)?;
            for c in &curves {
                let last = c.rows.last();
                println!(
                    "alpha1 {} alpha2 {}: final train loss {} -> {}",
                    c.alpha1,
                    c.alpha2,
                    last.map_or(f64::NAN, |r| r.train_loss),
                    out.join(curve_file_name(c.alpha1, c.alpha2)).display()
                );
            }
        }
        Command::Gradcheck {
            trials,
            seed,
            max_input,
            max_hidden,
            max_steps,
            tolerance,
            corrupt,
        } => {
            let opts = GradcheckOptions {
                trials,
                seed,
                max_input,
                max_hidden,
                max_steps,
                tolerance,
                corrupt,
            };
            let summary = run_gradcheck(&opts, &SurrogateConfig::default())?;
            print!("{}", summary.render());
            if !summary.passed() {
                return Err(Error::GradCheck(format!(
                    "max relative error {:.3e} exceeds {:.1e}",
                    summary.max_rel(),
                    tolerance
                )));
            }
        }
        Command::EncodePreview { run, index } => {
            let cfg = run.config()?;
            print!("{}", encode_preview(&cfg, index)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
