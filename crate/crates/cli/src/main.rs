use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tna_snn::data::Split;
use tna_snn::experiment::{
    inspect_checkpoint, run_eval, run_sweep, run_train, ExperimentConfig, RunOptions, DEFAULT_SWEEP_ALPHAS,
};

#[derive(Parser)]
#[command(name = "tna-snn", version, about = "Train and evaluate spiking networks with twin network augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, env = "DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    seed_twin: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    /// `section.key=value`, repeatable; applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions)> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut overrides = self.overrides.clone();
        for (key, v) in [("base", self.seed_base), ("twin", self.seed_twin), ("data", self.seed_data)] {
            if let Some(v) = v {
                overrides.push(format!("seeds.{key}={v}"));
            }
        }
        let cfg = ExperimentConfig::from_toml(&text, &overrides)?;
        let opts = RunOptions {
            data_root: self.data_root.clone(),
            out_dir: self.out.clone(),
        };
        Ok((cfg, opts))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the configuration and write metrics and checkpoints.
    Train(Common),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[command(flatten)]
        common: Common,
    },
    /// One training run per matching weight.
    Sweep {
        /// Comma-separated weights; defaults to 1e-2 through 1e-6.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the header and tensor table of a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

fn train(common: &Common) -> Result<()> {
    let (cfg, opts) = common.load()?;
    let s = run_train(&cfg, &opts)?;
    println!(
        "trained {} epochs; best epoch {}; test accuracy {:.4}; artifacts in {}",
        s.epochs_completed,
        s.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        s.test_accuracy,
        opts.out_dir.display()
    );
    Ok(())
}

fn eval(checkpoint: &Path, split: SplitArg, common: &Common) -> Result<()> {
    let (cfg, opts) = common.load()?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let out = run_eval(checkpoint, &cfg, &opts, split)?;
    println!("top-1 accuracy {:.4} over {} samples", out.report.accuracy, out.report.samples);
    for (c, acc) in out.report.per_class.iter().enumerate() {
        println!("  class {c:>3}: {acc:.4}");
    }
    for (l, s) in out.report.spikes_per_sample.iter().enumerate() {
        println!("  lif layer {l}: {s:.2} spikes/sample");
    }
    for (name, dtype) in &out.dtypes {
        println!("  {name}: {dtype}");
    }
    Ok(())
}

fn sweep(alphas: &[f64], common: &Common) -> Result<()> {
    let (cfg, opts) = common.load()?;
    let alphas = if alphas.is_empty() { DEFAULT_SWEEP_ALPHAS.to_vec() } else { alphas.to_vec() };
    let children = run_sweep(&cfg, &alphas, &opts)?;
    let mut failed = 0;
    for c in &children {
        match &c.result {
            Ok(s) => println!("alpha {:e}: test accuracy {:.4}", c.alpha, s.test_accuracy),
            Err(e) => {
                failed += 1;
                println!("alpha {:e}: failed: {e}", c.alpha);
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} sweep runs failed", children.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(common) => train(common),
        Command::Eval { checkpoint, split, common } => eval(checkpoint, *split, common),
        Command::Sweep { alphas, common } => sweep(alphas, common),
        Command::InspectCheckpoint { path } => inspect_checkpoint(path).map(|s| print!("{s}")).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their cause; print each message once
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            log::error!("{msg}");
            ExitCode::FAILURE
        }
    }
}
