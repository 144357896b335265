use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ists_core::downstream::{FinetuneMode, TaskKind};
use ists_core::trainer::Variant;

mod commands;
mod config;

use config::RunConfig;

/// Pre-training and evaluation runs for irregularly sampled time series.
///
/// Every flag mirrors a key of the TOML config file. Flags override the
/// file, which overrides the built-in defaults.
#[derive(Parser, Debug)]
#[command(name = "ists", version)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation, initialization, training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labeled dataset in long format plus a JSON sidecar.
    Generate(GenerateArgs),
    /// Pre-train an encoder and write checkpoint, loss CSV and run.json.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint on a downstream task and write metrics.json.
    Evaluate(EvaluateArgs),
    /// Pre-train and evaluate a grid of variants and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of instances.
    #[arg(long)]
    n: Option<usize>,
    /// Timestamps per instance.
    #[arg(long)]
    t: Option<usize>,
    /// Number of variables.
    #[arg(long)]
    c: Option<usize>,
    /// Probability that a cell is unobserved.
    #[arg(long)]
    missing: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Gap between neighbouring class frequencies, in cycles.
    #[arg(long)]
    class_spacing: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// full, random, constant, only_error, zero, mean, mave(w), no_w,
    /// no_contrast or baseline.
    #[arg(long)]
    variant: Option<Variant>,
    /// Continue training from the existing checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct TaskArgs {
    /// classification, interpolation or forecasting.
    #[arg(long)]
    task: Option<TaskKind>,
    /// Fraction of observed cells hidden for interpolation.
    #[arg(long)]
    mask_frac: Option<f64>,
    /// Number of evaluation seeds.
    #[arg(long)]
    seeds: Option<u64>,
    /// linear_probe or full_finetune.
    #[arg(long)]
    finetune: Option<FinetuneMode>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    task: TaskArgs,
    /// Comma-separated variant list; the full grid when absent.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TrainArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data = self.data;
        }
        set(&mut cfg.train.epochs, self.epochs);
        if self.max_steps.is_some() {
            cfg.train.max_steps = self.max_steps;
        }
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.learning_rate, self.learning_rate);
    }
}

impl TaskArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.task.kind, self.task);
        set(&mut cfg.task.mask_fraction, self.mask_frac);
        set(&mut cfg.seeds, self.seeds);
        set(&mut cfg.task.finetune, self.finetune);
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ists_core::Error>() {
            return match e {
                ists_core::Error::NonFinite { .. } => 2,
                ists_core::Error::Io { .. } => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

/// The error chain without causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    set(&mut cfg.out_dir, cli.out_dir);
    let written = match cli.command {
        Command::Generate(a) => {
            if a.data.is_some() {
                cfg.data = a.data;
            }
            set(&mut cfg.synth.n_instances, a.n);
            set(&mut cfg.synth.t_max, a.t);
            set(&mut cfg.synth.n_vars, a.c);
            set(&mut cfg.synth.missing_rate, a.missing);
            set(&mut cfg.synth.n_classes, a.classes);
            set(&mut cfg.synth.noise_std, a.noise);
            set(&mut cfg.synth.class_spacing, a.class_spacing);
            let cfg = cfg.resolve();
            commands::generate(&cfg)?
        }
        Command::Pretrain(a) => {
            a.train.apply(&mut cfg);
            if a.checkpoint.is_some() {
                cfg.checkpoint = a.checkpoint;
            }
            set(&mut cfg.train.variant, a.variant);
            cfg.resume |= a.resume;
            let mut cfg = cfg.resolve();
            commands::pretrain(&mut cfg)?
        }
        Command::Evaluate(a) => {
            a.task.apply(&mut cfg);
            if a.data.is_some() {
                cfg.data = a.data;
            }
            if a.checkpoint.is_some() {
                cfg.checkpoint = a.checkpoint;
            }
            let cfg = cfg.resolve();
            let (line, written) = commands::evaluate_cmd(&cfg)?;
            println!("{line}");
            written
        }
        Command::Ablate(a) => {
            a.train.apply(&mut cfg);
            a.task.apply(&mut cfg);
            set(&mut cfg.variants, a.variants);
            let mut cfg = cfg.resolve();
            let (text, written) = commands::ablate(&mut cfg)?;
            print!("{text}");
            written
        }
    };
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
