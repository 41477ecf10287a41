use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use stepsmith::pipeline::{self, PipelineConfig, PipelineError, EXIT_OK, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "stepsmith", version, about = "Stepchart generation from audio")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set model=toy`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache features for every song in the dataset.
    Featurize,
    TrainPlacement,
    TrainSelection,
    /// Score trained checkpoints on the test split.
    Evaluate,
    /// Write a five-chart simfile for a WAV file.
    Generate {
        audio: PathBuf,
        #[arg(long)]
        difficulty: Option<u32>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Print `bpm offset confidence` for a WAV file.
    Tempo {
        audio: PathBuf,
    },
}

fn config(common: &Common, command: &Command) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Command::Generate {
        difficulty,
        threshold,
        temperature,
        ..
    } = command
    {
        if difficulty.is_some() {
            cfg.difficulty = *difficulty;
        }
        if let Some(t) = threshold {
            cfg.threshold = *t;
        }
        if let Some(t) = temperature {
            cfg.temperature = *t;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = config(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Featurize => {
            let s = pipeline::cmd_featurize(&cfg)?;
            println!(
                "{} audio files: {} computed, {} cached",
                s.audio_files, s.computed, s.cached
            );
        }
        Command::TrainPlacement | Command::TrainSelection => {
            let o = if matches!(cli.command, Command::TrainPlacement) {
                pipeline::cmd_train_placement(&cfg)?
            } else {
                pipeline::cmd_train_selection(&cfg)?
            };
            println!("{}\n{}", o.checkpoint.display(), o.curve.display());
        }
        Command::Evaluate => {
            let s = pipeline::cmd_evaluate(&cfg)?;
            println!("{} charts", s.charts);
            for (kind, rows) in [("placement", &s.placement), ("selection", &s.selection)] {
                for r in rows {
                    println!("{kind}\t{}\t{}\t{:.4}", r.metric, r.difficulty, r.value);
                }
            }
        }
        Command::Generate { audio, .. } => {
            let g = pipeline::cmd_generate(&cfg, audio)?;
            println!("{}", g.path.display());
        }
        Command::Tempo { audio } => {
            let t = pipeline::cmd_tempo(audio)?;
            println!("{:.2} {:.4} {:.4}", t.bpm, t.offset_s, t.confidence);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
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
