use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsgan::config::RunConfig;
use tsgan::manifest::Manifest;
use tsgan::run::{execute, rerun, Invocation};
use tsgan::HarnessError;

#[derive(Parser)]
#[command(name = "tsgan", version, about = "WGAN-GP augmentation of rainfall/flow series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run seed; overrides the config
    #[arg(long, env = "TSGAN_SEED")]
    seed: Option<u64>,
    /// Rerun the invocation recorded in a manifest and verify its artifacts
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataInput {
    /// Series CSV; synthesized from the config when absent
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic catchment series as CSV
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Number of 5-minute steps
        #[arg(long)]
        length: Option<usize>,
    },
    /// Fit preprocessing statistics and window the splits
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataInput,
    },
    /// Train the WGAN-GP on wet training windows
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataInput,
    },
    /// Sample windows from a trained generator
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one forecaster arm (augment.mode selects it)
    TrainForecaster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataInput,
        /// Generator checkpoint for gan mode
        #[arg(long)]
        gan: Option<PathBuf>,
    },
    /// Compare forecasters on the test split
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataInput,
        /// `name=path` of a forecaster checkpoint; repeatable
        #[arg(long = "model", value_name = "NAME=PATH")]
        models: Vec<String>,
    },
    /// Random search with successive halving on JSD
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataInput,
    },
    /// Finite-difference gradient checks
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random cases per check
        #[arg(long)]
        cases: Option<usize>,
    },
}

fn base_config(common: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build(command: Command) -> Result<(Invocation, Option<PathBuf>), HarnessError> {
    let mut inputs = Vec::new();
    let mut args = Vec::new();
    let (name, common, data) = match command {
        Command::SynthData { common, length } => {
            let mut common = common;
            if let Some(n) = length {
                common.overrides.push(format!("data.length={n}"));
            }
            ("synth-data", common, None)
        }
        Command::Preprocess { common, data } => ("preprocess", common, data.input),
        Command::TrainGan { common, data } => ("train-gan", common, data.input),
        Command::Generate { common, checkpoint, count } => {
            if common.manifest.is_none() {
                let ck = checkpoint.ok_or_else(|| HarnessError::Usage("generate needs --checkpoint".into()))?;
                inputs.push(("gan".to_string(), ck));
            }
            if let Some(n) = count {
                args.push(("count".to_string(), n.to_string()));
            }
            ("generate", common, None)
        }
        Command::TrainForecaster { common, data, gan } => {
            if let Some(g) = gan {
                inputs.push(("gan".to_string(), g));
            }
            ("train-forecaster", common, data.input)
        }
        Command::Evaluate { common, data, models } => {
            for spec in models {
                let (n, p) = spec
                    .split_once('=')
                    .filter(|(n, p)| !n.is_empty() && !p.is_empty())
                    .ok_or_else(|| HarnessError::Usage(format!("--model expects name=path, got `{spec}`")))?;
                inputs.push((format!("model.{n}"), PathBuf::from(p)));
            }
            ("evaluate", common, data.input)
        }
        Command::Tune { common, data } => ("tune", common, data.input),
        Command::Gradcheck { common, cases } => {
            if let Some(n) = cases {
                args.push(("cases".to_string(), n.to_string()));
            }
            ("gradcheck", common, None)
        }
    };
    if let Some(path) = data {
        inputs.push(("data".to_string(), path));
    }
    let config = base_config(&common)?;
    let inv = Invocation {
        command: name.to_string(),
        config,
        out: common.out,
        inputs: inputs.into_iter().collect(),
        args: args.into_iter().collect(),
    };
    Ok((inv, common.manifest))
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    let (inv, manifest) = build(cli.command)?;
    let outcome = match manifest {
        Some(path) => {
            let m = Manifest::load(&path)?;
            if m.command != inv.command {
                return Err(HarnessError::Usage(format!(
                    "manifest records `{}`, not `{}`",
                    m.command, inv.command
                )));
            }
            let o = rerun(&m, inv.out)?;
            println!("{} (reproduced {} artifacts)", o.summary, m.artifacts.len());
            o
        }
        None => {
            let o = execute(&inv)?;
            println!("{}", o.summary);
            o
        }
    };
    Ok(outcome.success)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("tsgan: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
