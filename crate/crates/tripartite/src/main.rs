use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tripartite::commands::{
    checkpoint_overrides, cmd_ablate, cmd_eval, cmd_human_align, cmd_noise_sweep, cmd_trace, cmd_train,
    parse_axis, ReplicateSummary,
};
use tripartite::output::out_dir;
use tripartite::{AppError, Checkpoint, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tripartite", version, about = "Train and probe the tripartite tick model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// `key=value` override, applied after the config file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory. Defaults to `$TRIPARTITE_OUT/<name>/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, optionally once per seed with a mean±std summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured eval set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy and stop ticks at several Gaussian noise levels.
    NoiseSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0.1,0.25,0.5")]
        sigmas: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train every cell of a settings grid with shared seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=v1/v2/...`; repeat for more axes.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Export per-tick attention, activation and coherence for eval samples.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        samples: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Correlate model certainty with human label agreement.
    HumanAlign {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig, AppError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(sets)?;
    cfg.validate()?;
    Ok(cfg)
}

fn from_checkpoint(path: &Path, sets: &[String]) -> Result<(Checkpoint, ExperimentConfig), AppError> {
    let ckpt = Checkpoint::load(path)?;
    let mut cfg = ckpt.config.clone();
    checkpoint_overrides(&mut cfg, sets)?;
    Ok((ckpt, cfg))
}

fn dir(common: &Common, cfg: &ExperimentConfig, command: &str) -> PathBuf {
    match &common.out {
        Some(p) => p.clone(),
        None => out_dir(None, &cfg.name).join(command),
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Train { config, seeds, common } => {
            let cfg = load_config(config.as_deref(), &common.sets)?;
            let out = dir(&common, &cfg, "train");
            let runs = cmd_train(&cfg, &seeds, &out)?;
            for r in &runs {
                println!(
                    "seed {}: accuracy {:.4}, mean stop tick {:.2}",
                    r.seed, r.eval.accuracy, r.eval.mean_stop_tick
                );
            }
            if runs.len() > 1 {
                let s = ReplicateSummary::new(&runs);
                println!(
                    "accuracy {:.4} ± {:.4}, mean stop tick {:.2} ± {:.2}",
                    s.accuracy_mean, s.accuracy_std, s.stop_tick_mean, s.stop_tick_std
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Eval { checkpoint, common } => {
            let (ckpt, cfg) = from_checkpoint(&checkpoint, &common.sets)?;
            let out = dir(&common, &cfg, "eval");
            let s = cmd_eval(&ckpt, &cfg, &out)?.summary;
            println!(
                "accuracy {:.4}, mean stop tick {:.2}, mean certainty {:.4}",
                s.accuracy, s.mean_stop_tick, s.mean_certainty
            );
        }
        Command::NoiseSweep {
            checkpoint,
            sigmas,
            common,
        } => {
            let (ckpt, cfg) = from_checkpoint(&checkpoint, &common.sets)?;
            let out = dir(&common, &cfg, "noise-sweep");
            for r in cmd_noise_sweep(&ckpt, &cfg, &sigmas, &out)? {
                println!(
                    "sigma {}: accuracy {:.4}, mean stop tick {:.2}",
                    r.sigma, r.accuracy, r.mean_stop_tick
                );
            }
        }
        Command::Ablate {
            config,
            grid,
            seeds,
            common,
        } => {
            let cfg = load_config(config.as_deref(), &common.sets)?;
            let axes = grid
                .iter()
                .map(|g| parse_axis(g, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            let out = dir(&common, &cfg, "ablate");
            for c in cmd_ablate(&cfg, &axes, &seeds, &out)? {
                let s = ReplicateSummary::new(&c.runs);
                let settings: Vec<String> = c.settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!(
                    "cell {} [{}]: accuracy {:.4} ± {:.4}, mean stop tick {:.2} ± {:.2}",
                    c.index,
                    settings.join(" "),
                    s.accuracy_mean,
                    s.accuracy_std,
                    s.stop_tick_mean,
                    s.stop_tick_std
                );
            }
        }
        Command::Trace {
            checkpoint,
            samples,
            common,
        } => {
            let (ckpt, cfg) = from_checkpoint(&checkpoint, &common.sets)?;
            let out = dir(&common, &cfg, "trace");
            let trace = cmd_trace(&ckpt, &cfg, &samples, &out)?;
            println!("{} ticks for {} samples in {}", trace.ticks.len(), samples.len(), out.display());
        }
        Command::HumanAlign { checkpoint, common } => {
            let (ckpt, cfg) = from_checkpoint(&checkpoint, &common.sets)?;
            let out = dir(&common, &cfg, "human-align");
            let s = cmd_human_align(&ckpt, &cfg, &out)?;
            println!("r = {:.4} over {} samples", s.r, s.samples);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
