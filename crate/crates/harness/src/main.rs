use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use isac_core::training::LossRecord;
use isac_harness::commands::{cmd_baseline, cmd_eval, cmd_scaling, cmd_sweep, cmd_train};
use isac_harness::config::{ExperimentConfig, Seeds};
use isac_harness::{HarnessError, ResultRow};

#[derive(Parser)]
#[command(name = "isac", about = "Train and evaluate the neural ISAC precoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed: init, train and eval streams use N, N+1, N+2.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write a checkpoint and loss history.
    Train(Common),
    /// Evaluate a checkpoint and the baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured sweep and emit CSV and SVG plots.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time inference for several user counts.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
    /// Evaluate only the optimization baselines.
    Baseline(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = common.seed {
        cfg.seeds = Seeds { init: s, train: s.wrapping_add(1), eval: s.wrapping_add(2) };
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(cfg: &ExperimentConfig) -> impl FnMut(&LossRecord) {
    let last = cfg.hyperparams.batches_per_epoch - 1;
    let epochs = cfg.hyperparams.epochs;
    let started = Instant::now();
    move |r: &LossRecord| {
        if r.batch == last {
            eprintln!(
                "epoch {:>5}/{epochs}  -loss {:>12.5e}  Q-term {:>10.4e}  penalty {:>10.3e}  min slack {:>9.3e}  {:>7.1}s",
                r.epoch + 1,
                r.neg_loss,
                r.q_term,
                r.penalty,
                r.min_slack,
                started.elapsed().as_secs_f64()
            );
        }
    }
}

fn print_rows(rows: &[ResultRow]) {
    println!("{:<14} {:<8} {:>12} {:>10} {:>10} {:>9}", "method", "axis", "value", "gamma_min", "Q", "feasible");
    for r in rows {
        println!(
            "{:<14} {:<8} {:>12} {:>8.2}dB {:>8.2}dB {:>9.2}",
            r.method, r.axis, r.value, r.gamma_min_db, r.q_db, r.feasible_fraction
        );
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let trained = cmd_train(&cfg, progress(&cfg))?;
            println!("{}", trained.checkpoint.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            print_rows(&cmd_eval(&cfg, checkpoint.as_deref())?);
        }
        Command::Sweep { common, checkpoint } => {
            let cfg = load(&common)?;
            print_rows(&cmd_sweep(&cfg, checkpoint.as_deref(), progress(&cfg))?);
        }
        Command::Scaling { common, checkpoint, k, reps } => {
            let cfg = load(&common)?;
            let (points, fit) = cmd_scaling(&cfg, &checkpoint, &k, reps)?;
            for p in &points {
                println!("K={:<3} median {:.4} ms  flops {}", p.k, p.median_ms, p.flops);
            }
            match (fit.exponent, fit.r2_linear) {
                (Some(b), Some(r2)) => println!("power-law exponent {b:.3}, linear-fit R^2 {r2:.4}"),
                _ => println!("single K: {:.4} ms", fit.point_ms.unwrap_or(f64::NAN)),
            }
        }
        Command::Baseline(common) => {
            let cfg = load(&common)?;
            print_rows(&cmd_baseline(&cfg)?);
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
