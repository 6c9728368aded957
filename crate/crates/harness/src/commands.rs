//! The CLI subcommands as library functions.

use std::path::{Path, PathBuf};

use isac_core::net::NetParams;
use isac_core::numerics::RngStream;
use isac_core::persist::{load_checkpoint, save_checkpoint};
use isac_core::training::{train_with_progress, LossRecord};
use serde_json::json;

use crate::config::{ExperimentConfig, Method, Sweep};
use crate::csv_out::{save_results, write_loss_history};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, evaluate_point, sweep_points, ResultRow};
use crate::plot::sweep_plots;
use crate::scaling::{fit, measure, write_scaling, ScalingFit, ScalingPoint};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss_history.csv";

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn training_record(cfg: &ExperimentConfig) -> serde_json::Value {
    json!({
        "scene": cfg.scene,
        "sounding": cfg.sounding,
        "hyperparams": cfg.hyperparams,
        "network": cfg.network,
        "seeds": cfg.seeds,
    })
}

pub struct Trained {
    pub net: NetParams,
    pub checkpoint: PathBuf,
    pub history: Vec<LossRecord>,
}

/// Trains a fresh network and writes `<stem>.bin` plus `<stem>_loss_history.csv`
/// (`checkpoint.bin` and `loss_history.csv` when `stem` is `None`).
pub fn train_to(cfg: &ExperimentConfig, stem: Option<&str>, progress: impl FnMut(&LossRecord)) -> Result<Trained> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let mut init = RngStream::new(cfg.seeds.init, 0);
    let net = NetParams::init(cfg.scene.m, cfg.scene.k, cfg.network.d, &mut init).with_scaling(cfg.input_scaling());
    let outcome = train_with_progress(
        net,
        &cfg.scene,
        &cfg.sounding,
        &cfg.hyperparams,
        &RngStream::new(cfg.seeds.train, 0),
        progress,
    )?;
    let (ckpt, loss) = match stem {
        Some(s) => (dir.join(format!("{s}.bin")), dir.join(format!("{s}_{LOSS_FILE}"))),
        None => (dir.join(CHECKPOINT_FILE), dir.join(LOSS_FILE)),
    };
    save_checkpoint(&ckpt, &outcome.net, cfg.seeds.init, training_record(cfg))?;
    write_loss_history(std::io::BufWriter::new(std::fs::File::create(&loss)?), &outcome.history)?;
    Ok(Trained { net: outcome.net, checkpoint: ckpt, history: outcome.history })
}

pub fn cmd_train(cfg: &ExperimentConfig, progress: impl FnMut(&LossRecord)) -> Result<Trained> {
    train_to(cfg, None, progress)
}

/// Loads a checkpoint and checks it against the config (K may differ).
pub fn load_net(path: &Path, cfg: &ExperimentConfig) -> Result<NetParams> {
    let (net, _) = load_checkpoint(path).map_err(|e| HarnessError::Config(format!("cannot load {}: {e}", path.display())))?;
    crate::eval::check_compatible(&net, cfg)?;
    Ok(net)
}

/// Evaluates the configured methods at every sweep point and writes `results.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let net = checkpoint.map(|p| load_net(p, cfg)).transpose()?;
    let rows = evaluate(cfg, net.as_ref(), &cfg.eval.methods)?;
    save_results(&out_dir(cfg)?.join("results.csv"), &rows)?;
    Ok(rows)
}

/// Baseline methods only; needs no checkpoint. Writes `baseline.csv`.
pub fn cmd_baseline(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let methods: Vec<Method> = cfg.eval.methods.iter().copied().filter(|&m| m != Method::Proposed).collect();
    let methods = if methods.is_empty() { vec![Method::PerfectCsi, Method::EstimatedCsi] } else { methods };
    let rows = evaluate(cfg, None, &methods)?;
    save_results(&out_dir(cfg)?.join("baseline.csv"), &rows)?;
    Ok(rows)
}

/// Runs the sweep and writes `sweep.csv`, `sweep_q.svg` and `sweep_gamma.svg`.
///
/// A target-SINR sweep retrains the network at each value, since the target enters the loss.
/// Every other axis reuses the checkpoint.
pub fn cmd_sweep(cfg: &ExperimentConfig, checkpoint: Option<&Path>, mut progress: impl FnMut(&LossRecord)) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let Some(sweep) = &cfg.sweep else {
        return Err(HarnessError::Config("sweep needs a sweep axis".into()));
    };
    let dir = out_dir(cfg)?.to_path_buf();
    let wants_net = cfg.eval.methods.contains(&Method::Proposed);
    let mut rows = Vec::new();
    if matches!(sweep, Sweep::GammaDb(_)) && wants_net {
        for point in sweep_points(cfg) {
            let mut c = point.cfg.clone();
            c.sweep = None;
            let trained = train_to(&c, Some(&format!("checkpoint_gamma_{}", point.value)), &mut progress)?;
            rows.extend(evaluate_point(&point, Some(&trained.net), &cfg.eval.methods)?);
        }
    } else {
        let net = match (checkpoint, wants_net) {
            (Some(p), _) => Some(load_net(p, cfg)?),
            (None, true) => return Err(HarnessError::Config("sweep with the proposed method needs --checkpoint".into())),
            (None, false) => None,
        };
        rows = evaluate(cfg, net.as_ref(), &cfg.eval.methods)?;
    }
    save_results(&dir.join("sweep.csv"), &rows)?;
    let (q, g) = sweep_plots(&rows, cfg.hyperparams.gamma_db);
    std::fs::write(dir.join("sweep_q.svg"), q)?;
    std::fs::write(dir.join("sweep_gamma.svg"), g)?;
    Ok(rows)
}

/// Times inference for each K and writes `scaling.csv` and `scaling_fit.json`.
pub fn cmd_scaling(cfg: &ExperimentConfig, checkpoint: &Path, ks: &[usize], reps: usize) -> Result<(Vec<ScalingPoint>, ScalingFit)> {
    cfg.validate()?;
    let net = load_net(checkpoint, cfg)?;
    let points = measure(&net, cfg, ks, reps)?;
    let f = fit(&points);
    let dir = out_dir(cfg)?;
    write_scaling(std::fs::File::create(dir.join("scaling.csv"))?, &points)?;
    std::fs::write(dir.join("scaling_fit.json"), serde_json::to_string_pretty(&f).expect("plain data serializes"))?;
    Ok((points, f))
}
