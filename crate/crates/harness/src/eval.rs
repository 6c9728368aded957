//! Monte-Carlo evaluation of the three precoding methods.

use std::time::Instant;

use isac_core::baselines::{angle_grid, optimize_precoder, ChannelEstimate, OptimizerConfig};
use isac_core::metrics::{sinrs, worst_avg_sinr_from_sinrs, worst_case_illumination, Precoder};
use isac_core::net::{precode, NetParams};
use isac_core::numerics::{db_to_lin, dbw_to_watts, lin_to_db, RngStream};
use isac_core::scene::sample_scene;
use isac_core::sounding::Sounder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, Sweep};
use crate::error::{HarnessError, Result};

/// Absolute SINR slack (linear) still counted as meeting the constraint.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub axis: String,
    /// Sweep value as written in the config.
    pub value: String,
    /// Numeric position on the plot axis (area rows use m^2).
    pub x: f64,
    pub seed: u64,
    pub realizations: usize,
    pub gamma_min_db: f64,
    pub q_db: f64,
    pub user_sinr_db: Vec<f64>,
    pub feasible_fraction: f64,
    pub ms_per_inference: f64,
}

/// One evaluation point: the config with the sweep value applied.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub axis: String,
    pub value: String,
    pub x: f64,
    pub cfg: ExperimentConfig,
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Expands the sweep (or the base point when none is set).
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let base = |axis: &str, value: String, x: f64, cfg: ExperimentConfig| SweepPoint { axis: axis.into(), value, x, cfg };
    let Some(sweep) = &cfg.sweep else {
        return vec![base("none", String::new(), 0.0, cfg.clone())];
    };
    let axis = sweep.axis();
    match sweep {
        Sweep::PdDbw(v) => v
            .iter()
            .map(|&p| {
                let mut c = cfg.clone();
                c.hyperparams.pd_dbw = p;
                base(axis, fmt_num(p), p, c)
            })
            .collect(),
        Sweep::GammaDb(v) => v
            .iter()
            .map(|&g| {
                let mut c = cfg.clone();
                c.hyperparams.gamma_db = g;
                base(axis, fmt_num(g), g, c)
            })
            .collect(),
        Sweep::KTest(v) => v
            .iter()
            .map(|&k| {
                let mut c = cfg.clone();
                c.scene.k = k;
                base(axis, k.to_string(), k as f64, c)
            })
            .collect(),
        Sweep::AreaM(v) => v
            .iter()
            .map(|a| {
                let mut c = cfg.clone();
                c.scene.user_x_range_m = [a[0], a[1]];
                c.scene.user_y_range_m = [a[2], a[3]];
                let label = format!("{}:{}:{}:{}", a[0], a[1], a[2], a[3]);
                base(axis, label, (a[1] - a[0]) * (a[3] - a[2]), c)
            })
            .collect(),
    }
}

/// Outcome of one method on one realization.
#[derive(Clone, Debug)]
struct Trial {
    sinrs: Vec<f64>,
    q: f64,
    ms: f64,
}

fn score(w: &Precoder, scene: &isac_core::scene::Scene, sigma2: f64, started: Instant) -> Result<Trial> {
    let ms = started.elapsed().as_secs_f64() * 1e3;
    let (q, _) = worst_case_illumination(w, scene)?;
    Ok(Trial { sinrs: sinrs(w, scene, sigma2), q, ms })
}

/// Rejects a checkpoint whose array size or lift does not match the config.
pub fn check_compatible(net: &NetParams, cfg: &ExperimentConfig) -> Result<()> {
    if net.m != cfg.scene.m || net.d != cfg.network.d {
        return Err(HarnessError::Config(format!(
            "checkpoint has M={}, d={} but config has M={}, d={}",
            net.m, net.d, cfg.scene.m, cfg.network.d
        )));
    }
    Ok(())
}

/// Evaluates `methods` at one point over `cfg.eval.realizations` scenes.
///
/// Every method sees the same scenes and sounding noise. Realizations run in parallel and rows
/// are reduced in realization order, so the metric columns do not depend on the thread count.
pub fn evaluate_point(point: &SweepPoint, net: Option<&NetParams>, methods: &[Method]) -> Result<Vec<ResultRow>> {
    let cfg = &point.cfg;
    if methods.contains(&Method::Proposed) {
        let net = net.ok_or_else(|| HarnessError::Config("the proposed method needs a checkpoint".into()))?;
        check_compatible(net, cfg)?;
    }
    let (sc, so, hp) = (&cfg.scene, &cfg.sounding, &cfg.hyperparams);
    let sounder = Sounder::new(so, sc.m, sc.k, sc.nu2_w())?;
    let sigma2 = sc.sigma2_w();
    let pd_w = dbw_to_watts(hp.pd_dbw);
    let grid = angle_grid(-90.0, 90.0, cfg.eval.grid_step_deg);
    let opt = OptimizerConfig { random_restarts: cfg.eval.baseline_restarts, ..OptimizerConfig::default() };
    let root = RngStream::new(cfg.seeds.eval, 0);

    let trials: Vec<Vec<Trial>> = (0..cfg.eval.realizations)
        .into_par_iter()
        .map(|r| -> Result<Vec<Trial>> {
            let rr = root.fork(r as u64);
            let scene = sample_scene(sc, &mut rr.fork(0))?;
            let data = sounder.sound(&scene, &mut rr.fork(1))?;
            methods
                .iter()
                .map(|&method| {
                    let started = Instant::now();
                    let w = match method {
                        Method::Proposed => precode(net.expect("checked above"), &data, pd_w)?,
                        Method::PerfectCsi => optimize_precoder(&scene, hp.gamma_db, pd_w, sigma2, &opt, &rr.fork(2))?.precoder,
                        Method::EstimatedCsi => {
                            let est = ChannelEstimate::from_sounding(&data, sc.t, so.pu_w(), so.lp, so.pr_w(), so.lr, &grid)?;
                            optimize_precoder(&est.to_scene(), hp.gamma_db, pd_w, sigma2, &opt, &rr.fork(3))?.precoder
                        }
                    };
                    score(&w, &scene, sigma2, started)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let threshold = db_to_lin(hp.gamma_db) - FEASIBILITY_TOL;
    let n = trials.len() as f64;
    methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let per: Vec<&Trial> = trials.iter().map(|t| &t[i]).collect();
            let sinr_sets: Vec<Vec<f64>> = per.iter().map(|t| t.sinrs.clone()).collect();
            let gamma_min_db = worst_avg_sinr_from_sinrs(&sinr_sets)?;
            let user_sinr_db = (0..sc.k)
                .map(|u| lin_to_db(per.iter().map(|t| t.sinrs[u]).sum::<f64>() / n))
                .collect();
            let q_db = lin_to_db(per.iter().map(|t| t.q).sum::<f64>() / n);
            let feasible = per.iter().filter(|t| t.sinrs.iter().all(|&g| g >= threshold)).count();
            let row = ResultRow {
                method: method.name().into(),
                axis: point.axis.clone(),
                value: point.value.clone(),
                x: point.x,
                seed: cfg.seeds.eval,
                realizations: per.len(),
                gamma_min_db,
                q_db,
                user_sinr_db,
                feasible_fraction: feasible as f64 / n,
                ms_per_inference: per.iter().map(|t| t.ms).sum::<f64>() / n,
            };
            if !(row.gamma_min_db.is_finite() && row.q_db.is_finite()) {
                return Err(HarnessError::Numerical(format!("non-finite metrics for {}", row.method)));
            }
            Ok(row)
        })
        .collect()
}

/// All points of the sweep, in sweep order.
pub fn evaluate(cfg: &ExperimentConfig, net: Option<&NetParams>, methods: &[Method]) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for point in sweep_points(cfg) {
        rows.extend(evaluate_point(&point, net, methods)?);
    }
    Ok(rows)
}
