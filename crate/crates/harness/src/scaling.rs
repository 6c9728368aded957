//! Inference time against the number of users.

use std::io::Write;
use std::time::Instant;

use isac_core::net::{precode, MlpParams, NetParams};
use isac_core::numerics::{dbw_to_watts, RngStream};
use isac_core::scene::sample_scene;
use isac_core::sounding::{Sounder, SoundingData};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const SCALING_SCHEMA: &str = "# isac-scaling v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub k: usize,
    pub median_ms: f64,
    /// Multiply-adds counted as two flops, dense layers only.
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Exponent `b` of `time = a K^b`, least squares in log-log space.
    pub exponent: Option<f64>,
    /// Slope of the straight-line fit of time against K, in ms per user.
    pub slope_ms: Option<f64>,
    /// R^2 of that straight-line fit.
    pub r2_linear: Option<f64>,
    /// Set when only one K was measured.
    pub point_ms: Option<f64>,
}

fn mlp_flops(p: &MlpParams) -> u64 {
    p.layers.iter().map(|l| 2 * (l.weight.nrows() * l.weight.ncols()) as u64).sum()
}

/// Dense-layer flops of one forward pass with `k` users.
pub fn inference_flops(net: &NetParams, k: usize) -> u64 {
    let m = net.m as u64;
    let k = k as u64;
    mlp_flops(&net.comm) * k + mlp_flops(&net.sens) * m + mlp_flops(&net.isac) * (k + m)
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

pub fn fit(points: &[ScalingPoint]) -> ScalingFit {
    let distinct = points.iter().map(|p| p.k).collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return ScalingFit { exponent: None, slope_ms: None, r2_linear: None, point_ms: points.first().map(|p| p.median_ms) };
    }
    let k: Vec<f64> = points.iter().map(|p| p.k as f64).collect();
    let t: Vec<f64> = points.iter().map(|p| p.median_ms).collect();
    let lk: Vec<f64> = k.iter().map(|v| v.ln()).collect();
    let lt: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let (exponent, _, _) = least_squares(&lk, &lt);
    let (slope, _, r2) = least_squares(&k, &t);
    ScalingFit { exponent: Some(exponent), slope_ms: Some(slope), r2_linear: Some(r2), point_ms: None }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock of `precode` for each K, over `reps` calls cycling through a few inputs.
pub fn measure(net: &NetParams, cfg: &ExperimentConfig, ks: &[usize], reps: usize) -> Result<Vec<ScalingPoint>> {
    if ks.is_empty() || reps == 0 {
        return Err(HarnessError::Config("scaling needs at least one K and one repetition".into()));
    }
    let pd_w = dbw_to_watts(cfg.hyperparams.pd_dbw);
    let root = RngStream::new(cfg.seeds.eval, 0x5ca1e);
    ks.iter()
        .map(|&k| {
            let mut sc = cfg.scene.clone();
            sc.k = k;
            let sounder = Sounder::new(&cfg.sounding, sc.m, k, sc.nu2_w())?;
            let inputs: Vec<SoundingData> = (0..4)
                .map(|i| {
                    let rr = root.fork((k * 16 + i) as u64);
                    let scene = sample_scene(&sc, &mut rr.fork(0))?;
                    sounder.sound(&scene, &mut rr.fork(1))
                })
                .collect::<isac_core::Result<_>>()?;
            for d in &inputs {
                precode(net, d, pd_w)?;
            }
            let mut times: Vec<f64> = (0..reps)
                .map(|r| {
                    let started = Instant::now();
                    let w = precode(net, &inputs[r % inputs.len()], pd_w)?;
                    let ms = started.elapsed().as_secs_f64() * 1e3;
                    std::hint::black_box(w);
                    Ok(ms)
                })
                .collect::<Result<_>>()?;
            Ok(ScalingPoint { k, median_ms: median(&mut times), flops: inference_flops(net, k) })
        })
        .collect()
}

pub fn write_scaling(out: impl Write, points: &[ScalingPoint]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{SCALING_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "median_ms", "flops"])?;
    for p in points {
        w.write_record([p.k.to_string(), p.median_ms.to_string(), p.flops.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
