//! Classical comparison pipeline: least-squares channel estimation, Bartlett direction
//! finding, coefficient least squares, and a penalty-based precoder optimizer for the
//! max-min illumination problem with per-user SINR constraints.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad::{GradBundle, Tape};
use crate::metrics::{constraint_slack, worst_case_illumination, Precoder};
use crate::numerics::{db_to_lin, r2c_merge, real_lowering, CMat, RMat, RngStream, C64};
use crate::scene::{steering_vector, Scene, Target};
use crate::sounding::SoundingData;
use crate::training::AdamConfig;

/// `H^ = (Y~ / (sqrt(P_u) L_p))^T`.
pub fn ls_channel_estimate(y_tilde: &CMat, pu_w: f64, lp: usize) -> Result<CMat> {
    if !(pu_w > 0.0) || lp < y_tilde.cols() {
        return Err(Error::InvalidArgument(format!("need P_u > 0 and L_p >= K, got {pu_w}, {lp}")));
    }
    Ok(y_tilde.t().scale_re(1.0 / (pu_w.sqrt() * lp as f64)))
}

/// Uniform angle grid in radians, `step_deg` apart over `[lo_deg, hi_deg]`.
pub fn angle_grid(lo_deg: f64, hi_deg: f64, step_deg: f64) -> Vec<f64> {
    let n = ((hi_deg - lo_deg) / step_deg).round() as usize;
    (0..=n).map(|i| (lo_deg + i as f64 * step_deg).to_radians()).collect()
}

/// The default scan: 0.25 degrees over `[-90, 90]`.
pub fn default_grid() -> Vec<f64> {
    angle_grid(-90.0, 90.0, 0.25)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoaEstimate {
    /// Ascending, radians.
    pub angles: Vec<f64>,
    /// Fewer than `T` local maxima were found; the largest spectrum samples were used instead.
    pub low_confidence: bool,
}

/// `P(theta) = |a(theta)^H Z~ a(theta)^*|` over the grid.
pub fn bartlett_spectrum(z_tilde: &CMat, grid: &[f64]) -> Vec<f64> {
    let m = z_tilde.rows();
    let z = z_tilde.as_array();
    grid.iter()
        .map(|&theta| {
            let a = steering_vector(theta, m);
            let za = z.dot(&a.mapv(|v| v.conj()));
            a.iter().zip(za.iter()).map(|(ai, zi)| ai.conj() * zi).sum::<C64>().norm()
        })
        .collect()
}

/// Angles of the `t` largest local maxima of the Bartlett spectrum.
///
/// A peak is strictly larger than both neighbours; the end points only need to beat their
/// single neighbour.
pub fn bartlett_doa(z_tilde: &CMat, t: usize, grid: &[f64]) -> Result<DoaEstimate> {
    if t == 0 || grid.len() < t {
        return Err(Error::InvalidArgument(format!("cannot pick {t} angles from {} grid points", grid.len())));
    }
    if grid.windows(2).any(|w| (w[1] - w[0]).abs() > 0.5f64.to_radians() + 1e-12) {
        return Err(Error::InvalidArgument("grid resolution must be 0.5 degrees or finer".into()));
    }
    let p = bartlett_spectrum(z_tilde, grid);
    let n = p.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || p[i] > p[i - 1]) && (i + 1 == n || p[i] > p[i + 1]))
        .collect();
    let low_confidence = peaks.len() < t;
    if low_confidence {
        peaks = (0..n).collect();
    }
    // Stable sort keeps the lower angle first among equal values.
    peaks.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let mut angles: Vec<f64> = peaks[..t].iter().map(|&i| grid[i]).collect();
    angles.sort_by(f64::total_cmp);
    Ok(DoaEstimate { angles, low_confidence })
}

/// Least-squares fit of `Z~ ~ sum_m c_m * sqrt(P_r) (L_r/M) a(theta_m) a(theta_m)^T`.
///
/// For a noiseless echo each `c_m` equals `beta_m alpha_m^2`.
pub fn coeff_ls(z_tilde: &CMat, angles: &[f64], pr_w: f64, lr: usize) -> Result<Vec<C64>> {
    let m = z_tilde.rows();
    let scale = pr_w.sqrt() * lr as f64 / m as f64;
    let atoms: Vec<Array2<C64>> = angles
        .iter()
        .map(|&th| {
            let a = steering_vector(th, m);
            Array2::from_shape_fn((m, m), |(i, j)| a[i] * a[j] * scale)
        })
        .collect();
    let t = atoms.len();
    let dict = DMatrix::from_fn(m * m, t, |r, c| atoms[c][[r / m, r % m]]);
    let sv = dict.clone().svd(false, false).singular_values;
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if t == 0 || !(smin > 1e-8 * smax) {
        return Err(Error::IllConditioned(format!("dictionary singular values span {smin:e}..{smax:e}")));
    }
    let rhs = DVector::from_iterator(m * m, (0..m * m).map(|r| z_tilde.get(r / m, r % m)));
    let gram = dict.adjoint() * &dict;
    let b = dict.adjoint() * rhs;
    let c = gram.lu().solve(&b).ok_or_else(|| Error::IllConditioned("singular normal equations".into()))?;
    Ok(c.iter().copied().collect())
}

/// Channel estimates feeding the estimated-CSI baseline.
#[derive(Clone, Debug)]
pub struct ChannelEstimate {
    pub h: CMat,
    pub angles: Vec<f64>,
    pub coeffs: Vec<C64>,
    pub low_confidence: bool,
}

impl ChannelEstimate {
    /// Sounding data to estimates. `pu_w`, `lp`, `pr_w`, `lr` must match the sounder.
    pub fn from_sounding(data: &SoundingData, t: usize, pu_w: f64, lp: usize, pr_w: f64, lr: usize, grid: &[f64]) -> Result<Self> {
        let h = ls_channel_estimate(&data.y, pu_w, lp)?;
        let doa = bartlett_doa(&data.z, t, grid)?;
        let coeffs = coeff_ls(&data.z, &doa.angles, pr_w, lr)?;
        Ok(Self { h, angles: doa.angles, coeffs, low_confidence: doa.low_confidence })
    }

    /// Scene with the estimated channels. Target gains assume `|beta| = 1`, so
    /// `|alpha^| = sqrt(|c^|)`; the phase of `alpha` does not affect illumination.
    pub fn to_scene(&self) -> Scene {
        let m = self.h.cols();
        let targets = self
            .angles
            .iter()
            .zip(&self.coeffs)
            .map(|(&th, c)| Target::new(th, f64::NAN, C64::new(c.norm().sqrt(), 0.0), C64::new(1.0, 0.0), m))
            .collect();
        Scene { h: self.h.clone(), targets, user_positions: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Random restarts on top of the structured start.
    pub random_restarts: usize,
    /// Augmented-Lagrangian rounds.
    pub rounds: usize,
    pub steps_per_round: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub rho_start: f64,
    pub rho_growth: f64,
    /// Relative SINR margin aimed for, so the reported slack ends up nonnegative.
    pub margin: f64,
    /// Slack below which a constraint counts as violated (linear units).
    pub feasibility_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            random_restarts: 4,
            rounds: 8,
            steps_per_round: 250,
            lr_start: 0.05,
            lr_end: 5e-4,
            rho_start: 1.0,
            rho_growth: 4.0,
            margin: 1e-3,
            feasibility_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizedPrecoder {
    pub precoder: Precoder,
    /// Worst-case illumination in watts.
    pub q: f64,
    pub slack: Vec<f64>,
    pub feasible: bool,
    pub restarts: usize,
}

/// Maximizes worst-case illumination subject to `gamma_k >= Gamma` on the sphere
/// `||W||_F^2 = P_d`.
///
/// Each start runs projected Adam on an augmented Lagrangian of the normalized problem; the
/// best feasible result wins, otherwise the least violating one.
pub fn optimize_precoder(
    scene: &Scene,
    gamma_db: f64,
    pd_w: f64,
    sigma2_w: f64,
    cfg: &OptimizerConfig,
    rng: &RngStream,
) -> Result<OptimizedPrecoder> {
    if scene.t() == 0 {
        return Err(Error::InvalidArgument("need at least one target".into()));
    }
    if !(pd_w > 0.0 && sigma2_w > 0.0) {
        return Err(Error::InvalidArgument("P_d and sigma^2 must be positive".into()));
    }
    let (m, k) = (scene.m(), scene.k());
    let mut starts = vec![structured_start(scene)];
    for r in 0..cfg.random_restarts {
        let mut rr = rng.fork(r as u64);
        starts.push(Array2::from_shape_fn((2 * m, k + m), |_| rr.standard_normal()));
    }
    let results: Vec<Result<OptimizedPrecoder>> =
        starts.into_par_iter().map(|v0| run_start(scene, gamma_db, pd_w, sigma2_w, cfg, v0)).collect();
    let mut best: Option<OptimizedPrecoder> = None;
    for r in results {
        let r = r?;
        let better = match &best {
            None => true,
            Some(b) => match (r.feasible, b.feasible) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => r.q > b.q,
                (false, false) => worst(&r.slack) > worst(&b.slack),
            },
        };
        if better {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    best.restarts = cfg.random_restarts + 1;
    Ok(best)
}

fn worst(slack: &[f64]) -> f64 {
    slack.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Matched-filter communication columns plus sensing columns aimed at the targets.
fn structured_start(scene: &Scene) -> RMat {
    let (m, k, t) = (scene.m(), scene.k(), scene.t());
    let mut w = CMat::zeros(m, k + m).into_array();
    for i in 0..k {
        let h = scene.h_k(i);
        let n = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for r in 0..m {
            w[[r, i]] = h[r] / n;
        }
    }
    for j in 0..m {
        let g = &scene.targets[j % t].g;
        let n = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for r in 0..m {
            w[[r, k + j]] = g[r] / n;
        }
    }
    crate::numerics::c2r_stack(&CMat::new(w).expect("finite start"))
}

fn run_start(
    scene: &Scene,
    gamma_db: f64,
    pd_w: f64,
    sigma2_w: f64,
    cfg: &OptimizerConfig,
    v0: RMat,
) -> Result<OptimizedPrecoder> {
    let k = scene.k();
    let gamma = db_to_lin(gamma_db) * (1.0 + cfg.margin);
    let g_low = real_lowering(&scene.g_rows());
    let h_low = real_lowering(&scene.h);
    // Illumination is reported relative to the best single-target value.
    let q_ref = pd_w * scene.targets.iter().map(|t| t.g.iter().map(|z| z.norm_sqr()).sum::<f64>()).fold(0.0, f64::max);
    let q_ref = if q_ref > 0.0 { q_ref } else { 1.0 };

    let mut v = normalized(v0);
    let mut mu = vec![0.0; k];
    let mut rho = cfg.rho_start;
    let adam = AdamConfig::default();
    let total = (cfg.rounds * cfg.steps_per_round).max(1);
    let decay = (cfg.lr_end / cfg.lr_start).ln() / total as f64;
    let (mut m1, mut m2): (RMat, RMat) = (Array2::zeros(v.dim()), Array2::zeros(v.dim()));
    let mut step = 0;

    for _ in 0..cfg.rounds {
        for _ in 0..cfg.steps_per_round {
            let mut grads = GradBundle::zeros_like(&[&v]);
            let mut tape = Tape::new(vec![&v]);
            let vv = tape.param(0)?;
            let w = tape.normalize(vv, pd_w.sqrt(), 0.0)?;
            let gw = tape.left_mul(g_low.clone(), w)?;
            let gw = tape.pair_abs_sq(gw)?;
            let qs: Vec<_> = (0..scene.t()).map(|i| tape.row_sum(gw, i)).collect::<Result<_>>()?;
            let q = tape.min(&qs)?;
            let mut obj = tape.scale(q, 1.0 / q_ref);
            if k > 0 {
                let hw = tape.left_mul(h_low.clone(), w)?;
                let hw = tape.pair_abs_sq(hw)?;
                for i in 0..k {
                    let num = tape.entry(hw, i, i)?;
                    let tot = tape.row_sum(hw, i)?;
                    let rest = tape.sub(tot, num)?;
                    let den = tape.add_const(rest, sigma2_w);
                    let sinr = tape.div(num, den)?;
                    // Relative shortfall max(0, 1 - gamma_k / Gamma).
                    let rel = tape.scale(sinr, -1.0 / gamma);
                    let rel = tape.add_const(rel, 1.0);
                    let viol = tape.max0(rel);
                    let lin = tape.scale(viol, mu[i]);
                    let sq = tape.powi(viol, 2);
                    let sq = tape.scale(sq, 0.5 * rho);
                    obj = tape.sub(obj, lin)?;
                    obj = tape.sub(obj, sq)?;
                }
            }
            tape.backward(obj, -1.0, &mut grads)?;
            drop(tape);
            step += 1;
            let lr = cfg.lr_start * (decay * step as f64).exp();
            let c1 = 1.0 - adam.beta1.powi(step as i32);
            let c2 = 1.0 - adam.beta2.powi(step as i32);
            ndarray::Zip::from(&mut v).and(&grads.tensors[0]).and(&mut m1).and(&mut m2).for_each(|p, &g, a, b| {
                *a = adam.beta1 * *a + (1.0 - adam.beta1) * g;
                *b = adam.beta2 * *b + (1.0 - adam.beta2) * g * g;
                *p -= lr * (*a / c1) / ((*b / c2).sqrt() + adam.eps);
            });
            v = normalized(v);
            if step == total {
                break;
            }
        }
        // Multiplier update from the current point.
        let w = Precoder::normalized(r2c_merge(&v)?, k, pd_w)?;
        let slack = constraint_slack(&w, scene, gamma_db + 10.0 * (1.0 + cfg.margin).log10(), sigma2_w);
        for (mu_k, h) in mu.iter_mut().zip(&slack) {
            let viol = (-h / gamma).max(0.0);
            *mu_k += rho * viol;
        }
        rho *= cfg.rho_growth;
    }

    let precoder = Precoder::normalized(r2c_merge(&v)?, k, pd_w)?;
    let q = worst_case_illumination(&precoder, scene)?.0;
    let slack = constraint_slack(&precoder, scene, gamma_db, sigma2_w);
    let feasible = slack.iter().all(|&h| h >= -cfg.feasibility_tol);
    Ok(OptimizedPrecoder { precoder, q, slack, feasible, restarts: 1 })
}

fn normalized(v: RMat) -> RMat {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v / n
    } else {
        let mut e = Array2::zeros(v.dim());
        e[[0, 0]] = 1.0;
        e
    }
}
