//! Communication and sensing figures of merit.
//!
//! Closed forms for the per-user SINR and the target illumination power, plus
//! Monte-Carlo estimators built on [`downlink_tx`] that check them from first
//! principles.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::numerics::{db_to_lin, frob_norm, inner, lin_to_db, CMat, RngStream, C64};
use crate::scene::Scene;

/// Overall transmit precoder `W = [C, S]`, `M x (M + K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Precoder {
    w: CMat,
    k: usize,
}

impl Precoder {
    /// Wraps `W` with the first `k` columns designated communication columns.
    pub fn from_matrix(w: CMat, k: usize) -> Result<Self> {
        if w.cols() != w.rows() + k {
            return Err(Error::Shape(format!(
                "precoder must be M x (M+K) with K={k}, got {:?}",
                w.shape()
            )));
        }
        Ok(Self { w, k })
    }

    /// Scales `w_hat` onto the power sphere `||W||_F^2 = P_d`.
    pub fn normalized(w_hat: CMat, k: usize, pd_w: f64) -> Result<Self> {
        let n = frob_norm(&w_hat);
        if n == 0.0 {
            return Err(Error::DegenerateOutput);
        }
        Self::from_matrix(w_hat.scale_re(pd_w.sqrt() / n), k)
    }

    pub fn w(&self) -> &CMat {
        &self.w
    }

    pub fn m(&self) -> usize {
        self.w.rows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Total transmit power `||W||_F^2`.
    pub fn power(&self) -> f64 {
        frob_norm(&self.w).powi(2)
    }

    pub fn comm(&self) -> CMat {
        self.w.columns(0, self.k)
    }

    pub fn sens(&self) -> CMat {
        self.w.columns(self.k, self.w.cols())
    }

    pub fn scaled(&self, factor: f64) -> Precoder {
        Precoder { w: self.w.scale_re(factor), k: self.k }
    }
}

/// One downlink symbol vector `[d; t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DownlinkSymbols {
    pub d: Array1<C64>,
    pub t: Array1<C64>,
}

impl DownlinkSymbols {
    /// QPSK communication symbols and complex Gaussian sensing samples, all unit variance.
    pub fn sample(rng: &mut RngStream, k: usize, m: usize) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = Array1::from_shape_fn(k, |_| {
            let bits = rng.next_u64();
            let re = if bits & 1 == 0 { s } else { -s };
            let im = if bits & 2 == 0 { s } else { -s };
            C64::new(re, im)
        });
        let t = Array1::from_shape_fn(m, |_| rng.cgauss(1.0));
        Self { d, t }
    }
}

/// `x = C d + S t`.
pub fn downlink_tx(w: &Precoder, sym: &DownlinkSymbols) -> Result<Array1<C64>> {
    if sym.d.len() != w.k() || sym.t.len() != w.m() {
        return Err(Error::Shape(format!(
            "symbols (K={}, M={}) do not fit precoder (K={}, M={})",
            sym.d.len(),
            sym.t.len(),
            w.k(),
            w.m()
        )));
    }
    let mut stacked = Array1::zeros(w.k() + w.m());
    stacked.slice_mut(ndarray::s![..w.k()]).assign(&sym.d);
    stacked.slice_mut(ndarray::s![w.k()..]).assign(&sym.t);
    Ok(w.w().as_array().dot(&stacked))
}

/// SINR of user `k` with channel `h_k` under downlink noise power `sigma2_w`.
pub fn sinr(w: &Precoder, h_k: ArrayView1<'_, C64>, k: usize, sigma2_w: f64) -> f64 {
    assert!(k < w.k(), "user index {k} out of range");
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (j, col) in w.w().as_array().columns().into_iter().enumerate() {
        let p = inner(h_k, col).norm_sqr();
        if j == k {
            signal = p;
        } else {
            interference += p;
        }
    }
    signal / (interference + sigma2_w)
}

/// All users' SINRs for a scene.
pub fn sinrs(w: &Precoder, scene: &Scene, sigma2_w: f64) -> Vec<f64> {
    (0..scene.k()).map(|k| sinr(w, scene.h_k(k).view(), k, sigma2_w)).collect()
}

/// Illumination power `Q_m = g^H W W^H g`.
pub fn illumination(w: &Precoder, g: ArrayView1<'_, C64>) -> f64 {
    w.w().as_array().columns().into_iter().map(|col| inner(g, col).norm_sqr()).sum()
}

/// Minimum illumination over the scene's targets and the lowest index attaining it.
pub fn worst_case_illumination(w: &Precoder, scene: &Scene) -> Result<(f64, usize)> {
    if scene.targets.is_empty() {
        return Err(Error::InvalidArgument("worst-case illumination needs at least one target".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, tgt) in scene.targets.iter().enumerate() {
        let q = illumination(w, tgt.g.view());
        if q < best.0 {
            best = (q, i);
        }
    }
    Ok(best)
}

/// SINR slack `gamma_k - Gamma` in linear units, threshold given in dB.
pub fn constraint_slack(w: &Precoder, scene: &Scene, gamma_db: f64, sigma2_w: f64) -> Vec<f64> {
    let threshold = db_to_lin(gamma_db);
    sinrs(w, scene, sigma2_w).into_iter().map(|g| g - threshold).collect()
}

/// Worst-case average SINR in dB from per-realization linear SINR vectors.
pub fn worst_avg_sinr_from_sinrs(per_realization: &[Vec<f64>]) -> Result<f64> {
    let first = per_realization
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty evaluation set".into()))?;
    let k = first.len();
    if k == 0 || per_realization.iter().any(|v| v.len() != k) {
        return Err(Error::InvalidArgument("evaluation set must have a constant, nonzero K".into()));
    }
    let n = per_realization.len() as f64;
    let worst = (0..k)
        .map(|u| per_realization.iter().map(|v| v[u]).sum::<f64>() / n)
        .fold(f64::INFINITY, f64::min);
    Ok(lin_to_db(worst))
}

/// `min_k E[gamma_k]` in dB over an evaluation set of (precoder, scene) pairs.
pub fn worst_avg_sinr(set: &[(Precoder, Scene)], sigma2_w: f64) -> Result<f64> {
    let per: Vec<Vec<f64>> = set.iter().map(|(w, s)| sinrs(w, s, sigma2_w)).collect();
    worst_avg_sinr_from_sinrs(&per)
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl MeanEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, std_err: (var / n).sqrt() }
    }

    /// Distance from `value` in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        (self.mean - value).abs() / self.std_err
    }
}

/// Monte-Carlo estimates of the SINR numerator `E|h^H c_k d_k|^2` and denominator
/// `E|h^H (x - c_k d_k) + e|^2`, drawn through [`downlink_tx`].
#[derive(Clone, Copy, Debug)]
pub struct SinrMonteCarlo {
    pub signal: MeanEstimate,
    pub interference_noise: MeanEstimate,
}

impl SinrMonteCarlo {
    pub fn ratio(&self) -> f64 {
        self.signal.mean / self.interference_noise.mean
    }
}

pub fn monte_carlo_sinr(
    w: &Precoder,
    h_k: ArrayView1<'_, C64>,
    k: usize,
    sigma2_w: f64,
    draws: usize,
    rng: &mut RngStream,
) -> Result<SinrMonteCarlo> {
    let ck = w.w().column(k).to_owned();
    let mut sig = Vec::with_capacity(draws);
    let mut rest = Vec::with_capacity(draws);
    for _ in 0..draws {
        let sym = DownlinkSymbols::sample(rng, w.k(), w.m());
        let x = downlink_tx(w, &sym)?;
        let desired = &ck * sym.d[k];
        let noise = rng.cgauss(sigma2_w);
        sig.push(inner(h_k, desired.view()).norm_sqr());
        let other = &x - &desired;
        rest.push((inner(h_k, other.view()) + noise).norm_sqr());
    }
    Ok(SinrMonteCarlo {
        signal: MeanEstimate::from_samples(&sig),
        interference_noise: MeanEstimate::from_samples(&rest),
    })
}

/// Monte-Carlo estimate of `E|g^H x|^2`.
pub fn monte_carlo_illumination(
    w: &Precoder,
    g: ArrayView1<'_, C64>,
    draws: usize,
    rng: &mut RngStream,
) -> Result<MeanEstimate> {
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let sym = DownlinkSymbols::sample(rng, w.k(), w.m());
        samples.push(inner(g, downlink_tx(w, &sym)?.view()).norm_sqr());
    }
    Ok(MeanEstimate::from_samples(&samples))
}
