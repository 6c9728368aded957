//! Channel sounding: orthogonal uplink pilots and omnidirectional downlink
//! probing, producing the compressed pilots `Y~` and matched-filtered echoes
//! `Z~` that the precoder network consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dbw_to_watts, sample_cgauss, CMat, RngStream, C64};
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoundingConfig {
    /// Pilot length in symbols.
    pub lp: usize,
    /// Probing length in snapshots.
    pub lr: usize,
    pub pu_dbw: f64,
    pub pr_dbw: f64,
    /// Disables receiver noise at the base station.
    #[serde(default)]
    pub noiseless: bool,
}

impl Default for SoundingConfig {
    fn default() -> Self {
        Self { lp: 20, lr: 32, pu_dbw: 0.0, pr_dbw: 10.0, noiseless: false }
    }
}

impl SoundingConfig {
    pub fn validate(&self, m: usize, k: usize) -> Result<()> {
        if self.lp < k {
            return Err(Error::InvalidArgument(format!("pilot length {} < K = {k}", self.lp)));
        }
        if self.lr < m {
            return Err(Error::InvalidArgument(format!("probing length {} < M = {m}", self.lr)));
        }
        Ok(())
    }

    pub fn pu_w(&self) -> f64 {
        dbw_to_watts(self.pu_dbw)
    }

    pub fn pr_w(&self) -> f64 {
        dbw_to_watts(self.pr_dbw)
    }
}

/// Network inputs for one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct SoundingData {
    /// Compressed pilots, `M x K`.
    pub y: CMat,
    /// Matched-filtered echoes, `M x M`.
    pub z: CMat,
}

impl SoundingData {
    pub fn new(y: CMat, z: CMat) -> Result<Self> {
        let m = y.rows();
        if z.shape() != (m, m) {
            return Err(Error::Shape(format!("echo matrix must be {m}x{m}, got {:?}", z.shape())));
        }
        Ok(Self { y, z })
    }

    pub fn m(&self) -> usize {
        self.y.rows()
    }

    pub fn k(&self) -> usize {
        self.y.cols()
    }
}

/// First `rows` rows of the `n`-point DFT matrix.
fn dft_rows(rows: usize, n: usize) -> CMat {
    CMat::from_fn(rows, n, |(r, c)| {
        let phase = -std::f64::consts::TAU * ((r * c) % n) as f64 / n as f64;
        C64::from_polar(1.0, phase)
    })
}

/// Orthogonal pilots `F` (`K x L_p`) with `F F^H = L_p I`.
pub fn gen_pilots(k: usize, lp: usize) -> Result<CMat> {
    if lp < k || k == 0 {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= L_p, got K={k}, L_p={lp}")));
    }
    Ok(dft_rows(k, lp))
}

/// Probing waveforms `E` (`M x L_r`) with `E E^H = (L_r / M) I`.
pub fn gen_probing(m: usize, lr: usize) -> Result<CMat> {
    if lr < m || m == 0 {
        return Err(Error::InvalidArgument(format!("need 1 <= M <= L_r, got M={m}, L_r={lr}")));
    }
    Ok(dft_rows(m, lr).scale_re((1.0 / m as f64).sqrt()))
}

/// Received uplink pilots `Y = sqrt(P_u) H^T F + N`.
pub fn rx_pilots(
    scene: &Scene,
    f: &CMat,
    pu_w: f64,
    nu2_w: f64,
    noisy: bool,
    rng: &mut RngStream,
) -> Result<CMat> {
    let clean = scene.h.t().matmul(f)?.scale_re(pu_w.sqrt());
    if !noisy {
        return Ok(clean);
    }
    let noise = sample_cgauss(rng, clean.rows(), clean.cols(), nu2_w)?;
    clean.add(&noise)
}

/// `Y~ = Y F^H`, `M x K`.
pub fn pilot_compress(y: &CMat, f: &CMat) -> Result<CMat> {
    y.matmul(&f.h())
}

/// Received echoes `Z = sqrt(P_r) sum_m beta_m g_m^* g_m^H E + V`.
pub fn rx_echoes(
    scene: &Scene,
    e: &CMat,
    pr_w: f64,
    nu2_w: f64,
    noisy: bool,
    rng: &mut RngStream,
) -> Result<CMat> {
    let m = e.rows();
    if scene.m() != m {
        return Err(Error::Shape(format!("scene has M={}, probing has M={m}", scene.m())));
    }
    let mut response = CMat::zeros(m, m).into_array();
    for tgt in &scene.targets {
        for i in 0..m {
            for j in 0..m {
                response[[i, j]] += tgt.beta * tgt.g[i].conj() * tgt.g[j].conj();
            }
        }
    }
    let clean = CMat::new(response)?.matmul(e)?.scale_re(pr_w.sqrt());
    if !noisy {
        return Ok(clean);
    }
    let noise = sample_cgauss(rng, m, e.cols(), nu2_w)?;
    clean.add(&noise)
}

/// `Z~ = Z E^H`, `M x M`.
pub fn matched_filter(z: &CMat, e: &CMat) -> Result<CMat> {
    z.matmul(&e.h())
}

/// Pilot and probing matrices for a fixed `(M, K)` and configuration.
#[derive(Clone, Debug)]
pub struct Sounder {
    pub cfg: SoundingConfig,
    pub pilots: CMat,
    pub probing: CMat,
    pub nu2_w: f64,
}

impl Sounder {
    pub fn new(cfg: &SoundingConfig, m: usize, k: usize, nu2_w: f64) -> Result<Self> {
        cfg.validate(m, k)?;
        Ok(Self { cfg: cfg.clone(), pilots: gen_pilots(k, cfg.lp)?, probing: gen_probing(m, cfg.lr)?, nu2_w })
    }

    /// Runs both sounding phases on a scene.
    pub fn sound(&self, scene: &Scene, rng: &mut RngStream) -> Result<SoundingData> {
        let noisy = !self.cfg.noiseless;
        let y = rx_pilots(scene, &self.pilots, self.cfg.pu_w(), self.nu2_w, noisy, rng)?;
        let z = rx_echoes(scene, &self.probing, self.cfg.pr_w(), self.nu2_w, noisy, rng)?;
        SoundingData::new(pilot_compress(&y, &self.pilots)?, matched_filter(&z, &self.probing)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{inner, vec_norm_sqr};
    use crate::scene::{sample_scene, steering_vector, SceneConfig, Target};

    fn gram_error(x: &CMat, scale: f64) -> f64 {
        let g = x.matmul(&x.h()).unwrap();
        g.max_abs_diff(&CMat::identity(x.rows()).scale_re(scale))
    }

    #[test]
    fn pilot_orthogonality() {
        assert_eq!(gen_pilots(1, 1).unwrap(), CMat::identity(1));
        assert!(gram_error(&gen_pilots(4, 20).unwrap(), 20.0) < 1e-10);
        for (k, lp) in [(1, 7), (3, 3), (5, 13), (16, 40)] {
            let f = gen_pilots(k, lp).unwrap();
            assert!(gram_error(&f, lp as f64) < 1e-10);
            assert!(f.as_array().iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
        assert!(matches!(gen_pilots(5, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn probing_orthogonality_and_uniform_illumination() {
        let e = gen_probing(16, 32).unwrap();
        assert!(gram_error(&e, 2.0) < 1e-10);
        let eeh = e.matmul(&e.h()).unwrap();
        for i in 0..181 {
            let theta = (-90.0 + i as f64).to_radians();
            let a = CMat::col_vector(steering_vector(theta, 16).as_slice().unwrap());
            let q = a.h().matmul(&eeh).unwrap().matmul(&a).unwrap().get(0, 0);
            assert!((q.re - 32.0).abs() < 1e-8 && q.im.abs() < 1e-8);
        }
        assert!(gram_error(&gen_probing(8, 8).unwrap(), 1.0) < 1e-10);
        assert!(gen_probing(8, 7).is_err());
    }

    fn scene(m: usize, k: usize, t: usize, seed: u64) -> Scene {
        let cfg = SceneConfig { m, k, t, ..Default::default() };
        sample_scene(&cfg, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn noiseless_pilot_identity() {
        let s = scene(16, 4, 8, 1);
        let f = gen_pilots(4, 20).unwrap();
        let pu = 2.5;
        let y = rx_pilots(&s, &f, pu, 1e-10, false, &mut RngStream::new(0, 0)).unwrap();
        assert!(y.max_abs_diff(&s.h.t().matmul(&f).unwrap().scale_re(pu.sqrt())) == 0.0);
        let yc = pilot_compress(&y, &f).unwrap();
        let rec = yc.scale_re(1.0 / (pu.sqrt() * 20.0));
        let scale = s.h.frob_norm();
        assert!(rec.max_abs_diff(&s.h.t()) < 1e-10 * scale);
    }

    #[test]
    fn single_user_single_antenna_pilots() {
        let mut s = scene(1, 1, 1, 2);
        s.h = CMat::from_fn(1, 1, |_| C64::new(0.3, -0.2));
        let f = CMat::from_fn(1, 5, |_| C64::new(1.0, 0.0));
        let y = rx_pilots(&s, &f, 4.0, 1.0, false, &mut RngStream::new(0, 0)).unwrap();
        for j in 0..5 {
            assert!((y.get(0, j) - C64::new(0.6, -0.4)).norm() < 1e-15);
        }
    }

    #[test]
    fn pure_noise_moments() {
        let mut s = scene(16, 4, 8, 3);
        s.h = CMat::zeros(4, 16);
        let f = gen_pilots(4, 20).unwrap();
        let nu2 = 3.0;
        let mut rng = RngStream::new(5, 5);
        let (mut raw, mut comp) = (0.0, 0.0);
        let trials = 400;
        for _ in 0..trials {
            let y = rx_pilots(&s, &f, 1.0, nu2, true, &mut rng).unwrap();
            raw += y.frob_norm().powi(2) / (16.0 * 20.0);
            comp += pilot_compress(&y, &f).unwrap().frob_norm().powi(2) / (16.0 * 4.0);
        }
        raw /= trials as f64;
        comp /= trials as f64;
        // 128k and 25.6k exponential samples: relative SEs ~0.3% and ~0.6%.
        assert!((raw / nu2 - 1.0).abs() < 0.02, "raw {raw}");
        assert!((comp / (20.0 * nu2) - 1.0).abs() < 0.03, "comp {comp}");
    }

    #[test]
    fn square_dft_pilots_invert_exactly() {
        let s = scene(4, 5, 1, 4);
        let f = gen_pilots(5, 5).unwrap();
        let y = rx_pilots(&s, &f, 1.0, 1.0, false, &mut RngStream::new(0, 0)).unwrap();
        let rec = pilot_compress(&y, &f).unwrap().scale_re(0.2);
        assert!(rec.max_abs_diff(&s.h.t()) < 1e-14);
    }

    #[test]
    fn echoes_without_targets_are_noise() {
        let mut s = scene(8, 2, 2, 5);
        s.targets.clear();
        let e = gen_probing(8, 16).unwrap();
        let z = rx_echoes(&s, &e, 10.0, 1.0, true, &mut RngStream::new(1, 1)).unwrap();
        let v = sample_cgauss(&mut RngStream::new(1, 1), 8, 16, 1.0).unwrap();
        assert_eq!(z, v);
        let mut s2 = scene(8, 2, 2, 5);
        for t in &mut s2.targets {
            t.beta = C64::new(0.0, 0.0);
        }
        let z2 = rx_echoes(&s2, &e, 10.0, 1.0, true, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(z2, v);
    }

    /// Numerical rank via the eigenvalues of Z Z^H using power iteration with deflation.
    fn leading_eigs(a: &CMat, count: usize) -> Vec<f64> {
        let mut g = a.matmul(&a.h()).unwrap();
        let n = g.rows();
        let mut out = Vec::new();
        for _ in 0..count {
            let mut v = CMat::from_fn(n, 1, |(i, _)| C64::new(1.0 + i as f64 * 0.37, 0.5 - i as f64 * 0.11));
            let mut lambda = 0.0;
            for _ in 0..500 {
                let w = g.matmul(&v).unwrap();
                lambda = w.frob_norm();
                if lambda == 0.0 {
                    break;
                }
                v = w.scale_re(1.0 / lambda);
            }
            out.push(lambda);
            g = g.sub(&v.matmul(&v.h()).unwrap().scale_re(lambda)).unwrap();
        }
        out
    }

    #[test]
    fn single_target_echo_is_rank_one() {
        let mut s = scene(8, 1, 1, 6);
        s.targets.truncate(1);
        let e = gen_probing(8, 16).unwrap();
        let z = rx_echoes(&s, &e, 10.0, 1.0, false, &mut RngStream::new(0, 0)).unwrap();
        let eig = leading_eigs(&z, 2);
        assert!(eig[1] < 1e-10 * eig[0], "{eig:?}");
    }

    #[test]
    fn matched_filter_closed_form() {
        let m = 16;
        let cfg = SceneConfig { t: 1, ..Default::default() };
        let s = sample_scene(&cfg, &mut RngStream::new(7, 0)).unwrap();
        let e = gen_probing(m, 32).unwrap();
        let pr = 10.0;
        let z = rx_echoes(&s, &e, pr, 1.0, false, &mut RngStream::new(0, 0)).unwrap();
        let zt = matched_filter(&z, &e).unwrap();
        let t = &s.targets[0];
        let expected = CMat::from_fn(m, m, |(i, j)| pr.sqrt() * 2.0 * t.beta * t.g[i].conj() * t.g[j].conj());
        let scale = expected.frob_norm();
        assert!(zt.max_abs_diff(&expected) <= 1e-9 * scale);
        assert_eq!(matched_filter(&CMat::zeros(m, 32), &e).unwrap(), CMat::zeros(m, m));
    }

    #[test]
    fn matched_filter_noise_moment() {
        let e = gen_probing(8, 24).unwrap();
        let mut rng = RngStream::new(8, 8);
        let trials = 2000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let v = sample_cgauss(&mut rng, 8, 24, 0.5).unwrap();
            acc += matched_filter(&v, &e).unwrap().frob_norm().powi(2) / 64.0;
        }
        acc /= trials as f64;
        let expected = 3.0 * 0.5;
        assert!((acc / expected - 1.0).abs() < 0.02, "{acc}");
    }

    #[test]
    fn matched_filter_spectrum_peaks_at_target() {
        let m = 16;
        let theta0 = (-37.5f64).to_radians();
        let tgt = Target::new(theta0, 10.0, C64::from_polar(1e-3, 0.4), C64::from_polar(1.0, 1.1), m);
        let s = Scene { h: CMat::zeros(1, m), targets: vec![tgt], user_positions: vec![[0.0, 0.0]] };
        let e = gen_probing(m, 32).unwrap();
        let zt = matched_filter(&rx_echoes(&s, &e, 1.0, 1.0, false, &mut RngStream::new(0, 0)).unwrap(), &e).unwrap();
        let spectrum = |theta: f64| {
            let a = steering_vector(theta, m);
            let za = zt.as_array().dot(&a.mapv(|z| z.conj()));
            inner(a.view(), za.view()).norm()
        };
        let best = (0..=7200)
            .map(|i| (-90.0 + i as f64 * 0.025).to_radians())
            .max_by(|a, b| spectrum(*a).total_cmp(&spectrum(*b)))
            .unwrap();
        assert!((best - theta0).abs() <= 0.025f64.to_radians() / 2.0 + 1e-12);
        assert!(vec_norm_sqr(zt.row(0)) > 0.0);
    }
}
