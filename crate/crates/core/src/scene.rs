//! Ground-truth world realizations: user channels and point targets seen by a
//! half-wavelength uniform linear array at the origin.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{db_to_lin, dbm_to_watts, CMat, RngStream, C64};

/// Log-distance pathloss `PL_dB = a + b * log10(d)`, `d` in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pathloss {
    pub a_db: f64,
    pub b_db: f64,
}

impl Pathloss {
    pub fn loss_db(&self, distance_m: f64) -> f64 {
        self.a_db + self.b_db * distance_m.log10()
    }

    /// Linear power gain `10^(-PL/10)`.
    pub fn gain(&self, distance_m: f64) -> f64 {
        db_to_lin(-self.loss_db(distance_m))
    }
}

/// How target radar cross sections are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcsModel {
    /// `|beta| = 1` with uniform phase.
    #[default]
    UnitModulus,
    /// `beta ~ CN(0, 1)`, so `|beta|^2` is exponential with unit mean.
    SwerlingI,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub user_x_range_m: [f64; 2],
    pub user_y_range_m: [f64; 2],
    pub target_angle_range_deg: [f64; 2],
    pub target_range_range_m: [f64; 2],
    pub comm_pathloss: Pathloss,
    pub radar_pathloss: Pathloss,
    pub sigma2_dbm: f64,
    pub nu2_dbm: f64,
    #[serde(default)]
    pub rcs_model: RcsModel,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            m: 16,
            k: 4,
            t: 8,
            user_x_range_m: [15.0, 18.0],
            user_y_range_m: [8.0, 18.0],
            target_angle_range_deg: [-80.0, -10.0],
            target_range_range_m: [5.0, 20.0],
            comm_pathloss: Pathloss { a_db: 30.0, b_db: 36.0 },
            radar_pathloss: Pathloss { a_db: 30.0, b_db: 22.0 },
            sigma2_dbm: -94.0,
            nu2_dbm: -70.0,
            rcs_model: RcsModel::UnitModulus,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 || self.t == 0 {
            return Err(Error::InvalidArgument("M, K and T must all be at least 1".into()));
        }
        for (name, r) in [
            ("user_x_range_m", self.user_x_range_m),
            ("user_y_range_m", self.user_y_range_m),
            ("target_angle_range_deg", self.target_angle_range_deg),
            ("target_range_range_m", self.target_range_range_m),
        ] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must satisfy lo <= hi, got {r:?}")));
            }
        }
        if self.target_range_range_m[0] <= 0.0 {
            return Err(Error::InvalidArgument("target ranges must be positive".into()));
        }
        for pl in [self.comm_pathloss, self.radar_pathloss] {
            if !(pl.a_db > 0.0 && pl.b_db > 0.0) {
                return Err(Error::InvalidArgument(format!("pathloss coefficients must be positive: {pl:?}")));
            }
        }
        Ok(())
    }

    /// Downlink (user receiver) noise power in watts.
    pub fn sigma2_w(&self) -> f64 {
        dbm_to_watts(self.sigma2_dbm)
    }

    /// Base-station receiver noise power in watts.
    pub fn nu2_w(&self) -> f64 {
        dbm_to_watts(self.nu2_dbm)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub theta_rad: f64,
    pub range_m: f64,
    pub alpha: C64,
    pub beta: C64,
    /// Target channel with `g^H = alpha * a^T(theta)`.
    pub g: Array1<C64>,
}

impl Target {
    pub fn new(theta_rad: f64, range_m: f64, alpha: C64, beta: C64, m: usize) -> Self {
        let g = steering_vector(theta_rad, m).mapv(|a| (alpha * a).conj());
        Self { theta_rad, range_m, alpha, beta, g }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `K x M`, row `k` is `h_k^H`.
    pub h: CMat,
    pub targets: Vec<Target>,
    pub user_positions: Vec<[f64; 2]>,
}

impl Scene {
    pub fn m(&self) -> usize {
        self.h.cols()
    }

    pub fn k(&self) -> usize {
        self.h.rows()
    }

    pub fn t(&self) -> usize {
        self.targets.len()
    }

    /// Channel vector `h_k` (conjugate of row `k` of `H`).
    pub fn h_k(&self, k: usize) -> Array1<C64> {
        self.h.row(k).mapv(|z| z.conj())
    }

    /// `T x M` matrix whose row `m` is `g_m^H`.
    pub fn g_rows(&self) -> CMat {
        let m = self.m();
        CMat::from_fn(self.t(), m, |(i, j)| self.targets[i].g[j].conj())
    }
}

/// Half-wavelength ULA response: entry `m` is `exp(-j pi m sin(theta))`.
pub fn steering_vector(theta_rad: f64, m: usize) -> Array1<C64> {
    let u = std::f64::consts::PI * theta_rad.sin();
    Array1::from_shape_fn(m, |i| C64::from_polar(1.0, -u * i as f64))
}

pub fn rcs_draw(rng: &mut RngStream, model: RcsModel) -> C64 {
    match model {
        RcsModel::UnitModulus => C64::from_polar(1.0, rng.phase()),
        RcsModel::SwerlingI => rng.cgauss(1.0),
    }
}

/// Draws one realization: Rayleigh user channels with pathloss, targets in the sector.
pub fn sample_scene(cfg: &SceneConfig, rng: &mut RngStream) -> Result<Scene> {
    cfg.validate()?;
    let m = cfg.m;
    let mut user_positions = Vec::with_capacity(cfg.k);
    let mut h = CMat::zeros(cfg.k, m).into_array();
    for k in 0..cfg.k {
        let x = rng.uniform(cfg.user_x_range_m[0], cfg.user_x_range_m[1]);
        let y = rng.uniform(cfg.user_y_range_m[0], cfg.user_y_range_m[1]);
        user_positions.push([x, y]);
        let amp = cfg.comm_pathloss.gain(x.hypot(y)).sqrt();
        for j in 0..m {
            // Row k stores h_k^H; CN(0, 1) is conjugation invariant.
            h[[k, j]] = (amp * rng.cgauss(1.0)).conj();
        }
    }
    let mut targets = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        let theta = rng
            .uniform(cfg.target_angle_range_deg[0], cfg.target_angle_range_deg[1])
            .to_radians();
        let range = rng.uniform(cfg.target_range_range_m[0], cfg.target_range_range_m[1]);
        let alpha = C64::from_polar(cfg.radar_pathloss.gain(range).sqrt(), rng.phase());
        let beta = rcs_draw(rng, cfg.rcs_model);
        targets.push(Target::new(theta, range, alpha, beta, m));
    }
    Ok(Scene { h: CMat::new(h)?, targets, user_positions })
}
