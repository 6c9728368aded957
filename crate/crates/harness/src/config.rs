//! Experiment configuration (one JSON document, unit-suffixed physical fields).

use std::path::{Path, PathBuf};

use isac_core::net::InputScaling;
use isac_core::scene::SceneConfig;
use isac_core::sounding::SoundingConfig;
use isac_core::training::Hyperparams;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Divide inputs by their compressed-noise standard deviation.
    #[default]
    NoiseWhitening,
    /// Feed raw `Y~`, `Z~`.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Lift dimension.
    pub d: usize,
    #[serde(default)]
    pub input_scaling: ScalingMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { d: 1024, input_scaling: ScalingMode::NoiseWhitening }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Proposed,
    PerfectCsi,
    EstimatedCsi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::PerfectCsi => "perfect-csi",
            Method::EstimatedCsi => "estimated-csi",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub realizations: usize,
    pub methods: Vec<Method>,
    /// Bartlett scan step.
    #[serde(default = "default_grid_step")]
    pub grid_step_deg: f64,
    /// Random restarts of the baseline optimizer.
    #[serde(default = "default_restarts")]
    pub baseline_restarts: usize,
}

fn default_grid_step() -> f64 {
    0.25
}

fn default_restarts() -> usize {
    4
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            realizations: 100,
            methods: vec![Method::Proposed, Method::PerfectCsi, Method::EstimatedCsi],
            grid_step_deg: default_grid_step(),
            baseline_restarts: default_restarts(),
        }
    }
}

/// User rectangle `[x_lo, x_hi, y_lo, y_hi]` in metres.
pub type Area = [f64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    PdDbw(Vec<f64>),
    GammaDb(Vec<f64>),
    KTest(Vec<usize>),
    AreaM(Vec<Area>),
}

impl Sweep {
    pub fn axis(&self) -> &'static str {
        match self {
            Sweep::PdDbw(_) => "pd_dbw",
            Sweep::GammaDb(_) => "gamma_db",
            Sweep::KTest(_) => "k_test",
            Sweep::AreaM(_) => "area_m",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::PdDbw(v) | Sweep::GammaDb(v) => v.len(),
            Sweep::KTest(v) => v.len(),
            Sweep::AreaM(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Default downlink power sweep in dBW.
    pub fn default_pd() -> Self {
        Sweep::PdDbw(vec![-10.0, -5.0, 0.0, 5.0, 10.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub train: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { init: 1, train: 2, eval: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub sounding: SoundingConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            sounding: SoundingConfig::default(),
            hyperparams: Hyperparams::default(),
            network: NetworkConfig::default(),
            eval: EvalConfig::default(),
            sweep: None,
            seeds: Seeds::default(),
            output_dir: default_out(),
        }
    }
}

impl ExperimentConfig {
    /// Lift 256, 500 epochs; otherwise the defaults.
    pub fn reduced() -> Self {
        let mut cfg = Self::default();
        cfg.network.d = 256;
        cfg.hyperparams.epochs = 500;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg_err = |e: isac_core::Error| HarnessError::Config(e.to_string());
        self.scene.validate().map_err(cfg_err)?;
        self.sounding.validate(self.scene.m, self.scene.k).map_err(cfg_err)?;
        self.hyperparams.validate().map_err(cfg_err)?;
        if self.network.d == 0 {
            return Err(HarnessError::Config("network.d must be positive".into()));
        }
        if self.eval.realizations == 0 {
            return Err(HarnessError::Config("eval.realizations must be at least 1".into()));
        }
        if !(self.eval.grid_step_deg > 0.0 && self.eval.grid_step_deg <= 0.5) {
            return Err(HarnessError::Config("eval.grid_step_deg must be in (0, 0.5]".into()));
        }
        if let Some(s) = &self.sweep {
            if s.is_empty() {
                return Err(HarnessError::Config(format!("sweep over {} has no values", s.axis())));
            }
            if let Sweep::KTest(ks) = s {
                if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > self.sounding.lp) {
                    return Err(HarnessError::Config(format!("k_test value {k} outside 1..=L_p")));
                }
            }
        }
        Ok(())
    }

    pub fn input_scaling(&self) -> InputScaling {
        match self.network.input_scaling {
            ScalingMode::NoiseWhitening => {
                InputScaling::noise_whitening(self.sounding.lp, self.sounding.lr, self.scene.m, self.scene.nu2_w())
            }
            ScalingMode::None => InputScaling::default(),
        }
    }
}
