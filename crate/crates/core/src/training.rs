//! Penalized training objective, Adam, and the sampling loop.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{GradBundle, Tape, Var};
use crate::net::NetParams;
use crate::numerics::{db_to_lin, dbw_to_watts, real_lowering, RMat, RngStream};
use crate::scene::{sample_scene, Scene, SceneConfig};
use crate::sounding::{Sounder, SoundingConfig, SoundingData};

/// How the multipliers move during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// `mu` descends `-l` together with the network weights.
    #[default]
    Descent,
    /// `mu` ascends `-l` (classical dual update).
    DualAscent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub lambda_s: f64,
    pub lambda_c: f64,
    /// Odd exponent applied to the constraint slack.
    pub kappa: u32,
    pub epsilon: f64,
    pub gamma_db: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub pd_dbw: f64,
    #[serde(default)]
    pub mu_mode: MuMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda_s: 1e7,
            lambda_c: 1.0,
            kappa: 3,
            epsilon: 1e-3,
            gamma_db: 5.0,
            learning_rate: 1e-4,
            epochs: 2000,
            batches_per_epoch: 10,
            batch_size: 10,
            pd_dbw: 0.0,
            mu_mode: MuMode::Descent,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.kappa == 0 || self.kappa % 2 == 0 {
            return bad("kappa must be an odd positive integer");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.lambda_s > 0.0 && self.lambda_c > 0.0) {
            return bad("loss weights must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return bad("batches must be nonempty");
        }
        if !self.gamma_db.is_finite() || !self.pd_dbw.is_finite() {
            return bad("gamma_db and pd_dbw must be finite");
        }
        Ok(())
    }

    pub fn gamma_lin(&self) -> f64 {
        db_to_lin(self.gamma_db)
    }

    pub fn pd_w(&self) -> f64 {
        dbw_to_watts(self.pd_dbw)
    }
}

/// Nodes of one traced objective `l = lambda_s Q + lambda_c * sum_k |mu_k + eps| max(-h_k, 0) h_k^kappa`.
#[derive(Clone, Debug)]
pub struct LossTrace {
    pub ell: Var,
    /// `lambda_s * Q`.
    pub q_term: Var,
    /// `lambda_c * sum_k (...)`.
    pub penalty: Var,
    /// Linear SINR slacks `gamma_k - 10^(Gamma/10)`.
    pub slack: Vec<f64>,
}

/// Records the objective for one sample on a tape built over `net.tensor_refs()`.
///
/// The network sees only `data`; illumination and SINRs use the true channels in `scene`.
pub fn trace_loss(
    tape: &mut Tape<'_>,
    net: &NetParams,
    data: &SoundingData,
    scene: &Scene,
    hp: &Hyperparams,
    sigma2_w: f64,
) -> Result<LossTrace> {
    check_users(net, data, scene)?;
    let w = net.trace(tape, data, hp.pd_w(), 0.0)?;
    trace_objective(tape, net, w, scene, hp, sigma2_w)
}

fn check_users(net: &NetParams, data: &SoundingData, scene: &Scene) -> Result<()> {
    if net.k() != scene.k() || data.k() != scene.k() {
        return Err(Error::Shape(format!(
            "{} multipliers, {} pilot columns, {} users",
            net.k(),
            data.k(),
            scene.k()
        )));
    }
    Ok(())
}

/// Objective of a traced stacked precoder `w` (`2M x (K+M)`).
fn trace_objective(
    tape: &mut Tape<'_>,
    net: &NetParams,
    w: Var,
    scene: &Scene,
    hp: &Hyperparams,
    sigma2_w: f64,
) -> Result<LossTrace> {
    let k = scene.k();
    let g = tape.left_mul(real_lowering(&scene.g_rows()), w)?;
    let g = tape.pair_abs_sq(g)?;
    let mut q_m = Vec::with_capacity(scene.t());
    for m in 0..scene.t() {
        q_m.push(tape.row_sum(g, m)?);
    }
    let q = tape.min(&q_m)?;
    let q_term = tape.scale(q, hp.lambda_s);

    let mu = tape.param(net.mu_index())?;
    let mut penalty = tape.constant(0.0);
    let mut slack = Vec::with_capacity(k);
    if k > 0 {
        let p = tape.left_mul(real_lowering(&scene.h), w)?;
        let p = tape.pair_abs_sq(p)?;
        for i in 0..k {
            let num = tape.entry(p, i, i)?;
            let total = tape.row_sum(p, i)?;
            let rest = tape.sub(total, num)?;
            let den = tape.add_const(rest, sigma2_w);
            let gamma = tape.div(num, den)?;
            let h = tape.add_const(gamma, -hp.gamma_lin());
            slack.push(tape.scalar(h));
            let neg = tape.scale(h, -1.0);
            let viol = tape.max0(neg);
            let hk = tape.powi(h, hp.kappa as i32);
            let mu_k = tape.entry(mu, i, 0)?;
            let shifted = tape.add_const(mu_k, hp.epsilon);
            let weight = tape.abs(shifted);
            let term = tape.mul(weight, viol)?;
            let term = tape.mul(term, hk)?;
            penalty = tape.add(penalty, term)?;
        }
    }
    let penalty = tape.scale(penalty, hp.lambda_c);
    let ell = tape.add(q_term, penalty)?;
    Ok(LossTrace { ell, q_term, penalty, slack })
}

/// Per-sample objective values without gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub ell: f64,
    pub q_term: f64,
    pub penalty: f64,
    pub slack: Vec<f64>,
}

impl LossValue {
    fn read(tape: &Tape<'_>, tr: LossTrace) -> Self {
        Self { ell: tape.scalar(tr.ell), q_term: tape.scalar(tr.q_term), penalty: tape.scalar(tr.penalty), slack: tr.slack }
    }
}

pub fn loss(net: &NetParams, data: &SoundingData, scene: &Scene, hp: &Hyperparams, sigma2_w: f64) -> Result<LossValue> {
    let mut tape = Tape::new(net.tensor_refs());
    let tr = trace_loss(&mut tape, net, data, scene, hp, sigma2_w)?;
    Ok(LossValue::read(&tape, tr))
}

/// Objective value and the gradient of `-l` for one sample.
pub fn neg_loss_grad(
    net: &NetParams,
    data: &SoundingData,
    scene: &Scene,
    hp: &Hyperparams,
    sigma2_w: f64,
) -> Result<(LossValue, GradBundle)> {
    let (mut values, grads) = batch_neg_loss_grad(net, &[(scene.clone(), data.clone())], hp, sigma2_w)?;
    Ok((values.remove(0), grads))
}

/// Per-sample objective values and the gradient of the batch mean of `-l`, traced on one tape.
pub fn batch_neg_loss_grad(
    net: &NetParams,
    batch: &[(Scene, SoundingData)],
    hp: &Hyperparams,
    sigma2_w: f64,
) -> Result<(Vec<LossValue>, GradBundle)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for (scene, data) in batch {
        check_users(net, data, scene)?;
    }
    let params = net.tensor_refs();
    let mut grads = GradBundle::zeros_like(&params);
    let mut tape = Tape::new(params);
    let inputs: Vec<&SoundingData> = batch.iter().map(|(_, d)| d).collect();
    let ws = net.trace_batch(&mut tape, &inputs, hp.pd_w(), 0.0)?;
    let mut traces = Vec::with_capacity(batch.len());
    let mut total = tape.constant(0.0);
    for (w, (scene, _)) in ws.into_iter().zip(batch) {
        let tr = trace_objective(&mut tape, net, w, scene, hp, sigma2_w)?;
        total = tape.add(total, tr.ell)?;
        traces.push(tr);
    }
    tape.backward(total, -1.0 / batch.len() as f64, &mut grads)?;
    let values = traces.into_iter().map(|tr| LossValue::read(&tape, tr)).collect();
    Ok((values, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One row of the loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Batch mean of `-l`.
    pub neg_loss: f64,
    pub q_term: f64,
    pub penalty: f64,
    /// Smallest SINR slack over the batch.
    pub min_slack: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: NetParams,
    pub first_moment: Vec<RMat>,
    pub second_moment: Vec<RMat>,
    pub step: u64,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(net: NetParams) -> Self {
        let zeros: Vec<RMat> = net.tensor_refs().iter().map(|t| Array2::zeros(t.dim())).collect();
        Self { net, first_moment: zeros.clone(), second_moment: zeros, step: 0, history: Vec::new() }
    }
}

/// Bias-corrected Adam step descending `grad`.
pub fn adam_step(state: &mut TrainState, grad: &GradBundle, lr: f64, cfg: AdamConfig) -> Result<()> {
    let n = state.first_moment.len();
    if grad.tensors.len() != n || grad.tensors.iter().zip(&state.first_moment).any(|(g, m)| g.dim() != m.dim()) {
        return Err(Error::Shape("gradient does not match the optimizer state".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let params = state.net.tensors_mut();
    for (((p, g), m), v) in params
        .into_iter()
        .zip(&grad.tensors)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
    }
    Ok(())
}

/// Draws one training example. The stream is forked per sample so the draw does not depend on
/// scheduling.
pub fn draw_sample(scene_cfg: &SceneConfig, sounder: &Sounder, rng: &RngStream) -> Result<(Scene, SoundingData)> {
    let mut scene_rng = rng.fork(0);
    let mut noise_rng = rng.fork(1);
    let scene = sample_scene(scene_cfg, &mut scene_rng)?;
    let data = sounder.sound(&scene, &mut noise_rng)?;
    Ok((scene, data))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: NetParams,
    pub history: Vec<LossRecord>,
}

pub fn train(
    net: NetParams,
    scene_cfg: &SceneConfig,
    sounding_cfg: &SoundingConfig,
    hp: &Hyperparams,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    train_with_progress(net, scene_cfg, sounding_cfg, hp, rng, |_| {})
}

/// Runs `epochs x batches_per_epoch` Adam steps, each on `batch_size` fresh examples.
///
/// Samples are drawn in parallel from per-sample streams; the whole batch is then traced on one
/// tape, so results do not depend on the thread count.
pub fn train_with_progress(
    net: NetParams,
    scene_cfg: &SceneConfig,
    sounding_cfg: &SoundingConfig,
    hp: &Hyperparams,
    rng: &RngStream,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    hp.validate()?;
    scene_cfg.validate()?;
    net.validate()?;
    if net.m != scene_cfg.m || net.k() != scene_cfg.k {
        return Err(Error::InvalidArgument(format!(
            "network is M={}, K={} but the scene is M={}, K={}",
            net.m,
            net.k(),
            scene_cfg.m,
            scene_cfg.k
        )));
    }
    let sounder = Sounder::new(sounding_cfg, scene_cfg.m, scene_cfg.k, scene_cfg.nu2_w())?;
    let sigma2 = scene_cfg.sigma2_w();
    let adam = AdamConfig::default();
    let mu_index = net.mu_index();
    let mut state = TrainState::new(net);
    let batch_rng = rng.fork(0x7261_696e);

    for epoch in 0..hp.epochs {
        for batch in 0..hp.batches_per_epoch {
            let step_rng = batch_rng.fork((epoch * hp.batches_per_epoch + batch) as u64);
            let samples: Vec<(Scene, SoundingData)> = (0..hp.batch_size)
                .into_par_iter()
                .map(|i| draw_sample(scene_cfg, &sounder, &step_rng.fork(i as u64)))
                .collect::<Result<_>>()?;
            let (values, grad) = batch_neg_loss_grad(&state.net, &samples, hp, sigma2)?;

            let inv = 1.0 / hp.batch_size as f64;
            let (mut neg_loss, mut q_term, mut penalty, mut min_slack) = (0.0, 0.0, 0.0, f64::INFINITY);
            for v in values {
                neg_loss -= v.ell * inv;
                q_term += v.q_term * inv;
                penalty += v.penalty * inv;
                min_slack = v.slack.iter().copied().fold(min_slack, f64::min);
            }
            if !neg_loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { step: state.step, loss: neg_loss });
            }
            let mut grad = grad;
            if hp.mu_mode == MuMode::DualAscent {
                grad.tensors[mu_index].mapv_inplace(|g| -g);
            }
            let record = LossRecord {
                epoch,
                batch,
                neg_loss,
                q_term,
                penalty,
                min_slack,
                grad_norm: grad.norm(),
            };
            adam_step(&mut state, &grad, hp.learning_rate, adam)?;
            progress(&record);
            state.history.push(record);
        }
    }
    Ok(TrainOutcome { net: state.net, history: state.history })
}
