//! Column-shared MLP precoder.
//!
//! Pipeline for one realization:
//!
//! ```text
//! Y~ (M x K) --C2R--> 2M x K --COMM-MLP--> d x K --+
//!                                                   +--> ISAC-MLP --> 2M x (K+M) --R2C--> W^ --NL--> W
//! Z~ (M x M) --C2R--> 2M x M --SENS-MLP--> d x M --+
//! ```
//!
//! Every MLP acts on one column at a time with shared weights, so the same
//! parameters serve any number of users. The ISAC-MLP sees the communication
//! columns first, so output column `k < K` is `c_k` and the rest form `S`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Tape, Var};
use crate::metrics::Precoder;
use crate::numerics::{c2r_stack, r2c_merge, RMat, RngStream};
use crate::sounding::SoundingData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: &mut RMat) {
        if self == Activation::Relu {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }
}

/// Affine layer `y = act(W x + b)`; `weight` is `out x in`, `bias` is `out x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: RMat,
    pub bias: RMat,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.dim() != (l.weight.nrows(), 1) {
                return Err(Error::Shape(format!("layer {i}: bias {:?} for weight {:?}", l.bias.dim(), l.weight.dim())));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::Shape(format!("layer {i} input does not chain with layer {}", i - 1)));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut RngStream) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(io, &activation)| {
                let bound = (1.0 / io[0] as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((io[1], io[0]), || rng.uniform(-bound, bound)),
                    bias: Array2::zeros((io[1], 1)),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.nrows()
    }

    /// Applies the MLP to every column of `x`.
    pub fn forward_cols(&self, x: &RMat) -> Result<RMat> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Shape(format!("MLP expects {} inputs, got {}", self.input_dim(), x.nrows())));
        }
        let mut h = x.to_owned();
        for l in &self.layers {
            h = l.weight.dot(&h) + &l.bias;
            l.activation.apply(&mut h);
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn trace(&self, tape: &mut Tape<'_>, first_tensor: usize, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.param(first_tensor + 2 * i)?;
            let b = tape.param(first_tensor + 2 * i + 1)?;
            h = tape.affine(w, b, h)?;
            if l.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Single-vector MLP evaluation.
pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    let col = Array2::from_shape_vec((x.len(), 1), x.to_vec()).expect("column shape");
    Ok(p.forward_cols(&col)?.into_raw_vec_and_offset().0)
}

/// Fixed gains applied to the stacked inputs before the first layers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub pilot_gain: f64,
    pub echo_gain: f64,
}

impl Default for InputScaling {
    fn default() -> Self {
        Self { pilot_gain: 1.0, echo_gain: 1.0 }
    }
}

impl InputScaling {
    /// Divides each input by the standard deviation of its noise after compression:
    /// `sqrt(L_p nu^2)` for `Y~` and `sqrt((L_r/M) nu^2)` for `Z~`.
    pub fn noise_whitening(lp: usize, lr: usize, m: usize, nu2_w: f64) -> Self {
        Self {
            pilot_gain: 1.0 / (lp as f64 * nu2_w).sqrt(),
            echo_gain: 1.0 / (lr as f64 / m as f64 * nu2_w).sqrt(),
        }
    }
}

/// All trainable state: the three MLPs and the Lagrange multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub comm: MlpParams,
    pub sens: MlpParams,
    pub isac: MlpParams,
    /// `K x 1`.
    pub mu: RMat,
    pub d: usize,
    pub m: usize,
    pub scaling: InputScaling,
}

impl NetParams {
    /// Default architecture: COMM/SENS `2M -> 2d -> d`, ISAC `d -> d -> d -> 2d -> 2M`.
    pub fn init(m: usize, k: usize, d: usize, rng: &mut RngStream) -> Self {
        use Activation::{Identity, Relu};
        let mut r_comm = rng.fork(1);
        let mut r_sens = rng.fork(2);
        let mut r_isac = rng.fork(3);
        Self {
            comm: MlpParams::init(&[2 * m, 2 * d, d], &[Relu, Relu], &mut r_comm),
            sens: MlpParams::init(&[2 * m, 2 * d, d], &[Relu, Relu], &mut r_sens),
            isac: MlpParams::init(&[d, d, d, 2 * d, 2 * m], &[Relu, Relu, Relu, Identity], &mut r_isac),
            mu: Array2::ones((k, 1)),
            d,
            m,
            scaling: InputScaling::default(),
        }
    }

    pub fn with_scaling(mut self, scaling: InputScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, mlp, input, output) in [
            ("comm", &self.comm, 2 * self.m, self.d),
            ("sens", &self.sens, 2 * self.m, self.d),
            ("isac", &self.isac, self.d, 2 * self.m),
        ] {
            MlpParams::new(mlp.layers.clone())?;
            if mlp.input_dim() != input || mlp.output_dim() != output {
                return Err(Error::Shape(format!(
                    "{name} MLP maps {} -> {}, expected {input} -> {output}",
                    mlp.input_dim(),
                    mlp.output_dim()
                )));
            }
        }
        if self.mu.ncols() != 1 {
            return Err(Error::Shape("multipliers must be a column".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.mu.nrows()
    }

    /// Network weights and biases, excluding the multipliers.
    pub fn param_count(&self) -> usize {
        self.comm.param_count() + self.sens.param_count() + self.isac.param_count()
    }

    /// All tensors in declaration order: comm, sens, isac (weight then bias per layer), then `mu`.
    pub fn tensor_refs(&self) -> Vec<&RMat> {
        let mut out = Vec::new();
        for mlp in [&self.comm, &self.sens, &self.isac] {
            for l in &mlp.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out.push(&self.mu);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut RMat> {
        let mut out = Vec::new();
        for mlp in [&mut self.comm, &mut self.sens, &mut self.isac] {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.mu);
        out
    }

    /// Index of `mu` in [`Self::tensor_refs`].
    pub fn mu_index(&self) -> usize {
        2 * (self.comm.layers.len() + self.sens.layers.len() + self.isac.layers.len())
    }

    fn check_inputs(&self, data: &SoundingData) -> Result<()> {
        if data.m() != self.m || data.z.shape() != (self.m, self.m) {
            return Err(Error::Shape(format!(
                "network built for M={}, got pilots {:?} and echoes {:?}",
                self.m,
                data.y.shape(),
                data.z.shape()
            )));
        }
        Ok(())
    }

    /// Unnormalized stacked output `W~` (`2M x (K+M)`).
    pub fn raw_output(&self, data: &SoundingData) -> Result<RMat> {
        self.check_inputs(data)?;
        let y = c2r_stack(&data.y) * self.scaling.pilot_gain;
        let z = c2r_stack(&data.z) * self.scaling.echo_gain;
        let lifted_y = self.comm.forward_cols(&y)?;
        let lifted_z = self.sens.forward_cols(&z)?;
        let lifted = ndarray::concatenate(ndarray::Axis(1), &[lifted_y.view(), lifted_z.view()])
            .expect("both lifts have d rows");
        self.isac.forward_cols(&lifted)
    }

    /// Records the forward pass on `tape` (whose parameters must be [`Self::tensor_refs`]) and
    /// returns the normalized stacked precoder node. `eps` guards the norm in training.
    pub fn trace(&self, tape: &mut Tape<'_>, data: &SoundingData, pd_w: f64, eps: f64) -> Result<Var> {
        Ok(self.trace_batch(tape, &[data], pd_w, eps)?.remove(0))
    }

    /// Batched [`Self::trace`]: all pilot columns go through COMM in one product, all echo
    /// columns through SENS, and the lifted columns through ISAC, before the output is split
    /// and normalized per sample.
    pub fn trace_batch(&self, tape: &mut Tape<'_>, batch: &[&SoundingData], pd_w: f64, eps: f64) -> Result<Vec<Var>> {
        if tape.num_params() != self.mu_index() + 1 {
            return Err(Error::Shape("tape parameters do not match the network".into()));
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        for data in batch {
            self.check_inputs(data)?;
        }
        let stack = |parts: Vec<RMat>| {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts match")
        };
        let y_all = stack(batch.iter().map(|d| c2r_stack(&d.y) * self.scaling.pilot_gain).collect());
        let z_all = stack(batch.iter().map(|d| c2r_stack(&d.z) * self.scaling.echo_gain).collect());
        let n_users = y_all.ncols();
        let y = tape.input(y_all);
        let z = tape.input(z_all);
        let n_comm = 2 * self.comm.layers.len();
        let n_sens = 2 * self.sens.layers.len();
        let ly = self.comm.trace(tape, 0, y)?;
        let lz = self.sens.trace(tape, n_comm, z)?;
        let lifted = tape.concat_cols(ly, lz)?;
        let raw = self.isac.trace(tape, n_comm + n_sens, lifted)?;

        let mut out = Vec::with_capacity(batch.len());
        let (mut user_off, mut sens_off) = (0, n_users);
        for data in batch {
            let k = data.k();
            let comm = tape.slice_cols(raw, user_off, k)?;
            let sens = tape.slice_cols(raw, sens_off, self.m)?;
            user_off += k;
            sens_off += self.m;
            let w = tape.concat_cols(comm, sens)?;
            out.push(tape.normalize(w, pd_w.sqrt(), eps)?);
        }
        Ok(out)
    }
}

/// Maps sounding data to a precoder on the power sphere `||W||_F^2 = P_d`.
pub fn precode(net: &NetParams, data: &SoundingData, pd_w: f64) -> Result<Precoder> {
    let raw = net.raw_output(data)?;
    Precoder::normalized(r2c_merge(&raw)?, data.k(), pd_w)
}
