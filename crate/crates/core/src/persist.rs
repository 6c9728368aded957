//! On-disk formats.
//!
//! Checkpoint: the 8-byte magic `ISACCKPT`, a little-endian `u32` format version, a `u64`
//! header length, the JSON header, then every tensor of [`NetParams::tensor_refs`] as raw
//! little-endian `f64` in row-major order (multipliers last).
//!
//! Dataset cache: a `.bin` file of little-endian `f64` records plus a JSON sidecar
//! describing the record layout.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, InputScaling, Layer, MlpParams, NetParams};
use crate::numerics::{CMat, RMat, C64};
use crate::scene::{Scene, Target};
use crate::sounding::SoundingData;

const MAGIC: &[u8; 8] = b"ISACCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub scaling: InputScaling,
    /// Activations of the COMM, SENS and ISAC layers.
    pub activations: [Vec<Activation>; 3],
    /// `(rows, cols)` of each blob, in file order.
    pub shapes: Vec<(usize, usize)>,
    pub seed: u64,
    /// Free-form training record (hyperparameters, configs).
    #[serde(default)]
    pub training: serde_json::Value,
}

fn header_for(net: &NetParams, seed: u64, training: serde_json::Value) -> CheckpointHeader {
    let acts = |p: &MlpParams| p.layers.iter().map(|l| l.activation).collect::<Vec<_>>();
    CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        m: net.m,
        k: net.k(),
        d: net.d,
        scaling: net.scaling,
        activations: [acts(&net.comm), acts(&net.sens), acts(&net.isac)],
        shapes: net.tensor_refs().iter().map(|t| t.dim()).collect(),
        seed,
        training,
    }
}

pub fn encode_checkpoint(net: &NetParams, seed: u64, training: serde_json::Value) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_for(net, seed, training))?;
    let mut out = Vec::with_capacity(24 + header.len() + 8 * (net.param_count() + net.k()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in net.tensor_refs() {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetParams, CheckpointHeader)> {
    let fmt = |msg: String| Error::Format(msg);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| fmt("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let mut rest = &bytes[20 + hlen..];
    let total: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
    if rest.len() != 8 * total {
        return Err(fmt(format!("expected {} parameter bytes, found {}", 8 * total, rest.len())));
    }
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for &(r, c) in &header.shapes {
        let (chunk, tail) = rest.split_at(8 * r * c);
        rest = tail;
        let vals: Vec<f64> = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push(Array2::from_shape_vec((r, c), vals).expect("length checked"));
    }
    let net = assemble(&header, tensors)?;
    Ok((net, header))
}

fn assemble(header: &CheckpointHeader, tensors: Vec<RMat>) -> Result<NetParams> {
    let n_layers: usize = header.activations.iter().map(Vec::len).sum();
    if tensors.len() != 2 * n_layers + 1 {
        return Err(Error::Format(format!("{} tensors for {} layers", tensors.len(), n_layers)));
    }
    let mut it = tensors.into_iter();
    let mut mlp = |acts: &[Activation]| -> Result<MlpParams> {
        let layers = acts
            .iter()
            .map(|&activation| {
                let weight = it.next().expect("counted");
                let bias = it.next().expect("counted");
                Layer { weight, bias, activation }
            })
            .collect();
        MlpParams::new(layers)
    };
    let comm = mlp(&header.activations[0])?;
    let sens = mlp(&header.activations[1])?;
    let isac = mlp(&header.activations[2])?;
    let mu = it.next().expect("counted");
    let net = NetParams { comm, sens, isac, mu, d: header.d, m: header.m, scaling: header.scaling };
    net.validate()?;
    if net.k() != header.k {
        return Err(Error::Format(format!("header K={} but {} multipliers", header.k, net.k())));
    }
    Ok(net)
}

pub fn save_checkpoint(path: &Path, net: &NetParams, seed: u64, training: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(net, seed, training)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetParams, CheckpointHeader)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Dataset cache sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub count: usize,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub seed: u64,
    /// Field order of one record; complex matrices are row-major `(re, im)` pairs.
    pub layout: Vec<String>,
    pub record_len: usize,
}

fn record_len(m: usize, k: usize, t: usize) -> usize {
    2 * m * k + 2 * m * m + 2 * k * m + 6 * t + 2 * k
}

fn layout(m: usize, k: usize, t: usize) -> Vec<String> {
    vec![
        format!("y_tilde complex {m}x{k}"),
        format!("z_tilde complex {m}x{m}"),
        format!("h complex {k}x{m}"),
        format!("targets {t}x[theta_rad, range_m, alpha_re, alpha_im, beta_re, beta_im]"),
        format!("user_positions_m {k}x[x, y]"),
    ]
}

fn push_cmat(out: &mut Vec<u8>, a: &CMat) {
    for z in a.as_array().iter() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

/// Sidecar path for a dataset file: `name.bin` -> `name.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn save_dataset(bin: &Path, samples: &[(Scene, SoundingData)], seed: u64) -> Result<DatasetMeta> {
    let (m, k, t) = match samples.first() {
        Some((s, _)) => (s.m(), s.k(), s.t()),
        None => return Err(Error::InvalidArgument("empty dataset".into())),
    };
    let mut out = Vec::with_capacity(8 * record_len(m, k, t) * samples.len());
    for (scene, data) in samples {
        if (scene.m(), scene.k(), scene.t()) != (m, k, t) || data.y.shape() != (m, k) || data.z.shape() != (m, m) {
            return Err(Error::Shape("dataset records must share M, K and T".into()));
        }
        push_cmat(&mut out, &data.y);
        push_cmat(&mut out, &data.z);
        push_cmat(&mut out, &scene.h);
        for tg in &scene.targets {
            for v in [tg.theta_rad, tg.range_m, tg.alpha.re, tg.alpha.im, tg.beta.re, tg.beta.im] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for i in 0..k {
            let p = scene.user_positions.get(i).copied().unwrap_or([f64::NAN, f64::NAN]);
            out.extend_from_slice(&p[0].to_le_bytes());
            out.extend_from_slice(&p[1].to_le_bytes());
        }
    }
    let meta = DatasetMeta {
        format_version: 1,
        count: samples.len(),
        m,
        k,
        t,
        seed,
        layout: layout(m, k, t),
        record_len: record_len(m, k, t),
    };
    fs::write(bin, &out)?;
    fs::write(sidecar_path(bin), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_dataset(bin: &Path) -> Result<(Vec<(Scene, SoundingData)>, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_slice(&fs::read(sidecar_path(bin))?)?;
    let (m, k, t) = (meta.m, meta.k, meta.t);
    if meta.record_len != record_len(m, k, t) {
        return Err(Error::Format("sidecar record length does not match its shapes".into()));
    }
    let bytes = fs::read(bin)?;
    if bytes.len() != 8 * meta.record_len * meta.count {
        return Err(Error::Format(format!("expected {} bytes, found {}", 8 * meta.record_len * meta.count, bytes.len())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let mut out = Vec::with_capacity(meta.count);
    for rec in vals.chunks_exact(meta.record_len) {
        let mut pos = 0;
        let mut cmat = |r: usize, c: usize| -> Result<CMat> {
            let data: Vec<C64> = rec[pos..pos + 2 * r * c].chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
            pos += 2 * r * c;
            CMat::from_row_major(r, c, &data)
        };
        let y = cmat(m, k)?;
        let z = cmat(m, m)?;
        let h = cmat(k, m)?;
        let mut pos = 2 * m * k + 2 * m * m + 2 * k * m;
        let mut targets = Vec::with_capacity(t);
        for _ in 0..t {
            let f = &rec[pos..pos + 6];
            targets.push(Target::new(f[0], f[1], C64::new(f[2], f[3]), C64::new(f[4], f[5]), m));
            pos += 6;
        }
        let user_positions = (0..k).map(|i| [rec[pos + 2 * i], rec[pos + 2 * i + 1]]).collect();
        out.push((Scene { h, targets, user_positions }, SoundingData::new(y, z)?));
    }
    Ok((out, meta))
}
