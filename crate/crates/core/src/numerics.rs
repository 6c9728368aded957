//! Dense complex matrices, reproducible random streams and real/complex restacking.
//!
//! Every channel, precoder and received signal in the crate is a [`CMat`]. The
//! neural network works on real data, so [`c2r_stack`] and [`r2c_merge`] move
//! between a complex `M x N` matrix and its `2M x N` real stacking
//! `[Re; Im]`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Real dense matrix.
pub type RMat = Array2<f64>;

/// Dense complex matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat(Array2<C64>);

impl CMat {
    /// Wraps an array, rejecting NaN or infinite entries.
    pub fn new(data: Array2<C64>) -> Result<Self> {
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("complex matrix entry".into()));
        }
        Ok(Self(data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Array2::zeros((rows, cols)))
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::from_diag_elem(n, C64::new(1.0, 0.0)))
    }

    /// Builds a matrix from a closure of `(row, col)`. Panics on non-finite output.
    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut((usize, usize)) -> C64) -> Self {
        Self::new(Array2::from_shape_fn((rows, cols), f)).expect("from_fn produced a non-finite entry")
    }

    /// Column vector (`n x 1`) from a slice.
    pub fn col_vector(v: &[C64]) -> Self {
        Self::from_fn(v.len(), 1, |(i, _)| v[i])
    }

    /// Row-major construction from a flat slice.
    pub fn from_row_major(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("length checked"))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[[r, c]]
    }

    pub fn view(&self) -> ArrayView2<'_, C64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<C64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<C64> {
        self.0
    }

    pub fn column(&self, c: usize) -> ArrayView1<'_, C64> {
        self.0.column(c)
    }

    pub fn row(&self, r: usize) -> ArrayView1<'_, C64> {
        self.0.row(r)
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &CMat) -> Result<CMat> {
        if self.cols() != rhs.rows() {
            return Err(Error::Shape(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        CMat::new(self.0.dot(&rhs.0))
    }

    /// Conjugate transpose.
    pub fn h(&self) -> CMat {
        CMat(self.0.t().mapv(|z| z.conj()))
    }

    /// Plain transpose.
    pub fn t(&self) -> CMat {
        CMat(self.0.t().to_owned())
    }

    pub fn conj(&self) -> CMat {
        CMat(self.0.mapv(|z| z.conj()))
    }

    pub fn scale(&self, a: C64) -> CMat {
        CMat(self.0.mapv(|z| z * a))
    }

    pub fn scale_re(&self, a: f64) -> CMat {
        CMat(self.0.mapv(|z| z * a))
    }

    pub fn add(&self, rhs: &CMat) -> Result<CMat> {
        self.check_same(rhs)?;
        Ok(CMat(&self.0 + &rhs.0))
    }

    pub fn sub(&self, rhs: &CMat) -> Result<CMat> {
        self.check_same(rhs)?;
        Ok(CMat(&self.0 - &rhs.0))
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> CMat {
        CMat(self.0.slice(s![.., start..end]).to_owned())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, rhs: &CMat) -> f64 {
        assert_eq!(self.shape(), rhs.shape());
        self.0
            .iter()
            .zip(rhs.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm(self)
    }

    fn check_same(&self, rhs: &CMat) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape(), rhs.shape())));
        }
        Ok(())
    }
}

/// Reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha20 with the stream id mapped onto the cipher's stream
/// selector, so distinct ids never overlap.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// An independent child stream for `tag`; does not advance `self`.
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(1))))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform phase in `[0, 2pi)`.
    pub fn phase(&mut self) -> f64 {
        self.uniform(0.0, std::f64::consts::TAU)
    }

    /// Circularly-symmetric complex Gaussian with the given total variance.
    pub fn cgauss(&mut self, variance: f64) -> C64 {
        let sd = (variance / 2.0).sqrt();
        C64::new(sd * self.standard_normal(), sd * self.standard_normal())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Matrix of i.i.d. `CN(0, variance)` entries.
pub fn sample_cgauss(rng: &mut RngStream, rows: usize, cols: usize, variance: f64) -> Result<CMat> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "complex Gaussian variance must be positive, got {variance}"
        )));
    }
    let mut data = Array2::zeros((rows, cols));
    for z in data.iter_mut() {
        *z = rng.cgauss(variance);
    }
    CMat::new(data)
}

/// Stacks real parts over imaginary parts: column `n` becomes `[Re(x_n); Im(x_n)]`.
pub fn c2r_stack(x: &CMat) -> RMat {
    let (m, n) = x.shape();
    let mut out = Array2::zeros((2 * m, n));
    for ((i, j), z) in x.as_array().indexed_iter() {
        out[[i, j]] = z.re;
        out[[i + m, j]] = z.im;
    }
    out
}

/// Inverse of [`c2r_stack`]: top half + j * bottom half.
pub fn r2c_merge(x: &RMat) -> Result<CMat> {
    let (rows, n) = x.dim();
    if rows % 2 != 0 {
        return Err(Error::Shape(format!("r2c_merge needs an even row count, got {rows}")));
    }
    let m = rows / 2;
    CMat::new(Array2::from_shape_fn((m, n), |(i, j)| C64::new(x[[i, j]], x[[i + m, j]])))
}

pub fn frob_norm(x: &CMat) -> f64 {
    x.as_array().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Real lowering of left-multiplication by a complex matrix.
///
/// For complex `A` (`p x q`) returns the `2p x 2q` real matrix `[[Re A, -Im A], [Im A, Re A]]`,
/// so that `c2r_stack(A X) = lower(A) * c2r_stack(X)`.
pub fn real_lowering(a: &CMat) -> RMat {
    let (p, q) = a.shape();
    let mut out = Array2::zeros((2 * p, 2 * q));
    for ((i, j), z) in a.as_array().indexed_iter() {
        out[[i, j]] = z.re;
        out[[i, j + q]] = -z.im;
        out[[i + p, j]] = z.im;
        out[[i + p, j + q]] = z.re;
    }
    out
}

/// Hermitian inner product `u^H v`.
pub fn inner(u: ArrayView1<'_, C64>, v: ArrayView1<'_, C64>) -> C64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn vec_norm_sqr(u: ArrayView1<'_, C64>) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum()
}

pub fn to_array1(v: &[C64]) -> Array1<C64> {
    Array1::from(v.to_vec())
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_lin(dbm - 30.0)
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    db_to_lin(dbw)
}
