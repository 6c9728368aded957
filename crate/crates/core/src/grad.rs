//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records each primitive with its forward value; [`Tape::backward`]
//! walks the record in reverse and accumulates parameter adjoints into a
//! [`GradBundle`]. Values are real matrices; scalars are `1 x 1`. Complex
//! quantities are lowered to real pairs before they reach the tape (see
//! [`crate::numerics::real_lowering`]).
//!
//! Subgradient conventions at kinks:
//! - `relu'(0) = 0`, `d|x|/dx (0) = 0`, `max(x, 0)` at `x = 0` takes the zero branch;
//! - `min` sends the adjoint to the lowest-index argmin only.
//!
//! Every branch decision is folded into a kink signature so that
//! [`finite_diff_check`] can exclude coordinates whose perturbation crosses a kink.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::numerics::RMat;

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(usize),
    Input,
    /// `w x + b 1^T`
    Affine { w: Var, b: Var, x: Var },
    Relu(Var),
    ConcatCols(Var, Var),
    /// Columns `start..start + y.ncols()` of `x`.
    SliceCols { x: Var, start: usize },
    /// `target * x / (||x||_F + eps)`
    Normalize { x: Var, target: f64, eps: f64, norm: f64 },
    /// Constant left factor.
    LeftMul { a: RMat, x: Var },
    /// `2R x N -> R x N`, `y_ij = x_ij^2 + x_(i+R)j^2`.
    PairAbsSq(Var),
    Entry { x: Var, row: usize, col: usize },
    RowSum { x: Var, row: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Min { args: Vec<Var>, argmin: usize },
    Max0(Var),
    Abs(Var),
    PowI(Var, i32),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: RMat,
}

/// Gradients congruent with a parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub tensors: Vec<RMat>,
}

impl GradBundle {
    pub fn zeros_like(params: &[&RMat]) -> Self {
        Self { tensors: params.iter().map(|p| Array2::zeros(p.dim())).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &GradBundle) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Forward record of one scalar function evaluation.
pub struct Tape<'p> {
    params: Vec<&'p RMat>,
    nodes: Vec<Node>,
    signature: u64,
    margin: f64,
}

fn scalar(v: f64) -> RMat {
    Array2::from_elem((1, 1), v)
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

impl<'p> Tape<'p> {
    pub fn new(params: Vec<&'p RMat>) -> Self {
        Self { params, nodes: Vec::new(), signature: 0xcbf2_9ce4_8422_2325, margin: f64::INFINITY }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_refs(&self) -> &[&'p RMat] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &RMat {
        match self.nodes[v.0].op {
            Op::Param(i) => self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Hash of every branch decision taken so far.
    pub fn kink_signature(&self) -> u64 {
        self.signature
    }

    /// Smallest distance of any branch argument to its kink.
    pub fn kink_margin(&self) -> f64 {
        self.margin
    }

    fn record_branch(&mut self, taken: bool, distance: f64) {
        self.signature = (self.signature ^ taken as u64).wrapping_mul(FNV_PRIME);
        self.margin = self.margin.min(distance.abs());
    }

    fn push(&mut self, op: Op, value: RMat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn dim(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn param(&mut self, index: usize) -> Result<Var> {
        if index >= self.params.len() {
            return Err(Error::InvalidArgument(format!("no parameter {index}")));
        }
        Ok(self.push(Op::Param(index), Array2::zeros((0, 0))))
    }

    pub fn input(&mut self, value: RMat) -> Var {
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Input, scalar(value))
    }

    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (out, inp) = self.dim(w);
        if self.dim(x).0 != inp || self.dim(b) != (out, 1) {
            return Err(Error::Shape(format!(
                "affine: w {:?}, b {:?}, x {:?}",
                self.dim(w),
                self.dim(b),
                self.dim(x)
            )));
        }
        let mut y = self.value(w).dot(self.value(x));
        y += self.value(b);
        Ok(self.push(Op::Affine { w, b, x }, y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = xv.mapv(|v| v.max(0.0));
        let mut sig = self.signature;
        let mut margin = self.margin;
        for &v in xv.iter() {
            sig = (sig ^ (v > 0.0) as u64).wrapping_mul(FNV_PRIME);
            margin = margin.min(v.abs());
        }
        self.signature = sig;
        self.margin = margin;
        self.push(Op::Relu(x), y)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dim(a).0 != self.dim(b).0 {
            return Err(Error::Shape(format!("concat: {:?} and {:?}", self.dim(a), self.dim(b))));
        }
        let y = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        Ok(self.push(Op::ConcatCols(a, b), y))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.dim(x).1;
        if start + len > n {
            return Err(Error::Shape(format!("columns {start}..{} of {n}", start + len)));
        }
        let y = self.value(x).slice(ndarray::s![.., start..start + len]).to_owned();
        Ok(self.push(Op::SliceCols { x, start }, y))
    }

    /// Rescales `x` to Frobenius norm `target` (exactly when `eps = 0`).
    pub fn normalize(&mut self, x: Var, target: f64, eps: f64) -> Result<Var> {
        let norm = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm + eps == 0.0 {
            return Err(Error::DegenerateOutput);
        }
        let y = self.value(x) * (target / (norm + eps));
        Ok(self.push(Op::Normalize { x, target, eps, norm }, y))
    }

    pub fn left_mul(&mut self, a: RMat, x: Var) -> Result<Var> {
        if a.ncols() != self.dim(x).0 {
            return Err(Error::Shape(format!("left_mul: {:?} by {:?}", a.dim(), self.dim(x))));
        }
        let y = a.dot(self.value(x));
        Ok(self.push(Op::LeftMul { a, x }, y))
    }

    pub fn pair_abs_sq(&mut self, x: Var) -> Result<Var> {
        let (rows, n) = self.dim(x);
        if rows % 2 != 0 {
            return Err(Error::Shape(format!("pair_abs_sq needs even rows, got {rows}")));
        }
        let r = rows / 2;
        let xv = self.value(x);
        let y = Array2::from_shape_fn((r, n), |(i, j)| xv[[i, j]].powi(2) + xv[[i + r, j]].powi(2));
        Ok(self.push(Op::PairAbsSq(x), y))
    }

    pub fn entry(&mut self, x: Var, row: usize, col: usize) -> Result<Var> {
        let (r, c) = self.dim(x);
        if row >= r || col >= c {
            return Err(Error::Shape(format!("entry ({row},{col}) of {r}x{c}")));
        }
        let v = self.value(x)[[row, col]];
        Ok(self.push(Op::Entry { x, row, col }, scalar(v)))
    }

    pub fn row_sum(&mut self, x: Var, row: usize) -> Result<Var> {
        if row >= self.dim(x).0 {
            return Err(Error::Shape(format!("row {row} of {:?}", self.dim(x))));
        }
        let v = self.value(x).row(row).sum();
        Ok(self.push(Op::RowSum { x, row }, scalar(v)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dim(a) != self.dim(b) {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.dim(a), self.dim(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a) - self.value(b);
        Ok(self.push(Op::Sub(a, b), y))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a) * self.value(b);
        Ok(self.push(Op::Mul(a, b), y))
    }

    /// Element-wise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let y = self.value(a) / self.value(b);
        Ok(self.push(Op::Div(a, b), y))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x) + c;
        self.push(Op::AddConst(x), y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x) * c;
        self.push(Op::Scale(x, c), y)
    }

    /// Minimum of scalars; ties resolve to the lowest index.
    pub fn min(&mut self, args: &[Var]) -> Result<Var> {
        if args.is_empty() {
            return Err(Error::InvalidArgument("min over an empty set".into()));
        }
        let vals: Vec<f64> = args.iter().map(|&a| self.scalar(a)).collect();
        let mut argmin = 0;
        for (i, &v) in vals.iter().enumerate() {
            if v < vals[argmin] {
                argmin = i;
            }
        }
        let second = vals
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != argmin)
            .map(|(_, &v)| v - vals[argmin])
            .fold(f64::INFINITY, f64::min);
        self.signature = (self.signature ^ argmin as u64).wrapping_mul(FNV_PRIME);
        self.margin = self.margin.min(second);
        Ok(self.push(Op::Min { args: args.to_vec(), argmin }, scalar(vals[argmin])))
    }

    /// Element-wise `max(x, 0)`.
    pub fn max0(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        for &v in xv.iter() {
            self.record_branch(v > 0.0, v);
        }
        self.push(Op::Max0(x), xv.mapv(|v| v.max(0.0)))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        for &v in xv.iter() {
            self.record_branch(v > 0.0, v);
        }
        self.push(Op::Abs(x), xv.mapv(f64::abs))
    }

    pub fn powi(&mut self, x: Var, p: i32) -> Var {
        let y = self.value(x).mapv(|v| v.powi(p));
        self.push(Op::PowI(x, p), y)
    }

    /// Accumulates `seed * d(out)/d(params)` into `grads`.
    pub fn backward(&self, out: Var, seed: f64, grads: &mut GradBundle) -> Result<()> {
        if self.dim(out) != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar output, got {:?}", self.dim(out))));
        }
        if grads.tensors.len() != self.params.len()
            || grads.tensors.iter().zip(&self.params).any(|(g, p)| g.dim() != p.dim())
        {
            return Err(Error::Shape("gradient bundle is not congruent with the parameters".into()));
        }
        let mut adj: Vec<Option<RMat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(scalar(seed));

        for idx in (0..=out.0).rev() {
            let Some(gy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = Accumulator { tape: self, adj: &mut adj, grads };
            match &node.op {
                Op::Param(i) => {
                    // Reached only when a parameter is itself the output or accumulated directly.
                    acc.grads.tensors[*i] += &gy;
                }
                Op::Input => {}
                Op::Affine { w, b, x } => {
                    let xv = self.value(*x);
                    acc.add_with(*w, |g| general_mat_mul(1.0, &gy, &xv.t(), 1.0, g));
                    acc.add_with(*b, |g| *g += &gy.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    let wv = self.value(*w);
                    acc.add_with(*x, |g| general_mat_mul(1.0, &wv.t(), &gy, 1.0, g));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    acc.add_with(*x, |g| {
                        Zip::from(g).and(&gy).and(xv).for_each(|g, &dy, &v| {
                            if v > 0.0 {
                                *g += dy;
                            }
                        })
                    });
                }
                Op::ConcatCols(a, b) => {
                    let na = self.dim(*a).1;
                    acc.add_with(*a, |g| *g += &gy.slice(ndarray::s![.., ..na]));
                    acc.add_with(*b, |g| *g += &gy.slice(ndarray::s![.., na..]));
                }
                Op::SliceCols { x, start } => {
                    let n = gy.ncols();
                    acc.add_with(*x, |g| {
                        let mut part = g.slice_mut(ndarray::s![.., *start..*start + n]);
                        part += &gy;
                    });
                }
                Op::Normalize { x, target, eps, norm } => {
                    let xv = self.value(*x);
                    let denom = norm + eps;
                    let dot: f64 = xv.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
                    let radial = if *norm > 0.0 { target * dot / (denom * denom * norm) } else { 0.0 };
                    let c = target / denom;
                    acc.add_with(*x, |g| {
                        Zip::from(g).and(&gy).and(xv).for_each(|g, &dy, &v| *g += c * dy - radial * v)
                    });
                }
                Op::LeftMul { a, x } => {
                    acc.add_with(*x, |g| general_mat_mul(1.0, &a.t(), &gy, 1.0, g));
                }
                Op::PairAbsSq(x) => {
                    let xv = self.value(*x);
                    let r = gy.nrows();
                    acc.add_with(*x, |g| {
                        for ((i, j), &dy) in gy.indexed_iter() {
                            g[[i, j]] += 2.0 * xv[[i, j]] * dy;
                            g[[i + r, j]] += 2.0 * xv[[i + r, j]] * dy;
                        }
                    });
                }
                Op::Entry { x, row, col } => {
                    let dy = gy[[0, 0]];
                    acc.add_with(*x, |g| g[[*row, *col]] += dy);
                }
                Op::RowSum { x, row } => {
                    let dy = gy[[0, 0]];
                    acc.add_with(*x, |g| g.row_mut(*row).mapv_inplace(|v| v + dy));
                }
                Op::Add(a, b) => {
                    acc.add_with(*a, |g| *g += &gy);
                    acc.add_with(*b, |g| *g += &gy);
                }
                Op::Sub(a, b) => {
                    acc.add_with(*a, |g| *g += &gy);
                    acc.add_with(*b, |g| *g -= &gy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc.add_with(*a, |g| *g += &(&gy * bv));
                    acc.add_with(*b, |g| *g += &(&gy * av));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc.add_with(*a, |g| *g += &(&gy / bv));
                    acc.add_with(*b, |g| {
                        Zip::from(g).and(&gy).and(av).and(bv).for_each(|g, &dy, &a, &b| *g -= dy * a / (b * b))
                    });
                }
                Op::AddConst(x) => acc.add_with(*x, |g| *g += &gy),
                Op::Scale(x, c) => acc.add_with(*x, |g| g.scaled_add(*c, &gy)),
                Op::Min { args, argmin } => {
                    let dy = gy[[0, 0]];
                    acc.add_with(args[*argmin], |g| g[[0, 0]] += dy);
                }
                Op::Max0(x) => {
                    let xv = self.value(*x);
                    acc.add_with(*x, |g| {
                        Zip::from(g).and(&gy).and(xv).for_each(|g, &dy, &v| {
                            if v > 0.0 {
                                *g += dy;
                            }
                        })
                    });
                }
                Op::Abs(x) => {
                    let xv = self.value(*x);
                    acc.add_with(*x, |g| {
                        Zip::from(g).and(&gy).and(xv).for_each(|g, &dy, &v| {
                            if v > 0.0 {
                                *g += dy;
                            } else if v < 0.0 {
                                *g -= dy;
                            }
                        })
                    });
                }
                Op::PowI(x, p) => {
                    let xv = self.value(*x);
                    let p = *p;
                    acc.add_with(*x, |g| {
                        Zip::from(g).and(&gy).and(xv).for_each(|g, &dy, &v| {
                            if p != 0 {
                                *g += dy * p as f64 * v.powi(p - 1);
                            }
                        })
                    });
                }
            }
        }
        Ok(())
    }
}

struct Accumulator<'a, 'p> {
    tape: &'a Tape<'p>,
    adj: &'a mut Vec<Option<RMat>>,
    grads: &'a mut GradBundle,
}

impl Accumulator<'_, '_> {
    /// Applies an in-place `+=` to the adjoint of `v`; parameter adjoints go straight to the bundle.
    fn add_with(&mut self, v: Var, f: impl FnOnce(&mut RMat)) {
        match self.tape.nodes[v.0].op {
            Op::Param(i) => f(&mut self.grads.tensors[i]),
            Op::Input => {}
            _ => {
                let slot = self.adj[v.0].get_or_insert_with(|| Array2::zeros(self.tape.nodes[v.0].value.dim()));
                f(slot)
            }
        }
    }
}

/// Evaluates a traced scalar function and its parameter gradient.
pub fn eval_with_grad<'p, F>(f: F, params: Vec<&'p RMat>) -> Result<(f64, GradBundle)>
where
    F: FnOnce(&mut Tape<'p>) -> Result<Var>,
{
    let mut grads = GradBundle::zeros_like(&params);
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    let value = tape.scalar(out);
    tape.backward(out, 1.0, &mut grads)?;
    Ok((value, grads))
}

#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Floor on the relative-error denominator, as a fraction of the largest analytic gradient entry.
    pub floor_fraction: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-6, floor_fraction: 1e-3 }
    }
}

/// One coordinate's comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct FdEntry {
    pub tensor: usize,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates whose perturbation crossed (or sits on) a kink.
    pub excluded: Vec<(usize, (usize, usize))>,
    pub max_rel_err: f64,
    pub failures: Vec<FdEntry>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compares analytic gradients against central differences, coordinate by coordinate.
///
/// A coordinate is excluded when evaluating at `+step` or `-step` changes any
/// branch decision relative to the base point, or when the base point sits within
/// `1e-7` of a kink that the coordinate influences.
pub fn finite_diff_check<F>(f: F, params: &[RMat], cfg: FdConfig) -> Result<FdReport>
where
    F: for<'p> Fn(&mut Tape<'p>) -> Result<Var>,
{
    let eval = |ps: &[RMat]| -> Result<(f64, u64)> {
        let mut tape = Tape::new(ps.iter().collect());
        let out = f(&mut tape)?;
        Ok((tape.scalar(out), tape.kink_signature()))
    };
    let (_, grads) = eval_with_grad(&f, params.iter().collect())?;
    let (_, base_sig) = eval(params)?;
    let gmax = grads.tensors.iter().flat_map(|t| t.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (cfg.floor_fraction * gmax).max(f64::MIN_POSITIVE);

    let mut work: Vec<RMat> = params.to_vec();
    let mut report = FdReport::default();
    for t in 0..params.len() {
        for idx in ndarray::indices(params[t].dim()) {
            let orig = work[t][idx];
            work[t][idx] = orig + cfg.step;
            let (fp, sp) = eval(&work)?;
            work[t][idx] = orig - cfg.step;
            let (fm, sm) = eval(&work)?;
            // Near-kink test at 1e-7 resolution.
            work[t][idx] = orig + 1e-7;
            let (_, sn) = eval(&work)?;
            work[t][idx] = orig;
            if sp != base_sig || sm != base_sig || sn != base_sig {
                report.excluded.push((t, idx));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let analytic = grads.tensors[t][idx];
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if rel_err > cfg.tolerance {
                report.failures.push(FdEntry { tensor: t, index: idx, analytic, numeric, rel_err });
            }
        }
    }
    Ok(report)
}
