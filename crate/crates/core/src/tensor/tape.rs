//! Arena-based reverse-mode differentiation over dense row-major matrices.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{gemm, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-sample `M x M` mixing matrices applied blockwise to stacked `(B * M) x D` features.
#[derive(Debug, Clone)]
pub struct NodeMix {
    pub matrices: Arc<Vec<Matrix>>,
    /// `assign[b]` selects the matrix for sample `b`.
    pub assign: Arc<Vec<usize>>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Prelu(Var, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Mix(Var, NodeMix),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Ordered record of operations; every input precedes its consumer by construction.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each parameter slot `0..count`, zero when the parameter was not used.
    pub fn params(&self, shapes: &[(usize, usize)]) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        for &(slot, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                out[slot].add_assign(g);
            }
        }
        out
    }
}

fn check(op: &'static str, a: &Matrix, b: &Matrix, ok: bool) -> Result<(), TapeError> {
    if ok {
        Ok(())
    } else {
        Err(TapeError::Shape { op, lhs: a.shape(), rhs: b.shape() })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Input that gradients flow into but which is not a trainable parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable parameter occupying slot `slot` of a parameter store.
    pub fn param(&mut self, slot: usize, value: Matrix) -> Var {
        self.push(value, Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (va, vb) = (self.value(a), self.value(b));
        check("matmul", va, vb, va.cols() == vb.rows())?;
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        gemm(false, va, false, vb, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (va, vb) = (self.value(a), self.value(b));
        check("add", va, vb, va.shape() == vb.shape())?;
        let out = va.add(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (va, vb) = (self.value(a), self.value(b));
        check("sub", va, vb, va.shape() == vb.shape())?;
        let out = va.sub(vb);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (va, vb) = (self.value(a), self.value(b));
        check("add_row", va, vb, vb.rows() == 1 && vb.cols() == va.cols())?;
        let mut out = va.clone();
        let bias = vb.row(0);
        for r in 0..out.rows() {
            out.row_mut(r).iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// `x` where `x >= 0`, `slope * x` elsewhere; `slope` is a `1 x 1` value.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var, TapeError> {
        let (vx, va) = (self.value(x), self.value(slope));
        check("prelu", vx, va, va.shape() == (1, 1))?;
        let a = va[(0, 0)];
        let out = vx.map(|v| if v >= 0.0 { v } else { a * v });
        Ok(self.push(out, Op::Prelu(x, slope)))
    }

    /// Column-wise concatenation of equally tall values.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        let first = self.value(parts[0]);
        let rows = first.rows();
        for &p in &parts[1..] {
            check("concat_cols", first, self.value(p), self.value(p).rows() == rows)?;
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            let dst = out.row_mut(r);
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                dst[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TapeError> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(TapeError::Shape { op: "slice_cols", lhs: va.shape(), rhs: (start, len) });
        }
        let out = va.block(0, start, va.rows(), len);
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TapeError> {
        let va = self.value(a);
        if va.len() != rows * cols {
            return Err(TapeError::Shape { op: "reshape", lhs: va.shape(), rhs: (rows, cols) });
        }
        let out = va.clone().reshaped(rows, cols);
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Block `b` of the output is `matrices[assign[b]] * h_b`, where `h_b` are rows
    /// `b * M .. (b + 1) * M` of `h`.
    pub fn node_mix(&mut self, h: Var, mix: NodeMix) -> Result<Var, TapeError> {
        let vh = self.value(h);
        let m = mix.matrices.first().map_or(0, Matrix::rows);
        if m == 0 || vh.rows() != m * mix.assign.len() {
            return Err(TapeError::Shape { op: "node_mix", lhs: vh.shape(), rhs: (m, mix.assign.len()) });
        }
        let d = vh.cols();
        let mut out = Matrix::zeros(vh.rows(), d);
        for (b, &which) in mix.assign.iter().enumerate() {
            let t = &mix.matrices[which];
            let base = b * m * d;
            let src = &vh.as_slice()[base..base + m * d];
            let dst = &mut out.as_mut_slice()[base..base + m * d];
            for i in 0..m {
                let row = &mut dst[i * d..(i + 1) * d];
                for j in 0..m {
                    let w = t[(i, j)];
                    if w != 0.0 {
                        row.iter_mut().zip(&src[j * d..(j + 1) * d]).for_each(|(o, s)| *o += w * s);
                    }
                }
            }
        }
        Ok(self.push(out, Op::Mix(h, mix)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Matrix::scalar(va.sum() / va.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Mean of squared entry-wise differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TapeError> {
        let (vp, vt) = (self.value(pred), self.value(target));
        check("mse", vp, vt, vp.shape() == vt.shape())?;
        let n = vp.len() as f64;
        let s: f64 = vp.as_slice().iter().zip(vt.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(Matrix::scalar(s / n), Op::Mse(pred, target)))
    }

    /// Reverse sweep from a scalar, seeded with `d loss / d loss = 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TapeError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(slot) => params.push((*slot, Var(idx))),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    gemm(false, &g, true, vb, 0.0, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                    gemm(true, va, false, &g, 0.0, &mut gb);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        gb.row_mut(0).iter_mut().zip(g.row(r)).for_each(|(x, y)| *x += y);
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Prelu(x, slope) => {
                    let vx = self.value(*x);
                    let a = self.value(*slope)[(0, 0)];
                    let mut ga = 0.0;
                    let gx = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(vx.as_slice())
                            .map(|(&gi, &xi)| {
                                if xi >= 0.0 {
                                    gi
                                } else {
                                    ga += gi * xi;
                                    a * gi
                                }
                            })
                            .collect(),
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *slope, Matrix::scalar(ga));
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.block(0, c0, g.rows(), w));
                        c0 += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    ga.set_block(0, *start, &g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, g.clone().reshaped(r, c));
                }
                Op::Mix(h, mix) => {
                    let m = mix.matrices[0].rows();
                    let d = g.cols();
                    let mut gh = Matrix::zeros(g.rows(), d);
                    for (b, &which) in mix.assign.iter().enumerate() {
                        let t = &mix.matrices[which];
                        let base = b * m * d;
                        let src = &g.as_slice()[base..base + m * d];
                        let dst = &mut gh.as_mut_slice()[base..base + m * d];
                        for i in 0..m {
                            for j in 0..m {
                                let w = t[(i, j)];
                                if w != 0.0 {
                                    let (gi, hj) = (&src[i * d..(i + 1) * d], &mut dst[j * d..(j + 1) * d]);
                                    hj.iter_mut().zip(gi).for_each(|(o, s)| *o += w * s);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *h, gh);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)] / (r * c) as f64));
                }
                Op::Mse(p, t) => {
                    let (vp, vt) = (self.value(*p), self.value(*t));
                    let k = 2.0 * g[(0, 0)] / vp.len() as f64;
                    let gp = vp.zip_map(vt, |a, b| k * (a - b));
                    accumulate(&mut grads, *t, gp.scale(-1.0));
                    accumulate(&mut grads, *p, gp);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
