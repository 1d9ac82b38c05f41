//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation is evaluated eagerly when it is recorded; `backward` walks the
//! tape in reverse and accumulates gradients into the nodes that need them.

use std::collections::HashMap;
use std::rc::Rc;

use super::{Matrix, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulCol(Var, Var),
    MulConst(Var, Matrix),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sqrt(Var),
    Expm1(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Average(Vec<Var>),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    MeanCols(Var),
    SumAll(Var),
    MeanAll(Var),
    JointMix {
        x: Var,
        adjacency: Rc<Matrix>,
        frames: usize,
    },
    TemporalConv {
        x: Var,
        w: Var,
        geometry: ConvGeometry,
        col: Matrix,
    },
    MaskedMeanPool {
        x: Var,
        joints: usize,
        valid_frames: usize,
    },
    Bce {
        p: Var,
        target: Matrix,
        eps: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub frames: usize,
    pub joints: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_frames(&self) -> usize {
        (self.frames + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch normalisation.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }

    /// Gradient of every trainable parameter that took part in the computation.
    pub fn params(&self, tape: &Tape) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = tape
            .param_vars
            .iter()
            .filter_map(|(&id, &var)| self.grads[var.0].clone().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives gradients (network input under test, embeddings fed
    /// from outside, ...).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let trainable = store.is_trainable(id);
        let v = self.push(store.value(id).clone(), Op::Leaf, trainable);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `x + bias` with a 1×n bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!((1, xv.cols()), bv.shape(), "add_row bias shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddRow(x, bias), ng)
    }

    /// `x + c` with an n×1 column broadcast over columns.
    pub fn add_col(&mut self, x: Var, c: Var) -> Var {
        let xv = self.value(x);
        let cv = self.value(c);
        assert_eq!((xv.rows(), 1), cv.shape(), "add_col column shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let add = cv.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o += add);
        }
        let ng = self.ng(x) || self.ng(c);
        self.push(out, Op::AddCol(x, c), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, factor), ng)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let value = self.value(x).map(|v| v + offset);
        let ng = self.ng(x);
        self.push(value, Op::AddScalar(x), ng)
    }

    /// `x ⊙ s` where `s` is an n×1 column broadcast over the columns of `x`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!((xv.rows(), 1), sv.shape(), "mul_col column shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let f = sv.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= f);
        }
        let ng = self.ng(x) || self.ng(s);
        self.push(out, Op::MulCol(x, s), ng)
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Matrix) -> Var {
        let value = self.value(x).zip_map(&c, |a, b| a * b);
        let ng = self.ng(x);
        self.push(value, Op::MulConst(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        let ng = self.ng(x);
        self.push(value, Op::Softplus(x), ng)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::sqrt);
        let ng = self.ng(x);
        self.push(value, Op::Sqrt(x), ng)
    }

    pub fn expm1(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp_m1);
        let ng = self.ng(x);
        self.push(value, Op::Expm1(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        let ng = self.ng(x);
        self.push(value, Op::Ln(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let ng = self.ng(x);
        self.push(value, Op::Square(x), ng)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let ng = self.ng(x);
        self.push(value, Op::Clamp(x, lo, hi), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "stack_rows column mismatch");
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::StackRows(parts.to_vec()),
            ng,
        )
    }

    /// Arithmetic mean of same-shaped nodes.
    pub fn average(&mut self, parts: &[Var]) -> Var {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p));
        }
        let n = parts.len() as f64;
        acc.data_mut().iter_mut().for_each(|v| *v /= n);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(acc, Op::Average(parts.to_vec()), ng)
    }

    /// Batch normalisation with per-batch statistics (biased variance).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, BatchStats) {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let mut mean = vec![0.0; m];
        for r in 0..n {
            for (acc, v) in mean.iter_mut().zip(xv.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; m];
        for r in 0..n {
            for ((acc, v), mu) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for (c, o) in xhat.row_mut(r).iter_mut().enumerate() {
                *o = (*o - mean[c]) * inv_std[c];
            }
        }
        let out = affine_rows(&xhat, self.value(gamma), self.value(beta));
        let stats = BatchStats {
            mean,
            var_unbiased: if n > 1 {
                var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect()
            } else {
                var
            },
        };
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        );
        (v, stats)
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Var {
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + eps).sqrt())
            .collect();
        let mut xhat = self.value(x).clone();
        for r in 0..xhat.rows() {
            for (c, o) in xhat.row_mut(r).iter_mut().enumerate() {
                *o = (*o - running_mean[c]) * inv_std[c];
            }
        }
        let out = affine_rows(&xhat, self.value(gamma), self.value(beta));
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Column means: n×m → 1×m.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols()];
        for r in 0..xv.rows() {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let n = xv.rows() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let ng = self.ng(x);
        self.push(Matrix::row_vector(out), Op::MeanRows(x), ng)
    }

    /// Row means: n×m → n×1.
    pub fn mean_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.cols() as f64;
        let out = (0..xv.rows())
            .map(|r| xv.row(r).iter().sum::<f64>() / m)
            .collect();
        let ng = self.ng(x);
        self.push(Matrix::column(out), Op::MeanCols(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Matrix::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.data().len() as f64;
        let ng = self.ng(x);
        self.push(Matrix::scalar(s), Op::MeanAll(x), ng)
    }

    /// Graph convolution over joints: per frame, `out = A · x_frame` where rows of
    /// `x` are ordered (frame, joint).
    pub fn joint_mix(&mut self, x: Var, adjacency: Rc<Matrix>, frames: usize) -> Var {
        let xv = self.value(x);
        let joints = adjacency.rows();
        assert_eq!(xv.rows(), frames * joints, "joint_mix row count");
        let c = xv.cols();
        let mut out = Matrix::zeros(xv.rows(), c);
        for m in 0..frames {
            for j in 0..joints {
                let orow = (m * joints + j) * c;
                for k in 0..joints {
                    let a = adjacency.get(j, k);
                    if a == 0.0 {
                        continue;
                    }
                    let xrow = xv.row(m * joints + k);
                    let dst = &mut out.data_mut()[orow..orow + c];
                    for (o, v) in dst.iter_mut().zip(xrow) {
                        *o += a * v;
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            out,
            Op::JointMix {
                x,
                adjacency,
                frames,
            },
            ng,
        )
    }

    /// Temporal convolution with zero padding; `w` is (kernel·c_in)×c_out with
    /// row index `k·c_in + ci`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, geometry: ConvGeometry) -> Var {
        let xv = self.value(x);
        let cin = xv.cols();
        let ConvGeometry {
            frames,
            joints,
            kernel,
            stride,
            pad,
        } = geometry;
        assert_eq!(xv.rows(), frames * joints, "temporal_conv row count");
        assert_eq!(self.value(w).rows(), kernel * cin, "temporal_conv weight rows");
        let out_frames = geometry.out_frames();
        let mut col = Matrix::zeros(out_frames * joints, kernel * cin);
        for t in 0..out_frames {
            for k in 0..kernel {
                let src = (t * stride + k) as isize - pad as isize;
                if src < 0 || src as usize >= frames {
                    continue;
                }
                let src = src as usize;
                for j in 0..joints {
                    let dst_row = t * joints + j;
                    let off = dst_row * kernel * cin + k * cin;
                    col.data_mut()[off..off + cin].copy_from_slice(xv.row(src * joints + j));
                }
            }
        }
        let out = col.matmul(self.value(w));
        let ng = self.ng(x) || self.ng(w);
        self.push(
            out,
            Op::TemporalConv {
                x,
                w,
                geometry,
                col,
            },
            ng,
        )
    }

    /// Mean over the first `valid_frames` frames and all joints → 1×c.
    pub fn masked_mean_pool(&mut self, x: Var, joints: usize, valid_frames: usize) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let rows = valid_frames * joints;
        assert!(rows <= xv.rows() && rows > 0, "masked_mean_pool length");
        let mut out = vec![0.0; c];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= rows as f64);
        let ng = self.ng(x);
        self.push(
            Matrix::row_vector(out),
            Op::MaskedMeanPool {
                x,
                joints,
                valid_frames,
            },
            ng,
        )
    }

    /// Element-wise binary cross-entropy with the probability clamped to
    /// `[eps, 1 − eps]`.
    pub fn bce(&mut self, p: Var, target: Matrix, eps: f64) -> Var {
        let value = self
            .value(p)
            .zip_map(&target, |pv, y| crate::objective::bce(pv, y, eps));
        let ng = self.ng(p);
        self.push(value, Op::Bce { p, target, eps }, ng)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward() needs a scalar loss"
        );
        self.backward_with(loss, Matrix::scalar(1.0))
    }

    pub fn backward_with(&self, root: Var, seed: Matrix) -> Gradients {
        assert_eq!(self.value(root).shape(), seed.shape(), "seed shape");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*b) {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, Matrix::row_vector(db));
                }
            }
            Op::AddCol(x, c) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*c) {
                    let dc = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    self.accumulate(grads, *c, Matrix::column(dc));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::MulCol(x, s) => {
                let sv = self.value(*s);
                if self.ng(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let f = sv.data()[r];
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.ng(*s) {
                    let xv = self.value(*x);
                    let ds = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *s, Matrix::column(ds));
                }
            }
            Op::MulConst(x, c) => self.accumulate(grads, *x, g.zip_map(c, |a, b| a * b)),
            Op::Relu(x) => {
                let dx = g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 });
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, g.zip_map(out, |d, s| d * s * (1.0 - s)));
            }
            Op::Softplus(x) => {
                let dx = g.zip_map(self.value(*x), |d, v| d * sigmoid(v));
                self.accumulate(grads, *x, dx);
            }
            Op::Sqrt(x) => {
                let dx = g.zip_map(out, |d, s| if s > 0.0 { d * 0.5 / s } else { 0.0 });
                self.accumulate(grads, *x, dx);
            }
            Op::Expm1(x) => {
                self.accumulate(grads, *x, g.zip_map(out, |d, e| d * (e + 1.0)));
            }
            Op::Ln(x) => {
                self.accumulate(grads, *x, g.zip_map(self.value(*x), |d, v| d / v));
            }
            Op::Square(x) => {
                self.accumulate(grads, *x, g.zip_map(self.value(*x), |d, v| 2.0 * d * v));
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let dx = g.zip_map(self.value(*x), |d, v| {
                    if (lo..=hi).contains(&v) {
                        d
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut dp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    if self.ng(p) {
                        let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                        self.accumulate(grads, p, Matrix::from_vec(r, c, slice));
                    }
                    offset += r;
                }
            }
            Op::Average(parts) => {
                let scaled = g.map(|v| v / parts.len() as f64);
                for &p in parts {
                    self.accumulate(grads, p, scaled.clone());
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (n, m) = g.shape();
                self.bn_param_grads(grads, g, xhat, *gamma, *beta);
                if self.ng(*x) {
                    let mut sum_d = vec![0.0; m];
                    let mut sum_dx = vec![0.0; m];
                    for r in 0..n {
                        for c in 0..m {
                            let d = g.get(r, c) * gv.data()[c];
                            sum_d[c] += d;
                            sum_dx[c] += d * xhat.get(r, c);
                        }
                    }
                    let nf = n as f64;
                    let mut dx = Matrix::zeros(n, m);
                    for r in 0..n {
                        for c in 0..m {
                            let d = g.get(r, c) * gv.data()[c];
                            let v = inv_std[c] / nf
                                * (nf * d - sum_d[c] - xhat.get(r, c) * sum_dx[c]);
                            dx.set(r, c, v);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                self.bn_param_grads(grads, g, xhat, *gamma, *beta);
                if self.ng(*x) {
                    let gv = self.value(*gamma);
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        for (c, v) in dx.row_mut(r).iter_mut().enumerate() {
                            *v *= gv.data()[c] * inv_std[c];
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::MeanRows(x) => {
                let n = self.value(*x).rows();
                let mut dx = Matrix::zeros(n, g.cols());
                for r in 0..n {
                    for (d, v) in dx.row_mut(r).iter_mut().zip(g.data()) {
                        *d = v / n as f64;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MeanCols(x) => {
                let (n, m) = self.value(*x).shape();
                let mut dx = Matrix::zeros(n, m);
                for r in 0..n {
                    let v = g.data()[r] / m as f64;
                    dx.row_mut(r).iter_mut().for_each(|d| *d = v);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let (n, m) = self.value(*x).shape();
                self.accumulate(grads, *x, Matrix::filled(n, m, g.item()));
            }
            Op::MeanAll(x) => {
                let (n, m) = self.value(*x).shape();
                let v = g.item() / (n * m) as f64;
                self.accumulate(grads, *x, Matrix::filled(n, m, v));
            }
            Op::JointMix {
                x,
                adjacency,
                frames,
            } => {
                let joints = adjacency.rows();
                let c = g.cols();
                let mut dx = Matrix::zeros(g.rows(), c);
                for m in 0..*frames {
                    for j in 0..joints {
                        let grow = g.row(m * joints + j);
                        for k in 0..joints {
                            let a = adjacency.get(j, k);
                            if a == 0.0 {
                                continue;
                            }
                            let off = (m * joints + k) * c;
                            for (d, v) in dx.data_mut()[off..off + c].iter_mut().zip(grow) {
                                *d += a * v;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::TemporalConv {
                x,
                w,
                geometry,
                col,
            } => {
                if self.ng(*w) {
                    self.accumulate(grads, *w, col.t_matmul(g));
                }
                if self.ng(*x) {
                    let dcol = g.matmul_t(self.value(*w));
                    let cin = self.value(*x).cols();
                    let ConvGeometry {
                        frames,
                        joints,
                        kernel,
                        stride,
                        pad,
                    } = *geometry;
                    let mut dx = Matrix::zeros(frames * joints, cin);
                    for t in 0..geometry.out_frames() {
                        for k in 0..kernel {
                            let src = (t * stride + k) as isize - pad as isize;
                            if src < 0 || src as usize >= frames {
                                continue;
                            }
                            let src = src as usize;
                            for j in 0..joints {
                                let off = (t * joints + j) * kernel * cin + k * cin;
                                let seg = &dcol.data()[off..off + cin];
                                for (d, v) in dx.row_mut(src * joints + j).iter_mut().zip(seg) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::MaskedMeanPool {
                x,
                joints,
                valid_frames,
            } => {
                let (n, c) = self.value(*x).shape();
                let rows = valid_frames * joints;
                let mut dx = Matrix::zeros(n, c);
                for r in 0..rows {
                    for (d, v) in dx.row_mut(r).iter_mut().zip(g.data()) {
                        *d = v / rows as f64;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Bce { p, target, eps } => {
                let eps = *eps;
                let pv = self.value(*p);
                let mut dp = Matrix::zeros(pv.rows(), pv.cols());
                for i in 0..pv.data().len() {
                    let prob = pv.data()[i];
                    let y = target.data()[i];
                    let d = if prob > eps && prob < 1.0 - eps {
                        -(y / prob - (1.0 - y) / (1.0 - prob))
                    } else {
                        0.0
                    };
                    dp.data_mut()[i] = g.data()[i] * d;
                }
                self.accumulate(grads, *p, dp);
            }
        }
    }

    fn bn_param_grads(
        &self,
        grads: &mut [Option<Matrix>],
        g: &Matrix,
        xhat: &Matrix,
        gamma: Var,
        beta: Var,
    ) {
        let m = g.cols();
        if self.ng(gamma) {
            let mut dg = vec![0.0; m];
            for r in 0..g.rows() {
                for c in 0..m {
                    dg[c] += g.get(r, c) * xhat.get(r, c);
                }
            }
            self.accumulate(grads, gamma, Matrix::row_vector(dg));
        }
        if self.ng(beta) {
            let mut db = vec![0.0; m];
            for r in 0..g.rows() {
                for (d, v) in db.iter_mut().zip(g.row(r)) {
                    *d += v;
                }
            }
            self.accumulate(grads, beta, Matrix::row_vector(db));
        }
    }
}

fn affine_rows(xhat: &Matrix, gamma: &Matrix, beta: &Matrix) -> Matrix {
    let mut out = xhat.clone();
    for r in 0..out.rows() {
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = *o * gamma.data()[c] + beta.data()[c];
        }
    }
    out
}

/// Logistic sigmoid evaluated without overflow for large |z|.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(sum(f(x) ⊙ W))/dx for a random weighting W.
    fn check_unary(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let weights = Matrix::from_vec(
            x0.rows(),
            x0.cols(),
            (0..x0.data().len()).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect(),
        );
        let eval = |x: &Matrix| {
            let mut t = Tape::new();
            let xv = t.input(x.clone());
            let y = build(&mut t, xv);
            let yv = t.value(y).clone();
            let w = if yv.shape() == weights.shape() {
                weights.clone()
            } else {
                Matrix::filled(yv.rows(), yv.cols(), 0.7)
            };
            let wc = t.constant(w);
            let prod = t.mul(y, wc);
            let s = t.sum_all(prod);
            (t, xv, s)
        };
        let (t, xv, s) = eval(&x0);
        let grads = t.backward(s);
        let analytic = grads.get(xv).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.data().len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let (tp, _, sp) = eval(&xp);
            let (tm, _, sm) = eval(&xm);
            let fd = (tp.value(sp).item() - tm.value(sm).item()) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - fd).abs() <= 1e-6 * (1.0 + a.abs().max(fd.abs())),
                "component {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    fn sample(rows: usize, cols: usize, shift: f64) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| (i as f64 * 1.37 + shift).sin() * 1.3)
                .collect(),
        )
    }

    #[test]
    fn elementwise_gradients() {
        check_unary(|t, x| t.sigmoid(x), sample(3, 4, 0.1));
        check_unary(|t, x| t.softplus(x), sample(3, 4, 0.2));
        check_unary(|t, x| t.expm1(x), sample(3, 4, 0.3));
        check_unary(|t, x| t.square(x), sample(3, 4, 0.4));
        check_unary(
            |t, x| {
                let s = t.square(x);
                let s = t.add_scalar(s, 0.5);
                t.sqrt(s)
            },
            sample(2, 3, 0.5),
        );
        check_unary(
            |t, x| {
                let s = t.sigmoid(x);
                t.ln(s)
            },
            sample(2, 3, 0.6),
        );
    }

    #[test]
    fn structural_gradients() {
        let w = sample(4, 3, 1.0);
        check_unary(
            move |t, x| {
                let wv = t.constant(w.clone());
                t.matmul(x, wv)
            },
            sample(5, 4, 0.0),
        );
        check_unary(
            |t, x| {
                let (y, _) = {
                    let g = t.constant(Matrix::row_vector(vec![1.5, -0.5, 0.8]));
                    let b = t.constant(Matrix::row_vector(vec![0.1, 0.2, 0.3]));
                    t.batch_norm_train(x, g, b, 1e-5)
                };
                t.sigmoid(y)
            },
            sample(6, 3, 0.2),
        );
        check_unary(
            |t, x| {
                let c = t.mean_cols(x);
                let s = t.mul_col(x, c);
                t.add_col(s, c)
            },
            sample(4, 3, 0.9),
        );
        check_unary(
            |t, x| {
                let a = t.mean_rows(x);
                let b = t.concat_cols(&[x, x]);
                let c = t.stack_rows(&[a, x]);
                let d = t.average(&[b, b]);
                let e = t.sum_all(d);
                let f = t.mean_all(c);
                let g = t.mul(e, f);
                t.add(g, e)
            },
            sample(3, 2, 0.3),
        );
    }

    #[test]
    fn graph_temporal_gradients() {
        let adjacency = Rc::new(Matrix::from_vec(
            3,
            3,
            vec![0.5, 0.5, 0.0, 0.5, 0.25, 0.25, 0.0, 0.25, 0.75],
        ));
        let geom = ConvGeometry {
            frames: 5,
            joints: 3,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let w = sample(3 * 2, 4, 2.0);
        check_unary(
            move |t, x| {
                let mixed = t.joint_mix(x, adjacency.clone(), 5);
                let wv = t.constant(w.clone());
                let conv = t.temporal_conv(mixed, wv, geom);
                let r = t.sigmoid(conv);
                t.masked_mean_pool(r, 3, 2)
            },
            sample(15, 2, 0.7),
        );
    }

    #[test]
    fn bce_gradient_and_clamp() {
        check_unary(
            |t, x| {
                let p = t.sigmoid(x);
                let y = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
                t.bce(p, y, 1e-7)
            },
            sample(2, 2, 0.1),
        );
        let mut t = Tape::new();
        let p = t.input(Matrix::scalar(1.0));
        let l = t.bce(p, Matrix::scalar(1.0), 1e-7);
        let g = t.backward(l);
        assert_eq!(g.get(p).unwrap().item(), 0.0);
    }

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        for z in [-30.0, -2.5, 0.3, 7.0, 40.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
    }
}
