//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape index order is already
//! a topological order and `backward` is a single reverse sweep.

use super::{cross_entropy_row, gemm, softmax_into, Tensor};
use crate::error::{Error, Result};
use crate::quant::{sign, QuantScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Softmax(Var),
    FakeQuant(Var, QuantScheme),
    Binarize(Var),
    ThresholdSign(Var),
    TanhClamp(Var, f64),
    ShiftTarget(Var),
    CrossEntropy(Var, Vec<usize>),
    Hinge(Var, Vec<usize>, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn emit(&mut self, value: Tensor, op: Op, parents: &[Var], what: &str) -> Result<Var> {
        value.check_finite(what)?;
        let rg = parents.iter().any(|&p| self.rg(p));
        Ok(self.push(value, op, rg))
    }

    fn check_targets(&self, x: Var, targets: &[usize]) -> Result<(usize, usize)> {
        let (rows, cols) = self.value(x).dims2()?;
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "{} targets for {rows} rows",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::InvalidTarget {
                target: t,
                classes: cols,
            });
        }
        Ok((rows, cols))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.emit(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `x · wᵀ` for `x: [B×in]`, `w: [out×in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (bsz, inp) = self.value(x).dims2()?;
        let (out, inw) = self.value(w).dims2()?;
        if inp != inw {
            return Err(Error::Dimension(format!(
                "linear: input width {inp} vs weight width {inw}"
            )));
        }
        let mut y = vec![0.0; bsz * out];
        gemm(
            bsz,
            inp,
            out,
            self.value(x).data(),
            (inp, 1),
            self.value(w).data(),
            (1, inp),
            &mut y,
            0.0,
        );
        let y = Tensor::matrix(bsz, out, y)?;
        self.emit(y, Op::Linear(x, w), &[x, w], "linear")
    }

    fn row_broadcast(&mut self, x: Var, b: Var, negate: bool) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(b).len() != cols {
            return Err(Error::Dimension(format!(
                "row vector of length {} against width {cols}",
                self.value(b).len()
            )));
        }
        let bv = self.value(b).data();
        let sgn = if negate { -1.0 } else { 1.0 };
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            for (o, &bb) in data[r * cols..(r + 1) * cols].iter_mut().zip(bv) {
                *o += sgn * bb;
            }
        }
        let y = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let op = if negate {
            Op::SubRow(x, b)
        } else {
            Op::AddRow(x, b)
        };
        self.emit(y, op, &[x, b], "row broadcast")
    }

    /// Adds `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.row_broadcast(x, b, false)
    }

    /// Subtracts `b` from every row of `x`.
    pub fn sub_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.row_broadcast(x, b, true)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.emit(y, Op::Add(a, b), &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.emit(y, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let y = self.value(x).map(|v| v * c);
        self.emit(y, Op::Scale(x, c), &[x], "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.emit(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).relu();
        self.emit(y, Op::Relu(x), &[x], "relu")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).softmax()?;
        self.emit(y, Op::Softmax(x), &[x], "softmax")
    }

    /// Straight-through fake quantization: the forward pass snaps to the grid,
    /// the backward pass lets gradients through where `x` lies inside the range.
    pub fn fake_quantize(&mut self, x: Var, scheme: QuantScheme) -> Result<Var> {
        let y = self.value(x).map(|v| scheme.fake(v));
        self.emit(y, Op::FakeQuant(x, scheme), &[x], "fake_quantize")
    }

    /// Sign with a hard-tanh straight-through gradient (passes where `|x| <= 1`).
    pub fn binarize(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(sign);
        self.emit(y, Op::Binarize(x), &[x], "binarize")
    }

    /// `+1` where `x > 0`, else `−1`; same straight-through gradient as [`Graph::binarize`].
    pub fn threshold_sign(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| if v > 0.0 { 1.0 } else { -1.0 });
        self.emit(y, Op::ThresholdSign(x), &[x], "threshold_sign")
    }

    pub fn tanh_clamp(&mut self, x: Var, bound: f64) -> Result<Var> {
        if bound.is_nan() || bound <= 0.0 {
            return Err(Error::Contract(format!("clamp bound {bound} must be > 0")));
        }
        let y = self.value(x).map(|v| bound * (v / bound).tanh());
        self.emit(y, Op::TanhClamp(x, bound), &[x], "tanh_clamp")
    }

    /// Subtracts `m` from each row's target entry.
    pub fn shift_target(&mut self, x: Var, targets: &[usize], m: f64) -> Result<Var> {
        let (_, cols) = self.check_targets(x, targets)?;
        let mut y = self.value(x).clone();
        y.zero_grad();
        let data = y.data_mut();
        for (r, &t) in targets.iter().enumerate() {
            data[r * cols + t] -= m;
        }
        self.emit(
            y,
            Op::ShiftTarget(x),
            &[x],
            "shift_target",
        )
    }

    /// Mean over rows of `-log softmax(row)[target]`, computed as log-sum-exp minus the target term.
    pub fn cross_entropy(&mut self, x: Var, targets: &[usize]) -> Result<Var> {
        let (rows, _) = self.check_targets(x, targets)?;
        let xv = self.value(x);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| cross_entropy_row(xv.row(r), t))
            .sum();
        let out = Tensor::scalar(total / rows as f64);
        self.emit(
            out,
            Op::CrossEntropy(x, targets.to_vec()),
            &[x],
            "cross_entropy",
        )
    }

    /// Mean over rows of `Σ_{j≠t} max(0, margin − (x_t − x_j))`.
    pub fn hinge(&mut self, x: Var, targets: &[usize], margin: f64) -> Result<Var> {
        let (rows, _) = self.check_targets(x, targets)?;
        let xv = self.value(x);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = xv.row(r);
            for (j, &v) in row.iter().enumerate() {
                if j != t {
                    total += (margin - (row[t] - v)).max(0.0);
                }
            }
        }
        let out = Tensor::scalar(total / rows as f64);
        self.emit(
            out,
            Op::Hinge(x, targets.to_vec(), margin),
            &[x],
            "hinge",
        )
    }

    /// Fills `grad` on every node reachable from the scalar `root` that
    /// depends on a parameter. Gradients accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward from non-scalar of shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.rg(root) {
            return Ok(());
        }
        let mut seeds: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        seeds[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = seeds[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut seeds);
            let node = &mut self.nodes[i].value;
            let acc = match node.grad.take() {
                Some(mut prev) => {
                    prev.iter_mut().zip(&g).for_each(|(p, q)| *p += q);
                    prev
                }
                None => g,
            };
            node.grad = Some(acc);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], seeds: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.rg(v) {
                return;
            }
            let slot =
                seeds[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = node.value.dims2().unwrap().1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                acc(*a, &|s| gemm(m, n, k, g, (n, 1), bv, (1, n), s, 1.0));
                acc(*b, &|s| gemm(k, m, n, av, (1, k), g, (n, 1), s, 1.0));
            }
            Op::Linear(x, w) => {
                let (bsz, inp) = self.value(*x).dims2().unwrap();
                let out = self.value(*w).dims2().unwrap().0;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                // dX = dY · W, dW = dYᵀ · X
                acc(*x, &|s| gemm(bsz, out, inp, g, (out, 1), wv, (inp, 1), s, 1.0));
                acc(*w, &|s| gemm(out, bsz, inp, g, (1, out), xv, (inp, 1), s, 1.0));
            }
            Op::AddRow(x, b) | Op::SubRow(x, b) => {
                let sgn = if matches!(node.op, Op::SubRow(..)) { -1.0 } else { 1.0 };
                let cols = self.value(*b).len();
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(p, q)| *p += q));
                acc(*b, &|s| {
                    for row in g.chunks(cols) {
                        s.iter_mut().zip(row).for_each(|(p, q)| *p += sgn * q);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(p, q)| *p += q));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(p, q)| *p += q));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for ((p, q), y) in s.iter_mut().zip(g).zip(bv) {
                        *p += q * y;
                    }
                });
                acc(*b, &|s| {
                    for ((p, q), y) in s.iter_mut().zip(g).zip(av) {
                        *p += q * y;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(p, q)| *p += c * q)),
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|p| *p += g[0])),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((p, q), v) in s.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *p += q;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let cols = node.value.dims2().unwrap().1;
                let y = node.value.data();
                acc(*x, &|s| {
                    for ((srow, grow), yrow) in
                        s.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((p, q), yy) in srow.iter_mut().zip(grow).zip(yrow) {
                            *p += yy * (q - dot);
                        }
                    }
                });
            }
            Op::FakeQuant(x, scheme) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((p, q), v) in s.iter_mut().zip(g).zip(xv) {
                        if scheme.contains(*v) {
                            *p += q;
                        }
                    }
                });
            }
            Op::Binarize(x) | Op::ThresholdSign(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((p, q), v) in s.iter_mut().zip(g).zip(xv) {
                        if v.abs() <= 1.0 {
                            *p += q;
                        }
                    }
                });
            }
            Op::TanhClamp(x, bound) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((p, q), v) in s.iter_mut().zip(g).zip(xv) {
                        let t = (v / bound).tanh();
                        *p += q * (1.0 - t * t);
                    }
                });
            }
            Op::ShiftTarget(x) => {
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(p, q)| *p += q))
            }
            Op::CrossEntropy(x, targets) => {
                let xv = self.value(*x);
                let cols = xv.dims2().unwrap().1;
                let scale = g[0] / targets.len() as f64;
                acc(*x, &|s| {
                    let mut sm = vec![0.0; cols];
                    for (r, &t) in targets.iter().enumerate() {
                        softmax_into(xv.row(r), &mut sm);
                        sm[t] -= 1.0;
                        for (p, q) in s[r * cols..(r + 1) * cols].iter_mut().zip(&sm) {
                            *p += scale * q;
                        }
                    }
                });
            }
            Op::Hinge(x, targets, margin) => {
                let xv = self.value(*x);
                let cols = xv.dims2().unwrap().1;
                let scale = g[0] / targets.len() as f64;
                acc(*x, &|s| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = xv.row(r);
                        for j in 0..cols {
                            if j != t && margin - (row[t] - row[j]) > 0.0 {
                                s[r * cols + j] += scale;
                                s[r * cols + t] -= scale;
                            }
                        }
                    }
                });
            }
        }
    }
}
