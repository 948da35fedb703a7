//! Dense row-major `f64` tensors and the reverse-mode graph built on top of them.

mod gradcheck;
mod graph;

pub use gradcheck::grad_check;
pub use graph::{Graph, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// `(rows, cols)` view: vectors are treated as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [k] => Ok((1, *k)),
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("expected rank 1 or 2, got {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.data,
            (k, 1),
            &other.data,
            (n, 1),
            &mut out,
            0.0,
        );
        Tensor::matrix(m, n, out)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let (rows, cols) = self.dims2()?;
        let mut out = vec![0.0; self.data.len()];
        for r in 0..rows {
            softmax_into(
                &self.data[r * cols..(r + 1) * cols],
                &mut out[r * cols..(r + 1) * cols],
            );
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }
}

/// `c = a·b + beta·c` for row/column-strided `a` (m×k) and `b` (k×n); `c` is row-major m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: strides address only elements inside `a`, `b`, `c`, whose lengths
    // callers derive from the same (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(row)[target]` as `log Σ_j exp(row_j − row_target)`, keeping
/// precision when the target dominates.
pub fn cross_entropy_row(row: &[f64], target: usize) -> f64 {
    let t = row[target];
    let max_d = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, &v)| v - t)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_d == f64::NEG_INFINITY {
        return 0.0;
    }
    if max_d <= 0.0 {
        let s: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(_, &v)| (v - t).exp())
            .sum();
        s.ln_1p()
    } else {
        let s: f64 = row.iter().map(|&v| (v - t - max_d).exp()).sum();
        max_d + s.ln()
    }
}

pub fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Softmax of a single logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of empty vector".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn shape_must_match_data() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_orthogonal() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![0.0, 5.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = Tensor::matrix(3, 4, a.clone())
            .unwrap()
            .matmul(&Tensor::matrix(4, 2, b.clone()).unwrap())
            .unwrap();
        for (x, y) in got.data().iter().zip(naive_matmul(&a, &b, 3, 4, 2)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(a.matmul(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_values() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::vector(vec![-3.0, -0.5]).unwrap();
        assert_eq!(neg.relu().data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let a = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let b = softmax(&[0.0, 1.0, 2.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
        let big = softmax(&[1000.0, 0.0]).unwrap();
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] >= 0.0 && big[1] < 1e-300);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[192.0, 0.0]);
        assert!((v - 192.0).abs() < 1e-12);
    }
}
