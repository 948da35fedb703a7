use rand::Rng as _;

use crate::error::{Error, Result};
use crate::quant::{range_from_tensor, sign, QuantScheme};
use crate::rng::Rng;
use crate::tensor::{gemm, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Uniform fan-in initialization with bound `sqrt(6 / fan_in)`.
pub(crate) fn kaiming_uniform(out: usize, inp: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / inp as f64).sqrt();
    let data = (0..out * inp).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(out, inp, data).expect("nonzero layer dims")
}

/// Fully connected layer whose weights pass through n-bit fake quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantFcLayer {
    /// Latent real weights, `[out×in]`.
    pub weights: Tensor,
    /// Full-precision bias, `[out]`.
    pub bias: Tensor,
    pub bits: u8,
    pub activation: Activation,
    /// Fixed scheme for frozen (e.g. fault-injected) copies. When unset the
    /// scheme is re-derived from the latent weights on every forward pass.
    pub frozen: Option<QuantScheme>,
}

impl QuantFcLayer {
    pub fn new(inp: usize, out: usize, bits: u8, activation: Activation, rng: &mut Rng) -> Self {
        Self {
            weights: kaiming_uniform(out, inp, rng),
            bias: Tensor::zeros(vec![out]),
            bits,
            activation,
            frozen: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn scheme(&self) -> Result<QuantScheme> {
        match self.frozen {
            Some(s) => Ok(s),
            None => range_from_tensor(&self.weights, self.bits),
        }
    }

    /// Weights as seen by the forward pass.
    pub fn effective_weights(&self) -> Result<Tensor> {
        let s = self.scheme()?;
        Ok(self.weights.map(|v| s.fake(v)))
    }

    pub(crate) fn forward_graph(&self, g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
        let wq = g.fake_quantize(w, self.scheme()?)?;
        let y = g.linear(x, wq)?;
        let y = g.add_row(y, b)?;
        match self.activation {
            Activation::Relu => g.relu(y),
            Activation::None => Ok(y),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (bsz, inp) = x.dims2()?;
        if inp != self.in_features() {
            return Err(Error::Dimension(format!(
                "layer expects width {}, got {inp}",
                self.in_features()
            )));
        }
        let out = self.out_features();
        let w = self.effective_weights()?;
        let mut y = vec![0.0; bsz * out];
        gemm(bsz, inp, out, x.data(), (inp, 1), w.data(), (1, inp), &mut y, 0.0);
        for row in y.chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
                if self.activation == Activation::Relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Tensor::matrix(bsz, out, y)
    }
}

/// Binarized hidden layer: ±1 weights, ±1 activations, one learnable threshold per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct BinFcLayer {
    /// Latent real weights `[out×in]`; the forward pass uses their signs.
    pub weights: Tensor,
    pub thresholds: Tensor,
}

impl BinFcLayer {
    pub fn new(inp: usize, out: usize, rng: &mut Rng) -> Self {
        Self {
            weights: kaiming_uniform(out, inp, rng),
            thresholds: Tensor::zeros(vec![out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Row-major sign bits of the weights (`1` ↔ `+1`).
    pub fn weight_bits(&self) -> BitMatrix {
        BitMatrix::from_signs(self.out_features(), self.in_features(), self.weights.data())
    }

    pub(crate) fn forward_graph(&self, g: &mut Graph, a: Var, w: Var, t: Var) -> Result<Var> {
        let wb = g.binarize(w)?;
        let s = g.linear(a, wb)?;
        let z = g.sub_row(s, t)?;
        // rescaling keeps the sign but brings pre-activations into the STE window
        let z = g.scale(z, 1.0 / (self.in_features() as f64).sqrt())?;
        g.threshold_sign(z)
    }

    /// Pre-activations `s = 2·popcount(XNOR(w, a)) − #bits` for each sample and neuron.
    pub fn preactivations(&self, a: &Tensor) -> Result<Vec<i64>> {
        let (bsz, inp) = a.dims2()?;
        if inp != self.in_features() {
            return Err(Error::Dimension(format!(
                "binarized layer expects width {}, got {inp}",
                self.in_features()
            )));
        }
        if let Some(v) = a.data().iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::Contract(format!(
                "binarized layer input must be ±1, found {v}"
            )));
        }
        let wbits = self.weight_bits();
        let abits = BitMatrix::from_signs(bsz, inp, a.data());
        let mut s = Vec::with_capacity(bsz * self.out_features());
        for r in 0..bsz {
            for j in 0..self.out_features() {
                s.push(xnor_dot(wbits.row(j), abits.row(r), inp));
            }
        }
        Ok(s)
    }

    /// `+1` where `s > t`, else `−1`.
    pub fn forward(&self, a: &Tensor) -> Result<Tensor> {
        let (bsz, _) = a.dims2()?;
        let out = self.out_features();
        let s = self.preactivations(a)?;
        let t = self.thresholds.data();
        let y = s
            .iter()
            .enumerate()
            .map(|(i, &sv)| if sv as f64 > t[i % out] { 1.0 } else { -1.0 })
            .collect();
        Tensor::matrix(bsz, out, y)
    }
}

/// Bit-packed ±1 matrix, 64 entries per word, rows padded to whole words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn from_signs(rows: usize, cols: usize, values: &[f64]) -> Self {
        let words_per_row = cols.div_ceil(64);
        let mut words = vec![0u64; rows * words_per_row];
        for r in 0..rows {
            for c in 0..cols {
                if sign(values[r * cols + c]) > 0.0 {
                    words[r * words_per_row + c / 64] |= 1 << (c % 64);
                }
            }
        }
        Self {
            rows,
            cols,
            words_per_row,
            words,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }
}

/// `2·popcount(XNOR(w, a)) − nbits` over the first `nbits` packed entries.
pub fn xnor_dot(w: &[u64], a: &[u64], nbits: usize) -> i64 {
    let mut agree = 0u32;
    for (i, (x, y)) in w.iter().zip(a).enumerate() {
        let valid = nbits - i * 64;
        let mask = if valid >= 64 {
            u64::MAX
        } else {
            (1u64 << valid) - 1
        };
        agree += (!(x ^ y) & mask).count_ones();
    }
    2 * agree as i64 - nbits as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_input_zero_bias() {
        let mut rng = stream(1, &[]);
        let l = QuantFcLayer::new(3, 2, 4, Activation::Relu, &mut rng);
        let y = l.forward(&Tensor::zeros(vec![2, 3])).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn grid_weights_give_exact_matmul() {
        let l = QuantFcLayer {
            weights: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(vec![2]),
            bits: 2,
            activation: Activation::None,
            frozen: Some(QuantScheme::new(2, -1.0, 2.0).unwrap()),
        };
        let x = Tensor::matrix(1, 2, vec![3.5, -2.25]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data(), &[3.5, -2.25]);
    }

    #[test]
    fn forward_matches_explicit_dequantized_codes() {
        let mut rng = stream(4, &[]);
        let l = QuantFcLayer::new(5, 3, 4, Activation::None, &mut rng);
        let s = l.scheme().unwrap();
        let codes = crate::quant::CodeTensor::encode(&l.weights, s);
        let w = codes.decode();
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap();
        let y = l.forward(&x).unwrap();
        for r in 0..2 {
            for j in 0..3 {
                let manual: f64 = (0..5).map(|k| x.row(r)[k] * w.row(j)[k]).sum();
                assert!((y.row(r)[j] - manual).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_agreement_and_single_flip() {
        let w = BitMatrix::from_signs(1, 8, &[1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
        let a = w.clone();
        assert_eq!(xnor_dot(w.row(0), a.row(0), 8), 8);
        let flipped =
            BitMatrix::from_signs(1, 8, &[-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
        assert_eq!(xnor_dot(flipped.row(0), a.row(0), 8), 6);
    }

    #[test]
    fn xnor_matches_dense_dot() {
        use rand::Rng as _;
        let mut rng = stream(9, &[]);
        for n in [1usize, 16, 63, 64, 65, 130] {
            let w: Vec<f64> = (0..n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
            let a: Vec<f64> = (0..n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
            let dense: f64 = w.iter().zip(&a).map(|(x, y)| x * y).sum();
            let wb = BitMatrix::from_signs(1, n, &w);
            let ab = BitMatrix::from_signs(1, n, &a);
            assert_eq!(xnor_dot(wb.row(0), ab.row(0), n), dense as i64);
        }
    }

    #[test]
    fn binarized_layer_rejects_real_input() {
        let mut rng = stream(2, &[]);
        let l = BinFcLayer::new(3, 2, &mut rng);
        let a = Tensor::matrix(1, 3, vec![1.0, 0.5, -1.0]).unwrap();
        assert!(matches!(l.forward(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn threshold_comparison_is_strict() {
        let l = BinFcLayer {
            weights: Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
            thresholds: Tensor::vector(vec![2.0]).unwrap(),
        };
        let a = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(l.forward(&a).unwrap().data(), &[-1.0]);
        let l = BinFcLayer {
            thresholds: Tensor::vector(vec![1.5]).unwrap(),
            ..l
        };
        assert_eq!(l.forward(&a).unwrap().data(), &[1.0]);
    }
}
