//! Uniform n-bit quantization with unsigned offset-binary codes, plus the
//! sign binarizer used by the binarized layers.
//!
//! A scheme maps `[v_min, v_max]` onto the integer codes `0..=2^n - 1`.
//! Codes are plain unsigned words, so flipping bit `i` of any code lands on
//! another valid level exactly `2^i` steps away.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest half-range a derived scheme may have.
pub const MIN_RANGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantScheme {
    bits: u8,
    v_min: f64,
    v_max: f64,
}

impl QuantScheme {
    pub fn new(bits: u8, v_min: f64, v_max: f64) -> Result<Self> {
        if !(1..=8).contains(&bits) {
            return Err(Error::Config(format!("bit width {bits} not in 1..=8")));
        }
        if !(v_min.is_finite() && v_max.is_finite() && v_min < v_max) {
            return Err(Error::Config(format!(
                "invalid quantization range [{v_min}, {v_max}]"
            )));
        }
        Ok(Self { bits, v_min, v_max })
    }

    /// Symmetric ±1 scheme whose 1-bit codes encode binarized weights (0 → −1, 1 → +1).
    pub fn binary() -> Self {
        Self {
            bits: 1,
            v_min: -1.0,
            v_max: 1.0,
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn max_code(&self) -> u32 {
        self.levels() - 1
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / self.max_code() as f64
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.v_min && v <= self.v_max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.v_min, self.v_max)
    }

    /// Clamp into range, then round to the nearest level (ties away from zero).
    pub fn quantize(&self, v: f64) -> u32 {
        let scaled =
            (self.clamp(v) - self.v_min) * self.max_code() as f64 / (self.v_max - self.v_min);
        (scaled.round() as u32).min(self.max_code())
    }

    pub fn dequantize(&self, code: u32) -> Result<f64> {
        if code > self.max_code() {
            return Err(Error::Encoding {
                code,
                bits: self.bits,
            });
        }
        Ok(self.level(code))
    }

    /// Dequantize a code already known to be in range.
    pub(crate) fn level(&self, code: u32) -> f64 {
        (self.v_min + code as f64 * self.delta()).min(self.v_max)
    }

    pub fn fake(&self, v: f64) -> f64 {
        self.level(self.quantize(v))
    }
}

/// A tensor of n-bit codes together with the scheme that decodes them.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeTensor {
    shape: Vec<usize>,
    codes: Vec<u32>,
    scheme: QuantScheme,
}

impl CodeTensor {
    pub fn new(shape: Vec<usize>, codes: Vec<u32>, scheme: QuantScheme) -> Result<Self> {
        if shape.iter().product::<usize>() != codes.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} does not hold {} codes",
                codes.len()
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c > scheme.max_code()) {
            return Err(Error::Encoding {
                code: bad,
                bits: scheme.bits(),
            });
        }
        Ok(Self {
            shape,
            codes,
            scheme,
        })
    }

    pub fn encode(t: &Tensor, scheme: QuantScheme) -> Self {
        Self {
            shape: t.shape().to_vec(),
            codes: t.data().iter().map(|&v| scheme.quantize(v)).collect(),
            scheme,
        }
    }

    pub fn decode(&self) -> Tensor {
        let data = self.codes.iter().map(|&c| self.scheme.level(c)).collect();
        Tensor::new(self.shape.clone(), data).expect("code tensor shape is consistent")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub(crate) fn codes_mut(&mut self) -> &mut [u32] {
        &mut self.codes
    }

    pub fn scheme(&self) -> QuantScheme {
        self.scheme
    }

    pub fn bit_count(&self) -> usize {
        self.codes.len() * self.scheme.bits() as usize
    }
}

pub fn quantize(v: f64, scheme: &QuantScheme) -> u32 {
    scheme.quantize(v)
}

pub fn dequantize(code: u32, scheme: &QuantScheme) -> Result<f64> {
    scheme.dequantize(code)
}

/// Symmetric max-abs range for `w` at the given bit width.
pub fn range_from_tensor(w: &Tensor, bits: u8) -> Result<QuantScheme> {
    if w.is_empty() {
        return Err(Error::Dimension("cannot derive a range from an empty tensor".into()));
    }
    let max_abs = w
        .data()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(MIN_RANGE);
    QuantScheme::new(bits, -max_abs, max_abs)
}

/// Sign with `sign(0) = +1`.
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn binarize(w: &Tensor) -> Tensor {
    w.map(sign)
}
