//! Bit-flip injection into stored weight codes and BER sweeps.
//!
//! Flips are symmetric and independent per bit, and touch weights only:
//! biases and thresholds are left alone. Injection never happens during
//! training; every perturbed model is a forward-only copy.

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::network::{Layer, Model};
use crate::quant::{CodeTensor, QuantScheme};
use crate::rng::{stream, Rng};

pub const DEFAULT_BERS: [f64; 8] = [0.0, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1];
pub const DEFAULT_TRIALS: usize = 20;

const SWEEP_DOMAIN: u64 = 0xfa17;

/// Symmetric i.i.d. bit errors at rate `p` on weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    p: f64,
}

impl ErrorModel {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("bit error rate {p} outside [0, 1]")));
        }
        Ok(Self { p })
    }

    pub fn ber(&self) -> f64 {
        self.p
    }
}

/// Identifies the random stream of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master: u64,
    pub ber_index: usize,
    pub trial: usize,
}

impl RngStream {
    pub fn rng(&self) -> Rng {
        stream(self.master, &[SWEEP_DOMAIN, self.ber_index as u64, self.trial as u64])
    }
}

/// Copy of `codes` with each of its bits inverted independently with probability `p`.
pub fn flip_bits(codes: &CodeTensor, em: ErrorModel, rng: &mut Rng) -> CodeTensor {
    let mut out = codes.clone();
    let bits = codes.scheme().bits();
    let p = em.p;
    if p == 1.0 {
        let mask = codes.scheme().max_code();
        out.codes_mut().iter_mut().for_each(|c| *c ^= mask);
    } else if p > 0.0 {
        for c in out.codes_mut() {
            for i in 0..bits {
                if rng.gen_bool(p) {
                    *c ^= 1 << i;
                }
            }
        }
    }
    out
}

/// `|dequantize(c ^ 2^i) − dequantize(c)|`.
pub fn single_flip_delta(code: u32, position: u32, scheme: &QuantScheme) -> Result<f64> {
    if position >= scheme.bits() as u32 {
        return Err(Error::BitPosition {
            position,
            bits: scheme.bits(),
        });
    }
    let before = scheme.dequantize(code)?;
    let after = scheme.dequantize(code ^ (1 << position))?;
    Ok((after - before).abs())
}

/// Weight codes of one layer under the scheme its forward pass uses.
pub fn weight_codes(layer: &Layer) -> Result<CodeTensor> {
    Ok(match layer {
        Layer::Quant(l) => CodeTensor::encode(&l.weights, l.scheme()?),
        Layer::Bin(l) => CodeTensor::encode(&l.weights, QuantScheme::binary()),
    })
}

fn install_codes(layer: &mut Layer, codes: &CodeTensor) {
    match layer {
        Layer::Quant(l) => {
            l.weights = codes.decode();
            l.frozen = Some(codes.scheme());
        }
        Layer::Bin(l) => l.weights = codes.decode(),
    }
}

/// Forward-only copy of `m` whose weights went through encode, flip, decode.
pub fn perturb_model(m: &Model, em: ErrorModel, rng: &mut Rng) -> Result<Model> {
    let mut out = m.clone();
    for layer in out.layers_mut() {
        let codes = weight_codes(layer)?;
        install_codes(layer, &flip_bits(&codes, em, rng));
    }
    Ok(out)
}

/// Copy of `m` with exactly one stored weight bit inverted. Every other
/// weight is replaced by its decoded level, so the copy differs from the
/// error-free quantized model in that one bit only.
pub fn flip_weight_bit(m: &Model, layer: usize, index: usize, position: u32) -> Result<Model> {
    let mut out = m.clone();
    let n_layers = out.layers().len();
    let target = out
        .layers_mut()
        .get_mut(layer)
        .ok_or_else(|| Error::Contract(format!("layer {layer} of {n_layers}")))?;
    let codes = weight_codes(target)?;
    let scheme = codes.scheme();
    if position >= scheme.bits() as u32 {
        return Err(Error::BitPosition {
            position,
            bits: scheme.bits(),
        });
    }
    let mut flipped = codes.clone();
    let slot = flipped
        .codes_mut()
        .get_mut(index)
        .ok_or_else(|| Error::Contract(format!("weight {index} of {}", codes.codes().len())))?;
    *slot ^= 1 << position;
    install_codes(target, &flipped);
    Ok(out)
}

/// Number of stored weight bits per layer.
pub fn weight_bit_counts(m: &Model) -> Result<Vec<usize>> {
    m.layers()
        .iter()
        .map(|l| weight_codes(l).map(|c| c.bit_count()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub ber: f64,
    pub trial: usize,
    pub accuracy: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerSweepResult {
    /// Ordered by (ber, trial).
    pub rows: Vec<SweepRow>,
    pub master_seed: u64,
    pub architecture: String,
}

impl BerSweepResult {
    /// `(ber, mean accuracy, mean margin)` per BER, in sweep order.
    pub fn summary(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.0 == r.ber => {
                    last.1 += r.accuracy;
                    last.2 += r.mean_margin;
                    last.3 += 1;
                }
                _ => out.push((r.ber, r.accuracy, r.mean_margin, 1)),
            }
        }
        out.into_iter()
            .map(|(b, a, m, n)| (b, a / n as f64, m / n as f64))
            .collect()
    }

    pub fn mean_accuracy(&self, ber: f64) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.0 == ber)
            .map(|s| s.1)
    }
}

/// Accuracy and mean margin of `trials` perturbed copies per BER. Trials run
/// in parallel; each cell draws from its own derived stream.
pub fn ber_sweep(
    m: &Model,
    eval: &Dataset,
    bers: &[f64],
    trials: usize,
    seed: u64,
) -> Result<BerSweepResult> {
    if trials == 0 {
        return Err(Error::Config("a sweep needs at least one trial".into()));
    }
    let models: Vec<ErrorModel> = bers.iter().map(|&p| ErrorModel::new(p)).collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..bers.len())
        .flat_map(|b| (0..trials).map(move |t| (b, t)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(b, t)| {
            let ctx = || format!("ber {}, trial {t}", bers[b]);
            let mut rng = RngStream {
                master: seed,
                ber_index: b,
                trial: t,
            }
            .rng();
            let perturbed = perturb_model(m, models[b], &mut rng).map_err(|e| e.with_context(ctx()))?;
            let (accuracy, mean_margin) =
                evaluate(&perturbed, eval).map_err(|e| e.with_context(ctx()))?;
            Ok(SweepRow {
                ber: bers[b],
                trial: t,
                accuracy,
                mean_margin,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BerSweepResult {
        rows,
        master_seed: seed,
        architecture: m.architecture(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::tensor::Tensor;

    fn codes(bits: u8) -> CodeTensor {
        let s = QuantScheme::new(bits, -1.0, 1.0).unwrap();
        let n = 1u32 << bits;
        CodeTensor::new(vec![n as usize], (0..n).collect(), s).unwrap()
    }

    #[test]
    fn error_model_range() {
        assert!(ErrorModel::new(-0.1).is_err());
        assert!(ErrorModel::new(1.1).is_err());
        assert!(ErrorModel::new(f64::NAN).is_err());
        assert!(ErrorModel::new(0.0).is_ok());
    }

    #[test]
    fn zero_and_one_rates() {
        let mut rng = stream(1, &[]);
        for bits in [1u8, 2, 4, 8] {
            let c = codes(bits);
            assert_eq!(flip_bits(&c, ErrorModel::new(0.0).unwrap(), &mut rng), c);
            let all = flip_bits(&c, ErrorModel::new(1.0).unwrap(), &mut rng);
            let max = c.scheme().max_code();
            for (a, b) in c.codes().iter().zip(all.codes()) {
                assert_eq!(*b, max - a);
            }
        }
    }

    #[test]
    fn flips_stay_in_range_and_leave_input_alone() {
        let c = codes(4);
        let before = c.clone();
        let out = flip_bits(&c, ErrorModel::new(0.3).unwrap(), &mut stream(2, &[]));
        assert_eq!(c, before);
        assert!(out.codes().iter().all(|&x| x <= 15));
        let t = out.decode();
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn flip_delta_examples() {
        let s = QuantScheme::new(4, -1.0, 1.0).unwrap();
        assert_eq!(single_flip_delta(0, 3, &s).unwrap(), 8.0 * s.delta());
        assert!((single_flip_delta(15, 0, &s).unwrap() - s.delta()).abs() < 1e-15);
        assert!(matches!(
            single_flip_delta(0, 4, &s),
            Err(Error::BitPosition { position: 4, bits: 4 })
        ));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let c = CodeTensor::new(vec![4096], vec![0; 4096], QuantScheme::new(8, -1.0, 1.0).unwrap()).unwrap();
        let em = ErrorModel::new(0.1).unwrap();
        let s = |b, t| RngStream { master: 5, ber_index: b, trial: t }.rng();
        assert_eq!(flip_bits(&c, em, &mut s(1, 2)), flip_bits(&c, em, &mut s(1, 2)));
        assert_ne!(flip_bits(&c, em, &mut s(1, 2)), flip_bits(&c, em, &mut s(2, 1)));
    }

    #[test]
    fn perturbation_keeps_biases_and_clean_predictions() {
        let m = Model::fc_mlp3(6, 3, 4, 1.0, 4).unwrap();
        let x = Tensor::matrix(2, 6, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        let p = perturb_model(&m, ErrorModel::new(0.0).unwrap(), &mut stream(0, &[])).unwrap();
        assert_eq!(p.predict_batch(&x).unwrap(), m.predict_batch(&x).unwrap());
        let q = perturb_model(&m, ErrorModel::new(0.5).unwrap(), &mut stream(0, &[])).unwrap();
        for (a, b) in m.params().iter().zip(q.params()) {
            if a.0.ends_with("bias") {
                assert_eq!(a.1, b.1);
            }
        }
    }

    #[test]
    fn bnn_weights_flip_sign() {
        let m = Model::fc_mlp3(6, 3, 1, 1.0, 4).unwrap();
        let f = flip_weight_bit(&m, 0, 5, 0).unwrap();
        let (Layer::Bin(a), Layer::Bin(b)) = (&m.layers()[0], &f.layers()[0]) else {
            panic!("expected a binarized hidden layer");
        };
        assert_eq!(b.weights.data()[5], -crate::quant::sign(a.weights.data()[5]));
        assert_eq!(a.thresholds, b.thresholds);
        assert!(flip_weight_bit(&m, 0, 5, 1).is_err());
    }

    #[test]
    fn sweep_shape_and_zero_rate() {
        let data = synthetic_blobs(3, 10, 4, 0.3, 1).unwrap();
        let m = Model::mlp(&[4, 8, 3], 4, 1.0, 2).unwrap();
        let clean = evaluate(&m, &data).unwrap();
        let r = ber_sweep(&m, &data, &[0.0, 0.05], 3, 9).unwrap();
        assert_eq!(r.rows.len(), 6);
        for (i, row) in r.rows.iter().enumerate() {
            assert_eq!((row.ber, row.trial), ([0.0, 0.05][i / 3], i % 3));
        }
        for row in &r.rows[..3] {
            assert_eq!((row.accuracy, row.mean_margin), clean);
        }
        assert_eq!(r, ber_sweep(&m, &data, &[0.0, 0.05], 3, 9).unwrap());
        assert!(ber_sweep(&m, &data, &[0.0], 0, 9).is_err());
        assert!(ber_sweep(&m, &data, &[2.0], 1, 9).is_err());
    }
}
