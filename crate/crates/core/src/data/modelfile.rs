//! Versioned binary model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "MCELQNN1" | version u32 | payload length u64 | payload | crc32(payload) u32
//! ```
//!
//! The payload holds the architecture string, bit width, logit scale, seed
//! and then every layer's geometry, quantization parameters and raw `f64`
//! parameters.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::network::{
    param_count_for, parse_architecture, Activation, BinFcLayer, Layer, Model, QuantFcLayer,
};
use crate::quant::QuantScheme;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 8] = b"MCELQNN1";
pub const MODEL_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8;
const TRAILER_LEN: usize = 4;

const KIND_QUANT: u8 = 0;
const KIND_BIN: u8 = 1;

pub fn encode_model(m: &Model) -> Vec<u8> {
    let mut p = Vec::new();
    let arch = m.architecture();
    // Writes into a Vec cannot fail.
    p.write_u32::<LittleEndian>(arch.len() as u32).unwrap();
    p.extend_from_slice(arch.as_bytes());
    p.write_u8(m.bits()).unwrap();
    p.write_f64::<LittleEndian>(m.logit_scale()).unwrap();
    p.write_u64::<LittleEndian>(m.seed()).unwrap();
    p.write_u32::<LittleEndian>(m.layers().len() as u32).unwrap();
    for layer in m.layers() {
        match layer {
            Layer::Quant(l) => {
                p.write_u8(KIND_QUANT).unwrap();
                p.write_u32::<LittleEndian>(l.in_features() as u32).unwrap();
                p.write_u32::<LittleEndian>(l.out_features() as u32).unwrap();
                p.write_u8(l.bits).unwrap();
                p.write_u8(matches!(l.activation, Activation::Relu) as u8).unwrap();
                let (flag, lo, hi) = match l.frozen {
                    Some(s) => (1, s.v_min(), s.v_max()),
                    None => (0, 0.0, 0.0),
                };
                p.write_u8(flag).unwrap();
                p.write_f64::<LittleEndian>(lo).unwrap();
                p.write_f64::<LittleEndian>(hi).unwrap();
                write_values(&mut p, l.weights.data());
                write_values(&mut p, l.bias.data());
            }
            Layer::Bin(l) => {
                p.write_u8(KIND_BIN).unwrap();
                p.write_u32::<LittleEndian>(l.in_features() as u32).unwrap();
                p.write_u32::<LittleEndian>(l.out_features() as u32).unwrap();
                write_values(&mut p, l.weights.data());
                write_values(&mut p, l.thresholds.data());
            }
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + p.len() + TRAILER_LEN);
    out.extend_from_slice(MODEL_MAGIC);
    out.write_u32::<LittleEndian>(MODEL_VERSION).unwrap();
    out.write_u64::<LittleEndian>(p.len() as u64).unwrap();
    out.extend_from_slice(&p);
    out.write_u32::<LittleEndian>(crc32fast::hash(&p)).unwrap();
    out
}

fn write_values(p: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        p.write_f64::<LittleEndian>(x).unwrap();
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::CorruptLength(format!(
            "{} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(Error::ModelMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let plen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = HEADER_LEN.saturating_add(plen).saturating_add(TRAILER_LEN);
    if bytes.len() != expected {
        return Err(Error::CorruptLength(format!(
            "header announces {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + plen];
    let stored = u32::from_le_bytes(bytes[HEADER_LEN + plen..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    parse_payload(payload)
}

fn malformed(e: std::io::Error) -> Error {
    Error::Malformed(format!("payload ended early: {e}"))
}

fn read_values(c: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    let remaining = c.get_ref().len() - c.position() as usize;
    if n.saturating_mul(8) > remaining {
        return Err(Error::Malformed(format!(
            "{n} values announced, {remaining} bytes left"
        )));
    }
    (0..n)
        .map(|_| c.read_f64::<LittleEndian>().map_err(malformed))
        .collect()
}

fn parse_payload(payload: &[u8]) -> Result<Model> {
    let mut c = Cursor::new(payload);
    let alen = c.read_u32::<LittleEndian>().map_err(malformed)? as usize;
    if alen > payload.len() {
        return Err(Error::Malformed("architecture string too long".into()));
    }
    let mut arch = vec![0u8; alen];
    c.read_exact(&mut arch).map_err(malformed)?;
    let arch = String::from_utf8(arch)
        .map_err(|_| Error::Malformed("architecture string is not UTF-8".into()))?;
    let bits = c.read_u8().map_err(malformed)?;
    let logit_scale = c.read_f64::<LittleEndian>().map_err(malformed)?;
    let seed = c.read_u64::<LittleEndian>().map_err(malformed)?;
    let n_layers = c.read_u32::<LittleEndian>().map_err(malformed)? as usize;
    if n_layers > payload.len() {
        return Err(Error::Malformed(format!("{n_layers} layers announced")));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = c.read_u8().map_err(malformed)?;
        let inp = c.read_u32::<LittleEndian>().map_err(malformed)? as usize;
        let out = c.read_u32::<LittleEndian>().map_err(malformed)? as usize;
        if inp == 0 || out == 0 {
            return Err(Error::Malformed("zero layer width".into()));
        }
        match kind {
            KIND_QUANT => {
                let lbits = c.read_u8().map_err(malformed)?;
                let relu = c.read_u8().map_err(malformed)?;
                let frozen = c.read_u8().map_err(malformed)?;
                let lo = c.read_f64::<LittleEndian>().map_err(malformed)?;
                let hi = c.read_f64::<LittleEndian>().map_err(malformed)?;
                let frozen = match frozen {
                    0 => None,
                    _ => Some(
                        QuantScheme::new(lbits, lo, hi)
                            .map_err(|e| Error::Malformed(e.to_string()))?,
                    ),
                };
                let weights = Tensor::matrix(out, inp, read_values(&mut c, out * inp)?)?;
                let bias = Tensor::vector(read_values(&mut c, out)?)?;
                layers.push(Layer::Quant(QuantFcLayer {
                    weights,
                    bias,
                    bits: lbits,
                    activation: if relu == 1 {
                        Activation::Relu
                    } else {
                        Activation::None
                    },
                    frozen,
                }));
            }
            KIND_BIN => {
                let weights = Tensor::matrix(out, inp, read_values(&mut c, out * inp)?)?;
                let thresholds = Tensor::vector(read_values(&mut c, out)?)?;
                layers.push(Layer::Bin(BinFcLayer {
                    weights,
                    thresholds,
                }));
            }
            other => return Err(Error::Malformed(format!("unknown layer kind {other}"))),
        }
    }
    if (c.position() as usize) != payload.len() {
        return Err(Error::Malformed("trailing bytes after last layer".into()));
    }

    let model = Model::new(layers, logit_scale, bits, seed)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    if model.architecture() != arch {
        return Err(Error::Malformed(format!(
            "header says '{arch}', layers describe '{}'",
            model.architecture()
        )));
    }
    let (_, dims) = parse_architecture(&arch)?;
    if param_count_for(&dims) != model.param_count() {
        return Err(Error::Malformed("parameter count does not match architecture".into()));
    }
    Ok(model)
}

pub fn save_model(m: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    decode_model(&bytes)
}
