//! Binary model and dataset files. All multi-byte values are little-endian.
//!
//! Model file (`TMLP`):
//!
//! ```text
//! magic      b"TMLP"
//! version    u16          = 1
//! n_sizes    u8           number of layer sizes (layers + 1)
//! sizes      u32 × n_sizes
//! activation u8           0 sigmoid, 1 hard sigmoid
//! precision  u8           0 full precision, 2 ternary
//! ```
//!
//! Full precision continues with every weight matrix row-major as binary32,
//! layer by layer, then every bias vector. Ternary continues with the
//! weights at 2 bits each (`00` = 0, `01` = +1, `10` = -1, `11` reserved),
//! four per byte starting at the low bits, each row padded to a whole byte;
//! then the biases as binary32, the 256-entry activation table as binary32
//! and finally the table half-range `R` as binary32.
//!
//! Dataset file (`TSDS`): magic, version u16 = 1, patch size u16, sample
//! count u64, then per sample `3 p²` binary32 features and one label byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::write_atomic;
use crate::mfree::AnyModel;
use crate::mlp::{Activation, MlpModel};
use crate::patch::{Dataset, PixelSample};
use crate::quant::{ActivationLut, TernaryLayer, TernaryModel, LUT_SIZE};

pub const MODEL_MAGIC: &[u8; 4] = b"TMLP";
pub const DATASET_MAGIC: &[u8; 4] = b"TSDS";
pub const MODEL_VERSION: u16 = 1;
pub const DATASET_VERSION: u16 = 1;
pub const PRECISION_FULL: u8 = 0;
pub const PRECISION_TERNARY: u8 = 2;

type Decoded<T> = std::result::Result<T, String>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Decoded<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u8(&mut self) -> Decoded<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Decoded<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Decoded<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Decoded<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Decoded<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or("length overflow")?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Decoded<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.bytes.len() - self.pos))
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_header(out: &mut Vec<u8>, sizes: &[usize], activation: Activation, precision: u8) {
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(sizes.len() as u8);
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.push(activation.id());
    out.push(precision);
}

struct Header {
    sizes: Vec<usize>,
    activation: Activation,
    precision: u8,
}

fn read_header(r: &mut Reader<'_>) -> Decoded<Header> {
    if r.take(4).map_err(|_| "file too short for magic")? != MODEL_MAGIC {
        return Err("bad magic, not a TMLP model".into());
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(format!("unsupported model version {version}"));
    }
    let n = r.u8()? as usize;
    if n < 2 {
        return Err(format!("model needs at least 2 layer sizes, header says {n}"));
    }
    let sizes = (0..n).map(|_| r.u32().map(|s| s as usize)).collect::<Decoded<Vec<_>>>()?;
    if sizes.iter().any(|&s| s == 0) || sizes.iter().product::<usize>() > 1 << 32 {
        return Err(format!("implausible layer sizes {sizes:?}"));
    }
    let act = r.u8()?;
    let activation = Activation::from_id(act).ok_or(format!("unknown activation id {act}"))?;
    let precision = r.u8()?;
    Ok(Header {
        sizes,
        activation,
        precision,
    })
}

pub fn encode_full(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, &model.layer_sizes(), model.activation(), PRECISION_FULL);
    for l in model.layers() {
        put_f32s(&mut out, l.weights().iter().map(|&w| w as f32));
    }
    for l in model.layers() {
        put_f32s(&mut out, l.biases().iter().map(|&b| b as f32));
    }
    out
}

fn pack_row(row: &[i8], out: &mut Vec<u8>) {
    for chunk in row.chunks(4) {
        let mut byte = 0u8;
        for (k, &w) in chunk.iter().enumerate() {
            let code = match w {
                1 => 0b01,
                -1 => 0b10,
                _ => 0b00,
            };
            byte |= code << (2 * k);
        }
        out.push(byte);
    }
}

fn unpack_row(bytes: &[u8], n: usize) -> Decoded<Vec<i8>> {
    let mut row = Vec::with_capacity(n);
    for (b, &byte) in bytes.iter().enumerate() {
        for k in 0..4 {
            let code = (byte >> (2 * k)) & 0b11;
            if b * 4 + k >= n {
                if code != 0 {
                    return Err("non-zero row padding".into());
                }
                continue;
            }
            row.push(match code {
                0b00 => 0,
                0b01 => 1,
                0b10 => -1,
                _ => return Err("reserved weight code 11".into()),
            });
        }
    }
    Ok(row)
}

pub fn encode_ternary(model: &TernaryModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, &model.layer_sizes(), model.activation(), PRECISION_TERNARY);
    for l in model.layers() {
        for j in 0..l.out_dim() {
            pack_row(l.row(j), &mut out);
        }
    }
    for l in model.layers() {
        put_f32s(&mut out, l.biases().iter().copied());
    }
    put_f32s(&mut out, model.lut().table().iter().copied());
    put_f32s(&mut out, [model.lut().range()]);
    out
}

pub fn encode_model(model: &AnyModel) -> Vec<u8> {
    match model {
        AnyModel::Full(m) => encode_full(m),
        AnyModel::Quantized(m) => encode_ternary(m),
    }
}

fn decode_body(bytes: &[u8]) -> Decoded<AnyModel> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r)?;
    if *h.sizes.last().unwrap() != 2 {
        return Err(format!("output layer must have 2 units, header says {:?}", h.sizes));
    }
    let shapes: Vec<(usize, usize)> = h.sizes.windows(2).map(|w| (w[0], w[1])).collect();
    let model = match h.precision {
        PRECISION_FULL => {
            let weights = shapes
                .iter()
                .map(|&(i, o)| Ok(r.f32s(i * o)?.into_iter().map(f64::from).collect()))
                .collect::<Decoded<Vec<Vec<f64>>>>()?;
            let biases = shapes
                .iter()
                .map(|&(_, o)| Ok(r.f32s(o)?.into_iter().map(f64::from).collect()))
                .collect::<Decoded<Vec<Vec<f64>>>>()?;
            let m = MlpModel::from_parts(&h.sizes, weights, biases, h.activation).map_err(|e| e.to_string())?;
            AnyModel::Full(m)
        }
        PRECISION_TERNARY => {
            let mut weights = Vec::with_capacity(shapes.len());
            for &(i, o) in &shapes {
                let mut w = Vec::with_capacity(i * o);
                for _ in 0..o {
                    w.extend(unpack_row(r.take(i.div_ceil(4))?, i)?);
                }
                weights.push(w);
            }
            let biases = shapes.iter().map(|&(_, o)| r.f32s(o)).collect::<Decoded<Vec<_>>>()?;
            let table = r.f32s(LUT_SIZE)?;
            let range = r.f32s(1)?[0];
            let lut = ActivationLut::from_table(range, table).map_err(|e| e.to_string())?;
            let layers = shapes
                .iter()
                .zip(weights.into_iter().zip(biases))
                .map(|(&(i, o), (w, b))| TernaryLayer::new(i, o, w, b))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            AnyModel::Quantized(TernaryModel::new(layers, h.activation, lut).map_err(|e| e.to_string())?)
        }
        p => return Err(format!("unsupported precision tag {p}")),
    };
    r.finish()?;
    Ok(model)
}

/// Decodes a model file of either precision.
pub fn decode_model(bytes: &[u8]) -> Result<AnyModel> {
    decode_body(bytes).map_err(|reason| Error::format("<memory>", reason))
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_body(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let dim = ds.feature_len();
    let mut out = Vec::with_capacity(16 + ds.len() * (4 * dim + 1));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.patch_size as u16).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for s in &ds.samples {
        put_f32s(&mut out, s.features.iter().copied());
        out.push(s.label);
    }
    out
}

fn decode_dataset_body(bytes: &[u8]) -> Decoded<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| "file too short for magic")? != DATASET_MAGIC {
        return Err("bad magic, not a TSDS dataset".into());
    }
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(format!("unsupported dataset version {version}"));
    }
    let patch_size = r.u16()? as usize;
    if patch_size % 2 == 0 {
        return Err(format!("patch size {patch_size} is not odd"));
    }
    let count = r.u64()? as usize;
    let dim = 3 * patch_size * patch_size;
    let record = 4 * dim + 1;
    if count.checked_mul(record) != Some(bytes.len() - r.pos) {
        return Err(format!("expected {count} records of {record} bytes"));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let features = r.f32s(dim)?;
        let label = r.u8()?;
        if label > 1 {
            return Err(format!("label {label} is not 0 or 1"));
        }
        samples.push(PixelSample {
            features,
            label,
            origin: None,
        });
    }
    r.finish()?;
    Ok(Dataset {
        samples,
        patch_size,
        seed: 0,
    })
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    decode_dataset_body(bytes).map_err(|reason| Error::format("<memory>", reason))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset_body(&bytes).map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::QuantMode;
    use crate::quant::quantize_model;
    use crate::rng;

    fn models() -> (MlpModel, TernaryModel) {
        let full = MlpModel::init(&crate::DEFAULT_LAYER_SIZES, Activation::Sigmoid, 4).unwrap();
        let q = quantize_model(&full, QuantMode::Ternary, 0.05, 8.0, &mut rng::seeded(0)).unwrap();
        (full, q)
    }

    #[test]
    fn header_layout() {
        let (full, q) = models();
        let bytes = encode_full(&full);
        assert_eq!(&bytes[..4], b"TMLP");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 5);
        assert_eq!(&bytes[7..11], &75u32.to_le_bytes());
        assert_eq!(bytes[27], 0);
        assert_eq!(bytes[28], PRECISION_FULL);
        assert_eq!(bytes.len(), 29 + 4 * (3976 + 70));

        let bytes = encode_ternary(&q);
        assert_eq!(bytes[28], PRECISION_TERNARY);
        // 1004 packed weight bytes, 70 biases, 256 table entries, range
        assert_eq!(bytes.len(), 29 + 1004 + 4 * 70 + 4 * 256 + 4);
    }

    #[test]
    fn packing_codes() {
        let mut out = Vec::new();
        pack_row(&[1, -1, 0, 1, -1], &mut out);
        assert_eq!(out, vec![0b01_00_10_01, 0b00_00_00_10]);
        assert_eq!(unpack_row(&out, 5).unwrap(), vec![1, -1, 0, 1, -1]);
        assert!(unpack_row(&[0b11], 1).is_err());
        assert!(unpack_row(&[0b0100], 1).is_err());
    }

    #[test]
    fn models_roundtrip_bytewise() {
        let (full, q) = models();
        let a = encode_full(&full);
        assert_eq!(encode_model(&decode_model(&a).unwrap()), a);
        let b = encode_ternary(&q);
        let back = decode_model(&b).unwrap();
        assert_eq!(back, AnyModel::Quantized(q));
        assert_eq!(encode_model(&back), b);
    }

    #[test]
    fn rejects_malformed_models() {
        let (full, _) = models();
        let good = encode_full(&full);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_model(&bad_magic).unwrap_err().to_string().contains("magic"));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(decode_model(&bad_version).unwrap_err().to_string().contains("version"));
        assert!(decode_model(&good[..good.len() - 1]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode_model(&trailing).is_err());
        let mut bad_tag = good;
        bad_tag[28] = 1;
        assert!(decode_model(&bad_tag).is_err());
    }

    #[test]
    fn dataset_roundtrip() {
        let samples = (0..4)
            .map(|i| PixelSample {
                features: (0..75).map(|k| (k + i) as f32 / 100.0).collect(),
                label: (i % 2) as u8,
                origin: None,
            })
            .collect();
        let ds = Dataset::new(samples, 5, 0).unwrap();
        let bytes = encode_dataset(&ds);
        assert_eq!(&bytes[..4], b"TSDS");
        assert_eq!(bytes.len(), 16 + 4 * 301);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
        assert!(decode_dataset(&bytes[..bytes.len() - 3]).is_err());
    }
}
