//! `TFW1` weight files.
//!
//! Layout (little-endian): the magic `TFW` plus an ASCII version byte `1`,
//! a u32 layer count, then per layer a u8 kind (0 factorized conv, 1 dense
//! head), u32 `T, S, D2, D1, r, Δr`, a u8 frozen flag and f32 payloads:
//! `A, B, ΔA, ΔB` (the last two iff `Δr > 0`) and the bias for factorized
//! layers, kernel and bias for the head. Geometry (strides, padding) is not
//! stored; loading takes the architecture config and checks every shape
//! against it.

use std::fs;
use std::path::Path;

use crate::error::{Result, WeightFormatError};
use crate::factorized::{DeltaFactors, FactorizedConvLayer, KernelShape};
use crate::harness::detector::{DenseConv, DetectorConfig, ToyDetector};
use crate::tensor::{Matrix, Tensor4};

const MAGIC: [u8; 3] = *b"TFW";
pub const FORMAT_VERSION: u8 = b'1';
const KIND_FACTORIZED: u8 = 0;
const KIND_DENSE: u8 = 1;

pub fn encode_weights(model: &ToyDetector<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&((model.layers.len() + 1) as u32).to_le_bytes());
    let floats = |out: &mut Vec<u8>, vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    let header = |out: &mut Vec<u8>, kind: u8, dims: [usize; 6], frozen: bool| {
        out.push(kind);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(frozen as u8);
    };
    for l in &model.layers {
        let s = l.shape();
        header(&mut out, KIND_FACTORIZED, [s.t, s.s, s.d2, s.d1, l.rank(), l.delta_rank()], l.is_base_frozen());
        floats(&mut out, l.a().data());
        floats(&mut out, l.b().data());
        if let Some(d) = l.delta() {
            floats(&mut out, d.a.data());
            floats(&mut out, d.b.data());
        }
        floats(&mut out, l.bias());
    }
    let [t, s, d2, d1] = model.head.weight.dims();
    header(&mut out, KIND_DENSE, [t, s, d2, d1, 0, 0], model.head.frozen);
    floats(&mut out, model.head.weight.data());
    floats(&mut out, &model.head.bias);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightFormatError> {
        let have = self.bytes.len() - self.pos;
        if have < n {
            return Err(WeightFormatError::Truncated { offset: self.pos, needed: n - have });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightFormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, WeightFormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>, WeightFormatError> {
        let len = n.checked_mul(4).ok_or(WeightFormatError::Truncated { offset: self.pos, needed: usize::MAX })?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Decodes a weight file for the architecture `config`. Fails closed: any
/// defect yields an error and no model.
pub fn decode_weights(bytes: &[u8], config: &DetectorConfig) -> Result<ToyDetector<f32>> {
    config.validate()?;
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| WeightFormatError::BadMagic { found: padded(bytes) })?;
    if magic[..3] != MAGIC {
        return Err(WeightFormatError::BadMagic { found: padded(bytes) }.into());
    }
    if magic[3] != FORMAT_VERSION {
        return Err(WeightFormatError::Version { found: magic[3], expected: FORMAT_VERSION }.into());
    }
    let count = r.u32()?;
    let expected = config.layer_count() + 1;
    let mismatch = |layer: usize, reason: String| WeightFormatError::ShapeMismatch { layer, reason };
    if count != expected {
        return Err(mismatch(0, format!("file has {count} layers, architecture has {expected}")).into());
    }

    let mut layers = Vec::with_capacity(config.layer_count());
    for l in 0..config.layer_count() {
        let kind = r.u8()?;
        let dims: Vec<usize> = (0..6).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let frozen = flag(r.u8()?, l)?;
        if kind != KIND_FACTORIZED {
            return Err(mismatch(l, format!("kind {kind}, expected factorized conv")).into());
        }
        let want = [config.channels[l + 1], config.channels[l], config.window, config.window];
        if dims[..4] != want {
            return Err(mismatch(l, format!("kernel {:?}, architecture expects {want:?}", &dims[..4])).into());
        }
        let shape = KernelShape::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| mismatch(l, e.to_string()))?;
        let (rank, dr) = (dims[4], dims[5]);
        if rank == 0 || rank > shape.max_rank() || dr > shape.max_rank() {
            return Err(mismatch(l, format!("rank {rank} / Δr {dr} invalid for max rank {}", shape.max_rank())).into());
        }
        let a = Matrix::new(shape.rows(), rank, r.floats(shape.rows() * rank)?)?;
        let b = Matrix::new(rank, shape.cols(), r.floats(rank * shape.cols())?)?;
        let delta = if dr > 0 {
            let da = Matrix::new(shape.rows(), dr, r.floats(shape.rows() * dr)?)?;
            let db = Matrix::new(dr, shape.cols(), r.floats(dr * shape.cols())?)?;
            Some(DeltaFactors { a: da, b: db })
        } else {
            None
        };
        let bias = r.floats(shape.t)?;
        let mut layer = FactorizedConvLayer::from_factors(shape, a, b, bias, config.geometry(l))
            .and_then(|x| x.with_delta(delta))
            .map_err(|e| mismatch(l, e.to_string()))?;
        if frozen {
            layer.freeze_base();
        }
        layers.push(layer);
    }

    let l = config.layer_count();
    let kind = r.u8()?;
    let dims: Vec<usize> = (0..6).map(|_| r.u32()).collect::<Result<_, _>>()?;
    let frozen = flag(r.u8()?, l)?;
    let want = [5 + config.classes, *config.channels.last().expect("validated"), 1, 1];
    if kind != KIND_DENSE || dims[..4] != want || dims[4] != 0 || dims[5] != 0 {
        return Err(mismatch(l, format!("head kind {kind} dims {dims:?}, expected dense {want:?}")).into());
    }
    let weight = Tensor4::new(want, r.floats(want.iter().product())?)?;
    let bias = r.floats(want[0])?;
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(WeightFormatError::TrailingBytes(rest).into());
    }
    let model = ToyDetector { layers, head: DenseConv { weight, bias, frozen }, classes: config.classes, alpha: config.alpha };
    model.validate()?;
    Ok(model)
}

fn padded(bytes: &[u8]) -> [u8; 4] {
    let mut m = [0u8; 4];
    let n = bytes.len().min(4);
    m[..n].copy_from_slice(&bytes[..n]);
    m
}

fn flag(v: u8, layer: usize) -> Result<bool, WeightFormatError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(WeightFormatError::ShapeMismatch { layer, reason: format!("frozen flag {v} is neither 0 nor 1") }),
    }
}

pub fn save_weights(model: &ToyDetector<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(model))?;
    Ok(())
}

pub fn load_weights(path: &Path, config: &DetectorConfig) -> Result<ToyDetector<f32>> {
    decode_weights(&fs::read(path)?, config)
}
