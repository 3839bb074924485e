//! `Q8M1` model files.
//!
//! Little-endian throughout:
//!
//! ```text
//! "Q8M1"
//! u32 layer_count
//! u32 input_channels, input_height, input_width
//! u32 head_boxes, head_classes          (0, 0 when there is no head)
//! per layer:
//!   u8  tag                             1 conv, 2 maxpool, 3 fc, 4 relu
//!   u8  ndims, then u32 dims[ndims]     conv [out, in, 3, 3]; fc [out, in]; none otherwise
//!   u8  quantized                       0 or 1 (always 0 for maxpool/relu)
//!   f32 scale, i8 zero_point            only when quantized
//!   weights                             i8 x n when quantized, else f32 x n
//!   f32 bias x out                      conv/fc only
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::layers::{HeadSpec, Layer, LayerStack, LayerWeights, QuantizedWeights, Shape};
use super::DetectorError;
use crate::quant::{QuantParams, QuantizedTensor};

pub const MODEL_MAGIC: [u8; 4] = *b"Q8M1";

const TAG_CONV: u8 = 1;
const TAG_MAXPOOL: u8 = 2;
const TAG_FC: u8 = 3;
const TAG_RELU: u8 = 4;

/// Sanity cap on any single dimension read from a file.
const MAX_DIM: u32 = 1 << 24;

fn bad(msg: impl Into<String>) -> DetectorError {
    DetectorError::ModelFile(msg.into())
}

pub fn write_model<W: Write>(stack: &LayerStack, mut w: W) -> Result<(), DetectorError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut out, stack.layers().len());
    let s = stack.input_shape();
    for v in [s.channels, s.height, s.width] {
        u32le(&mut out, v);
    }
    let head = stack.head();
    u32le(&mut out, head.map_or(0, |h| h.boxes));
    u32le(&mut out, head.map_or(0, |h| h.classes));
    for layer in stack.layers() {
        let (tag, dims): (u8, Vec<usize>) = match layer {
            Layer::Conv {
                in_channels,
                out_channels,
                ..
            } => (TAG_CONV, vec![*out_channels, *in_channels, 3, 3]),
            Layer::MaxPool => (TAG_MAXPOOL, vec![]),
            Layer::Fc {
                in_features,
                out_features,
                ..
            } => (TAG_FC, vec![*out_features, *in_features]),
            Layer::Relu => (TAG_RELU, vec![]),
        };
        out.push(tag);
        out.push(dims.len() as u8);
        for d in dims {
            u32le(&mut out, d);
        }
        match layer.weights() {
            None => out.push(0),
            Some(LayerWeights::Float(ws)) => {
                out.push(0);
                for v in ws {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Some(LayerWeights::Quantized(q)) => {
                out.push(1);
                let p = q.tensor().params();
                out.extend_from_slice(&p.scale.to_le_bytes());
                out.push(p.zero_point as u8);
                out.extend(q.tensor().data().iter().map(|&v| v as u8));
            }
        }
        if let Some(bias) = layer.bias() {
            for v in bias {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DetectorError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| bad("length overflow"))?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DetectorError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DetectorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize, DetectorError> {
        let v = self.u32()?;
        if v > MAX_DIM {
            return Err(bad(format!("dimension {v} too large")));
        }
        Ok(v as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DetectorError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| bad("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<LayerStack, DetectorError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_model(&buf)
}

pub fn parse_model(buf: &[u8]) -> Result<LayerStack, DetectorError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(bad("bad magic, expected Q8M1"));
    }
    let count = r.dim()?;
    let input = Shape::new(r.dim()?, r.dim()?, r.dim()?);
    let (boxes, classes) = (r.dim()?, r.dim()?);
    let head = (boxes > 0).then_some(HeadSpec { boxes, classes });
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let tag = r.u8()?;
        let ndims = r.u8()? as usize;
        let dims = (0..ndims).map(|_| r.dim()).collect::<Result<Vec<_>, _>>()?;
        let quantized = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(bad(format!("layer {i}: bad quantized flag {v}"))),
        };
        let layer = match (tag, dims.as_slice()) {
            (TAG_CONV, &[out_c, in_c, 3, 3]) => {
                let shape = vec![out_c, in_c, 3, 3];
                let weights = read_weights(&mut r, shape, quantized)?;
                Layer::Conv {
                    in_channels: in_c,
                    out_channels: out_c,
                    weights,
                    bias: r.f32s(out_c)?,
                }
            }
            (TAG_FC, &[out_f, in_f]) => {
                let weights = read_weights(&mut r, vec![out_f, in_f], quantized)?;
                Layer::Fc {
                    in_features: in_f,
                    out_features: out_f,
                    weights,
                    bias: r.f32s(out_f)?,
                }
            }
            (TAG_MAXPOOL, []) if !quantized => Layer::MaxPool,
            (TAG_RELU, []) if !quantized => Layer::Relu,
            _ => return Err(bad(format!("layer {i}: bad tag {tag} with dims {dims:?}"))),
        };
        layers.push(layer);
    }
    if r.pos != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    LayerStack::new(input, layers, head)
}

fn read_weights(
    r: &mut Reader<'_>,
    shape: Vec<usize>,
    quantized: bool,
) -> Result<LayerWeights, DetectorError> {
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad("weight count overflow"))?;
    if !quantized {
        return Ok(LayerWeights::Float(r.f32s(n)?));
    }
    let scale = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
    let zero_point = r.u8()? as i8;
    let params = QuantParams::new(scale, zero_point)?;
    let data = r.take(n)?.iter().map(|&b| b as i8).collect();
    let tensor = QuantizedTensor::new(shape, data, params)?;
    Ok(LayerWeights::Quantized(QuantizedWeights::new(tensor)))
}

pub fn save_model(stack: &LayerStack, path: &Path) -> Result<(), DetectorError> {
    let f = std::fs::File::create(path)?;
    write_model(stack, std::io::BufWriter::new(f))
}

pub fn load_model(path: &Path) -> Result<LayerStack, DetectorError> {
    read_model(std::fs::File::open(path)?)
}
