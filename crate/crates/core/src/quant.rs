//! Per-tensor affine 8-bit weight quantization.
//!
//! `q = clamp(round(x / scale) + zero_point, -128, 127)` and
//! `x' = (q - zero_point) * scale`. Parameters come from the min/max of the
//! tensor, so every value inside the calibrated range reconstructs to within
//! `scale / 2`.

use thiserror::Error;

/// Bytes of per-tensor metadata stored with a quantized layer (f32 scale + i8 zero point).
pub const PARAMS_OVERHEAD_BYTES: u64 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("cannot calibrate an empty tensor")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f32),
    #[error("shape {shape:?} holds {expected} elements but data has {actual}")]
    Shape {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("mask has {mask} entries for {layers} layers")]
    MaskLength { mask: usize, layers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i8,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i8) -> Result<Self, QuantError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(QuantError::BadScale(scale));
        }
        Ok(Self { scale, zero_point })
    }

    #[inline]
    pub fn quantize(&self, x: f32) -> i8 {
        let q = (f64::from(x) / f64::from(self.scale)).round() + f64::from(self.zero_point);
        q.clamp(-128.0, 127.0) as i8
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f32 {
        ((i32::from(q) - i32::from(self.zero_point)) as f64 * f64::from(self.scale)) as f32
    }

    /// Smallest and largest representable values.
    pub fn range(&self) -> (f32, f32) {
        (self.dequantize(-128), self.dequantize(127))
    }
}

/// Derives quantization parameters from the value range of `values`.
///
/// `scale = (max - min) / 255` and `zero_point = round(-128 - min / scale)`.
/// The range is widened to contain 0 so the zero point is always
/// representable. A constant tensor gets `scale = max(1, |v| / 255)`; integer
/// constants in `[-255, 255]` then reconstruct exactly.
pub fn calibrate(values: &[f32]) -> Result<QuantParams, QuantError> {
    if values.is_empty() {
        return Err(QuantError::Empty);
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(QuantError::NonFinite { index, value });
        }
        lo = lo.min(value);
        hi = hi.max(value);
    }
    if lo == hi {
        let scale = (f64::from(lo.abs()) / 255.0).max(1.0);
        let zp = (-128.0 - f64::from(lo) / scale)
            .round()
            .clamp(-128.0, 127.0);
        return QuantParams::new(scale as f32, zp as i8);
    }
    let lo = f64::from(lo.min(0.0));
    let hi = f64::from(hi.max(0.0));
    let scale = (hi - lo) / 255.0;
    let zp = (-128.0 - lo / scale).round().clamp(-128.0, 127.0);
    QuantParams::new(scale as f32, zp as i8)
}

/// An int8 tensor with per-tensor affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    data: Vec<i8>,
    params: QuantParams,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, params: QuantParams) -> Result<Self, QuantError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(QuantError::Shape {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            params,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `q - zero_point` for every element, the integer operand of a dot product.
    pub fn centered_codes(&self) -> Vec<i16> {
        let zp = i16::from(self.params.zero_point);
        self.data.iter().map(|&q| i16::from(q) - zp).collect()
    }
}

pub fn quantize_tensor(
    values: &[f32],
    shape: &[usize],
    params: QuantParams,
) -> Result<QuantizedTensor, QuantError> {
    let data = values.iter().map(|&x| params.quantize(x)).collect();
    QuantizedTensor::new(shape.to_vec(), data, params)
}

/// Calibrates on `values` and quantizes them in one step.
pub fn quantize_calibrated(values: &[f32], shape: &[usize]) -> Result<QuantizedTensor, QuantError> {
    let params = calibrate(values)?;
    quantize_tensor(values, shape, params)
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Vec<f32> {
    q.data.iter().map(|&v| q.params.dequantize(v)).collect()
}

/// Integer dot product with a 32-bit accumulator.
///
/// Exact for slices of up to 2^15 elements, since each `i8 * i8` product is
/// at most 2^14 in magnitude.
pub fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| i32::from(x) * i32::from(y))
        .sum()
}

/// Parameter counts for one layer, as seen by the size report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub weights: u64,
    pub biases: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSizeReport {
    pub fp32_bytes: u64,
    pub quantized_bytes: u64,
    pub ratio: f64,
}

/// Storage of a model with the masked layers' weights held as int8.
///
/// Unmasked layers and all biases stay f32. Each masked layer pays
/// [`PARAMS_OVERHEAD_BYTES`] for its scale and zero point.
pub fn size_report(layers: &[LayerParams], mask: &[bool]) -> Result<ModelSizeReport, QuantError> {
    if layers.len() != mask.len() {
        return Err(QuantError::MaskLength {
            mask: mask.len(),
            layers: layers.len(),
        });
    }
    let mut fp32_bytes = 0u64;
    let mut quantized_bytes = 0u64;
    for (l, &m) in layers.iter().zip(mask) {
        fp32_bytes += 4 * (l.weights + l.biases);
        quantized_bytes += if m && l.weights > 0 {
            l.weights + PARAMS_OVERHEAD_BYTES + 4 * l.biases
        } else {
            4 * (l.weights + l.biases)
        };
    }
    let ratio = if quantized_bytes == 0 {
        1.0
    } else {
        fp32_bytes as f64 / quantized_bytes as f64
    };
    Ok(ModelSizeReport {
        fp32_bytes,
        quantized_bytes,
        ratio,
    })
}

/// Fraction `q` of parameters that must be stored as int8 (ignoring
/// metadata) to reach a given fp32/quantized size ratio: solves
/// `4 / (q + 4 (1 - q)) = ratio`.
pub fn fraction_for_ratio(ratio: f64) -> f64 {
    (4.0 - 4.0 / ratio) / 3.0
}

/// Picks the per-layer mask whose size ratio is closest to `target`.
///
/// Searches every subset when there are at most 22 layers with weights and
/// falls back to a largest-first greedy fill otherwise.
pub fn solve_mask(layers: &[LayerParams], target: f64) -> Vec<bool> {
    let candidates: Vec<usize> = (0..layers.len())
        .filter(|&i| layers[i].weights > 0)
        .collect();
    let eval = |mask: &[bool]| {
        size_report(layers, mask)
            .map(|r| (r.ratio - target).abs())
            .unwrap_or(f64::INFINITY)
    };
    let mut best = vec![false; layers.len()];
    let mut best_err = eval(&best);
    if candidates.len() <= 22 {
        let mut mask = vec![false; layers.len()];
        for bits in 1u32..(1u32 << candidates.len()) {
            for (k, &i) in candidates.iter().enumerate() {
                mask[i] = bits & (1 << k) != 0;
            }
            let err = eval(&mask);
            if err < best_err {
                best_err = err;
                best.copy_from_slice(&mask);
            }
        }
        return best;
    }
    let mut order = candidates;
    order.sort_by_key(|&i| std::cmp::Reverse(layers[i].weights));
    let mut mask = best.clone();
    for i in order {
        mask[i] = true;
        let err = eval(&mask);
        if err < best_err {
            best_err = err;
            best.copy_from_slice(&mask);
        } else {
            mask[i] = false;
        }
    }
    best
}
