//! Layer stack of 3x3 convolutions, 2x2 max pools, ReLUs and fully connected
//! layers, with float and int8-weight forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DetectorError;
use crate::quant::{self, LayerParams, ModelSizeReport, QuantError, QuantizedTensor};

/// A `channels x height x width` activation volume, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, DetectorError> {
        if data.len() != channels * height * width {
            return Err(DetectorError::Dimension {
                expected: (channels, height, width),
                got: (data.len(), 1, 1),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Converts interleaved RGB24 pixels into a `3 x out_h x out_w` map in
    /// `[0, 1]`, resampling with nearest-neighbour.
    pub fn from_rgb24(
        width: usize,
        height: usize,
        pixels: &[u8],
        out_h: usize,
        out_w: usize,
    ) -> Result<Self, DetectorError> {
        if pixels.len() != width * height * 3 || width == 0 || height == 0 {
            return Err(DetectorError::Dimension {
                expected: (3, height, width),
                got: (pixels.len(), 1, 1),
            });
        }
        let mut data = vec![0.0f32; 3 * out_h * out_w];
        for oy in 0..out_h {
            let sy = (oy * height) / out_h;
            for ox in 0..out_w {
                let sx = (ox * width) / out_w;
                let p = (sy * width + sx) * 3;
                for c in 0..3 {
                    data[(c * out_h + oy) * out_w + ox] = f32::from(pixels[p + c]) / 255.0;
                }
            }
        }
        Ok(Self {
            channels: 3,
            height: out_h,
            width: out_w,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tuple(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Weights of a CONV or FC layer: plain floats or an int8 tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Float(Vec<f32>),
    Quantized(QuantizedWeights),
}

/// An int8 weight tensor plus the views the forward passes need.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    tensor: QuantizedTensor,
    codes: Vec<f32>,
    dequantized: Vec<f32>,
}

impl QuantizedWeights {
    pub fn new(tensor: QuantizedTensor) -> Self {
        let codes = tensor.centered_codes().into_iter().map(f32::from).collect();
        let dequantized = quant::dequantize_tensor(&tensor);
        Self {
            tensor,
            codes,
            dequantized,
        }
    }

    pub fn tensor(&self) -> &QuantizedTensor {
        &self.tensor
    }

    pub fn scale(&self) -> f32 {
        self.tensor.params().scale
    }
}

impl LayerWeights {
    pub fn len(&self) -> usize {
        match self {
            LayerWeights::Float(w) => w.len(),
            LayerWeights::Quantized(q) => q.tensor.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Float view; dequantized values for an int8 tensor.
    pub fn as_float(&self) -> &[f32] {
        match self {
            LayerWeights::Float(w) => w,
            LayerWeights::Quantized(q) => &q.dequantized,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, LayerWeights::Quantized(_))
    }

    pub fn quantized(&self) -> Option<&QuantizedWeights> {
        match self {
            LayerWeights::Quantized(q) => Some(q),
            LayerWeights::Float(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// 3x3 kernel, stride 1, padding 1. Weights are `[out][in][3][3]`.
    Conv {
        in_channels: usize,
        out_channels: usize,
        weights: LayerWeights,
        bias: Vec<f32>,
    },
    /// 2x2 window, stride 2. Odd trailing rows/columns are discarded.
    MaxPool,
    Relu,
    /// Flattens its input channel-major. Weights are `[out][in]`.
    Fc {
        in_features: usize,
        out_features: usize,
        weights: LayerWeights,
        bias: Vec<f32>,
    },
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::MaxPool => LayerKind::MaxPool,
            Layer::Relu => LayerKind::Relu,
            Layer::Fc { .. } => LayerKind::Fc,
        }
    }

    pub fn weights(&self) -> Option<&LayerWeights> {
        match self {
            Layer::Conv { weights, .. } | Layer::Fc { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&[f32]> {
        match self {
            Layer::Conv { bias, .. } | Layer::Fc { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn params(&self) -> LayerParams {
        match self {
            Layer::Conv { weights, bias, .. } | Layer::Fc { weights, bias, .. } => LayerParams {
                weights: weights.len() as u64,
                biases: bias.len() as u64,
            },
            _ => LayerParams {
                weights: 0,
                biases: 0,
            },
        }
    }

    /// Output shape for an input of shape `input`.
    pub fn output_shape(&self, input: Shape) -> Result<Shape, DetectorError> {
        match self {
            Layer::Conv {
                in_channels,
                out_channels,
                ..
            } => {
                if input.channels != *in_channels {
                    return Err(DetectorError::Dimension {
                        expected: (*in_channels, input.height, input.width),
                        got: input.tuple(),
                    });
                }
                Ok(Shape::new(*out_channels, input.height, input.width))
            }
            Layer::MaxPool => {
                if input.height < 2 || input.width < 2 {
                    return Err(DetectorError::Dimension {
                        expected: (input.channels, 2, 2),
                        got: input.tuple(),
                    });
                }
                Ok(Shape::new(
                    input.channels,
                    input.height / 2,
                    input.width / 2,
                ))
            }
            Layer::Relu => Ok(input),
            Layer::Fc {
                in_features,
                out_features,
                ..
            } => {
                if input.len() != *in_features {
                    return Err(DetectorError::Dimension {
                        expected: (*in_features, 1, 1),
                        got: input.tuple(),
                    });
                }
                Ok(Shape::new(*out_features, 1, 1))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    MaxPool,
    Relu,
    Fc,
}

/// Box slots and classes of a detection head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub boxes: usize,
    pub classes: usize,
}

impl HeadSpec {
    /// Values per box slot: 4 box coordinates, objectness, class logits.
    pub fn slot_len(&self) -> usize {
        5 + self.classes
    }

    pub fn output_len(&self) -> usize {
        self.boxes * self.slot_len()
    }
}

/// Which layers to store as int8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizeMask {
    Conv,
    All,
}

/// An immutable sequence of layers with a known input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    input: Shape,
    layers: Vec<Layer>,
    head: Option<HeadSpec>,
    output: Shape,
}

impl LayerStack {
    /// Checks that layer shapes compose and, when a head is given, that the
    /// final layer emits `boxes * (5 + classes)` values.
    pub fn new(
        input: Shape,
        layers: Vec<Layer>,
        head: Option<HeadSpec>,
    ) -> Result<Self, DetectorError> {
        for l in &layers {
            if let (Some(w), Some(b)) = (l.weights(), l.bias()) {
                let (expected_w, expected_b) = match l {
                    Layer::Conv {
                        in_channels,
                        out_channels,
                        ..
                    } => (in_channels * out_channels * 9, *out_channels),
                    Layer::Fc {
                        in_features,
                        out_features,
                        ..
                    } => (in_features * out_features, *out_features),
                    _ => unreachable!(),
                };
                if w.len() != expected_w || b.len() != expected_b {
                    return Err(DetectorError::Weights {
                        expected: expected_w,
                        got: w.len(),
                    });
                }
            }
        }
        let mut shape = input;
        for l in &layers {
            shape = l.output_shape(shape)?;
        }
        if let Some(h) = head {
            if shape.len() != h.output_len() || !matches!(layers.last(), Some(Layer::Fc { .. })) {
                return Err(DetectorError::Head {
                    expected: h.output_len(),
                    got: shape.len(),
                });
            }
        }
        Ok(Self {
            input,
            layers,
            head,
            output: shape,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> Option<HeadSpec> {
        self.head
    }

    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                let p = l.params();
                p.weights + p.biases
            })
            .sum()
    }

    pub fn layer_params(&self) -> Vec<LayerParams> {
        self.layers.iter().map(Layer::params).collect()
    }

    /// Per-layer mask selecting the layers `mask` covers.
    pub fn mask_for(&self, mask: QuantizeMask) -> Vec<bool> {
        self.layers
            .iter()
            .map(|l| {
                matches!(
                    (mask, l.kind()),
                    (_, LayerKind::Conv) | (QuantizeMask::All, LayerKind::Fc)
                )
            })
            .collect()
    }

    pub fn size_report(&self, mask: &[bool]) -> Result<ModelSizeReport, QuantError> {
        quant::size_report(&self.layer_params(), mask)
    }

    /// A copy with the weights of every masked CONV/FC layer calibrated and
    /// stored as int8. Already-quantized layers are kept as they are.
    pub fn quantized(&self, mask: &[bool]) -> Result<LayerStack, DetectorError> {
        if mask.len() != self.layers.len() {
            return Err(QuantError::MaskLength {
                mask: mask.len(),
                layers: self.layers.len(),
            }
            .into());
        }
        let mut layers = self.layers.clone();
        for (l, &m) in layers.iter_mut().zip(mask) {
            if !m {
                continue;
            }
            let shape = match l {
                Layer::Conv {
                    in_channels,
                    out_channels,
                    ..
                } => vec![*out_channels, *in_channels, 3, 3],
                Layer::Fc {
                    in_features,
                    out_features,
                    ..
                } => vec![*out_features, *in_features],
                _ => continue,
            };
            if let Layer::Conv { weights, .. } | Layer::Fc { weights, .. } = l {
                if let LayerWeights::Float(w) = weights {
                    let q = quant::quantize_calibrated(w, &shape)?;
                    *weights = LayerWeights::Quantized(QuantizedWeights::new(q));
                }
            }
        }
        LayerStack::new(self.input, layers, self.head)
    }

    /// Runs every layer with float arithmetic. Int8 weights are dequantized.
    pub fn forward_features(&self, input: &FeatureMap) -> Result<FeatureMap, DetectorError> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers {
            x = apply_layer(l, &x, Arithmetic::Float)?;
        }
        Ok(x)
    }

    /// Runs every layer, using integer weight codes for CONV/FC layers.
    /// Every CONV/FC layer must hold int8 weights.
    pub fn forward_quantized_features(
        &self,
        input: &FeatureMap,
    ) -> Result<FeatureMap, DetectorError> {
        self.check_input(input)?;
        if let Some(i) = self
            .layers
            .iter()
            .position(|l| l.weights().is_some_and(|w| !w.is_quantized()))
        {
            return Err(DetectorError::NotQuantized(i));
        }
        let mut x = input.clone();
        for l in &self.layers {
            x = apply_layer(l, &x, Arithmetic::IntWeights)?;
        }
        Ok(x)
    }

    /// Float-path input to every layer, followed by the final output.
    pub fn forward_trace(&self, input: &FeatureMap) -> Result<Vec<FeatureMap>, DetectorError> {
        self.check_input(input)?;
        let mut trace = vec![input.clone()];
        for l in &self.layers {
            let next = apply_layer(l, trace.last().unwrap(), Arithmetic::Float)?;
            trace.push(next);
        }
        Ok(trace)
    }

    fn check_input(&self, input: &FeatureMap) -> Result<(), DetectorError> {
        if input.shape() != self.input {
            return Err(DetectorError::Dimension {
                expected: self.input.tuple(),
                got: input.shape().tuple(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Arithmetic {
    Float,
    IntWeights,
}

fn apply_layer(
    layer: &Layer,
    x: &FeatureMap,
    mode: Arithmetic,
) -> Result<FeatureMap, DetectorError> {
    match layer {
        Layer::Conv {
            out_channels,
            weights,
            bias,
            ..
        } => Ok(match (mode, weights) {
            (Arithmetic::IntWeights, LayerWeights::Quantized(q)) => {
                conv3x3(x, *out_channels, &q.codes, Some(q.scale()), bias)
            }
            _ => conv3x3(x, *out_channels, weights.as_float(), None, bias),
        }),
        Layer::MaxPool => Ok(maxpool2x2(x)),
        Layer::Relu => Ok(FeatureMap {
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
            ..x.clone()
        }),
        Layer::Fc {
            in_features,
            out_features,
            weights,
            bias,
        } => Ok(match (mode, weights) {
            (Arithmetic::IntWeights, LayerWeights::Quantized(q)) => dense(
                &x.data,
                *in_features,
                *out_features,
                &q.codes,
                Some(q.scale()),
                bias,
            ),
            _ => dense(
                &x.data,
                *in_features,
                *out_features,
                weights.as_float(),
                None,
                bias,
            ),
        }),
    }
}

/// Same-padded 3x3 convolution. Accumulates one shifted input plane per
/// kernel tap; with `scale` the weights are integer codes and the
/// accumulated sum is rescaled once per output element.
fn conv3x3(
    x: &FeatureMap,
    out_c: usize,
    w: &[f32],
    scale: Option<f32>,
    bias: &[f32],
) -> FeatureMap {
    let (in_c, h, wd) = (x.channels, x.height, x.width);
    let plane = h * wd;
    let mut out = vec![0.0f32; out_c * plane];
    for oc in 0..out_c {
        let acc = &mut out[oc * plane..(oc + 1) * plane];
        for ic in 0..in_c {
            let src = &x.data[ic * plane..(ic + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = w[((oc * in_c + ic) * 3 + ky) * 3 + kx];
                    if k == 0.0 {
                        continue;
                    }
                    // Output (y, x) reads input (y + ky - 1, x + kx - 1).
                    let y0 = if ky == 0 { 1 } else { 0 };
                    let y1 = if ky == 2 { h - 1 } else { h };
                    let x0 = if kx == 0 { 1 } else { 0 };
                    let x1 = if kx == 2 { wd - 1 } else { wd };
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let dst_row = &mut acc[y * wd..(y + 1) * wd];
                        let src_row = &src[sy * wd..(sy + 1) * wd];
                        for xx in x0..x1 {
                            dst_row[xx] += k * src_row[xx + kx - 1];
                        }
                    }
                }
            }
        }
        let b = bias[oc];
        match scale {
            Some(s) => acc.iter_mut().for_each(|v| *v = *v * s + b),
            None => acc.iter_mut().for_each(|v| *v += b),
        }
    }
    FeatureMap {
        channels: out_c,
        height: h,
        width: wd,
        data: out,
    }
}

fn maxpool2x2(x: &FeatureMap) -> FeatureMap {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut data = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        for y in 0..oh {
            for xx in 0..ow {
                let m = x
                    .at(c, 2 * y, 2 * xx)
                    .max(x.at(c, 2 * y, 2 * xx + 1))
                    .max(x.at(c, 2 * y + 1, 2 * xx))
                    .max(x.at(c, 2 * y + 1, 2 * xx + 1));
                data.push(m);
            }
        }
    }
    FeatureMap {
        channels: x.channels,
        height: oh,
        width: ow,
        data,
    }
}

fn dense(
    x: &[f32],
    in_f: usize,
    out_f: usize,
    w: &[f32],
    scale: Option<f32>,
    bias: &[f32],
) -> FeatureMap {
    let data = (0..out_f)
        .map(|o| {
            let row = &w[o * in_f..(o + 1) * in_f];
            let acc: f32 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            match scale {
                Some(s) => acc * s + bias[o],
                None => acc + bias[o],
            }
        })
        .collect();
    FeatureMap {
        channels: out_f,
        height: 1,
        width: 1,
        data,
    }
}

/// Compact text description of a layer sequence, e.g.
/// `"c8 r p c16 r p f64 r head"`: `cN` conv to N channels, `p` max pool,
/// `r` ReLU, `fN` fully connected to N features, `head` the final FC sized
/// for the detection head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    tokens: Vec<ArchToken>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArchToken {
    Conv(usize),
    Pool,
    Relu,
    Fc(usize),
    Head,
}

impl Architecture {
    /// Four conv segments of widths 8, 16, 32, 32, each followed by a 2x2
    /// pool, then three FC layers.
    pub const MICRO: &'static str = "c8 r p c16 r p c32 r p c32 r p f256 r f128 r head";

    pub fn parse(spec: &str) -> Result<Self, DetectorError> {
        let tokens = spec
            .split_whitespace()
            .map(|t| {
                let bad = || DetectorError::Architecture(t.to_string());
                Ok(match t {
                    "p" => ArchToken::Pool,
                    "r" => ArchToken::Relu,
                    "head" => ArchToken::Head,
                    _ if t.starts_with('c') => ArchToken::Conv(t[1..].parse().map_err(|_| bad())?),
                    _ if t.starts_with('f') => ArchToken::Fc(t[1..].parse().map_err(|_| bad())?),
                    _ => return Err(bad()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { tokens })
    }

    /// Builds a stack with He-uniform random weights and small random biases.
    pub fn build(
        &self,
        input: Shape,
        head: Option<HeadSpec>,
        seed: u64,
    ) -> Result<LayerStack, DetectorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(self.tokens.len());
        for tok in &self.tokens {
            let layer = match *tok {
                ArchToken::Conv(out) => {
                    let fan_in = shape.channels * 9;
                    Layer::Conv {
                        in_channels: shape.channels,
                        out_channels: out,
                        weights: LayerWeights::Float(he_uniform(&mut rng, fan_in, out * fan_in)),
                        bias: small_bias(&mut rng, out),
                    }
                }
                ArchToken::Pool => Layer::MaxPool,
                ArchToken::Relu => Layer::Relu,
                ArchToken::Fc(out) => fc_layer(&mut rng, shape.len(), out),
                ArchToken::Head => {
                    let h =
                        head.ok_or(DetectorError::Architecture("head without HeadSpec".into()))?;
                    fc_layer(&mut rng, shape.len(), h.output_len())
                }
            };
            shape = layer.output_shape(shape)?;
            layers.push(layer);
        }
        LayerStack::new(input, layers, head)
    }
}

fn fc_layer(rng: &mut ChaCha8Rng, in_f: usize, out_f: usize) -> Layer {
    Layer::Fc {
        in_features: in_f,
        out_features: out_f,
        weights: LayerWeights::Float(he_uniform(rng, in_f, in_f * out_f)),
        bias: small_bias(rng, out_f),
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in.max(1) as f32).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

fn small_bias(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
}
