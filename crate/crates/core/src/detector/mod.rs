//! Detector backends.
//!
//! [`MicroCnnDetector`] runs a [`LayerStack`] over a downsampled frame;
//! [`OracleDetector`] echoes the ground truth that simulated robots attach
//! to their frames and is used for end-to-end testing.

pub mod bound;
pub mod layers;
pub mod model_file;
pub mod postprocess;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use layers::{
    Architecture, FeatureMap, HeadSpec, Layer, LayerKind, LayerStack, LayerWeights, QuantizeMask,
    QuantizedWeights, Shape,
};
pub use model_file::{load_model, parse_model, read_model, save_model, write_model};
pub use postprocess::{decode, nms, RawPrediction, Slot};

use crate::geometry::{BBox, Detection};
use crate::protocol::FramePayload;
use crate::quant::QuantError;

/// Default NMS IoU threshold.
pub const DEFAULT_NMS_IOU: f64 = 0.45;
/// Default micro-model input side.
pub const MICRO_INPUT: usize = 64;
/// Default number of box slots in the micro-model head.
pub const MICRO_BOXES: usize = 8;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimension {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("layer holds {got} weights, expected {expected}")]
    Weights { expected: usize, got: usize },
    #[error("head expects {expected} outputs, stack produces {got}")]
    Head { expected: usize, got: usize },
    #[error("stack has no detection head")]
    NoHead,
    #[error("layer {0} has float weights; quantized forward needs int8 weights")]
    NotQuantized(usize),
    #[error("non-finite network output {0}")]
    NonFinite(f32),
    #[error("bad architecture token {0:?}")]
    Architecture(String),
    #[error("frame carries no ground-truth annotation")]
    MissingAnnotation,
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LayerStack {
    /// Float forward pass producing head slots.
    pub fn forward(&self, image: &FeatureMap) -> Result<RawPrediction, DetectorError> {
        let head = self.head().ok_or(DetectorError::NoHead)?;
        let out = self.forward_features(image)?;
        RawPrediction::from_output(&out.data, head)
    }

    /// Forward pass over int8 weight codes. See [`LayerStack::forward_quantized_features`].
    pub fn forward_quantized(&self, image: &FeatureMap) -> Result<RawPrediction, DetectorError> {
        let head = self.head().ok_or(DetectorError::NoHead)?;
        let out = self.forward_quantized_features(image)?;
        RawPrediction::from_output(&out.data, head)
    }
}

/// Anything that turns a frame into detections.
pub trait Detector: Send {
    fn detect(&mut self, frame: &FramePayload) -> Result<Vec<Detection>, DetectorError>;

    fn name(&self) -> &'static str;
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&mut self, frame: &FramePayload) -> Result<Vec<Detection>, DetectorError> {
        (**self).detect(frame)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

/// The micro-CNN backend.
#[derive(Debug, Clone)]
pub struct MicroCnnDetector {
    stack: LayerStack,
    integer: bool,
    conf_threshold: f32,
    nms_iou: f64,
}

impl MicroCnnDetector {
    /// Uses the integer-weight path when every CONV/FC layer is quantized.
    pub fn new(
        stack: LayerStack,
        conf_threshold: f32,
        nms_iou: f64,
    ) -> Result<Self, DetectorError> {
        if stack.head().is_none() {
            return Err(DetectorError::NoHead);
        }
        if stack.input_shape().channels != 3 {
            return Err(DetectorError::Dimension {
                expected: (3, stack.input_shape().height, stack.input_shape().width),
                got: (
                    stack.input_shape().channels,
                    stack.input_shape().height,
                    stack.input_shape().width,
                ),
            });
        }
        let integer = stack
            .layers()
            .iter()
            .filter_map(Layer::weights)
            .all(LayerWeights::is_quantized);
        Ok(Self {
            stack,
            integer,
            conf_threshold,
            nms_iou,
        })
    }

    /// Randomly initialised default micro architecture.
    pub fn random(classes: usize, seed: u64) -> Result<LayerStack, DetectorError> {
        Architecture::parse(Architecture::MICRO)?.build(
            Shape::new(3, MICRO_INPUT, MICRO_INPUT),
            Some(HeadSpec {
                boxes: MICRO_BOXES,
                classes,
            }),
            seed,
        )
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn uses_integer_path(&self) -> bool {
        self.integer
    }
}

impl Detector for MicroCnnDetector {
    fn detect(&mut self, frame: &FramePayload) -> Result<Vec<Detection>, DetectorError> {
        let s = self.stack.input_shape();
        let img = FeatureMap::from_rgb24(
            usize::from(frame.width),
            usize::from(frame.height),
            &frame.pixels,
            s.height,
            s.width,
        )?;
        let raw = if self.integer {
            self.stack.forward_quantized(&img)?
        } else {
            self.stack.forward(&img)?
        };
        let dets = decode(&raw, self.conf_threshold, frame.width, frame.height);
        Ok(nms(&dets, self.nms_iou))
    }

    fn name(&self) -> &'static str {
        "micro-cnn"
    }
}

/// Perturbation applied by the oracle backend.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleNoise {
    /// Standard deviation of per-coordinate box jitter in pixels. Samples
    /// are truncated at three standard deviations.
    pub jitter_px: f64,
    /// Probability of injecting one false positive into a frame.
    pub fp_rate: f64,
    /// Label range for injected false positives.
    pub classes: u16,
}

/// Returns the ground truth attached to a frame, optionally perturbed.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    noise: OracleNoise,
    rng: ChaCha8Rng,
    injected: u64,
}

impl OracleDetector {
    pub fn exact() -> Self {
        Self::new(OracleNoise::default(), 0)
    }

    pub fn new(noise: OracleNoise, seed: u64) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
            injected: 0,
        }
    }

    /// False positives injected so far.
    pub fn injected(&self) -> u64 {
        self.injected
    }

    fn jitter(&mut self, v: u16, limit: u16) -> u16 {
        if self.noise.jitter_px <= 0.0 {
            return v;
        }
        let sigma = self.noise.jitter_px;
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        let d = n.sample(&mut self.rng).clamp(-3.0 * sigma, 3.0 * sigma);
        (f64::from(v) + d).round().clamp(0.0, f64::from(limit)) as u16
    }
}

impl Detector for OracleDetector {
    fn detect(&mut self, frame: &FramePayload) -> Result<Vec<Detection>, DetectorError> {
        let truth = frame
            .annotation
            .as_ref()
            .ok_or(DetectorError::MissingAnnotation)?;
        let (fw, fh) = (frame.width, frame.height);
        let mut out = Vec::with_capacity(truth.len() + 1);
        for t in truth {
            let b = t.bbox;
            let mut j = BBox::new(
                self.jitter(b.x1, fw),
                self.jitter(b.y1, fh),
                self.jitter(b.x2, fw),
                self.jitter(b.y2, fh),
            );
            if !j.is_valid() {
                j = b;
            }
            out.push(Detection::new(t.label_id, 1.0, j));
        }
        if self.noise.fp_rate > 0.0
            && self.rng.random_bool(self.noise.fp_rate.min(1.0))
            && fw > 1
            && fh > 1
        {
            let w = self.rng.random_range(1..=fw.div_ceil(4));
            let h = self.rng.random_range(1..=fh.div_ceil(4));
            let x = self.rng.random_range(0..=fw - w);
            let y = self.rng.random_range(0..=fh - h);
            let label = self.rng.random_range(0..self.noise.classes.max(1));
            let conf = self.rng.random_range(0.5f32..1.0);
            out.push(Detection::new(label, conf, BBox::new(x, y, x + w, y + h)));
            self.injected += 1;
        }
        Ok(out)
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Pads every inference of the wrapped detector to at least a fixed
/// service time, for load experiments.
#[derive(Debug, Clone)]
pub struct FixedServiceTime<D> {
    inner: D,
    service: Duration,
}

impl<D: Detector> FixedServiceTime<D> {
    pub fn new(inner: D, service: Duration) -> Self {
        Self { inner, service }
    }
}

impl<D: Detector> Detector for FixedServiceTime<D> {
    fn detect(&mut self, frame: &FramePayload) -> Result<Vec<Detection>, DetectorError> {
        let start = Instant::now();
        let out = self.inner.detect(frame);
        let deadline = start + self.service;
        // sleep() may wake early on some platforms; spin out the remainder.
        loop {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            let left = deadline - now;
            if left > Duration::from_micros(200) {
                std::thread::sleep(left - Duration::from_micros(100));
            } else {
                std::hint::spin_loop();
            }
        }
        out
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}
