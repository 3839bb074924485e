//! Head decoding and non-maximum suppression.

use super::layers::HeadSpec;
use super::DetectorError;
use crate::geometry::{BBox, Detection};

/// One box slot of the detection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Box center and size as fractions of the frame.
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub objectness: f32,
    pub class_logits: Vec<f32>,
}

/// Head output interpreted as box slots.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub slots: Vec<Slot>,
}

impl RawPrediction {
    /// Interprets a head output vector. Each slot holds
    /// `[tx, ty, tw, th, objectness, class logits...]`; the four box values
    /// pass through a sigmoid to land in `[0, 1]`.
    pub fn from_output(values: &[f32], head: HeadSpec) -> Result<Self, DetectorError> {
        if values.len() != head.output_len() {
            return Err(DetectorError::Head {
                expected: head.output_len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite(*v));
        }
        let slots = values
            .chunks_exact(head.slot_len())
            .map(|s| Slot {
                cx: sigmoid(s[0]),
                cy: sigmoid(s[1]),
                w: sigmoid(s[2]),
                h: sigmoid(s[3]),
                objectness: s[4],
                class_logits: s[5..].to_vec(),
            })
            .collect();
        Ok(Self { slots })
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Index and probability of the largest softmax entry.
fn softmax_max(logits: &[f32]) -> (usize, f32) {
    let (arg, &m) = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("head has at least one class");
    let denom: f32 = logits.iter().map(|&l| (l - m).exp()).sum();
    (arg, 1.0 / denom)
}

/// Converts slots to pixel-space detections.
///
/// Confidence is `sigmoid(objectness) * max softmax(class logits)`. Slots
/// under `conf_threshold` are skipped, boxes are clamped to the frame and
/// boxes left with zero area are skipped.
pub fn decode(
    raw: &RawPrediction,
    conf_threshold: f32,
    frame_w: u16,
    frame_h: u16,
) -> Vec<Detection> {
    let (fw, fh) = (f32::from(frame_w), f32::from(frame_h));
    raw.slots
        .iter()
        .filter(|s| !s.class_logits.is_empty())
        .filter_map(|s| {
            let (label, p) = softmax_max(&s.class_logits);
            let confidence = (sigmoid(s.objectness) * p).clamp(0.0, 1.0);
            if confidence < conf_threshold {
                return None;
            }
            let px = |v: f32, max: f32| (v * max).round().clamp(0.0, max) as u16;
            let bbox = BBox::new(
                px(s.cx - s.w / 2.0, fw),
                px(s.cy - s.h / 2.0, fh),
                px(s.cx + s.w / 2.0, fw),
                px(s.cy + s.h / 2.0, fh),
            );
            bbox.is_valid()
                .then(|| Detection::new(label as u16, confidence, bbox))
        })
        .collect()
}

/// Greedy per-label suppression: visiting detections by descending
/// confidence, keep one iff its IoU with every kept detection of the same
/// label is below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.label_id == d.label_id && k.bbox.iou(&d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}
