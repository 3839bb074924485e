//! Test-only reference implementations and generators.
#![allow(dead_code)]

use infergate::detector::{FeatureMap, HeadSpec, Layer, LayerStack, LayerWeights, Shape};
use infergate::protocol::{
    decode_message, read_message, ActionPayload, ByeReason, FramePayload, Message, MessageHeader,
    MsgType, ResultPayload, RobotId,
};
use infergate::{BBox, Detection, LabeledBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook nested-loop forward pass over the float view of every layer.
/// Shares no code with the library's kernels.
pub fn naive_forward(stack: &LayerStack, input: &FeatureMap) -> Vec<f64> {
    let mut c = input.channels;
    let mut h = input.height;
    let mut w = input.width;
    let mut x: Vec<f64> = input.data.iter().map(|&v| f64::from(v)).collect();
    for layer in stack.layers() {
        match layer {
            Layer::Conv {
                out_channels,
                weights,
                bias,
                ..
            } => {
                let wt = weights.as_float();
                let mut y = vec![0.0; out_channels * h * w];
                for oc in 0..*out_channels {
                    for oy in 0..h as isize {
                        for ox in 0..w as isize {
                            let mut sum = f64::from(bias[oc]);
                            for ic in 0..c {
                                for ky in 0..3isize {
                                    for kx in 0..3isize {
                                        let iy = oy + ky - 1;
                                        let ix = ox + kx - 1;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        let xi = (ic * h + iy as usize) * w + ix as usize;
                                        let wi =
                                            ((oc * c + ic) * 3 + ky as usize) * 3 + kx as usize;
                                        sum += f64::from(wt[wi]) * x[xi];
                                    }
                                }
                            }
                            y[(oc * h + oy as usize) * w + ox as usize] = sum;
                        }
                    }
                }
                c = *out_channels;
                x = y;
            }
            Layer::MaxPool => {
                let (oh, ow) = (h / 2, w / 2);
                let mut y = vec![f64::NEG_INFINITY; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let v = x[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                                    let o = &mut y[(ch * oh + oy) * ow + ox];
                                    if v > *o {
                                        *o = v;
                                    }
                                }
                            }
                        }
                    }
                }
                h = oh;
                w = ow;
                x = y;
            }
            Layer::Relu => x
                .iter_mut()
                .for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 }),
            Layer::Fc {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                let wt = weights.as_float();
                let mut y = Vec::with_capacity(*out_features);
                for o in 0..*out_features {
                    let mut sum = f64::from(bias[o]);
                    for i in 0..*in_features {
                        sum += f64::from(wt[o * in_features + i]) * x[i];
                    }
                    y.push(sum);
                }
                c = *out_features;
                h = 1;
                w = 1;
                x = y;
            }
        }
    }
    x
}

/// Random model with 1-4 conv layers (width <= 16), optional ReLU/pool
/// after each, then 1-3 FC layers ending in a detection head.
pub fn random_micro_model(rng: &mut ChaCha8Rng) -> LayerStack {
    let h = rng.random_range(2..=16);
    let w = rng.random_range(2..=16);
    let input = Shape::new(3, h, w);
    let mut shape = input;
    let mut layers = Vec::new();
    for _ in 0..rng.random_range(1..=4) {
        let out = rng.random_range(1..=16);
        let fan_in = shape.channels * 9;
        layers.push(Layer::Conv {
            in_channels: shape.channels,
            out_channels: out,
            weights: LayerWeights::Float(uniform(rng, out * fan_in, (6.0 / fan_in as f32).sqrt())),
            bias: uniform(rng, out, 0.2),
        });
        shape = Shape::new(out, shape.height, shape.width);
        if rng.random_bool(0.7) {
            layers.push(Layer::Relu);
        }
        if shape.height >= 2 && shape.width >= 2 && rng.random_bool(0.5) {
            layers.push(Layer::MaxPool);
            shape = Shape::new(shape.channels, shape.height / 2, shape.width / 2);
        }
    }
    let head = HeadSpec {
        boxes: rng.random_range(1..=3),
        classes: rng.random_range(1..=3),
    };
    let n_fc = rng.random_range(1..=3);
    let mut features = shape.len();
    for k in 0..n_fc {
        let out = if k + 1 == n_fc {
            head.output_len()
        } else {
            rng.random_range(4..=24)
        };
        layers.push(Layer::Fc {
            in_features: features,
            out_features: out,
            weights: LayerWeights::Float(uniform(
                rng,
                out * features,
                (6.0 / features as f32).sqrt(),
            )),
            bias: uniform(rng, out, 0.2),
        });
        features = out;
        if k + 1 < n_fc {
            layers.push(Layer::Relu);
        }
    }
    LayerStack::new(input, layers, Some(head)).expect("generator builds valid stacks")
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, limit: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, shape: Shape) -> FeatureMap {
    let data = (0..shape.len())
        .map(|_| rng.random_range(0.0f32..1.0))
        .collect();
    FeatureMap::new(shape.channels, shape.height, shape.width, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference NMS: a detection survives iff no detection of the same label
/// with strictly higher rank (confidence, then input order) that itself
/// survives overlaps it at or above the threshold. Evaluated by fixed-point
/// over the rank order without sorting helpers from the library.
pub fn brute_force_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let n = dets.len();
    // rank[i] = number of detections that precede i.
    let precedes = |a: usize, b: usize| {
        dets[a].confidence > dets[b].confidence
            || (dets[a].confidence == dets[b].confidence && a < b)
    };
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for rank in 0..n {
        for i in 0..n {
            if (0..n).filter(|&j| precedes(j, i)).count() == rank {
                order.push(i);
            }
        }
    }
    let mut keep = vec![false; n];
    for (pos, &i) in order.iter().enumerate() {
        keep[i] = order[..pos].iter().all(|&j| {
            !keep[j]
                || dets[j].label_id != dets[i].label_id
                || iou_f64(&dets[j].bbox, &dets[i].bbox) < thr
        });
    }
    order
        .into_iter()
        .filter(|&i| keep[i])
        .map(|i| dets[i])
        .collect()
}

/// Independent IoU over continuous coordinates.
pub fn iou_f64(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x1 as f64, a.y1 as f64, a.x2 as f64, a.y2 as f64);
    let (bx1, by1, bx2, by2) = (b.x1 as f64, b.y1 as f64, b.x2 as f64, b.y2 as f64);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    if area_a == 0.0 || area_b == 0.0 {
        return 0.0;
    }
    inter / (area_a + area_b - inter)
}

pub fn random_box(rng: &mut ChaCha8Rng, w: u16, h: u16) -> BBox {
    let x1 = rng.random_range(0..w - 1);
    let y1 = rng.random_range(0..h - 1);
    let x2 = rng.random_range(x1 + 1..=w);
    let y2 = rng.random_range(y1 + 1..=h);
    BBox::new(x1, y1, x2, y2)
}

pub fn random_robot_id(rng: &mut ChaCha8Rng) -> RobotId {
    let len = rng.random_range(1..=16);
    let s: String = (0..len)
        .map(|_| char::from(rng.random_range(b'!'..=b'~')))
        .collect();
    RobotId::new(&s).expect("printable ascii id")
}

/// A well-formed message of any type with a matching typed payload.
pub fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let id = random_robot_id(rng);
    let seq = rng.random();
    let ts = rng.random();
    let (ty, payload) = match rng.random_range(0..6) {
        0 | 1 => {
            let w = rng.random_range(1..=24u16);
            let h = rng.random_range(1..=24u16);
            let pixels = (0..usize::from(w) * usize::from(h) * 3)
                .map(|_| rng.random())
                .collect();
            let mut f = FramePayload::new(w, h, pixels).unwrap();
            if w >= 2 && h >= 2 && rng.random_bool(0.5) {
                let n = rng.random_range(0..5);
                f = f.with_annotation(
                    (0..n)
                        .map(|_| LabeledBox {
                            label_id: rng.random_range(0..80),
                            bbox: random_box(rng, w, h),
                        })
                        .collect(),
                );
            }
            let ty = if rng.random_bool(0.5) {
                MsgType::Frame
            } else {
                MsgType::Monitor
            };
            (ty, f.encode().unwrap())
        }
        2 => {
            let n = rng.random_range(0..20);
            let r = ResultPayload {
                frame_seq: seq,
                detections: (0..n)
                    .map(|_| {
                        Detection::new(
                            rng.random_range(0..80),
                            rng.random(),
                            random_box(rng, 640, 480),
                        )
                    })
                    .collect(),
            };
            (MsgType::Result, r.encode().unwrap())
        }
        3 => {
            let len = rng.random_range(0..40);
            let args: String = (0..len)
                .map(|_| char::from(rng.random_range(b' '..=b'~')))
                .collect();
            let a = ActionPayload {
                action_id: rng.random(),
                args,
            };
            (MsgType::Action, a.encode().unwrap())
        }
        4 => (MsgType::Hello, Vec::new()),
        _ => {
            let r = [
                ByeReason::Normal,
                ByeReason::DuplicateRobotId,
                ByeReason::Malformed,
                ByeReason::Shutdown,
            ][rng.random_range(0..4)];
            (MsgType::Bye, r.encode())
        }
    };
    Message::new(ty, id, seq, ts, payload)
}

/// Decodes a message and its payload, then encodes both again.
pub fn reencode(bytes: &[u8]) -> Result<Vec<u8>, String> {
    let (h, p) = decode_message(bytes).map_err(|e| e.to_string())?;
    let payload = match h.msg_type {
        MsgType::Frame | MsgType::Monitor => FramePayload::decode(p).and_then(|f| f.encode()),
        MsgType::Result => ResultPayload::decode(p).and_then(|r| r.encode()),
        MsgType::Action => ActionPayload::decode(p).and_then(|a| a.encode()),
        MsgType::Bye => ByeReason::decode(p).map(ByeReason::encode),
        MsgType::Hello => Ok(p.to_vec()),
    }
    .map_err(|e| e.to_string())?;
    Message::new(h.msg_type, h.robot_id, h.seq, h.timestamp_us, payload)
        .encode()
        .map_err(|e| e.to_string())
}

/// Runs every decoder over arbitrary bytes. Returns whether a whole
/// message was recognised.
pub fn decode_everything(bytes: &[u8]) -> bool {
    let _ = FramePayload::decode(bytes);
    let _ = ResultPayload::decode(bytes);
    let _ = ActionPayload::decode(bytes);
    let _ = ByeReason::decode(bytes);
    let _ = MessageHeader::parse(bytes);
    let mut cursor = bytes;
    let _ = read_message(&mut cursor);
    match decode_message(bytes) {
        Ok((h, p)) => {
            let _ = reencode(&bytes[..h.message_len()]);
            let _ = p.len();
            true
        }
        Err(_) => false,
    }
}

/// Reference process queue written straight from the drop rule.
#[derive(Default)]
pub struct ModelQueue {
    pub queue: Vec<u64>,
    pub frames_in: u64,
    pub inferred: u64,
    pub dropped: u64,
}

impl ModelQueue {
    pub fn threshold(r: f64) -> usize {
        let c = r.ceil() as usize;
        if c > 5 {
            c
        } else {
            5
        }
    }

    /// Returns (inferred now, dropped ids).
    pub fn submit(&mut self, id: u64, busy: bool, r: f64) -> (Option<u64>, Vec<u64>) {
        self.frames_in += 1;
        let t = Self::threshold(r);
        if !busy {
            self.inferred += 1;
            let mut gone = Vec::new();
            if self.queue.len() >= t {
                gone = std::mem::take(&mut self.queue);
            }
            self.dropped += gone.len() as u64;
            return (Some(id), gone);
        }
        self.queue.push(id);
        if self.queue.len() >= t {
            let mut gone = std::mem::take(&mut self.queue);
            gone.pop();
            self.queue.push(id);
            self.dropped += gone.len() as u64;
            return (None, gone);
        }
        (None, Vec::new())
    }

    pub fn next(&mut self) -> Option<u64> {
        if self.queue.is_empty() {
            return None;
        }
        self.inferred += 1;
        Some(self.queue.remove(0))
    }
}

/// Elements of `values` whose quantize-dequantize image strays more than
/// `scale / 2` (plus the final f32 rounding) from the original.
pub fn roundtrip_violations(values: &[f32]) -> usize {
    let q = infergate::quant::quantize_calibrated(values, &[values.len()]).unwrap();
    let s = f64::from(q.params().scale);
    infergate::quant::dequantize_tensor(&q)
        .iter()
        .zip(values)
        .filter(|(y, x)| {
            let slack = f64::from(f32::EPSILON) * f64::from(x.abs()).max(f64::from(y.abs()));
            (f64::from(**y) - f64::from(**x)).abs() > s / 2.0 + slack
        })
        .count()
}

/// Tensors with assorted magnitudes, offsets and degenerate shapes.
pub fn random_tensor(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = rng.random_range(1..=256);
    let scale = 10f32.powi(rng.random_range(-6..=4));
    let offset = if rng.random_bool(0.3) {
        rng.random_range(-1.0..1.0) * scale * 10.0
    } else {
        0.0
    };
    match rng.random_range(0..10) {
        0 => vec![offset + scale; n],
        1 => (0..n)
            .map(|_| if rng.random_bool(0.5) { scale } else { -scale })
            .collect(),
        _ => (0..n)
            .map(|_| offset + rng.random_range(-1.0f32..1.0) * scale)
            .collect(),
    }
}

/// Exhaustive matching oracle: over every injective same-label assignment
/// with IoU >= `thr`, the one whose IoU sequence (predictions in descending
/// confidence, stable) is lexicographically largest, unmatched counting as
/// -1. Returns per-prediction TP flags, or `None` when two candidate truths
/// tie on IoU for some prediction (the lexicographic optimum is then not
/// unique).
pub fn brute_force_flags(truth: &[LabeledBox], preds: &[Detection], thr: f64) -> Option<Vec<bool>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap()
    });
    for p in preds {
        let mut seen: Vec<f64> = truth
            .iter()
            .filter(|t| t.label_id == p.label_id)
            .map(|t| iou_f64(&p.bbox, &t.bbox))
            .filter(|&v| v >= thr)
            .collect();
        seen.sort_by(f64::total_cmp);
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
    }
    #[allow(clippy::too_many_arguments)]
    fn search(
        k: usize,
        order: &[usize],
        truth: &[LabeledBox],
        preds: &[Detection],
        thr: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<f64>,
        best: &mut Option<Vec<f64>>,
    ) {
        if k == order.len() {
            if best.as_ref().is_none_or(|b| cur.as_slice() > b.as_slice()) {
                *best = Some(cur.clone());
            }
            return;
        }
        let p = &preds[order[k]];
        cur.push(-1.0);
        search(k + 1, order, truth, preds, thr, used, cur, best);
        cur.pop();
        for (t, gt) in truth.iter().enumerate() {
            let v = iou_f64(&p.bbox, &gt.bbox);
            if used[t] || gt.label_id != p.label_id || v < thr {
                continue;
            }
            used[t] = true;
            cur.push(v);
            search(k + 1, order, truth, preds, thr, used, cur, best);
            cur.pop();
            used[t] = false;
        }
    }
    let mut best = None;
    search(
        0,
        &order,
        truth,
        preds,
        thr,
        &mut vec![false; truth.len()],
        &mut Vec::new(),
        &mut best,
    );
    let best = best.expect("the empty assignment always exists");
    let mut flags = vec![false; preds.len()];
    for (k, &p) in order.iter().enumerate() {
        flags[p] = best[k] >= 0.0;
    }
    Some(flags)
}

/// AP straight from the definition: for each recall level reached, the
/// best precision at that recall or beyond, times the recall step.
pub fn reference_ap(scored: &[(f32, bool)], n_truth: usize) -> f64 {
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let points: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = ranked[..k].iter().filter(|s| s.1).count();
            (tp as f64 / n_truth as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    for step in 1..=n_truth {
        let r = step as f64 / n_truth as f64;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += p / n_truth as f64;
    }
    ap
}
