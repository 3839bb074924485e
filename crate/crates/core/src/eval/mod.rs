//! Detection quality and latency metrics.
//!
//! Matching is greedy by confidence at an IoU threshold (0.5 for mAP@50),
//! AP integrates the all-points precision envelope, and the false-positive
//! percentage is taken over crowded frames only.

pub mod records;
pub mod table;

use std::collections::BTreeMap;

use crate::geometry::{BBox, Detection, LabeledBox};
use crate::stats::{summarize, LatencySummary};

pub use records::{read_records, write_records, RecordsError};
pub use table::{
    load_fixture, parse_fixture, render_comparison, Baseline, ComparisonRow, TableError,
};

/// IoU threshold for mAP@50.
pub const MAP50_IOU: f64 = 0.5;
/// Default minimum objects per frame for a frame to count as crowded.
pub const DEFAULT_CROWDED_THRESHOLD: usize = 10;

/// Ground truth, predictions and timing for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRecord {
    pub robot: String,
    pub seq: u64,
    pub t_sent_us: u64,
    /// `None` when the frame never got a result.
    pub t_result_us: Option<u64>,
    pub truth: Vec<LabeledBox>,
    pub predictions: Vec<Detection>,
}

impl EvalRecord {
    pub fn latency_us(&self) -> Option<u64> {
        self.t_result_us.and_then(|r| r.checked_sub(self.t_sent_us))
    }

    pub fn answered(&self) -> bool {
        self.t_result_us.is_some()
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Per-record matching outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchFlags {
    /// Indexed like `record.predictions`.
    pub true_positive: Vec<bool>,
    /// Indexed like `record.truth`: the prediction index that claimed it.
    pub matched_by: Vec<Option<usize>>,
}

impl MatchFlags {
    pub fn tp_count(&self) -> usize {
        self.true_positive.iter().filter(|&&t| t).count()
    }

    pub fn fp_count(&self) -> usize {
        self.true_positive.len() - self.tp_count()
    }
}

/// Greedy matching: predictions in descending confidence order (ties keep
/// input order) each claim the still-unmatched truth of the same label
/// with the highest IoU, provided that IoU reaches `iou_threshold`.
pub fn match_detections(
    truth: &[LabeledBox],
    predictions: &[Detection],
    iou_threshold: f64,
) -> MatchFlags {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .total_cmp(&predictions[a].confidence)
    });
    let mut matched_by = vec![None; truth.len()];
    let mut true_positive = vec![false; predictions.len()];
    for p in order {
        let pred = &predictions[p];
        let mut best: Option<(usize, f64)> = None;
        for (t, gt) in truth.iter().enumerate() {
            if matched_by[t].is_some() || gt.label_id != pred.label_id {
                continue;
            }
            let v = pred.bbox.iou(&gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        if let Some((t, _)) = best {
            matched_by[t] = Some(p);
            true_positive[p] = true;
        }
    }
    MatchFlags {
        true_positive,
        matched_by,
    }
}

/// Area under the precision/recall curve with the all-points precision
/// envelope. `scored` holds `(confidence, is_true_positive)` pairs pooled
/// over all frames; `n_truth` is the class's ground-truth count. `None`
/// when there is no ground truth.
pub fn average_precision(scored: &[(f32, bool)], n_truth: usize) -> Option<f64> {
    if n_truth == 0 {
        return None;
    }
    let mut ranked: Vec<(f32, bool)> = scored.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, &(_, hit)) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_truth as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // Envelope: precision at rank i becomes the max precision at any rank >= i.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap)
}

/// Share of predictions on crowded frames (at least `crowded_threshold`
/// ground-truth objects) that match no ground truth, in percent. `None`
/// without predictions.
pub fn false_positive_pct(
    records: &[EvalRecord],
    crowded_threshold: usize,
    iou_threshold: f64,
) -> Option<f64> {
    let (mut fp, mut total) = (0usize, 0usize);
    for r in records
        .iter()
        .filter(|r| r.truth.len() >= crowded_threshold)
    {
        let flags = match_detections(&r.truth, &r.predictions, iou_threshold);
        fp += flags.fp_count();
        total += r.predictions.len();
    }
    (total > 0).then(|| 100.0 * fp as f64 / total as f64)
}

/// Latency statistics over the records' send-to-result durations.
pub fn latency_summary(records: &[EvalRecord]) -> Option<LatencySummary> {
    let samples: Vec<u64> = records.iter().filter_map(EvalRecord::latency_us).collect();
    summarize(&samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// AP@50 for every class with at least one ground-truth instance.
    pub per_class_ap: BTreeMap<u16, f64>,
    pub map50: Option<f64>,
    pub false_positive_pct: Option<f64>,
    pub latency: Option<LatencySummary>,
    /// Records with a result, which are the ones scored for detection.
    pub frames: usize,
    /// Records that never got a result.
    pub unanswered: usize,
    pub crowded_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub crowded_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: MAP50_IOU,
            crowded_threshold: DEFAULT_CROWDED_THRESHOLD,
        }
    }
}

/// Scores answered records. Frames that were dropped before inference
/// carry no predictions and are reported in `unanswered` instead.
pub fn evaluate(records: &[EvalRecord], cfg: EvalConfig) -> MetricReport {
    let answered: Vec<EvalRecord> = records.iter().filter(|r| r.answered()).cloned().collect();
    let mut scored: BTreeMap<u16, Vec<(f32, bool)>> = BTreeMap::new();
    let mut truths: BTreeMap<u16, usize> = BTreeMap::new();
    for r in &answered {
        let flags = match_detections(&r.truth, &r.predictions, cfg.iou_threshold);
        for t in &r.truth {
            *truths.entry(t.label_id).or_default() += 1;
        }
        for (p, tp) in r.predictions.iter().zip(&flags.true_positive) {
            scored
                .entry(p.label_id)
                .or_default()
                .push((p.confidence, *tp));
        }
    }
    let per_class_ap: BTreeMap<u16, f64> = truths
        .iter()
        .filter_map(|(&label, &n)| {
            let s = scored.get(&label).map(Vec::as_slice).unwrap_or(&[]);
            average_precision(s, n).map(|ap| (label, ap))
        })
        .collect();
    let map50 = (!per_class_ap.is_empty())
        .then(|| per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64);
    MetricReport {
        map50,
        false_positive_pct: false_positive_pct(&answered, cfg.crowded_threshold, cfg.iou_threshold),
        latency: latency_summary(&answered),
        frames: answered.len(),
        unanswered: records.len() - answered.len(),
        crowded_frames: answered
            .iter()
            .filter(|r| r.truth.len() >= cfg.crowded_threshold)
            .count(),
        per_class_ap,
    }
}

impl MetricReport {
    /// Plain-text `key value` report.
    pub fn render(&self) -> String {
        let opt =
            |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
        let mut out = String::new();
        out.push_str(&format!("frames {}\n", self.frames));
        out.push_str(&format!("unanswered {}\n", self.unanswered));
        out.push_str(&format!("crowded_frames {}\n", self.crowded_frames));
        out.push_str(&format!("map50 {}\n", opt(self.map50, 6)));
        for (label, ap) in &self.per_class_ap {
            out.push_str(&format!("ap50.{label} {ap:.6}\n"));
        }
        out.push_str(&format!(
            "false_positive_pct {}\n",
            opt(self.false_positive_pct, 3)
        ));
        match &self.latency {
            Some(l) => out.push_str(&format!(
                "latency_mean_us {:.1}\nlatency_p50_us {}\nlatency_p99_us {}\nlatency_max_us {}\n",
                l.mean_us, l.p50_us, l.p99_us, l.max_us
            )),
            None => out.push_str("latency_mean_us -\n"),
        }
        out
    }
}
