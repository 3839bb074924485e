//! C ABI over the infergate wire codec, int8 quantizer, micro-CNN detector
//! and detection metrics.
//!
//! Conventions:
//! - Every fallible function returns an [`IgStatus`]; `IG_STATUS_OK` is 0.
//! - Objects are opaque handles created by `ig_*_new`/`ig_*_load` and
//!   released with the matching `ig_*_free`. Freeing NULL is a no-op.
//! - Output buffers come with a capacity. When too small the call returns
//!   `IG_STATUS_BUFFER_TOO_SMALL` and still writes the required length.
//! - After a failure, `ig_last_error` describes it (per thread).
//! - Panics never cross the boundary; they become `IG_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use infergate::detector::{load_model, Detector, MicroCnnDetector, DEFAULT_NMS_IOU};
use infergate::eval::{evaluate, EvalConfig, EvalRecord};
use infergate::protocol::{
    decode_message, DecodeError, FramePayload, Message, MsgType, RobotId, HEADER_LEN,
};
use infergate::quant::{dequantize_tensor, quantize_calibrated, QuantizedTensor};
use infergate::{BBox, Detection, LabeledBox};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// More input is needed before a whole message is available.
    Incomplete = 3,
    Decode = 4,
    Encode = 5,
    Quantize = 6,
    Detector = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: IgStatus, msg: impl Into<String>) -> IgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

/// Runs `f`, turning a panic into `IgStatus::Panic`.
fn guard(f: impl FnOnce() -> IgStatus) -> IgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(IgStatus::Panic, "internal panic"),
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(p, len))
    }
}

/// Copies `src` to `dst` if it fits; always reports the needed length.
unsafe fn output<T: Copy>(src: &[T], dst: *mut T, cap: usize, out_len: *mut usize) -> IgStatus {
    if !out_len.is_null() {
        *out_len = src.len();
    }
    if src.len() > cap {
        return fail(
            IgStatus::BufferTooSmall,
            format!("need {} elements, have {cap}", src.len()),
        );
    }
    if !src.is_empty() {
        if dst.is_null() {
            return fail(IgStatus::NullPointer, "output buffer is NULL");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    IgStatus::Ok
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn ig_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ig_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Codec
// ---------------------------------------------------------------------------

/// Decoded message header. `robot_id` is zero padded.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IgHeader {
    pub msg_type: u8,
    pub robot_id: [u8; 16],
    pub seq: u64,
    pub timestamp_us: u64,
    pub payload_len: u32,
}

/// Encodes one message. `robot_id` is a NUL-terminated string of 1-16
/// bytes.
#[no_mangle]
pub unsafe extern "C" fn ig_encode_message(
    msg_type: u8,
    robot_id: *const c_char,
    seq: u64,
    timestamp_us: u64,
    payload: *const u8,
    payload_len: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> IgStatus {
    guard(|| {
        let Ok(ty) = MsgType::try_from(msg_type) else {
            return fail(
                IgStatus::InvalidArgument,
                format!("unknown message type {msg_type}"),
            );
        };
        if robot_id.is_null() {
            return fail(IgStatus::NullPointer, "robot_id is NULL");
        }
        let Ok(name) = CStr::from_ptr(robot_id).to_str() else {
            return fail(IgStatus::InvalidArgument, "robot_id is not UTF-8");
        };
        let id = match RobotId::new(name) {
            Ok(id) => id,
            Err(e) => return fail(IgStatus::InvalidArgument, e.to_string()),
        };
        let Some(p) = input(payload, payload_len) else {
            return fail(IgStatus::NullPointer, "payload is NULL");
        };
        match Message::new(ty, id, seq, timestamp_us, p.to_vec()).encode() {
            Ok(bytes) => output(&bytes, out, out_cap, out_len),
            Err(e) => fail(IgStatus::Encode, e.to_string()),
        }
    })
}

/// Streaming decoder: feed arbitrary chunks, take out whole messages.
pub struct IgDecoder {
    buf: Vec<u8>,
    /// Set after a protocol error; the stream cannot be resynchronised.
    broken: bool,
}

#[no_mangle]
pub extern "C" fn ig_decoder_new() -> *mut IgDecoder {
    Box::into_raw(Box::new(IgDecoder {
        buf: Vec::new(),
        broken: false,
    }))
}

#[no_mangle]
pub unsafe extern "C" fn ig_decoder_free(d: *mut IgDecoder) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Appends received bytes.
#[no_mangle]
pub unsafe extern "C" fn ig_decoder_push(
    d: *mut IgDecoder,
    bytes: *const u8,
    len: usize,
) -> IgStatus {
    guard(|| {
        let (Some(d), Some(b)) = (d.as_mut(), input(bytes, len)) else {
            return fail(IgStatus::NullPointer, "decoder or bytes is NULL");
        };
        d.buf.extend_from_slice(b);
        IgStatus::Ok
    })
}

/// Takes the next whole message. Returns `IG_STATUS_INCOMPLETE` when more
/// bytes are needed and `IG_STATUS_DECODE` on a malformed stream (which
/// then stays failed). On `IG_STATUS_BUFFER_TOO_SMALL` the message is kept
/// and `payload_len` tells the size needed.
#[no_mangle]
pub unsafe extern "C" fn ig_decoder_next(
    d: *mut IgDecoder,
    header: *mut IgHeader,
    payload: *mut u8,
    payload_cap: usize,
    payload_len: *mut usize,
) -> IgStatus {
    guard(|| {
        let Some(d) = d.as_mut() else {
            return fail(IgStatus::NullPointer, "decoder is NULL");
        };
        if header.is_null() {
            return fail(IgStatus::NullPointer, "header is NULL");
        }
        if d.broken {
            return fail(IgStatus::Decode, "stream already failed");
        }
        let (h, p) = match decode_message(&d.buf) {
            Ok(m) => m,
            Err(DecodeError::Incomplete { needed }) => {
                return fail(IgStatus::Incomplete, format!("{needed} more bytes needed"))
            }
            Err(e) => {
                d.broken = true;
                return fail(IgStatus::Decode, e.to_string());
            }
        };
        let status = output(p, payload, payload_cap, payload_len);
        if status != IgStatus::Ok {
            return status;
        }
        *header = IgHeader {
            msg_type: h.msg_type as u8,
            robot_id: *h.robot_id.as_bytes(),
            seq: h.seq,
            timestamp_us: h.timestamp_us,
            payload_len: h.payload_len,
        };
        d.buf.drain(..HEADER_LEN + p.len());
        IgStatus::Ok
    })
}

/// Bytes pushed but not yet returned as messages.
#[no_mangle]
pub unsafe extern "C" fn ig_decoder_buffered(d: *const IgDecoder) -> usize {
    d.as_ref().map_or(0, |d| d.buf.len())
}

// ---------------------------------------------------------------------------
// Quantizer
// ---------------------------------------------------------------------------

/// A calibrated int8 tensor.
pub struct IgQTensor {
    inner: QuantizedTensor,
}

/// Calibrates on `values` and quantizes them. `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn ig_quantize(
    values: *const f32,
    len: usize,
    out: *mut *mut IgQTensor,
) -> IgStatus {
    guard(|| {
        if out.is_null() {
            return fail(IgStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        let Some(v) = input(values, len) else {
            return fail(IgStatus::NullPointer, "values is NULL");
        };
        match quantize_calibrated(v, &[v.len()]) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(IgQTensor { inner }));
                IgStatus::Ok
            }
            Err(e) => fail(IgStatus::Quantize, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ig_qtensor_free(t: *mut IgQTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ig_qtensor_params(
    t: *const IgQTensor,
    scale: *mut f32,
    zero_point: *mut i8,
) -> IgStatus {
    let Some(t) = t.as_ref() else {
        return fail(IgStatus::NullPointer, "tensor is NULL");
    };
    if scale.is_null() || zero_point.is_null() {
        return fail(IgStatus::NullPointer, "output is NULL");
    }
    let p = t.inner.params();
    *scale = p.scale;
    *zero_point = p.zero_point;
    IgStatus::Ok
}

/// Raw int8 codes.
#[no_mangle]
pub unsafe extern "C" fn ig_qtensor_data(
    t: *const IgQTensor,
    out: *mut i8,
    cap: usize,
    out_len: *mut usize,
) -> IgStatus {
    guard(|| match t.as_ref() {
        Some(t) => output(t.inner.data(), out, cap, out_len),
        None => fail(IgStatus::NullPointer, "tensor is NULL"),
    })
}

/// `(q - zero_point) * scale` per element.
#[no_mangle]
pub unsafe extern "C" fn ig_qtensor_dequantize(
    t: *const IgQTensor,
    out: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> IgStatus {
    guard(|| match t.as_ref() {
        Some(t) => output(&dequantize_tensor(&t.inner), out, cap, out_len),
        None => fail(IgStatus::NullPointer, "tensor is NULL"),
    })
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IgBox {
    pub x1: u16,
    pub y1: u16,
    pub x2: u16,
    pub y2: u16,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IgDetection {
    pub label_id: u16,
    pub confidence: f32,
    pub bbox: IgBox,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IgLabeledBox {
    pub label_id: u16,
    pub bbox: IgBox,
}

impl From<IgBox> for BBox {
    fn from(b: IgBox) -> Self {
        BBox::new(b.x1, b.y1, b.x2, b.y2)
    }
}

impl From<BBox> for IgBox {
    fn from(b: BBox) -> Self {
        IgBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        }
    }
}

impl From<Detection> for IgDetection {
    fn from(d: Detection) -> Self {
        IgDetection {
            label_id: d.label_id,
            confidence: d.confidence,
            bbox: d.bbox.into(),
        }
    }
}

/// A micro-CNN detector. Not thread-safe; use one handle per thread.
pub struct IgDetector {
    inner: MicroCnnDetector,
}

fn wrap_detector(
    stack: infergate::detector::LayerStack,
    conf: f32,
    out: *mut *mut IgDetector,
) -> IgStatus {
    match MicroCnnDetector::new(stack, conf, DEFAULT_NMS_IOU) {
        Ok(inner) => {
            // SAFETY: callers checked `out` for NULL.
            unsafe { *out = Box::into_raw(Box::new(IgDetector { inner })) };
            IgStatus::Ok
        }
        Err(e) => fail(IgStatus::Detector, e.to_string()),
    }
}

/// Loads a `Q8M1` model file.
#[no_mangle]
pub unsafe extern "C" fn ig_detector_load(
    path: *const c_char,
    confidence_threshold: f32,
    out: *mut *mut IgDetector,
) -> IgStatus {
    guard(|| {
        if out.is_null() || path.is_null() {
            return fail(IgStatus::NullPointer, "path or out is NULL");
        }
        *out = ptr::null_mut();
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(IgStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_model(std::path::Path::new(p)) {
            Ok(stack) => wrap_detector(stack, confidence_threshold, out),
            Err(e) => fail(IgStatus::Io, e.to_string()),
        }
    })
}

/// A randomly initialised micro model, for testing integrations.
#[no_mangle]
pub unsafe extern "C" fn ig_detector_random(
    classes: usize,
    seed: u64,
    confidence_threshold: f32,
    out: *mut *mut IgDetector,
) -> IgStatus {
    guard(|| {
        if out.is_null() {
            return fail(IgStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        match MicroCnnDetector::random(classes, seed) {
            Ok(stack) => wrap_detector(stack, confidence_threshold, out),
            Err(e) => fail(IgStatus::Detector, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ig_detector_free(d: *mut IgDetector) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Runs detection on a packed RGB24 image of `width * height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn ig_detector_detect(
    d: *mut IgDetector,
    width: u16,
    height: u16,
    rgb: *const u8,
    rgb_len: usize,
    out: *mut IgDetection,
    cap: usize,
    out_len: *mut usize,
) -> IgStatus {
    guard(|| {
        let Some(d) = d.as_mut() else {
            return fail(IgStatus::NullPointer, "detector is NULL");
        };
        let Some(px) = input(rgb, rgb_len) else {
            return fail(IgStatus::NullPointer, "rgb is NULL");
        };
        let frame = match FramePayload::new(width, height, px.to_vec()) {
            Ok(f) => f,
            Err(e) => return fail(IgStatus::InvalidArgument, e.to_string()),
        };
        match d.inner.detect(&frame) {
            Ok(dets) => {
                let v: Vec<IgDetection> = dets.into_iter().map(Into::into).collect();
                output(&v, out, cap, out_len)
            }
            Err(e) => fail(IgStatus::Detector, e.to_string()),
        }
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Intersection over union; 0 for disjoint or zero-area boxes.
#[no_mangle]
pub extern "C" fn ig_iou(a: IgBox, b: IgBox) -> f64 {
    infergate::eval::iou(&a.into(), &b.into())
}

/// Accumulates frames for mAP@50, false-positive and latency figures.
pub struct IgMetrics {
    records: Vec<EvalRecord>,
}

#[no_mangle]
pub extern "C" fn ig_metrics_new() -> *mut IgMetrics {
    Box::into_raw(Box::new(IgMetrics {
        records: Vec::new(),
    }))
}

#[no_mangle]
pub unsafe extern "C" fn ig_metrics_free(m: *mut IgMetrics) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Adds one answered frame. `latency_us` < 0 means unknown.
#[no_mangle]
pub unsafe extern "C" fn ig_metrics_add_frame(
    m: *mut IgMetrics,
    truth: *const IgLabeledBox,
    n_truth: usize,
    predictions: *const IgDetection,
    n_predictions: usize,
    latency_us: i64,
) -> IgStatus {
    guard(|| {
        let Some(m) = m.as_mut() else {
            return fail(IgStatus::NullPointer, "metrics is NULL");
        };
        let (Some(t), Some(p)) = (input(truth, n_truth), input(predictions, n_predictions)) else {
            return fail(IgStatus::NullPointer, "truth or predictions is NULL");
        };
        let truth: Vec<LabeledBox> = t
            .iter()
            .map(|t| LabeledBox {
                label_id: t.label_id,
                bbox: t.bbox.into(),
            })
            .collect();
        let predictions: Vec<Detection> = p
            .iter()
            .map(|d| Detection::new(d.label_id, d.confidence, d.bbox.into()))
            .collect();
        if truth.iter().any(|t| !t.bbox.is_valid())
            || predictions.iter().any(|d| !d.bbox.is_valid())
        {
            return fail(IgStatus::InvalidArgument, "box with x1 >= x2 or y1 >= y2");
        }
        if predictions
            .iter()
            .any(|d| !(0.0..=1.0).contains(&d.confidence))
        {
            return fail(IgStatus::InvalidArgument, "confidence outside [0, 1]");
        }
        // Only the difference of the two timestamps is ever used. An unknown
        // latency is encoded as a result that precedes its send.
        let (t_sent_us, t_result_us) = match u64::try_from(latency_us) {
            Ok(l) => (0, l),
            Err(_) => (1, 0),
        };
        m.records.push(EvalRecord {
            robot: String::new(),
            seq: m.records.len() as u64,
            t_sent_us,
            t_result_us: Some(t_result_us),
            truth,
            predictions,
        });
        IgStatus::Ok
    })
}

/// Summary of everything added so far. Undefined figures are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IgMetricsReport {
    pub frames: usize,
    pub crowded_frames: usize,
    pub map50: f64,
    pub false_positive_pct: f64,
    pub mean_latency_us: f64,
    pub p99_latency_us: f64,
}

/// Scores the accumulated frames. `iou_threshold` is normally 0.5 and a
/// frame is crowded when it has at least `crowded_threshold` objects.
#[no_mangle]
pub unsafe extern "C" fn ig_metrics_report(
    m: *const IgMetrics,
    iou_threshold: f64,
    crowded_threshold: usize,
    out: *mut IgMetricsReport,
) -> IgStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return fail(IgStatus::NullPointer, "metrics is NULL");
        };
        if out.is_null() {
            return fail(IgStatus::NullPointer, "out is NULL");
        }
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return fail(IgStatus::InvalidArgument, "iou_threshold outside (0, 1]");
        }
        let r = evaluate(
            &m.records,
            EvalConfig {
                iou_threshold,
                crowded_threshold,
            },
        );
        *out = IgMetricsReport {
            frames: r.frames,
            crowded_frames: r.crowded_frames,
            map50: r.map50.unwrap_or(f64::NAN),
            false_positive_pct: r.false_positive_pct.unwrap_or(f64::NAN),
            mean_latency_us: r.latency.as_ref().map_or(f64::NAN, |l| l.mean_us),
            p99_latency_us: r.latency.as_ref().map_or(f64::NAN, |l| l.p99_us as f64),
        };
        IgStatus::Ok
    })
}
