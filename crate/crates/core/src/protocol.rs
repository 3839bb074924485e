//! Binary wire protocol between robot clients, monitors and the gateway.
//!
//! Every message is a fixed 42-byte header followed by `payload_len` bytes of
//! payload. All multi-byte header and payload fields are big-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic          0x4E414F49 ("NAOI")
//!      4     1  version        1
//!      5     1  msg_type       FRAME=1 RESULT=2 ACTION=3 MONITOR=4 HELLO=5 BYE=6
//!      6    16  robot_id       text, zero padded
//!     22     8  seq
//!     30     8  timestamp_us
//!     38     4  payload_len
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::geometry::{BBox, Detection, LabeledBox};

pub const MAGIC: u32 = 0x4E41_4F49;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 42;
pub const ROBOT_ID_LEN: usize = 16;
/// Largest payload a reader will buffer. A 4K RGB24 frame is ~25 MB.
pub const MAX_PAYLOAD_LEN: u32 = 64 * 1024 * 1024;

/// Geometry of the default camera stream.
pub const DEFAULT_WIDTH: u16 = 640;
pub const DEFAULT_HEIGHT: u16 = 480;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Frame = 1,
    Result = 2,
    Action = 3,
    Monitor = 4,
    Hello = 5,
    Bye = 6,
}

impl TryFrom<u8> for MsgType {
    type Error = DecodeError;

    fn try_from(v: u8) -> Result<Self, DecodeError> {
        Ok(match v {
            1 => MsgType::Frame,
            2 => MsgType::Result,
            3 => MsgType::Action,
            4 => MsgType::Monitor,
            5 => MsgType::Hello,
            6 => MsgType::Bye,
            other => return Err(DecodeError::UnknownType(other)),
        })
    }
}

/// Fixed 16-byte client identifier, zero padded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RobotId([u8; ROBOT_ID_LEN]);

impl RobotId {
    /// Builds an id from text of at most 16 bytes without NUL characters.
    pub fn new(name: &str) -> Result<Self, EncodeError> {
        let bytes = name.as_bytes();
        if bytes.is_empty() || bytes.len() > ROBOT_ID_LEN || bytes.contains(&0) {
            return Err(EncodeError::InvalidRobotId(name.to_string()));
        }
        let mut raw = [0u8; ROBOT_ID_LEN];
        raw[..bytes.len()].copy_from_slice(bytes);
        Ok(Self(raw))
    }

    pub const fn from_bytes(raw: [u8; ROBOT_ID_LEN]) -> Self {
        Self(raw)
    }

    pub fn as_bytes(&self) -> &[u8; ROBOT_ID_LEN] {
        &self.0
    }

    /// The id text with zero padding removed. Non-UTF-8 bytes are replaced.
    pub fn as_str(&self) -> String {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(ROBOT_ID_LEN);
        String::from_utf8_lossy(&self.0[..end]).into_owned()
    }

    /// Monitoring consumers identify themselves with a `mon-` prefix.
    pub fn is_monitor(&self) -> bool {
        self.0.starts_with(b"mon-")
    }
}

impl fmt::Debug for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RobotId({:?})", self.as_str())
    }
}

impl fmt::Display for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageHeader {
    pub msg_type: MsgType,
    pub robot_id: RobotId,
    pub seq: u64,
    pub timestamp_us: u64,
    pub payload_len: u32,
}

impl MessageHeader {
    pub fn new(msg_type: MsgType, robot_id: RobotId, seq: u64, timestamp_us: u64) -> Self {
        Self {
            msg_type,
            robot_id,
            seq,
            timestamp_us,
            payload_len: 0,
        }
    }

    pub fn with_payload_len(mut self, len: usize) -> Self {
        self.payload_len = len as u32;
        self
    }

    /// Header plus payload size in bytes.
    pub fn message_len(&self) -> usize {
        HEADER_LEN + self.payload_len as usize
    }

    fn write_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC.to_be_bytes());
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(self.robot_id.as_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.timestamp_us.to_be_bytes());
        out.extend_from_slice(&self.payload_len.to_be_bytes());
    }

    /// Parses the fixed header. `bytes` must hold at least [`HEADER_LEN`] bytes.
    pub fn parse(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < HEADER_LEN {
            // Reject bad magic as soon as it is visible.
            check_magic_prefix(bytes)?;
            return Err(DecodeError::Incomplete {
                needed: HEADER_LEN - bytes.len(),
            });
        }
        let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        if magic != MAGIC {
            return Err(DecodeError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(DecodeError::BadVersion(bytes[4]));
        }
        let msg_type = MsgType::try_from(bytes[5])?;
        let robot_id = RobotId(bytes[6..22].try_into().unwrap());
        let seq = u64::from_be_bytes(bytes[22..30].try_into().unwrap());
        let timestamp_us = u64::from_be_bytes(bytes[30..38].try_into().unwrap());
        let payload_len = u32::from_be_bytes(bytes[38..42].try_into().unwrap());
        Ok(Self {
            msg_type,
            robot_id,
            seq,
            timestamp_us,
            payload_len,
        })
    }
}

fn check_magic_prefix(bytes: &[u8]) -> Result<(), DecodeError> {
    let magic = MAGIC.to_be_bytes();
    let n = bytes.len().min(4);
    if bytes[..n] != magic[..n] {
        let mut padded = [0u8; 4];
        padded[..n].copy_from_slice(&bytes[..n]);
        return Err(DecodeError::BadMagic(u32::from_be_bytes(padded)));
    }
    if bytes.len() > 4 && bytes[4] != VERSION {
        return Err(DecodeError::BadVersion(bytes[4]));
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("header declares payload_len {declared} but payload has {actual} bytes")]
    LengthMismatch { declared: u32, actual: usize },
    #[error("payload of {0} bytes exceeds the protocol limit")]
    PayloadTooLarge(usize),
    #[error("invalid robot id {0:?}: must be 1-16 bytes without NUL")]
    InvalidRobotId(String),
    #[error("invalid payload: {0}")]
    Payload(#[from] PayloadError),
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum DecodeError {
    #[error("bad magic 0x{0:08X}")]
    BadMagic(u32),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload_len {0} exceeds the protocol limit")]
    Oversized(u32),
    #[error("incomplete message: {needed} more bytes required")]
    Incomplete { needed: usize },
}

impl DecodeError {
    /// `true` for errors that more input can resolve.
    pub fn is_incomplete(&self) -> bool {
        matches!(self, DecodeError::Incomplete { .. })
    }
}

/// Encodes a header and payload into one wire message.
pub fn encode_message(header: &MessageHeader, payload: &[u8]) -> Result<Vec<u8>, EncodeError> {
    if header.payload_len as usize != payload.len() {
        return Err(EncodeError::LengthMismatch {
            declared: header.payload_len,
            actual: payload.len(),
        });
    }
    if payload.len() > MAX_PAYLOAD_LEN as usize {
        return Err(EncodeError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    header.write_into(&mut out);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Decodes one message from the front of `bytes`.
///
/// On success returns the header and a borrow of exactly `payload_len`
/// payload bytes; the message occupies `header.message_len()` bytes of input.
pub fn decode_message(bytes: &[u8]) -> Result<(MessageHeader, &[u8]), DecodeError> {
    let header = MessageHeader::parse(bytes)?;
    if header.payload_len > MAX_PAYLOAD_LEN {
        return Err(DecodeError::Oversized(header.payload_len));
    }
    let total = header.message_len();
    if bytes.len() < total {
        return Err(DecodeError::Incomplete {
            needed: total - bytes.len(),
        });
    }
    Ok((header, &bytes[HEADER_LEN..total]))
}

/// An owned header + payload pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub header: MessageHeader,
    pub payload: Vec<u8>,
}

impl Message {
    /// Builds a message, filling in `payload_len` from the payload.
    pub fn new(
        msg_type: MsgType,
        robot_id: RobotId,
        seq: u64,
        timestamp_us: u64,
        payload: Vec<u8>,
    ) -> Self {
        let header = MessageHeader::new(msg_type, robot_id, seq, timestamp_us)
            .with_payload_len(payload.len());
        Self { header, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        encode_message(&self.header, &self.payload)
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(#[from] DecodeError),
}

/// Reads one whole message from a blocking stream.
///
/// Returns `Ok(None)` on a clean end of stream at a message boundary.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<Message>, ReadError> {
    let mut head = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut head[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header = MessageHeader::parse(&head)?;
    if header.payload_len > MAX_PAYLOAD_LEN {
        return Err(DecodeError::Oversized(header.payload_len).into());
    }
    let mut payload = vec![0u8; header.payload_len as usize];
    reader.read_exact(&mut payload)?;
    Ok(Some(Message { header, payload }))
}

/// Payloads up to this size are copied behind the header and sent in one
/// write; larger ones are written straight from the message.
const COALESCE_LIMIT: usize = 16 * 1024;

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> io::Result<()> {
    if msg.payload.len() <= COALESCE_LIMIT {
        let bytes = msg
            .encode()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        return writer.write_all(&bytes);
    }
    // Same checks as `encode`, without building the whole message.
    if msg.header.payload_len as usize != msg.payload.len() {
        let e = EncodeError::LengthMismatch {
            declared: msg.header.payload_len,
            actual: msg.payload.len(),
        };
        return Err(io::Error::new(io::ErrorKind::InvalidInput, e));
    }
    if msg.payload.len() > MAX_PAYLOAD_LEN as usize {
        let e = EncodeError::PayloadTooLarge(msg.payload.len());
        return Err(io::Error::new(io::ErrorKind::InvalidInput, e));
    }
    let mut head = Vec::with_capacity(HEADER_LEN);
    msg.header.write_into(&mut head);
    writer.write_all(&head)?;
    writer.write_all(&msg.payload)
}

// ---------------------------------------------------------------------------
// Payloads
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Clone)]
pub enum PayloadError {
    #[error("payload truncated")]
    Truncated,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown pixel format {0}")]
    PixelFormat(u8),
    #[error("frame dimensions must be at least 1x1")]
    ZeroDimension,
    #[error("expected {expected} pixel bytes, found {actual}")]
    PixelLength { expected: usize, actual: usize },
    #[error("box {0:?} is inverted or outside the frame")]
    InvalidBox(BBox),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f32),
    #[error("action arguments are not valid UTF-8")]
    Utf8,
    #[error("{0} entries exceed the 16-bit count field")]
    TooMany(usize),
    #[error("bad annotation marker")]
    AnnotationMarker,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        let end = self.pos.checked_add(n).ok_or(PayloadError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(PayloadError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PayloadError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, PayloadError> {
        Ok(f32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn finish(self) -> Result<(), PayloadError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(PayloadError::TrailingBytes(n)),
        }
    }
}

fn put_box(out: &mut Vec<u8>, b: &BBox) {
    for v in [b.x1, b.y1, b.x2, b.y2] {
        out.extend_from_slice(&v.to_be_bytes());
    }
}

fn get_box(c: &mut Cursor<'_>) -> Result<BBox, PayloadError> {
    Ok(BBox::new(c.u16()?, c.u16()?, c.u16()?, c.u16()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PixelFormat {
    Rgb24 = 1,
}

/// Marker introducing the optional ground-truth annotation after the pixels.
const ANNOTATION_MARKER: [u8; 2] = *b"GT";

/// A raw camera frame.
///
/// Simulated robots may append a ground-truth annotation after the pixel
/// bytes (`"GT"`, u16 count, then `label u16, x1 y1 x2 y2 u16` per box); the
/// oracle detector reads it. Frames from real cameras carry none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePayload {
    pub width: u16,
    pub height: u16,
    pub pixel_format: PixelFormat,
    pub pixels: Vec<u8>,
    pub annotation: Option<Vec<LabeledBox>>,
}

impl FramePayload {
    pub const FIXED_LEN: usize = 5;

    pub fn new(width: u16, height: u16, pixels: Vec<u8>) -> Result<Self, PayloadError> {
        let frame = Self {
            width,
            height,
            pixel_format: PixelFormat::Rgb24,
            pixels,
            annotation: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// A frame filled with a single color.
    pub fn solid(width: u16, height: u16, rgb: [u8; 3]) -> Self {
        let pixels = rgb.repeat(usize::from(width) * usize::from(height));
        Self {
            width,
            height,
            pixel_format: PixelFormat::Rgb24,
            pixels,
            annotation: None,
        }
    }

    pub fn with_annotation(mut self, truth: Vec<LabeledBox>) -> Self {
        self.annotation = Some(truth);
        self
    }

    fn validate(&self) -> Result<(), PayloadError> {
        if self.width == 0 || self.height == 0 {
            return Err(PayloadError::ZeroDimension);
        }
        let expected = usize::from(self.width) * usize::from(self.height) * 3;
        if self.pixels.len() != expected {
            return Err(PayloadError::PixelLength {
                expected,
                actual: self.pixels.len(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, x: u16, y: u16) -> [u8; 3] {
        let i = (usize::from(y) * usize::from(self.width) + usize::from(x)) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u16, y: u16, rgb: [u8; 3]) {
        let i = (usize::from(y) * usize::from(self.width) + usize::from(x)) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode(&self) -> Result<Vec<u8>, PayloadError> {
        self.validate()?;
        let extra = self.annotation.as_ref().map_or(0, |a| 4 + a.len() * 10);
        let mut out = Vec::with_capacity(Self::FIXED_LEN + self.pixels.len() + extra);
        out.extend_from_slice(&self.width.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        out.push(self.pixel_format as u8);
        out.extend_from_slice(&self.pixels);
        if let Some(truth) = &self.annotation {
            let n = u16::try_from(truth.len()).map_err(|_| PayloadError::TooMany(truth.len()))?;
            out.extend_from_slice(&ANNOTATION_MARKER);
            out.extend_from_slice(&n.to_be_bytes());
            for t in truth {
                out.extend_from_slice(&t.label_id.to_be_bytes());
                put_box(&mut out, &t.bbox);
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let (width, height, annotation) = Self::parse(bytes)?;
        let n = usize::from(width) * usize::from(height) * 3;
        Ok(Self {
            width,
            height,
            pixel_format: PixelFormat::Rgb24,
            pixels: bytes[Self::FIXED_LEN..Self::FIXED_LEN + n].to_vec(),
            annotation,
        })
    }

    /// Like [`FramePayload::decode`], reusing the payload buffer for the
    /// pixels instead of copying them out.
    pub fn decode_owned(mut bytes: Vec<u8>) -> Result<Self, PayloadError> {
        let (width, height, annotation) = Self::parse(&bytes)?;
        let n = usize::from(width) * usize::from(height) * 3;
        bytes.truncate(Self::FIXED_LEN + n);
        bytes.drain(..Self::FIXED_LEN);
        Ok(Self {
            width,
            height,
            pixel_format: PixelFormat::Rgb24,
            pixels: bytes,
            annotation,
        })
    }

    /// Validates a frame payload and returns its dimensions and annotation.
    fn parse(bytes: &[u8]) -> Result<(u16, u16, Option<Vec<LabeledBox>>), PayloadError> {
        let mut c = Cursor::new(bytes);
        let width = c.u16()?;
        let height = c.u16()?;
        let fmt = c.u8()?;
        if fmt != PixelFormat::Rgb24 as u8 {
            return Err(PayloadError::PixelFormat(fmt));
        }
        if width == 0 || height == 0 {
            return Err(PayloadError::ZeroDimension);
        }
        c.take(usize::from(width) * usize::from(height) * 3)?;
        let annotation = if c.remaining() > 0 {
            if c.take(2)? != ANNOTATION_MARKER {
                return Err(PayloadError::AnnotationMarker);
            }
            let count = c.u16()?;
            let mut truth = Vec::with_capacity(usize::from(count));
            for _ in 0..count {
                let label_id = c.u16()?;
                let bbox = get_box(&mut c)?;
                if !bbox.fits_within(width, height) {
                    return Err(PayloadError::InvalidBox(bbox));
                }
                truth.push(LabeledBox { label_id, bbox });
            }
            Some(truth)
        } else {
            None
        };
        c.finish()?;
        Ok((width, height, annotation))
    }
}

/// Detections for one inferred frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultPayload {
    pub frame_seq: u64,
    pub detections: Vec<Detection>,
}

impl ResultPayload {
    pub const DETECTION_LEN: usize = 14;

    pub fn encode(&self) -> Result<Vec<u8>, PayloadError> {
        let n = u16::try_from(self.detections.len())
            .map_err(|_| PayloadError::TooMany(self.detections.len()))?;
        let mut out = Vec::with_capacity(10 + self.detections.len() * Self::DETECTION_LEN);
        out.extend_from_slice(&self.frame_seq.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        for d in &self.detections {
            check_detection(d)?;
            out.extend_from_slice(&d.label_id.to_be_bytes());
            out.extend_from_slice(&d.confidence.to_be_bytes());
            put_box(&mut out, &d.bbox);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut c = Cursor::new(bytes);
        let frame_seq = c.u64()?;
        let n = c.u16()?;
        let mut detections = Vec::with_capacity(usize::from(n));
        for _ in 0..n {
            let d = Detection {
                label_id: c.u16()?,
                confidence: c.f32()?,
                bbox: get_box(&mut c)?,
            };
            check_detection(&d)?;
            detections.push(d);
        }
        c.finish()?;
        Ok(Self {
            frame_seq,
            detections,
        })
    }

    /// Checks every box against the frame it was inferred from.
    pub fn check_bounds(&self, width: u16, height: u16) -> Result<(), PayloadError> {
        match self
            .detections
            .iter()
            .find(|d| !d.bbox.fits_within(width, height))
        {
            Some(d) => Err(PayloadError::InvalidBox(d.bbox)),
            None => Ok(()),
        }
    }
}

fn check_detection(d: &Detection) -> Result<(), PayloadError> {
    if !(0.0..=1.0).contains(&d.confidence) {
        return Err(PayloadError::Confidence(d.confidence));
    }
    if !d.bbox.is_valid() {
        return Err(PayloadError::InvalidBox(d.bbox));
    }
    Ok(())
}

/// A command for the robot to execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPayload {
    pub action_id: u16,
    pub args: String,
}

impl ActionPayload {
    pub fn encode(&self) -> Result<Vec<u8>, PayloadError> {
        let len =
            u16::try_from(self.args.len()).map_err(|_| PayloadError::TooMany(self.args.len()))?;
        let mut out = Vec::with_capacity(4 + self.args.len());
        out.extend_from_slice(&self.action_id.to_be_bytes());
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(self.args.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut c = Cursor::new(bytes);
        let action_id = c.u16()?;
        let len = c.u16()?;
        let raw = c.take(usize::from(len))?;
        let args = std::str::from_utf8(raw)
            .map_err(|_| PayloadError::Utf8)?
            .to_string();
        c.finish()?;
        Ok(Self { action_id, args })
    }
}

/// Reason carried in a BYE payload. An empty BYE payload means `Normal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ByeReason {
    Normal = 0,
    DuplicateRobotId = 1,
    Malformed = 2,
    Shutdown = 3,
}

impl ByeReason {
    pub fn encode(self) -> Vec<u8> {
        if self == ByeReason::Normal {
            Vec::new()
        } else {
            (self as u16).to_be_bytes().to_vec()
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        if bytes.is_empty() {
            return Ok(ByeReason::Normal);
        }
        let mut c = Cursor::new(bytes);
        let code = c.u16()?;
        c.finish()?;
        Ok(match code {
            0 => ByeReason::Normal,
            1 => ByeReason::DuplicateRobotId,
            2 => ByeReason::Malformed,
            _ => ByeReason::Shutdown,
        })
    }
}
