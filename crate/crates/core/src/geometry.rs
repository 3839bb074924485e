//! Pixel-space boxes and detections shared by the detector, gateway, simulator and harness.

/// Axis-aligned box in pixel coordinates.
///
/// `(x1, y1)` is the top-left corner and `(x2, y2)` the bottom-right corner.
/// The bottom-right corner is exclusive: the box covers columns `x1..x2` and
/// rows `y1..y2`, so a box flush with a 640-wide frame has `x2 == 640`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BBox {
    pub x1: u16,
    pub y1: u16,
    pub x2: u16,
    pub y2: u16,
}

impl BBox {
    pub const fn new(x1: u16, y1: u16, x2: u16, y2: u16) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        u32::from(self.x2.saturating_sub(self.x1))
    }

    pub fn height(&self) -> u32 {
        u32::from(self.y2.saturating_sub(self.y1))
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    /// `true` when the corners are strictly ordered on both axes.
    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn fits_within(&self, width: u16, height: u16) -> bool {
        self.is_valid() && self.x2 <= width && self.y2 <= height
    }

    /// Intersection-over-union. Degenerate boxes give 0.
    pub fn iou(&self, other: &BBox) -> f64 {
        if !self.is_valid() || !other.is_valid() {
            return 0.0;
        }
        let ix1 = self.x1.max(other.x1);
        let iy1 = self.y1.max(other.y1);
        let ix2 = self.x2.min(other.x2);
        let iy2 = self.y2.min(other.y2);
        if ix1 >= ix2 || iy1 >= iy2 {
            return 0.0;
        }
        let inter = u64::from(ix2 - ix1) * u64::from(iy2 - iy1);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

/// A ground-truth box: label without a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledBox {
    pub label_id: u16,
    pub bbox: BBox,
}

/// A labeled, scored box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub label_id: u16,
    pub confidence: f32,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(label_id: u16, confidence: f32, bbox: BBox) -> Self {
        Self {
            label_id,
            confidence,
            bbox,
        }
    }
}
