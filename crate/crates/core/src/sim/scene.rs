//! Synthetic scenes of flat-colored rectangles with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{BBox, LabeledBox};
use crate::protocol::FramePayload;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("object {index} leaves the {width}x{height} frame at frame {frame}")]
    OutOfFrame {
        index: usize,
        frame: u64,
        width: u16,
        height: u16,
    },
    #[error("object {index} has label {label} but the scene has {classes} classes")]
    Label {
        index: usize,
        label: u16,
        classes: u16,
    },
    #[error("object {0} has zero size")]
    Empty(usize),
    #[error("frame must be at least 1x1")]
    ZeroFrame,
}

/// Top-left corner as a function of the frame index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Static {
        x: u16,
        y: u16,
    },
    /// `dx`, `dy` pixels per frame.
    Linear {
        x: u16,
        y: u16,
        dx: i32,
        dy: i32,
    },
    /// Linear motion reflected at the frame edges; never leaves the frame.
    Bounce {
        x: u16,
        y: u16,
        dx: i32,
        dy: i32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub label_id: u16,
    pub width: u16,
    pub height: u16,
    pub trajectory: Trajectory,
    pub color: [u8; 3],
}

/// Reflects `p` into `[0, span]`.
fn fold(p: i64, span: i64) -> i64 {
    if span == 0 {
        return 0;
    }
    let m = p.rem_euclid(2 * span);
    if m <= span {
        m
    } else {
        2 * span - m
    }
}

impl SceneObject {
    /// Top-left corner at `index`, unclamped.
    fn corner(&self, index: u64, fw: u16, fh: u16) -> (i64, i64) {
        let i = index as i64;
        match self.trajectory {
            Trajectory::Static { x, y } => (x.into(), y.into()),
            Trajectory::Linear { x, y, dx, dy } => (
                i64::from(x) + i64::from(dx) * i,
                i64::from(y) + i64::from(dy) * i,
            ),
            Trajectory::Bounce { x, y, dx, dy } => (
                fold(
                    i64::from(x) + i64::from(dx) * i,
                    i64::from(fw) - i64::from(self.width),
                ),
                fold(
                    i64::from(y) + i64::from(dy) * i,
                    i64::from(fh) - i64::from(self.height),
                ),
            ),
        }
    }
}

/// A validated scene. Boxes are guaranteed inside the frame for frame
/// indices below `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    width: u16,
    height: u16,
    background: [u8; 3],
    classes: u16,
    objects: Vec<SceneObject>,
    horizon: u64,
}

impl SceneSpec {
    pub fn new(
        width: u16,
        height: u16,
        background: [u8; 3],
        classes: u16,
        objects: Vec<SceneObject>,
        horizon: u64,
    ) -> Result<Self, SceneError> {
        if width == 0 || height == 0 {
            return Err(SceneError::ZeroFrame);
        }
        for (index, o) in objects.iter().enumerate() {
            if o.width == 0 || o.height == 0 {
                return Err(SceneError::Empty(index));
            }
            if o.label_id >= classes {
                return Err(SceneError::Label {
                    index,
                    label: o.label_id,
                    classes,
                });
            }
            let out = SceneError::OutOfFrame {
                index,
                frame: 0,
                width,
                height,
            };
            if o.width > width || o.height > height {
                return Err(out);
            }
            // Static and bounce positions are checked at frame 0; bounce
            // stays inside by construction. Linear motion is monotone, so
            // checking both ends of the horizon covers every frame.
            let last = match o.trajectory {
                Trajectory::Linear { .. } => horizon.saturating_sub(1),
                _ => 0,
            };
            for frame in [0, last] {
                let (x, y) = o.corner(frame, width, height);
                if x < 0
                    || y < 0
                    || x + i64::from(o.width) > i64::from(width)
                    || y + i64::from(o.height) > i64::from(height)
                {
                    return Err(SceneError::OutOfFrame {
                        index,
                        frame,
                        width,
                        height,
                    });
                }
            }
        }
        Ok(Self {
            width,
            height,
            background,
            classes,
            objects,
            horizon,
        })
    }

    /// `crowding` bouncing objects with random sizes, speeds and colors.
    pub fn random(
        width: u16,
        height: u16,
        classes: u16,
        crowding: usize,
        seed: u64,
    ) -> Result<Self, SceneError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background = [
            rng.random_range(0..64),
            rng.random_range(0..64),
            rng.random_range(0..64),
        ];
        let max_w = (width / 3).max(1);
        let max_h = (height / 3).max(1);
        let objects = (0..crowding)
            .map(|_| {
                let w = rng.random_range(max_w.div_ceil(4).max(1)..=max_w);
                let h = rng.random_range(max_h.div_ceil(4).max(1)..=max_h);
                SceneObject {
                    label_id: rng.random_range(0..classes.max(1)),
                    width: w,
                    height: h,
                    trajectory: Trajectory::Bounce {
                        x: rng.random_range(0..=width - w),
                        y: rng.random_range(0..=height - h),
                        dx: rng.random_range(-4..=4),
                        dy: rng.random_range(-4..=4),
                    },
                    // Bright colors stay distinct from the dark background.
                    color: [
                        rng.random_range(96..=255),
                        rng.random_range(96..=255),
                        rng.random_range(96..=255),
                    ],
                }
            })
            .collect();
        Self::new(width, height, background, classes.max(1), objects, u64::MAX)
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn background(&self) -> [u8; 3] {
        self.background
    }

    pub fn classes(&self) -> u16 {
        self.classes
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Objects per frame.
    pub fn crowding(&self) -> usize {
        self.objects.len()
    }

    /// Ground truth at `index`, in drawing order.
    pub fn truth(&self, index: u64) -> Vec<LabeledBox> {
        self.objects
            .iter()
            .map(|o| {
                let (x, y) = o.corner(index, self.width, self.height);
                // Clamped only past the horizon; inside it this is a no-op.
                let x = x.clamp(0, i64::from(self.width - o.width)) as u16;
                let y = y.clamp(0, i64::from(self.height - o.height)) as u16;
                LabeledBox {
                    label_id: o.label_id,
                    bbox: BBox::new(x, y, x + o.width, y + o.height),
                }
            })
            .collect()
    }
}

/// Draws frame `index`: background, then each object's rectangle in order
/// (later objects cover earlier ones). The truth is attached to the frame
/// as its annotation and also returned.
pub fn render_frame(scene: &SceneSpec, index: u64) -> (FramePayload, Vec<LabeledBox>) {
    let truth = scene.truth(index);
    let mut frame = FramePayload::solid(scene.width, scene.height, scene.background);
    let stride = usize::from(scene.width) * 3;
    for (o, t) in scene.objects.iter().zip(&truth) {
        let b = t.bbox;
        for y in b.y1..b.y2 {
            let row = usize::from(y) * stride;
            for px in frame.pixels[row + usize::from(b.x1) * 3..row + usize::from(b.x2) * 3]
                .chunks_exact_mut(3)
            {
                px.copy_from_slice(&o.color);
            }
        }
    }
    (frame.with_annotation(truth.clone()), truth)
}
