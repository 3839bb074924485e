//! Draws detections onto frames for the monitoring stream.

use crate::geometry::Detection;
use crate::protocol::{FramePayload, RobotId};

/// Border thickness in pixels, drawn inside the box.
pub const BORDER_PX: u16 = 2;
pub const TEXT_COLOR: [u8; 3] = [255, 255, 255];

const GLYPH_W: u16 = 3;
const GLYPH_H: u16 = 5;
/// Gap between the text baseline and the box's top edge.
const TEXT_GAP: u16 = 2;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
];

/// Border color for a class.
pub fn class_color(label_id: u16) -> [u8; 3] {
    PALETTE[usize::from(label_id) % PALETTE.len()]
}

/// A frame with detections drawn on it, tagged with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorFrame {
    pub robot_id: RobotId,
    pub seq: u64,
    pub frame: FramePayload,
}

/// Copies `frame`, then for each detection writes its label above the
/// box's top-left corner in white and a 2-px border just inside the box in
/// the class color. Everything is clipped to the frame. The annotation
/// trailer is not carried over.
pub fn overlay(
    frame: &FramePayload,
    dets: &[Detection],
    class_name: impl Fn(u16) -> String,
) -> FramePayload {
    let mut out = FramePayload {
        annotation: None,
        ..frame.clone()
    };
    for d in dets {
        let text = format!("{} {:.2}", class_name(d.label_id), d.confidence);
        let tw = text.chars().count() as u16 * (GLYPH_W + 1);
        let x = d.bbox.x1.min(out.width.saturating_sub(tw));
        let y = d.bbox.y1.saturating_sub(GLYPH_H + TEXT_GAP);
        draw_text(&mut out, x, y, &text);
    }
    for d in dets {
        draw_border(&mut out, d, class_color(d.label_id));
    }
    out
}

fn put(frame: &mut FramePayload, x: u16, y: u16, rgb: [u8; 3]) {
    if x < frame.width && y < frame.height {
        frame.set_pixel(x, y, rgb);
    }
}

fn draw_border(frame: &mut FramePayload, d: &Detection, rgb: [u8; 3]) {
    let b = d.bbox;
    let (x2, y2) = (b.x2.min(frame.width), b.y2.min(frame.height));
    if b.x1 >= x2 || b.y1 >= y2 {
        return;
    }
    for y in b.y1..y2 {
        for x in b.x1..x2 {
            let edge = x < b.x1 + BORDER_PX
                || y < b.y1 + BORDER_PX
                || x + BORDER_PX >= b.x2
                || y + BORDER_PX >= b.y2;
            if edge {
                put(frame, x, y, rgb);
            }
        }
    }
}

fn draw_text(frame: &mut FramePayload, x0: u16, y0: u16, text: &str) {
    for (i, ch) in text.chars().enumerate() {
        let bits = glyph(ch);
        let gx = x0.saturating_add(i as u16 * (GLYPH_W + 1));
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                let bit = 14 - (row * GLYPH_W + col);
                if bits >> bit & 1 == 1 {
                    put(frame, gx.saturating_add(col), y0 + row, TEXT_COLOR);
                }
            }
        }
    }
}

/// 3x5 glyphs, rows top to bottom, three bits per row with the leftmost
/// pixel most significant.
fn glyph(ch: char) -> u16 {
    match ch.to_ascii_uppercase() {
        'A' => 0b010_101_111_101_101,
        'B' => 0b110_101_110_101_110,
        'C' => 0b011_100_100_100_011,
        'D' => 0b110_101_101_101_110,
        'E' => 0b111_100_110_100_111,
        'F' => 0b111_100_110_100_100,
        'G' => 0b011_100_101_101_011,
        'H' => 0b101_101_111_101_101,
        'I' => 0b111_010_010_010_111,
        'J' => 0b001_001_001_101_010,
        'K' => 0b101_101_110_101_101,
        'L' => 0b100_100_100_100_111,
        'M' => 0b101_111_111_101_101,
        'N' => 0b110_101_101_101_101,
        'O' => 0b010_101_101_101_010,
        'P' => 0b110_101_110_100_100,
        'Q' => 0b010_101_101_110_011,
        'R' => 0b110_101_110_101_101,
        'S' => 0b011_100_010_001_110,
        'T' => 0b111_010_010_010_010,
        'U' => 0b101_101_101_101_111,
        'V' => 0b101_101_101_101_010,
        'W' => 0b101_101_111_111_101,
        'X' => 0b101_101_010_101_101,
        'Y' => 0b101_101_010_010_010,
        'Z' => 0b111_001_010_100_111,
        '0' => 0b111_101_101_101_111,
        '1' => 0b010_110_010_010_111,
        '2' => 0b110_001_010_100_111,
        '3' => 0b110_001_010_001_110,
        '4' => 0b101_101_111_001_001,
        '5' => 0b111_100_110_001_110,
        '6' => 0b011_100_111_101_111,
        '7' => 0b111_001_010_010_010,
        '8' => 0b111_101_111_101_111,
        '9' => 0b111_101_111_001_110,
        '.' => 0b000_000_000_000_010,
        '-' => 0b000_000_111_000_000,
        '_' => 0b000_000_000_000_111,
        ':' => 0b000_010_000_010_000,
        ' ' => 0,
        _ => 0b110_001_010_000_010,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::BBox;

    fn name(_: u16) -> String {
        "ball".into()
    }

    #[test]
    fn no_detections_is_identity() {
        let f = FramePayload::solid(32, 24, [1, 2, 3]);
        assert_eq!(overlay(&f, &[], name), f);
    }

    #[test]
    fn border_changes_only_edges() {
        let f = FramePayload::solid(64, 64, [0, 0, 0]);
        let d = Detection::new(1, 0.9, BBox::new(10, 10, 50, 50));
        let o = overlay(&f, &[d], name);
        let c = class_color(1);
        for y in 10..50 {
            for x in 10..50 {
                let edge = !(12..48).contains(&x) || !(12..48).contains(&y);
                assert_eq!(o.pixel(x, y) == c, edge, "({x},{y})");
            }
        }
        // Nothing below or right of the box.
        for y in 50..64 {
            for x in 0..64 {
                assert_eq!(o.pixel(x, y), [0, 0, 0]);
            }
        }
        // Label sits in the rows above the box.
        assert!((3..8).any(|y| (10..64).any(|x| o.pixel(x, y) == TEXT_COLOR)));
    }

    #[test]
    fn flush_box_is_clipped() {
        let f = FramePayload::solid(20, 10, [9, 9, 9]);
        let d = Detection::new(0, 0.5, BBox::new(0, 0, 20, 10));
        let o = overlay(&f, &[d], name);
        assert_eq!(o.pixel(0, 0), class_color(0));
        assert_eq!(o.pixel(19, 9), class_color(0));
        assert_eq!(o.pixels.len(), f.pixels.len());
    }
}
