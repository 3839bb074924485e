//! Real-time object-detection gateway for low-compute robot clients.

pub mod detector;
pub mod eval;
pub mod gateway;
pub mod geometry;
pub mod pipeline;
pub mod protocol;
pub mod quant;
pub mod sim;
pub mod stats;

pub use geometry::{BBox, Detection, LabeledBox};
