//! Choppy camera timing.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("nominal fps must be positive and finite")]
    Fps,
    #[error("jitter must be finite and >= 0")]
    Jitter,
    #[error("stall probability must lie in [0, 1]")]
    StallProbability,
    #[error("stall length must be at least 2 intervals")]
    StallLength,
}

/// Frame timing model.
///
/// Each inter-frame gap is the nominal interval times a multiplier drawn
/// uniformly from `[1, 1 + jitter]`. With probability `stall_probability`
/// a gap is instead a stall of `stall_frames` whole intervals, during
/// which the camera produces nothing. Gaps never shrink below nominal, so
/// the realized rate never exceeds `nominal_fps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamProfile {
    pub nominal_fps: f64,
    pub jitter: f64,
    pub stall_probability: f64,
    /// Inclusive range of stall lengths in nominal intervals.
    pub stall_frames: (u32, u32),
}

impl Default for StreamProfile {
    fn default() -> Self {
        Self::steady(30.0)
    }
}

/// One scheduled frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    /// Send time relative to stream start.
    pub at: Duration,
    /// Scene frame index; advances by the stall length across stalls.
    pub scene_index: u64,
}

impl StreamProfile {
    pub fn steady(fps: f64) -> Self {
        Self {
            nominal_fps: fps,
            jitter: 0.0,
            stall_probability: 0.0,
            stall_frames: (2, 2),
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.nominal_fps.is_finite() && self.nominal_fps > 0.0) {
            return Err(ProfileError::Fps);
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(ProfileError::Jitter);
        }
        if !(0.0..=1.0).contains(&self.stall_probability) {
            return Err(ProfileError::StallProbability);
        }
        if self.stall_frames.0 < 2 || self.stall_frames.1 < self.stall_frames.0 {
            return Err(ProfileError::StallLength);
        }
        Ok(())
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.nominal_fps)
    }

    /// Every frame sent in the first `duration`, deterministic in `seed`.
    pub fn schedule(&self, duration: Duration, seed: u64) -> Result<Vec<Tick>, ProfileError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nominal = 1.0 / self.nominal_fps;
        let end = duration.as_secs_f64();
        let mut out = Vec::new();
        // Time in nominal intervals, so steady streams stay exact.
        let (mut units, mut index) = (0.0f64, 0u64);
        let end_units = end / nominal;
        while units < end_units - 1e-9 {
            let t = units * nominal;
            out.push(Tick {
                at: Duration::from_secs_f64(t),
                scene_index: index,
            });
            if self.stall_probability > 0.0 && rng.random_bool(self.stall_probability) {
                let k = rng.random_range(self.stall_frames.0..=self.stall_frames.1);
                units += f64::from(k);
                index += u64::from(k);
            } else {
                let m = if self.jitter > 0.0 {
                    rng.random_range(1.0..=1.0 + self.jitter)
                } else {
                    1.0
                };
                units += m;
                index += 1;
            }
        }
        Ok(out)
    }
}
