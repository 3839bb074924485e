//! Frame admission: arrival-rate estimation, the shared process queue and
//! its overload drop rule.
//!
//! When the inference engine is idle an arriving frame is inferred at once.
//! Otherwise it joins the queue; once the queue holds `max(5, ceil(r))`
//! frames every queued frame is discarded and the newest is re-admitted as
//! the sole entry, so the engine never works through a stale backlog.

use std::collections::VecDeque;

use thiserror::Error;

use crate::stats::{summarize, LatencySummary};

/// Number of arrivals the rate estimator looks back over.
pub const RATE_WINDOW: usize = 30;
/// Queue length threshold floor.
pub const MIN_DROP_THRESHOLD: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error("timestamp {got}us precedes previous arrival {previous}us")]
    NonMonotonic { previous: u64, got: u64 },
    #[error("result time {t_result}us precedes arrival {t_arrival}us")]
    NegativeDuration { t_arrival: u64, t_result: u64 },
}

/// Sliding-window estimate of frames per second from arrival timestamps.
#[derive(Debug, Clone)]
pub struct FrameRateEstimator {
    window: VecDeque<u64>,
    capacity: usize,
}

impl Default for FrameRateEstimator {
    fn default() -> Self {
        Self::new(RATE_WINDOW)
    }
}

impl FrameRateEstimator {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "rate window needs at least two arrivals");
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Records an arrival at `t_us` microseconds and returns the new rate.
    pub fn observe(&mut self, t_us: u64) -> Result<f64, PipelineError> {
        if let Some(&last) = self.window.back() {
            if t_us < last {
                return Err(PipelineError::NonMonotonic {
                    previous: last,
                    got: t_us,
                });
            }
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(t_us);
        Ok(self.rate())
    }

    /// `(count - 1) / (t_last - t_first)` over the window; 0 with fewer than
    /// two arrivals or a zero time span.
    pub fn rate(&self) -> f64 {
        let (Some(&first), Some(&last)) = (self.window.front(), self.window.back()) else {
            return 0.0;
        };
        if self.window.len() < 2 || last == first {
            return 0.0;
        }
        (self.window.len() - 1) as f64 / ((last - first) as f64 / 1e6)
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

/// Queue length at which the backlog is purged for an arrival rate `r`.
pub fn drop_threshold(rate: f64) -> usize {
    let r = if rate.is_finite() && rate > 0.0 {
        rate.ceil() as usize
    } else {
        0
    };
    r.max(MIN_DROP_THRESHOLD)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitDecision {
    InferNow,
    Enqueued,
    EnqueuedAfterDrop,
}

/// Outcome of [`ProcessQueue::submit`].
#[derive(Debug)]
pub struct Submitted<T> {
    pub decision: SubmitDecision,
    /// The submitted frame, handed back when it must be inferred now.
    pub infer_now: Option<T>,
    /// Frames purged by this submission, oldest first.
    pub dropped: Vec<T>,
}

/// Frame counters. `frames_in == frames_inferred + frames_dropped + queued`
/// holds after every queue operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameCounters {
    pub frames_in: u64,
    pub frames_inferred: u64,
    pub frames_dropped: u64,
}

/// The FIFO of frames waiting for the inference engine.
#[derive(Debug)]
pub struct ProcessQueue<T> {
    entries: VecDeque<T>,
    counters: FrameCounters,
}

impl<T> Default for ProcessQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> ProcessQueue<T> {
    pub fn new() -> Self {
        Self {
            entries: VecDeque::new(),
            counters: FrameCounters::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counters(&self) -> FrameCounters {
        self.counters
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// Admits one arriving frame.
    ///
    /// With the engine idle the frame is returned for immediate inference.
    /// Otherwise it is appended. In both cases, if the queue then holds at
    /// least `drop_threshold(rate)` frames it is emptied; a frame appended by
    /// this call is put back as the only entry.
    pub fn submit(&mut self, frame: T, engine_busy: bool, rate: f64) -> Submitted<T> {
        self.counters.frames_in += 1;
        let threshold = drop_threshold(rate);
        if !engine_busy {
            self.counters.frames_inferred += 1;
            let dropped = if self.entries.len() >= threshold {
                self.purge_all()
            } else {
                Vec::new()
            };
            return Submitted {
                decision: SubmitDecision::InferNow,
                infer_now: Some(frame),
                dropped,
            };
        }
        self.entries.push_back(frame);
        if self.entries.len() < threshold {
            return Submitted {
                decision: SubmitDecision::Enqueued,
                infer_now: None,
                dropped: Vec::new(),
            };
        }
        let newest = self.entries.pop_back().expect("just pushed");
        let dropped = self.purge_all();
        self.entries.push_back(newest);
        Submitted {
            decision: SubmitDecision::EnqueuedAfterDrop,
            infer_now: None,
            dropped,
        }
    }

    /// Removes the oldest queued frame for the inference worker.
    pub fn next_frame(&mut self) -> Option<T> {
        let f = self.entries.pop_front()?;
        self.counters.frames_inferred += 1;
        Some(f)
    }

    /// Drops every queued frame matching `pred`, e.g. a departed robot's.
    pub fn purge_where<F: FnMut(&T) -> bool>(&mut self, mut pred: F) -> Vec<T> {
        let mut kept = VecDeque::with_capacity(self.entries.len());
        let mut dropped = Vec::new();
        for f in self.entries.drain(..) {
            if pred(&f) {
                dropped.push(f);
            } else {
                kept.push_back(f);
            }
        }
        self.entries = kept;
        self.counters.frames_dropped += dropped.len() as u64;
        dropped
    }

    fn purge_all(&mut self) -> Vec<T> {
        self.counters.frames_dropped += self.entries.len() as u64;
        self.entries.drain(..).collect()
    }
}

/// Arrival-to-result latency samples.
#[derive(Debug, Clone, Default)]
pub struct LatencyRecorder {
    samples_us: Vec<u64>,
}

impl LatencyRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, t_arrival_us: u64, t_result_us: u64) -> Result<u64, PipelineError> {
        let d = t_result_us
            .checked_sub(t_arrival_us)
            .ok_or(PipelineError::NegativeDuration {
                t_arrival: t_arrival_us,
                t_result: t_result_us,
            })?;
        self.samples_us.push(d);
        Ok(d)
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples_us
    }

    pub fn mean_us(&self) -> Option<f64> {
        summarize(&self.samples_us).map(|s| s.mean_us)
    }

    pub fn summary(&self) -> Option<LatencySummary> {
        summarize(&self.samples_us)
    }
}
