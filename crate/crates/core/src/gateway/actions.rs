//! Label-to-action dispatch with a per-label cooldown.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::config::ActionRegistry;
use crate::geometry::Detection;
use crate::protocol::ActionPayload;

/// Picks at most one action per frame for one robot.
///
/// The highest-confidence detection whose label is bound wins. If that
/// label fired less than `cooldown` ago nothing is sent.
#[derive(Debug)]
pub struct ActionDispatcher {
    cooldown: Duration,
    last_fired: HashMap<u16, Instant>,
}

impl ActionDispatcher {
    pub fn new(cooldown: Duration) -> Self {
        Self {
            cooldown,
            last_fired: HashMap::new(),
        }
    }

    pub fn dispatch(
        &mut self,
        registry: &ActionRegistry,
        robot: &str,
        dets: &[Detection],
        class_name: impl Fn(u16) -> String,
        now: Instant,
    ) -> Option<ActionPayload> {
        let (det, action_id) = dets
            .iter()
            .filter_map(|d| registry.binding(robot, d.label_id).map(|a| (d, a)))
            .fold(None::<(&Detection, u16)>, |best, cand| match best {
                Some(b) if b.0.confidence >= cand.0.confidence => Some(b),
                _ => Some(cand),
            })?;
        if let Some(&t) = self.last_fired.get(&det.label_id) {
            if now.saturating_duration_since(t) < self.cooldown {
                return None;
            }
        }
        let def = registry.action(action_id)?;
        self.last_fired.insert(det.label_id, now);
        Some(ActionPayload {
            action_id,
            args: expand(&def.args_template, det, &class_name(det.label_id)),
        })
    }
}

fn expand(template: &str, d: &Detection, label: &str) -> String {
    template
        .replace("{label_id}", &d.label_id.to_string())
        .replace("{label}", label)
        .replace("{confidence}", &format!("{:.3}", d.confidence))
        .replace("{x1}", &d.bbox.x1.to_string())
        .replace("{y1}", &d.bbox.y1.to_string())
        .replace("{x2}", &d.bbox.x2.to_string())
        .replace("{y2}", &d.bbox.y2.to_string())
}
