//! Simulated robots: synthetic scenes, choppy frame timing and a gateway
//! client that records what came back.

pub mod client;
pub mod scene;
pub mod stream;

use std::io::Write;

pub use client::{
    fleet_robot_id, run_client, run_fleet, ClientOptions, ClientReport, FleetOptions, FrameRecord,
};
pub use scene::{render_frame, SceneError, SceneObject, SceneSpec, Trajectory};
pub use stream::{ProfileError, StreamProfile, Tick};

use crate::eval::{write_records, EvalRecord};

/// Writes every robot's frames as one records file.
pub fn write_report<W: Write>(w: W, reports: &[ClientReport]) -> std::io::Result<()> {
    let records: Vec<EvalRecord> = reports
        .iter()
        .flat_map(ClientReport::to_eval_records)
        .collect();
    write_records(w, &records)
}
