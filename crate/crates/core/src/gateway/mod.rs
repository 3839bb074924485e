//! The gateway service: sessions, routing, monitoring and actions.

pub mod actions;
pub mod config;
pub mod overlay;
pub mod server;

pub use actions::ActionDispatcher;
pub use config::{ActionDef, ActionRegistry, ConfigError, DetectorKind, GatewayConfig};
pub use overlay::{class_color, overlay, MonitorFrame};
pub use server::{
    build_detector, DropCause, DropEvent, Gateway, GatewayError, GatewayStats, RobotStats,
};
