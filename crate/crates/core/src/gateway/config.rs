//! Gateway configuration file.
//!
//! ```text
//! classes = person, ball, cup
//! confidence_threshold = 0.25
//! nms_threshold = 0.45
//! cooldown_secs = 2
//! detector = oracle            # or micro-cnn
//! model = models/micro.q8m     # micro-cnn only; random weights when absent
//! service_time_ms = 0          # pad every inference to at least this long
//! oracle_jitter_px = 0
//! oracle_fp_rate = 0
//! seed = 0
//!
//! [actions]
//! 1 = kick leg=right target={label}
//! 2 = wave
//!
//! [bindings.nao-kitchen]
//! ball = kick
//!
//! [bindings.*]
//! person = 2
//! ```
//!
//! Action args may reference `{label}`, `{label_id}`, `{confidence}`,
//! `{x1}`, `{y1}`, `{x2}` and `{y2}` of the triggering detection.
//! `[bindings.*]` applies to robots without a section of their own.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::detector::{OracleNoise, DEFAULT_NMS_IOU};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    MicroCnn,
    Oracle,
}

impl std::str::FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "micro-cnn" => Ok(Self::MicroCnn),
            "oracle" => Ok(Self::Oracle),
            other => Err(format!(
                "unknown detector {other:?} (expected micro-cnn or oracle)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionDef {
    pub name: String,
    pub args_template: String,
}

/// Action definitions and per-robot label bindings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionRegistry {
    actions: BTreeMap<u16, ActionDef>,
    /// robot id (or `*`) -> label id -> action id
    bindings: HashMap<String, BTreeMap<u16, u16>>,
}

impl ActionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, id: u16, name: &str, args_template: &str) -> Result<(), ConfigError> {
        if self.actions.contains_key(&id) {
            return Err(ConfigError::Invalid(format!("action {id} defined twice")));
        }
        if self.actions.values().any(|a| a.name == name) {
            return Err(ConfigError::Invalid(format!(
                "action name {name:?} defined twice"
            )));
        }
        self.actions.insert(
            id,
            ActionDef {
                name: name.into(),
                args_template: args_template.into(),
            },
        );
        Ok(())
    }

    /// Binds `label` to `action` for `robot` (`*` for every robot without
    /// its own bindings). The action must already be defined.
    pub fn bind(&mut self, robot: &str, label: u16, action: u16) -> Result<(), ConfigError> {
        if !self.actions.contains_key(&action) {
            return Err(ConfigError::Invalid(format!(
                "binding to undefined action {action}"
            )));
        }
        self.bindings
            .entry(robot.into())
            .or_default()
            .insert(label, action);
        Ok(())
    }

    pub fn action(&self, id: u16) -> Option<&ActionDef> {
        self.actions.get(&id)
    }

    pub fn action_by_name(&self, name: &str) -> Option<u16> {
        self.actions
            .iter()
            .find(|(_, a)| a.name == name)
            .map(|(&id, _)| id)
    }

    pub fn binding(&self, robot: &str, label: u16) -> Option<u16> {
        self.bindings
            .get(robot)
            .or_else(|| self.bindings.get("*"))
            .and_then(|b| b.get(&label).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub classes: Vec<String>,
    pub confidence_threshold: f32,
    pub nms_threshold: f64,
    pub cooldown: Duration,
    pub detector: DetectorKind,
    pub model: Option<PathBuf>,
    pub service_time: Duration,
    pub oracle_noise: OracleNoise,
    pub seed: u64,
    pub actions: ActionRegistry,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            classes: vec!["object".into()],
            confidence_threshold: 0.25,
            nms_threshold: DEFAULT_NMS_IOU,
            cooldown: Duration::from_secs(2),
            detector: DetectorKind::Oracle,
            model: None,
            service_time: Duration::ZERO,
            oracle_noise: OracleNoise::default(),
            seed: 0,
            actions: ActionRegistry::new(),
        }
    }
}

impl GatewayConfig {
    pub fn class_name(&self, label: u16) -> String {
        self.classes
            .get(usize::from(label))
            .cloned()
            .unwrap_or_else(|| label.to_string())
    }

    fn label_id(&self, s: &str) -> Option<u16> {
        if let Some(i) = self.classes.iter().position(|c| c == s) {
            return u16::try_from(i).ok();
        }
        s.parse().ok()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        enum Section {
            Top,
            Actions,
            Bindings(String),
        }
        let mut cfg = Self::default();
        let mut section = Section::Top;
        // Bindings resolve after the whole file so section order is free.
        let mut pending: Vec<(usize, String, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let syntax = |msg: String| ConfigError::Syntax { line: n, msg };
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "actions" => Section::Actions,
                    s => match s.strip_prefix("bindings.") {
                        Some(robot) if !robot.is_empty() && robot.len() <= 16 => {
                            Section::Bindings(robot.to_string())
                        }
                        _ => return Err(syntax(format!("unknown section [{s}]"))),
                    },
                };
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| syntax("expected `key = value`".into()))?;
            if key.is_empty() {
                return Err(syntax("empty key".into()));
            }
            match &section {
                Section::Top => cfg.set(key, value).map_err(syntax)?,
                Section::Actions => {
                    let id: u16 = key
                        .parse()
                        .map_err(|_| syntax(format!("bad action id {key:?}")))?;
                    let (name, args) = value.split_once(char::is_whitespace).unwrap_or((value, ""));
                    if name.is_empty() {
                        return Err(syntax("action needs a name".into()));
                    }
                    cfg.actions
                        .define(id, name, args.trim())
                        .map_err(|e| syntax(e.to_string()))?;
                }
                Section::Bindings(robot) => {
                    pending.push((n, robot.clone(), key.into(), value.into()))
                }
            }
        }
        for (n, robot, label, action) in pending {
            let syntax = |msg: String| ConfigError::Syntax { line: n, msg };
            let label_id = cfg
                .label_id(&label)
                .ok_or_else(|| syntax(format!("unknown label {label:?}")))?;
            let action_id = cfg
                .actions
                .action_by_name(&action)
                .or_else(|| action.parse().ok())
                .ok_or_else(|| syntax(format!("unknown action {action:?}")))?;
            cfg.actions
                .bind(&robot, label_id, action_id)
                .map_err(|e| syntax(e.to_string()))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        match key {
            "classes" => {
                let classes: Vec<String> = value
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                if classes.is_empty() || classes.len() > usize::from(u16::MAX) {
                    return Err("classes must list at least one class".into());
                }
                self.classes = classes;
            }
            "confidence_threshold" => {
                let v: f32 = num(key, value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err("confidence_threshold must lie in [0, 1]".into());
                }
                self.confidence_threshold = v;
            }
            "nms_threshold" => {
                let v: f64 = num(key, value)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err("nms_threshold must lie in (0, 1]".into());
                }
                self.nms_threshold = v;
            }
            "cooldown_secs" => {
                let v: f64 = num(key, value)?;
                self.cooldown =
                    Duration::try_from_secs_f64(v).map_err(|_| "bad cooldown_secs".to_string())?;
            }
            "detector" => self.detector = value.parse()?,
            "model" => self.model = Some(PathBuf::from(value)),
            "service_time_ms" => {
                let v: f64 = num(key, value)?;
                self.service_time = Duration::try_from_secs_f64(v / 1000.0)
                    .map_err(|_| "bad service_time_ms".to_string())?;
            }
            "oracle_jitter_px" => {
                let v: f64 = num(key, value)?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err("oracle_jitter_px must be >= 0".into());
                }
                self.oracle_noise.jitter_px = v;
            }
            "oracle_fp_rate" => {
                let v: f64 = num(key, value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err("oracle_fp_rate must lie in [0, 1]".into());
                }
                self.oracle_noise.fp_rate = v;
            }
            "seed" => self.seed = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}
