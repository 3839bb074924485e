//! Baseline comparison table.
//!
//! Fixture files hold one `method,map50,inference_ms` row per line; blank
//! lines and `#` comments are skipped. Values are kept as written so the
//! rendered table reproduces the fixture verbatim.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

/// One published row.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub method: String,
    pub map50: String,
    pub inference_ms: String,
}

/// A measured row appended after the baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    /// Fraction in [0, 1]; rendered on the same 0-100 scale as the fixture.
    pub map50: Option<f64>,
    pub inference_ms: Option<f64>,
}

pub fn parse_fixture(text: &str) -> Result<Vec<Baseline>, TableError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| TableError::Malformed { line: i + 1, msg };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [method, map50, ms] = cols[..] else {
            return Err(bad(format!(
                "expected 3 comma-separated fields, got {}",
                cols.len()
            )));
        };
        if method.is_empty() {
            return Err(bad("empty method".into()));
        }
        if map50
            .parse::<f64>()
            .map_or(true, |v| !(0.0..=100.0).contains(&v))
        {
            return Err(bad(format!("bad map50 {map50:?}")));
        }
        if ms
            .parse::<f64>()
            .map_or(true, |v| !v.is_finite() || v < 0.0)
        {
            return Err(bad(format!("bad inference_ms {ms:?}")));
        }
        rows.push(Baseline {
            method: method.into(),
            map50: map50.into(),
            inference_ms: ms.into(),
        });
    }
    Ok(rows)
}

pub fn load_fixture(path: &Path) -> Result<Vec<Baseline>, TableError> {
    let text = std::fs::read_to_string(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_fixture(&text)
}

/// Markdown table of the baselines followed by the measured rows.
pub fn render_comparison(baselines: &[Baseline], measured: &[ComparisonRow]) -> String {
    let mut out = String::from("| Method | mAP50 | Inference Time (ms) |\n|---|---|---|\n");
    for b in baselines {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            b.method, b.map50, b.inference_ms
        ));
    }
    for m in measured {
        let map = m.map50.map_or("-".into(), |v| format!("{:.1}", v * 100.0));
        let ms = m.inference_ms.map_or("-".into(), |v| format!("{v:.2}"));
        out.push_str(&format!("| {} | {} | {} |\n", m.method, map, ms));
    }
    out
}
