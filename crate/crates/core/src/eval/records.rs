//! Line-oriented records file shared by the simulator and the harness.
//!
//! ```text
//! # infergate records v1
//! # seq t_sent_us t_result_us n_truth n_detected
//! # robot <robot-id>
//! <seq> <t_sent_us> <t_result_us|-> <n_truth> <n_detected>
//! T <label> <x1> <y1> <x2> <y2>                 n_truth lines
//! P <label> <confidence> <x1> <y1> <x2> <y2>    n_detected lines
//! ```
//!
//! Other lines starting with `#` and blank lines are ignored. Frames that
//! never got a result carry `-` and no `P` lines.

use std::io::{BufRead, Write};

use super::EvalRecord;
use crate::geometry::{BBox, Detection, LabeledBox};

pub const RECORDS_HEADER: &str =
    "# infergate records v1\n# seq t_sent_us t_result_us n_truth n_detected\n";

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes records grouped by robot in input order.
pub fn write_records<W: Write>(mut w: W, records: &[EvalRecord]) -> std::io::Result<()> {
    w.write_all(RECORDS_HEADER.as_bytes())?;
    let mut robot: Option<&str> = None;
    for r in records {
        if robot != Some(r.robot.as_str()) {
            writeln!(w, "# robot {}", r.robot)?;
            robot = Some(&r.robot);
        }
        let result = r.t_result_us.map_or("-".to_string(), |t| t.to_string());
        writeln!(
            w,
            "{} {} {} {} {}",
            r.seq,
            r.t_sent_us,
            result,
            r.truth.len(),
            r.predictions.len()
        )?;
        for t in &r.truth {
            let b = t.bbox;
            writeln!(w, "T {} {} {} {} {}", t.label_id, b.x1, b.y1, b.x2, b.y2)?;
        }
        for p in &r.predictions {
            let b = p.bbox;
            writeln!(
                w,
                "P {} {} {} {} {} {}",
                p.label_id, p.confidence, b.x1, b.y1, b.x2, b.y2
            )?;
        }
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    tok: Option<&str>,
    what: &str,
    line: usize,
) -> Result<T, RecordsError> {
    let tok = tok.ok_or_else(|| RecordsError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| RecordsError::Parse {
        line,
        msg: format!("bad {what} {tok:?}"),
    })
}

fn parse_box<'a>(
    toks: &mut impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<BBox, RecordsError> {
    let b = BBox::new(
        field(toks.next(), "x1", line)?,
        field(toks.next(), "y1", line)?,
        field(toks.next(), "x2", line)?,
        field(toks.next(), "y2", line)?,
    );
    if !b.is_valid() {
        return Err(RecordsError::Parse {
            line,
            msg: format!("degenerate box {b:?}"),
        });
    }
    Ok(b)
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<EvalRecord>, RecordsError> {
    let mut out: Vec<EvalRecord> = Vec::new();
    let mut robot = String::new();
    // Outstanding T and P lines for the current frame.
    let (mut want_t, mut want_p) = (0usize, 0usize);
    let mut last_line = 0;
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(id) = rest.trim().strip_prefix("robot ") {
                robot = id.trim().to_string();
            }
            continue;
        }
        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap_or_default();
        let err = |msg: &str| RecordsError::Parse {
            line: n,
            msg: msg.to_string(),
        };
        match first {
            "T" => {
                let rec = out
                    .last_mut()
                    .filter(|_| want_t > 0)
                    .ok_or_else(|| err("unexpected T line"))?;
                let label = field(toks.next(), "label", n)?;
                rec.truth.push(LabeledBox {
                    label_id: label,
                    bbox: parse_box(&mut toks, n)?,
                });
                want_t -= 1;
            }
            "P" => {
                let rec = out
                    .last_mut()
                    .filter(|_| want_t == 0 && want_p > 0)
                    .ok_or_else(|| err("unexpected P line"))?;
                let label = field(toks.next(), "label", n)?;
                let conf: f32 = field(toks.next(), "confidence", n)?;
                if !(0.0..=1.0).contains(&conf) {
                    return Err(err("confidence outside [0, 1]"));
                }
                rec.predictions
                    .push(Detection::new(label, conf, parse_box(&mut toks, n)?));
                want_p -= 1;
            }
            _ => {
                if want_t > 0 || want_p > 0 {
                    return Err(err("previous frame is missing T/P lines"));
                }
                let seq = field(Some(first), "seq", n)?;
                let t_sent_us = field(toks.next(), "t_sent_us", n)?;
                let t_result_us = match toks.next() {
                    Some("-") => None,
                    tok => Some(field(tok, "t_result_us", n)?),
                };
                want_t = field(toks.next(), "n_truth", n)?;
                want_p = field(toks.next(), "n_detected", n)?;
                if t_result_us.is_none() && want_p > 0 {
                    return Err(err("predictions on a frame without a result"));
                }
                out.push(EvalRecord {
                    robot: robot.clone(),
                    seq,
                    t_sent_us,
                    t_result_us,
                    truth: Vec::with_capacity(want_t.min(4096)),
                    predictions: Vec::with_capacity(want_p.min(4096)),
                });
            }
        }
        if toks.next().is_some() {
            return Err(err("trailing fields"));
        }
    }
    if want_t > 0 || want_p > 0 {
        return Err(RecordsError::Parse {
            line: last_line,
            msg: "file ends inside a frame".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EvalRecord> {
        let b = BBox::new(1, 2, 30, 40);
        vec![
            EvalRecord {
                robot: "nao-1".into(),
                seq: 0,
                t_sent_us: 10,
                t_result_us: Some(17_010),
                truth: vec![LabeledBox {
                    label_id: 2,
                    bbox: b,
                }],
                predictions: vec![Detection::new(2, 0.123_456_79, b)],
            },
            EvalRecord {
                robot: "nao-1".into(),
                seq: 1,
                t_sent_us: 33_000,
                t_result_us: None,
                truth: vec![],
                predictions: vec![],
            },
            EvalRecord {
                robot: "nao-2".into(),
                seq: 0,
                t_sent_us: 5,
                t_result_us: Some(6),
                truth: vec![
                    LabeledBox {
                        label_id: 0,
                        bbox: b
                    };
                    2
                ],
                predictions: vec![],
            },
        ]
    }

    #[test]
    fn round_trip() {
        let recs = sample();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(RECORDS_HEADER));
        assert!(text.contains("1 33000 - 0 0\n"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "# robot a\n0 1 2 1 0\nT 0 5 5 5 9\n";
        match read_records(bad.as_bytes()) {
            Err(RecordsError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = "0 1 2 2 0\nT 0 0 0 1 1\n";
        assert!(matches!(
            read_records(short.as_bytes()),
            Err(RecordsError::Parse { line: 2, .. })
        ));
        let stray = "P 0 0.5 0 0 1 1\n";
        assert!(matches!(
            read_records(stray.as_bytes()),
            Err(RecordsError::Parse { line: 1, .. })
        ));
        let no_result = "0 1 - 0 1\nP 0 0.5 0 0 1 1\n";
        assert!(read_records(no_result.as_bytes()).is_err());
    }
}
