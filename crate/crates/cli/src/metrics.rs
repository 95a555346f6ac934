//! `metrics.csv`: one row per epoch.
//!
//! Header: `epoch,L_ch,L_rh,L_ah,train_acc,<set>_acc...,wall_ms`. Values a
//! mode does not define (the rotation loss of the `L_ch` baseline, test
//! accuracy off the evaluation schedule, unrecorded wall time) are empty
//! fields. Floats use Rust's shortest round-trip formatting, so the file is
//! a pure function of the recorded numbers.

use crate::error::{Error, Result};
use ossl::bilevel::EpochRecord;
use std::fmt::Write as _;

const FIXED: [&str; 5] = ["epoch", "L_ch", "L_rh", "L_ah", "train_acc"];

pub fn header(test_names: &[String]) -> String {
    let mut cols: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    cols.extend(test_names.iter().map(|n| format!("{n}_acc")));
    cols.push("wall_ms".into());
    cols.join(",")
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn row(e: &EpochRecord) -> String {
    let mut s = String::new();
    write!(
        s,
        "{},{},{},{},{}",
        e.epoch,
        opt(e.l_ch),
        opt(e.l_rh),
        opt(e.l_ah),
        e.train_acc
    )
    .unwrap();
    for a in &e.test_acc {
        write!(s, ",{}", opt(*a)).unwrap();
    }
    write!(s, ",{}", opt(e.wall_ms)).unwrap();
    s
}

pub fn render(test_names: &[String], epochs: &[EpochRecord]) -> String {
    let mut out = header(test_names);
    out.push('\n');
    for e in epochs {
        out.push_str(&row(e));
        out.push('\n');
    }
    out
}

fn bad(line: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        format: "metrics.csv",
        offset: line as u64,
        reason: reason.into(),
    }
}

/// Parses a metrics file back into test-set names and epoch records.
/// Error offsets are 1-based line numbers.
pub fn parse(text: &str) -> Result<(Vec<String>, Vec<EpochRecord>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() < FIXED.len() + 1
        || cols[..FIXED.len()] != FIXED
        || cols.last() != Some(&"wall_ms")
    {
        return Err(bad(1, format!("unexpected header `{head}`")));
    }
    let mut names = Vec::new();
    for c in &cols[FIXED.len()..cols.len() - 1] {
        let name = c
            .strip_suffix("_acc")
            .ok_or_else(|| bad(1, format!("column `{c}` lacks the _acc suffix")))?;
        names.push(name.to_string());
    }
    let mut epochs = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(
                n,
                format!("{} fields, header has {}", f.len(), cols.len()),
            ));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| bad(n, format!("`{s}` is not a number")))
            }
        };
        let epoch = f[0]
            .parse()
            .map_err(|_| bad(n, format!("bad epoch `{}`", f[0])))?;
        let wall = f[f.len() - 1];
        epochs.push(EpochRecord {
            epoch,
            l_ch: num(f[1])?,
            l_rh: num(f[2])?,
            l_ah: num(f[3])?,
            train_acc: num(f[4])?.ok_or_else(|| bad(n, "train_acc is empty"))?,
            test_acc: f[FIXED.len()..f.len() - 1]
                .iter()
                .map(|s| num(s))
                .collect::<Result<_>>()?,
            wall_ms: if wall.is_empty() {
                None
            } else {
                Some(
                    wall.parse()
                        .map_err(|_| bad(n, format!("bad wall_ms `{wall}`")))?,
                )
            },
        });
    }
    Ok((names, epochs))
}
