//! Small helpers shared by the line-oriented text formats.
//!
//! Every format is UTF-8 text, one record per line, whitespace-separated
//! fields. `#` starts a comment unless a format assigns meaning to a
//! `#`-prefixed header line. Floats are written with Rust's shortest
//! round-trip representation, so write → read → write is byte-identical.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Yields `(1-based line number, fields)` for non-empty, non-comment lines.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let content = line.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then(|| (i + 1, content.split_whitespace().collect()))
    })
}

pub(crate) fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, found `{token}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, format!("non-finite number `{token}`")))
    }
}

pub(crate) fn parse_floats<const N: usize>(tokens: &[&str], line: usize) -> Result<[f64; N]> {
    if tokens.len() != N {
        return Err(Error::parse(
            line,
            format!("expected {N} numbers, found {}", tokens.len()),
        ));
    }
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(tokens) {
        *slot = parse_f64(tok, line)?;
    }
    Ok(out)
}

pub(crate) fn parse_pose(tokens: &[&str], line: usize) -> Result<RigidTransform> {
    let values = parse_floats::<7>(tokens, line)?;
    RigidTransform::from_array7(values).map_err(|e| Error::parse(line, e.to_string()))
}

pub(crate) fn write_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
}

pub(crate) fn pose_string(t: &RigidTransform) -> String {
    let mut s = String::new();
    write_floats(&mut s, &t.to_array7());
    s
}

/// Pose-sequence file: one `qw qx qy qz tx ty tz` record per line.
pub fn parse_pose_sequence(text: &str) -> Result<Vec<RigidTransform>> {
    records(text)
        .map(|(line, tokens)| parse_pose(&tokens, line))
        .collect()
}

pub fn write_pose_sequence(poses: &[RigidTransform]) -> String {
    let mut out = String::from("# qw qx qy qz tx ty tz\n");
    for p in poses {
        out.push_str(&pose_string(p));
        out.push('\n');
    }
    out
}
