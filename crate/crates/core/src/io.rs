//! Shared helpers for the line-delimited numeric text formats.
//!
//! Every real is written with 17 significant digits, which round-trips any
//! `f64` bit-exactly.

use crate::error::{Error, Result};

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Comma-joined list of reals.
pub fn fmt_reals(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_real(v)).collect::<Vec<_>>().join(",")
}

pub fn parse_real(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(line, format!("bad real {field:?}: {e}")))
}

/// Parses a comma-separated list; the empty string is the empty list.
pub fn parse_reals(field: &str, line: usize) -> Result<Vec<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field.split(',').map(|f| parse_real(f, line)).collect()
}

/// Parses a `# key=value key=value` header line into pairs.
pub fn parse_header(line: &str, expected_tag: &str) -> Result<Vec<(String, String)>> {
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "missing header line"))?
        .trim();
    let mut parts = rest.split_whitespace();
    match parts.next() {
        Some(tag) if tag == expected_tag => {}
        other => {
            return Err(Error::parse(
                1,
                format!("expected {expected_tag} header, found {other:?}"),
            ))
        }
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::parse(1, format!("malformed header field {kv:?}")))
        })
        .collect()
}

pub(crate) fn header_value<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse(1, format!("header missing {key}")))
}
