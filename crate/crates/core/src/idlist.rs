//! Identifier-list syntax shared by the CLI and study configs.
//!
//! A list is comma-separated. A token of the form `A1..A10` expands to
//! `A1, A2, ..., A10`: both ends must share the same non-numeric prefix
//! and end in a decimal number. Zero padding of the first bound is kept.

use crate::error::{Error, Result};

/// Longest expansion a single range token may produce.
pub const MAX_RANGE: u64 = 10_000;

pub fn parse_id_list(text: &str) -> Result<Vec<String>> {
    let bad = || Error::InvalidIdList(text.to_string());
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim) {
        if token.is_empty() {
            return Err(bad());
        }
        match token.split_once("..") {
            None => out.push(token.to_string()),
            Some((lo, hi)) => {
                let (p1, n1) = split_number(lo).ok_or_else(bad)?;
                let (p2, n2) = split_number(hi).ok_or_else(bad)?;
                if p1 != p2 {
                    return Err(bad());
                }
                let a: u64 = n1.parse().map_err(|_| bad())?;
                let b: u64 = n2.parse().map_err(|_| bad())?;
                if a > b || b - a >= MAX_RANGE {
                    return Err(bad());
                }
                let width = if n1.starts_with('0') && n1.len() > 1 {
                    n1.len()
                } else {
                    0
                };
                out.extend((a..=b).map(|n| format!("{p1}{n:0width$}")));
            }
        }
    }
    Ok(out)
}

fn split_number(token: &str) -> Option<(&str, &str)> {
    let digits = token.bytes().rev().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 18 {
        return None;
    }
    Some(token.split_at(token.len() - digits))
}

/// Parse `name:id,id,...`; a bare list names the group after its ids.
pub fn parse_named_group(text: &str) -> Result<(String, Vec<String>)> {
    match text.split_once(':') {
        Some((name, list)) if !name.trim().is_empty() => {
            Ok((name.trim().to_string(), parse_id_list(list)?))
        }
        Some(_) => Err(Error::InvalidIdList(text.to_string())),
        None => {
            let ids = parse_id_list(text)?;
            Ok((ids.join("+"), ids))
        }
    }
}
