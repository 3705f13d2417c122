//! Keystream files: one line per run of known bits, `start: 0110…`.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use mfreplay_core::attack::RecoveredKeystream;

pub fn emit_keystream(ks: &RecoveredKeystream) -> String {
    let mut out = String::from("# keystream bits by data-bit index\n");
    for run in ks.coverage() {
        let _ = write!(out, "{}: ", run.start);
        for i in run {
            out.push(if ks.bit(i) == Some(true) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

pub fn parse_keystream(text: &str) -> Result<RecoveredKeystream> {
    let mut ks = RecoveredKeystream::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = || format!("keystream line {}", n + 1);
        let (start, bits) = line.split_once(':').with_context(ctx)?;
        let start: usize = start.trim().parse().with_context(ctx)?;
        let bits: Vec<bool> = bits
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => bail!("{}: {c:?} is not a bit", ctx()),
            })
            .collect::<Result<_>>()?;
        ks.merge(&RecoveredKeystream::from_bits(start, &bits)).with_context(ctx)?;
    }
    Ok(ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut ks = RecoveredKeystream::from_bits(96, &[true, false, true]);
        ks.merge(&RecoveredKeystream::from_bits(128, &[false, true])).unwrap();
        let text = emit_keystream(&ks);
        assert_eq!(text.lines().skip(1).collect::<Vec<_>>(), ["96: 101", "128: 01"]);
        let back = parse_keystream(&text).unwrap();
        assert_eq!(back.coverage(), ks.coverage());
        assert_eq!(back.bit(98), Some(true));
    }

    #[test]
    fn rejects_junk_and_conflicts() {
        assert!(parse_keystream("12 0101").is_err());
        assert!(parse_keystream("12: 01x").is_err());
        assert!(parse_keystream("0: 1\n0: 0").is_err());
    }
}
