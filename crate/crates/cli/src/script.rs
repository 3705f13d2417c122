//! Reader scripts: one intent per line.
//!
//! ```text
//! anticollision
//! auth 1 A
//! increment 4 1
//! transfer 4
//! read 4
//! ```

use anyhow::{bail, Context, Result};
use mfreplay_core::card::KeySlot;
use mfreplay_core::session::ReaderIntent;

use crate::config::parse_block;

pub fn parse_script(text: &str) -> Result<Vec<ReaderIntent>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line).with_context(|| format!("script line {}: {raw:?}", n + 1))?);
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<ReaderIntent> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let num = |i: usize| -> Result<usize> {
        let w = words.get(i).with_context(|| format!("missing argument {i}"))?;
        w.parse().with_context(|| format!("{w:?} is not a number"))
    };
    let int = |i: usize| -> Result<i32> {
        let w = words.get(i).with_context(|| format!("missing argument {i}"))?;
        w.parse().with_context(|| format!("{w:?} is not a number"))
    };
    let arity = |n: usize| -> Result<()> {
        if words.len() != n + 1 {
            bail!("{} takes {n} argument(s)", words[0]);
        }
        Ok(())
    };
    let intent = match words[0].to_ascii_lowercase().as_str() {
        "anticollision" => {
            arity(0)?;
            ReaderIntent::Anticollision
        }
        "auth" => {
            arity(2)?;
            let key_slot = match words[2].to_ascii_uppercase().as_str() {
                "A" => KeySlot::A,
                "B" => KeySlot::B,
                other => bail!("key slot {other:?} is not A or B"),
            };
            ReaderIntent::Authenticate { sector: num(1)?, key_slot }
        }
        "read" => {
            arity(1)?;
            ReaderIntent::Read { block: num(1)? }
        }
        "write" => {
            arity(2)?;
            ReaderIntent::Write { block: num(1)?, data: parse_block(words[2])? }
        }
        "increment" => {
            arity(2)?;
            ReaderIntent::Increment { block: num(1)?, value: int(2)? }
        }
        "decrement" => {
            arity(2)?;
            ReaderIntent::Decrement { block: num(1)?, value: int(2)? }
        }
        "restore" => {
            arity(1)?;
            ReaderIntent::Restore { block: num(1)? }
        }
        "transfer" => {
            arity(1)?;
            ReaderIntent::Transfer { block: num(1)? }
        }
        other => bail!("unknown intent {other:?}"),
    };
    Ok(intent)
}
