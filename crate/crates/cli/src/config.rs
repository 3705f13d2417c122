//! Card description files (TOML).
//!
//! ```toml
//! profile = "4k"
//! uid = "2a698d43"
//! cipher = "A"
//! key_a = "a0a1a2a3a4a5"
//! access = "7f0788"
//!
//! [seeds]
//! reader = 1
//!
//! [[block]]
//! index = 4
//! value = 100
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use mfreplay_core::card::{AccessConditions, Block, Personalization, Profile, SectorTrailer, ValueBlock};
use mfreplay_core::commands::{Command, CommandTable};
use mfreplay_core::crypto::{CipherVariant, SecretKey, DEFAULT_PRNG_TAPS};
use serde::Deserialize;

pub const DEFAULT_MANUFACTURER: [u8; 11] = [0x08, 0x04, 0x00, 0x62, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CardFile {
    #[serde(default = "default_profile")]
    profile: String,
    uid: String,
    manufacturer: Option<String>,
    #[serde(default = "default_cipher")]
    cipher: String,
    prng_seed: Option<u16>,
    prng_taps: Option<u16>,
    key_a: Option<String>,
    key_b: Option<String>,
    access: Option<String>,
    u: Option<u8>,
    #[serde(default)]
    commands: CommandOverrides,
    #[serde(default)]
    seeds: Seeds,
    #[serde(default)]
    sector: Vec<SectorEntry>,
    #[serde(default)]
    block: Vec<BlockEntry>,
}

fn default_profile() -> String {
    String::from("4k")
}

fn default_cipher() -> String {
    String::from("A")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandOverrides {
    read: Option<u8>,
    write: Option<u8>,
    increment: Option<u8>,
    decrement: Option<u8>,
    restore: Option<u8>,
    transfer: Option<u8>,
}

/// Named seeds for everything random in a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Reader nonces.
    #[serde(default)]
    pub reader: u64,
    /// Power-up jitter of the attacker's card, in bit periods.
    #[serde(default)]
    pub jitter: u32,
    /// Draws of the jitter.
    #[serde(default)]
    pub jitter_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectorEntry {
    index: usize,
    key_a: Option<String>,
    key_b: Option<String>,
    access: Option<String>,
    u: Option<u8>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    index: usize,
    data: Option<String>,
    value: Option<i32>,
}

/// A loaded card description.
#[derive(Debug, Clone)]
pub struct CardConfig {
    pub personalization: Personalization,
    pub seeds: Seeds,
}

pub fn hex_array<const N: usize>(s: &str, what: &str) -> Result<[u8; N]> {
    let bytes = hex::decode(s.replace([' ', ':'], "")).with_context(|| format!("{what}: not hex"))?;
    bytes.try_into().map_err(|b: Vec<u8>| anyhow::anyhow!("{what}: expected {N} bytes, got {}", b.len()))
}

pub fn parse_block(s: &str) -> Result<Block> {
    hex_array::<16>(s, "block")
}

fn trailer(
    base: &SectorTrailer,
    key_a: Option<&str>,
    key_b: Option<&str>,
    access: Option<&str>,
    u: Option<u8>,
) -> Result<SectorTrailer> {
    let mut t = *base;
    if let Some(k) = key_a {
        t.key_a = SecretKey::from_bytes(hex_array(k, "key_a")?);
    }
    if let Some(k) = key_b {
        t.key_b = SecretKey::from_bytes(hex_array(k, "key_b")?);
    }
    if let Some(a) = access {
        t.access = AccessConditions::unpack(hex_array(a, "access")?).map_err(|e| anyhow::anyhow!("access: {e}"))?;
    }
    if let Some(u) = u {
        t.u_byte = u;
    }
    Ok(t)
}

impl CardConfig {
    pub fn load(path: &Path) -> Result<CardConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<CardConfig> {
        let f: CardFile = toml::from_str(text)?;
        let profile = match f.profile.to_ascii_lowercase().as_str() {
            "1k" => Profile::Classic1K,
            "4k" => Profile::Classic4K,
            other => bail!("unknown profile {other:?} (1k or 4k)"),
        };
        let manufacturer = match &f.manufacturer {
            Some(m) => hex_array(m, "manufacturer")?,
            None => DEFAULT_MANUFACTURER,
        };
        let mut p = Personalization::transport(profile, hex_array(&f.uid, "uid")?, manufacturer);
        p.cipher = match f.cipher.to_ascii_uppercase().as_str() {
            "A" => CipherVariant::A,
            "B" => CipherVariant::B,
            other => bail!("unknown cipher variant {other:?} (A or B)"),
        };
        if let Some(s) = f.prng_seed {
            p.prng_seed = s;
        }
        p.prng_taps = f.prng_taps.unwrap_or(DEFAULT_PRNG_TAPS);
        if p.prng_seed == 0 {
            bail!("prng_seed must be nonzero");
        }
        let c = &f.commands;
        for (cmd, code) in [
            (Command::Read, c.read),
            (Command::Write, c.write),
            (Command::Increment, c.increment),
            (Command::Decrement, c.decrement),
            (Command::Restore, c.restore),
            (Command::Transfer, c.transfer),
        ] {
            if let Some(code) = code {
                p.commands.set(cmd, code);
            }
        }
        if !p.commands.is_valid() {
            bail!("command codes must be distinct and differ from 60 and 61");
        }
        let base = trailer(&SectorTrailer::transport(), f.key_a.as_deref(), f.key_b.as_deref(), f.access.as_deref(), f.u)?;
        for s in 0..profile.sector_count() {
            p.memory.set_trailer(s, &base);
        }
        for e in &f.sector {
            if e.index >= profile.sector_count() {
                bail!("sector {} does not exist", e.index);
            }
            let t = trailer(&base, e.key_a.as_deref(), e.key_b.as_deref(), e.access.as_deref(), e.u)?;
            p.memory.set_trailer(e.index, &t);
        }
        for b in &f.block {
            let data = match (&b.data, b.value) {
                (Some(d), None) => parse_block(d)?,
                (None, Some(v)) => ValueBlock::new(v, b.index as u8).encode(),
                _ => bail!("block {}: give exactly one of data or value", b.index),
            };
            if b.index == 0 || profile.is_trailer(b.index) {
                bail!("block {}: use uid/manufacturer or a [[sector]] entry instead", b.index);
            }
            p.memory.set_block(b.index, data).map_err(|e| anyhow::anyhow!("block {}: {e}", b.index))?;
        }
        Ok(CardConfig { personalization: p, seeds: f.seeds })
    }

    pub fn commands(&self) -> CommandTable {
        self.personalization.commands
    }
}
