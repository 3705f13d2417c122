//! Subcommand implementations. Each returns whether its goal was reached.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mfreplay_core::attack::{
    decrypt_trace, discover_commands, estimate_bruteforce, extend_keystream_via_ack, read_sector, read_sector_zero,
    reappearance_interval, select_card, write_without_key, AttackOptions, Confidence, RecoveredKeystream, SectorDump, Strategy,
};
use mfreplay_core::card::{Block, Card};
use mfreplay_core::crypto::PrngState;
use mfreplay_core::framing::{decode_frame, encode_frame, with_crc, FrameKind, AUTH_KEY_A};
use mfreplay_core::session::{eavesdrop, AttackerPort, CardPort, Reader, ReaderKeys, Simulation};
use mfreplay_core::tracefmt::{emit_trace, parse_trace, Trace};

use crate::config::{hex_array, parse_block, CardConfig};
use crate::keyfile::{emit_keystream, parse_keystream};
use crate::script::parse_script;
use crate::{AttackName, StrategyName};

/// Fixed power-up delay the genuine reader uses before its first request.
const POWER_UP_ETU: u64 = 1024;

fn write_out(dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn load_trace(path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_trace(&text).with_context(|| format!("parsing {}", path.display()))
}

fn reader_keys(config: &CardConfig) -> Result<ReaderKeys> {
    let memory = &config.personalization.memory;
    let mut keys = ReaderKeys::default();
    for s in 0..memory.profile().sector_count() {
        let t = memory.trailer(s).map_err(|e| anyhow!("{e}"))?;
        for slot in [mfreplay_core::card::KeySlot::A, mfreplay_core::card::KeySlot::B] {
            keys.insert(s, slot, t.key(slot));
        }
    }
    Ok(keys)
}

pub fn simulate(card: &Path, script: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<bool> {
    let config = CardConfig::load(card)?;
    let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
    let intents = parse_script(&text)?;
    let mut reader = Reader::new(reader_keys(&config)?, config.personalization.cipher, seed.unwrap_or(config.seeds.reader));
    reader.commands = config.commands();
    let mut sim = Simulation::new(Card::new(config.personalization.clone()));
    let (events, reads, ok) = match sim.run_transaction(&mut reader, &intents) {
        Ok(t) => (t.events, t.reads, true),
        Err(e) => {
            eprintln!("transaction aborted at script step {}: {:?}", e.step + 1, e.reason);
            (e.events, Vec::new(), false)
        }
    };
    let trace = emit_trace(&eavesdrop(&events));
    print!("{trace}");
    let mut read_text = String::new();
    for (b, data) in &reads {
        let _ = writeln!(read_text, "{b}: {}", hex::encode(data));
    }
    write_out(out, "trace.txt", &trace)?;
    write_out(out, "reads.txt", &read_text)?;
    Ok(ok)
}

fn request_nonce<P: AttackerPort>(port: &mut P) -> Option<u32> {
    let frame = encode_frame(&with_crc(&[AUTH_KEY_A, 0]), FrameKind::Standard).expect("non-empty");
    let reply = decode_frame(&port.send(&frame)?).ok()?;
    let b: [u8; 4] = reply.bytes.try_into().ok()?;
    Some(u32::from_be_bytes(b))
}

/// Fixed-delay samples taken through the attacker's port.
const FIXED_DELAY_SAMPLES: u64 = 200;

pub fn nonce_stats(card: &Path, draws: u64, jitter: Option<u32>, seed: Option<u64>, out: Option<&Path>) -> Result<bool> {
    if draws == 0 {
        bail!("--draws must be at least 1");
    }
    let config = CardConfig::load(card)?;
    let p = &config.personalization;
    let state = PrngState::seeded(p.prng_seed, p.prng_taps).ok_or_else(|| anyhow!("nonce generator seed must be nonzero"))?;
    let period = state.period();

    // one draw per tick, as if the reader asked at every bit period
    let mut seen = BTreeSet::new();
    let mut first_repeat = None;
    let mut s = state;
    for i in 0..draws {
        if !seen.insert(s.draw_nonce().0) && first_repeat.is_none() {
            first_repeat = Some(i + 1);
        }
        s = s.step();
    }

    // fixed delay after power-up, with timing jitter
    let jitter = jitter.unwrap_or(config.seeds.jitter);
    let mut port = CardPort::with_jitter(Card::new(p.clone()), jitter, seed.unwrap_or(config.seeds.jitter_seed));
    let uid = p.memory.uid();
    let mut fixed = BTreeSet::new();
    for _ in 0..FIXED_DELAY_SAMPLES.min(draws) {
        port.power_cycle();
        select_card(&mut port, uid).map_err(|e| anyhow!("{e}"))?;
        port.advance_clock(POWER_UP_ETU);
        fixed.insert(request_nonce(&mut port).ok_or_else(|| anyhow!("card gave no nonce"))?);
    }

    let (days, years) = estimate_bruteforce(0.005, 48).map_err(|e| anyhow!("{e}"))?;
    let mut r = String::new();
    let _ = writeln!(r, "generator period: {period}");
    let _ = writeln!(r, "draws (one per bit period): {draws}");
    let _ = writeln!(r, "distinct nonces: {}", seen.len());
    match first_repeat {
        Some(i) => {
            let _ = writeln!(r, "first repeat at draw: {i}");
        }
        None => {
            let _ = writeln!(r, "first repeat at draw: none");
        }
    }
    let _ = writeln!(r, "reappearance interval: {:.4} s", reappearance_interval(period));
    let _ = writeln!(
        r,
        "fixed-delay samples: {} with jitter {jitter}, distinct nonces: {}",
        FIXED_DELAY_SAMPLES.min(draws),
        fixed.len()
    );
    let _ = writeln!(r, "exhaustive 48-bit key search at 5 ms per try: {days:.0} days ({years:.0} years)");
    print!("{r}");
    write_out(out, "nonce-stats.txt", &r)?;
    Ok(true)
}

pub struct AttackArgs {
    pub card: PathBuf,
    pub trace: PathBuf,
    pub attack: AttackName,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub known_block: Option<String>,
    pub block: Option<usize>,
    pub data: Option<String>,
    pub value_block: Option<usize>,
    pub scratch: Option<usize>,
    pub iterations: usize,
    pub keystream: Option<PathBuf>,
    pub strategy: StrategyName,
    pub budget: Option<u64>,
    pub mfr1: Option<String>,
}

fn known_block(arg: Option<&str>) -> Result<Option<(usize, Block)>> {
    let Some(s) = arg else { return Ok(None) };
    let (n, data) = s.split_once(':').ok_or_else(|| anyhow!("--known-block takes N:hex"))?;
    Ok(Some((n.trim().parse().context("--known-block block number")?, parse_block(data)?)))
}

fn need<T>(v: Option<T>, flag: &str, attack: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("{attack} needs {flag}"))
}

/// Keystream reaching far enough for a write, from a known block and a value
/// block of the sector.
fn keystream_for_write<P: AttackerPort>(
    port: &mut P,
    trace: &Trace,
    known: (usize, Block),
    value_block: usize,
    opts: &AttackOptions,
    log: &mut String,
) -> Result<RecoveredKeystream> {
    let dump = read_sector(port, trace, Some(known), opts).map_err(|e| anyhow!("reading the sector: {e}"))?;
    let mut ks = dump.keystream;
    for round in 1..=8 {
        if ks.first_gap(96) > 276 {
            break;
        }
        ks = extend_keystream_via_ack(port, trace, &ks, value_block, known, 1, opts).map_err(|e| anyhow!("extending: {e}"))?;
        let _ = writeln!(log, "extension round {round}: keystream known up to {}", ks.first_gap(96));
    }
    Ok(ks)
}

fn dump_complete(d: &SectorDump, known: bool) -> bool {
    if known {
        d.count(Confidence::Unknown) == 0
    } else {
        d.blocks.iter().all(|row| (0..16).all(|i| (6..10).contains(&i) || row[i].1 != Confidence::Unknown))
    }
}

pub fn attack(a: &AttackArgs) -> Result<bool> {
    let config = CardConfig::load(&a.card)?;
    let trace = load_trace(&a.trace)?;
    let mut opts = AttackOptions {
        strategy: match a.strategy {
            StrategyName::Fixed => Strategy::FixedDelay { power_up_etu: POWER_UP_ETU },
            StrategyName::Spam => Strategy::Spam,
        },
        budget: a.budget,
        ..AttackOptions::default()
    };
    if let Some(m) = &a.mfr1 {
        opts.mfr1 = hex_array(m, "--mfr1")?;
    }
    let card = Card::new(config.personalization.clone());
    let mut port = CardPort::with_jitter(card, config.seeds.jitter, a.seed.unwrap_or(config.seeds.jitter_seed));
    let out = a.out.as_deref();
    let known = known_block(a.known_block.as_deref())?;
    let mut log = String::new();
    let name = match a.attack {
        AttackName::ReadSector0 => "read-sector0",
        AttackName::ReadSector => "read-sector",
        AttackName::Write => "write",
        AttackName::DiscoverCommands => "discover-commands",
        AttackName::Extend => "extend",
    };
    let _ = writeln!(log, "attack: {name}");

    let outcome: Result<bool> = (|| match a.attack {
        AttackName::ReadSector0 | AttackName::ReadSector => {
            let dump = if a.attack == AttackName::ReadSector0 {
                read_sector_zero(&mut port, &trace, &opts)
            } else {
                read_sector(&mut port, &trace, known, &opts)
            }
            .map_err(|e| anyhow!("{e}"))?;
            let text = dump.to_string();
            print!("{text}");
            write_out(out, "dump.txt", &text)?;
            write_out(out, "keystream.txt", &emit_keystream(&dump.keystream))?;
            let _ = writeln!(log, "replays: {}\nnonce requests: {}", dump.replays, dump.attempts);
            for d in &dump.diagnostics {
                let _ = writeln!(log, "note: {d}");
            }
            let _ = writeln!(log, "bytes recovered: {} of {}", dump.recovered(), 16 * dump.blocks.len());
            let full = a.attack == AttackName::ReadSector0 || known.is_some();
            Ok(dump_complete(&dump, full))
        }
        AttackName::Write => {
            let block = need(a.block, "--block", name)?;
            let data = parse_block(need(a.data.as_deref(), "--data", name)?)?;
            let ks = match &a.keystream {
                Some(path) => parse_keystream(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
                None => {
                    let known = need(known, "--known-block (or --keystream)", name)?;
                    let v = need(a.value_block, "--value-block (or --keystream)", name)?;
                    keystream_for_write(&mut port, &trace, known, v, &opts, &mut log)?
                }
            };
            match write_without_key(&mut port, &trace, &ks, block, data, &opts) {
                Ok(r) => {
                    let _ = writeln!(log, "replays: {}\nnonce requests: {}", r.replays, r.attempts);
                    let _ = writeln!(log, "block {block} now reads {}", hex::encode(data));
                    println!("wrote block {block}");
                    Ok(true)
                }
                Err(e) => {
                    let _ = writeln!(log, "write refused: {e}");
                    eprintln!("write of block {block} failed: {e}");
                    Ok(false)
                }
            }
        }
        AttackName::DiscoverCommands => {
            let known = need(known, "--known-block (a value block)", name)?;
            let scratch = need(a.scratch, "--scratch", name)?;
            let d = discover_commands(&mut port, &trace, known, scratch, &opts).map_err(|e| anyhow!("{e}"))?;
            let t = d.table;
            let text = format!(
                "read = 0x{:02x}\nwrite = 0x{:02x}\nincrement = 0x{:02x}\ndecrement = 0x{:02x}\nrestore = 0x{:02x}\ntransfer = 0x{:02x}\n",
                t.read, t.write, t.increment, t.decrement, t.restore, t.transfer
            );
            print!("{text}");
            write_out(out, "commands.txt", &text)?;
            let _ = writeln!(log, "replays: {}\nnonce requests: {}", d.replays, d.attempts);
            for l in &d.log {
                let _ = writeln!(log, "{l}");
            }
            Ok(true)
        }
        AttackName::Extend => {
            let known = need(known, "--known-block", name)?;
            let v = need(a.value_block, "--value-block", name)?;
            let start = match &a.keystream {
                Some(path) => parse_keystream(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
                None => read_sector(&mut port, &trace, Some(known), &opts).map_err(|e| anyhow!("{e}"))?.keystream,
            };
            let before = start.first_gap(96);
            let ks =
                extend_keystream_via_ack(&mut port, &trace, &start, v, known, a.iterations, &opts).map_err(|e| anyhow!("{e}"))?;
            let after = ks.first_gap(96);
            let _ = writeln!(log, "keystream known up to {before} before, {after} after");
            println!("keystream known up to bit {after} (was {before})");
            write_out(out, "keystream.txt", &emit_keystream(&ks))?;
            Ok(after > before)
        }
    })();
    let _ = writeln!(log, "power cycles: {}\nframes sent: {}", port.power_cycles(), port.frames_sent());
    match &outcome {
        Ok(ok) => {
            let _ = writeln!(log, "goal reached: {ok}");
        }
        Err(e) => {
            let _ = writeln!(log, "error: {e:#}");
        }
    }
    write_out(out, "log.txt", &log)?;
    outcome
}

pub fn decrypt(trace: &Path, keystream: &Path) -> Result<bool> {
    let trace = load_trace(trace)?;
    let ks = parse_keystream(&fs::read_to_string(keystream).with_context(|| format!("reading {}", keystream.display()))?)?;
    let d = decrypt_trace(&trace, &ks);
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    print!("{d}");
    Ok(true)
}
