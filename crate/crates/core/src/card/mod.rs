//! The card: memory plus the anticollision, authentication and command state
//! machine.
//!
//! Every protocol mistake halts the card. Where a 4-bit answer is defined it
//! is sent first: `0x4` for a disallowed command, `0x5` for a transmission
//! error (bad parity or CRC). Frames of the wrong length get no answer.

pub mod memory;

use alloc::vec::Vec;

use crate::commands::{Command, CommandTable, ACK, NACK_NOT_ALLOWED, NACK_TRANSMISSION};
use crate::crypto::{card_challenge_answer, reader_challenge_answer, CipherSession, CipherVariant, PrngState, DEFAULT_PRNG_TAPS};
use crate::framing::{
    check_crc, compute_bcc, decode_frame, encode_frame, with_crc, FrameKind, WireBits, ATQA, AUTH_KEY_A, AUTH_KEY_B, REQA, SAK,
    SELECT_ANTICOLLISION, SELECT_COMMIT,
};
use crate::keystream;
pub use memory::{
    AccessConditions, Block, CardMemory, DataOp, KeySlot, MemoryError, Profile, SectorTrailer, ValueBlock, BLOCK_SIZE,
};

pub use crate::framing::ETU_PER_BIT;

/// Everything that distinguishes one simulated card from another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Personalization {
    pub memory: CardMemory,
    pub prng_seed: u16,
    pub prng_taps: u16,
    pub cipher: CipherVariant,
    pub commands: CommandTable,
}

impl Personalization {
    /// Transport-configured card with the given identity.
    pub fn transport(profile: Profile, uid: [u8; 4], manufacturer: [u8; 11]) -> Personalization {
        Personalization {
            memory: CardMemory::new(profile, uid, manufacturer),
            prng_seed: 0xace1,
            prng_taps: DEFAULT_PRNG_TAPS,
            cipher: CipherVariant::A,
            commands: CommandTable::default(),
        }
    }

    pub fn uid(&self) -> u32 {
        u32::from_be_bytes(self.memory.uid())
    }
}

/// A command that expects a follow-up frame from the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pending {
    Operand { op: Command, block: usize },
    WriteData { block: usize },
}

#[derive(Debug, Clone)]
pub enum Phase {
    Idle,
    Ready,
    Active,
    AuthSentNonce { sector: usize, slot: KeySlot, n_c: u32 },
    Authenticated { sector: usize, slot: KeySlot, cipher: CipherSession, pending: Option<Pending> },
    Halted,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Ready => "ready",
            Phase::Active => "active",
            Phase::AuthSentNonce { .. } => "auth-sent-nonce",
            Phase::Authenticated { .. } => "authenticated",
            Phase::Halted => "halted",
        }
    }
}

/// A simulated card.
#[derive(Debug, Clone)]
pub struct Card {
    config: Personalization,
    memory: CardMemory,
    phase: Phase,
    transfer_register: Option<i32>,
    powered_at: u64,
    tick_offset: i64,
    prng: PrngState,
}

impl Card {
    pub fn new(config: Personalization) -> Card {
        let prng = Self::seed_state(&config);
        Card {
            memory: config.memory.clone(),
            config,
            phase: Phase::Idle,
            transfer_register: None,
            powered_at: 0,
            tick_offset: 0,
            prng,
        }
    }

    fn seed_state(config: &Personalization) -> PrngState {
        PrngState::seeded(config.prng_seed, config.prng_taps)
            .or_else(|| PrngState::seeded(1, config.prng_taps))
            .expect("nonzero seed")
    }

    pub fn memory(&self) -> &CardMemory {
        &self.memory
    }

    pub fn personalization(&self) -> &Personalization {
        &self.config
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn transfer_register(&self) -> Option<i32> {
        self.transfer_register
    }

    /// Powers the card up at `now`. `tick_offset` shifts the nonce LFSR by a
    /// whole number of bit periods, modelling power-up timing uncertainty.
    pub fn power_up(&mut self, now: u64, tick_offset: i64) {
        self.phase = Phase::Idle;
        self.transfer_register = None;
        self.powered_at = now;
        self.tick_offset = tick_offset;
        self.prng = Self::seed_state(&self.config);
    }

    /// Nonce LFSR state at `now`, a function of the seed and the number of
    /// bit periods since power-up.
    pub fn prng_at(&mut self, now: u64) -> PrngState {
        let ticks = (now.saturating_sub(self.powered_at) / ETU_PER_BIT) as i64 + self.tick_offset;
        let ticks = ticks.max(0) as u64;
        if ticks < self.prng.shifts() {
            self.prng = Self::seed_state(&self.config);
        }
        self.prng = self.prng.advance(ticks - self.prng.shifts());
        self.prng
    }

    /// Processes one incoming frame received at time `now` and returns the
    /// card's answer, if any.
    pub fn transition(&mut self, now: u64, incoming: &WireBits) -> Option<WireBits> {
        let phase = core::mem::replace(&mut self.phase, Phase::Halted);
        let (next, reply) = match phase {
            Phase::Idle | Phase::Halted => {
                if is_reqa(incoming) {
                    (Phase::Ready, Some(plain(&ATQA)))
                } else {
                    (phase, None)
                }
            }
            Phase::Ready => self.on_ready(incoming),
            Phase::Active => self.on_active(now, incoming),
            Phase::AuthSentNonce { sector, slot, n_c } => self.on_reader_answer(sector, slot, n_c, incoming),
            Phase::Authenticated { sector, slot, cipher, pending } => {
                self.on_encrypted(now, sector, slot, cipher, pending, incoming)
            }
        };
        self.phase = next;
        reply
    }

    fn on_ready(&mut self, incoming: &WireBits) -> (Phase, Option<WireBits>) {
        let Some(bytes) = clear_bytes(incoming) else { return (Phase::Halted, None) };
        let uid = self.memory.uid();
        let bcc = compute_bcc(&uid).unwrap_or_default();
        if bytes == SELECT_ANTICOLLISION {
            let mut answer: Vec<u8> = uid.to_vec();
            answer.push(bcc);
            return (Phase::Ready, Some(plain(&answer)));
        }
        let mut commit = SELECT_COMMIT.to_vec();
        commit.extend_from_slice(&uid);
        commit.push(bcc);
        if bytes == with_crc(&commit) {
            return (Phase::Active, Some(plain(&with_crc(&[SAK]))));
        }
        (Phase::Halted, None)
    }

    fn on_active(&mut self, now: u64, incoming: &WireBits) -> (Phase, Option<WireBits>) {
        let Some(bytes) = clear_bytes(incoming) else { return (Phase::Halted, None) };
        match self.auth_target(&bytes) {
            Some((sector, slot)) => {
                let (n_c, _) = self.prng_at(now).draw_nonce();
                (Phase::AuthSentNonce { sector, slot, n_c }, Some(plain(&n_c.to_be_bytes())))
            }
            None => (Phase::Halted, None),
        }
    }

    /// Parses an authentication request `60|61 block CRC`.
    fn auth_target(&self, bytes: &[u8]) -> Option<(usize, KeySlot)> {
        if bytes.len() != 4 || !check_crc(bytes) {
            return None;
        }
        let slot = match bytes[0] {
            AUTH_KEY_A => KeySlot::A,
            AUTH_KEY_B => KeySlot::B,
            _ => return None,
        };
        let sector = self.memory.profile().sector_of(usize::from(bytes[1]))?;
        let trailer = self.memory.trailer(sector).ok()?;
        trailer.access.slot_usable(slot).then_some((sector, slot))
    }

    fn on_reader_answer(&mut self, sector: usize, slot: KeySlot, n_c: u32, incoming: &WireBits) -> (Phase, Option<WireBits>) {
        if incoming.kind() != Some(FrameKind::Standard) || incoming.byte_len() != 8 {
            return (Phase::Halted, None);
        }
        let Ok(trailer) = self.memory.trailer(sector) else { return (Phase::Halted, None) };
        let mut cipher = CipherSession::for_card(trailer.key(slot), self.config.uid(), n_c, self.config.cipher);
        let mut wire = incoming.clone();
        // reader nonce: the 32 data bits before the fourth parity bit
        keystream::apply_range(&mut cipher, &mut wire, 0, 35);
        let Ok(head) = decode_frame(&WireBits::from_raw(wire.bits()[..36].to_vec()).expect("36 bits")) else {
            return (Phase::Halted, None);
        };
        cipher.set_reader_nonce(u32::from_be_bytes([head.bytes[0], head.bytes[1], head.bytes[2], head.bytes[3]]));
        keystream::apply_range(&mut cipher, &mut wire, 35, 72);
        let Ok(answer) = decode_frame(&wire) else { return (Phase::Halted, None) };
        let ar = u32::from_be_bytes([answer.bytes[4], answer.bytes[5], answer.bytes[6], answer.bytes[7]]);
        if !answer.all_parity_ok() || ar != reader_challenge_answer(n_c) {
            return (Phase::Halted, None);
        }
        let reply = encrypt(&mut cipher, &card_challenge_answer(n_c).to_be_bytes());
        (Phase::Authenticated { sector, slot, cipher, pending: None }, Some(reply))
    }

    fn on_encrypted(
        &mut self,
        now: u64,
        sector: usize,
        slot: KeySlot,
        mut cipher: CipherSession,
        pending: Option<Pending>,
        incoming: &WireBits,
    ) -> (Phase, Option<WireBits>) {
        let expected_len = match pending {
            None => 4,
            Some(Pending::Operand { .. }) => 6,
            Some(Pending::WriteData { .. }) => 18,
        };
        if incoming.kind() != Some(FrameKind::Standard) || incoming.byte_len() != expected_len {
            return (Phase::Halted, None);
        }
        let decoded = decode_frame(&keystream::apply(&mut cipher, incoming)).expect("standard frame");
        if !decoded.all_parity_ok() || !check_crc(&decoded.bytes) {
            let reply = encrypt_nibble(&mut cipher, NACK_TRANSMISSION);
            return (Phase::Halted, Some(reply));
        }
        let bytes = &decoded.bytes[..expected_len - 2];
        let outcome = match pending {
            None => self.execute(now, sector, slot, &mut cipher, bytes),
            Some(Pending::Operand { op, block }) => self.accept_operand(op, block, bytes),
            Some(Pending::WriteData { block }) => self.accept_write(block, bytes),
        };
        match outcome {
            Outcome::Reply(answer, next_pending) => {
                let reply = match answer {
                    Answer::Nibble(n) => Some(encrypt_nibble(&mut cipher, n)),
                    Answer::Bytes(b) => Some(encrypt(&mut cipher, &b)),
                    Answer::Silent => None,
                };
                (Phase::Authenticated { sector, slot, cipher, pending: next_pending }, reply)
            }
            Outcome::NestedAuth { sector, slot, n_c } => {
                let reply = encrypt(&mut cipher, &n_c.to_be_bytes());
                (Phase::AuthSentNonce { sector, slot, n_c }, Some(reply))
            }
            Outcome::Refuse => (Phase::Halted, Some(encrypt_nibble(&mut cipher, NACK_NOT_ALLOWED))),
        }
    }

    fn execute(&mut self, now: u64, sector: usize, slot: KeySlot, _cipher: &mut CipherSession, cmd: &[u8]) -> Outcome {
        let (code, block) = (cmd[0], usize::from(cmd[1]));
        if code == AUTH_KEY_A || code == AUTH_KEY_B {
            return match self.auth_target(&with_crc(cmd)) {
                Some((sector, slot)) => Outcome::NestedAuth { sector, slot, n_c: self.prng_at(now).draw_nonce().0 },
                None => Outcome::Refuse,
            };
        }
        let profile = self.memory.profile();
        let Some(op) = self.config.commands.lookup(code) else { return Outcome::Refuse };
        if profile.sector_of(block) != Some(sector) {
            return Outcome::Refuse;
        }
        let Ok(trailer) = self.memory.trailer(sector) else { return Outcome::Refuse };
        let ac = trailer.access;
        let group = profile.access_group(block).unwrap_or(3);
        let is_trailer = profile.is_trailer(block);
        let manufacturer = block == 0;
        match op {
            Command::Read => {
                if !is_trailer && !ac.allows_data(group, DataOp::Read, slot) {
                    return Outcome::Refuse;
                }
                match self.memory.read_view(block) {
                    Ok(data) => Outcome::Reply(Answer::Bytes(with_crc(&data)), None),
                    Err(_) => Outcome::Refuse,
                }
            }
            Command::Write => {
                let allowed = if is_trailer { ac.allows_trailer_write(slot) } else { ac.allows_data(group, DataOp::Write, slot) };
                if manufacturer || !allowed {
                    return Outcome::Refuse;
                }
                Outcome::Reply(Answer::Nibble(ACK), Some(Pending::WriteData { block }))
            }
            Command::Increment | Command::Decrement | Command::Restore => {
                let perm = if op == Command::Increment { DataOp::Increment } else { DataOp::DecrementTransferRestore };
                let is_value = self.memory.block(block).is_ok_and(|b| ValueBlock::decode(b).is_ok());
                if is_trailer || manufacturer || !is_value || !ac.allows_data(group, perm, slot) {
                    return Outcome::Refuse;
                }
                Outcome::Reply(Answer::Nibble(ACK), Some(Pending::Operand { op, block }))
            }
            Command::Transfer => {
                let Some(value) = self.transfer_register else { return Outcome::Refuse };
                if is_trailer || manufacturer || !ac.allows_data(group, DataOp::DecrementTransferRestore, slot) {
                    return Outcome::Refuse;
                }
                let addr = self.memory.block(block).ok().and_then(|b| ValueBlock::decode(b).ok()).map_or(block as u8, |v| v.addr);
                match self.memory.set_block(block, ValueBlock::new(value, addr).encode()) {
                    Ok(()) => Outcome::Reply(Answer::Nibble(ACK), None),
                    Err(_) => Outcome::Refuse,
                }
            }
        }
    }

    fn accept_operand(&mut self, op: Command, block: usize, operand: &[u8]) -> Outcome {
        let operand = i32::from_le_bytes([operand[0], operand[1], operand[2], operand[3]]);
        let Some(current) = self.memory.block(block).ok().and_then(|b| ValueBlock::decode(b).ok()) else {
            return Outcome::Refuse;
        };
        let result = match op {
            Command::Increment => current.value.checked_add(operand),
            Command::Decrement => current.value.checked_sub(operand),
            _ => Some(current.value),
        };
        match result {
            Some(v) => {
                self.transfer_register = Some(v);
                Outcome::Reply(Answer::Silent, None)
            }
            None => Outcome::Refuse,
        }
    }

    fn accept_write(&mut self, block: usize, data: &[u8]) -> Outcome {
        let mut b = [0u8; BLOCK_SIZE];
        b.copy_from_slice(data);
        if self.memory.profile().is_trailer(block) && SectorTrailer::from_block(&b).is_err() {
            return Outcome::Refuse;
        }
        match self.memory.set_block(block, b) {
            Ok(()) => Outcome::Reply(Answer::Nibble(ACK), None),
            Err(_) => Outcome::Refuse,
        }
    }
}

enum Answer {
    Nibble(u8),
    Bytes(Vec<u8>),
    Silent,
}

enum Outcome {
    Reply(Answer, Option<Pending>),
    NestedAuth { sector: usize, slot: KeySlot, n_c: u32 },
    Refuse,
}

fn is_reqa(w: &WireBits) -> bool {
    w.kind() == Some(FrameKind::Short7) && decode_frame(w).is_ok_and(|d| d.bytes == [REQA])
}

/// Bytes of a plaintext standard frame with correct parity.
fn clear_bytes(w: &WireBits) -> Option<Vec<u8>> {
    let d = decode_frame(w).ok()?;
    (d.kind == FrameKind::Standard && d.all_parity_ok()).then_some(d.bytes)
}

fn plain(bytes: &[u8]) -> WireBits {
    encode_frame(bytes, FrameKind::Standard).expect("non-empty")
}

fn encrypt(cipher: &mut CipherSession, bytes: &[u8]) -> WireBits {
    keystream::apply(cipher, &plain(bytes))
}

fn encrypt_nibble(cipher: &mut CipherSession, n: u8) -> WireBits {
    keystream::apply(cipher, &encode_frame(&[n], FrameKind::Nibble4).expect("nibble"))
}

#[cfg(test)]
mod tests;
