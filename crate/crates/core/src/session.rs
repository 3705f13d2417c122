//! The simulated RF channel: a scripted genuine reader, an ETU clock that
//! drives the card's nonce generator, a passive eavesdropper and the narrow
//! port an attacker gets.
//!
//! Time is counted in ETU (1.18 µs); one bit period is
//! [`ETU_PER_BIT`](crate::card::ETU_PER_BIT) ETU. A frame is timestamped at
//! the instant the card processes it, which is also when a nonce is drawn.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::card::{Block, Card, KeySlot, Profile, ETU_PER_BIT};
use crate::commands::{CommandTable, ACK};
use crate::crypto::{card_challenge_answer, make_cipher, reader_challenge_answer, CipherSession, CipherVariant, SecretKey};
use crate::framing::{
    check_crc, compute_bcc, decode_frame, encode_frame, with_crc, FrameKind, WireBits, ATQA, AUTH_KEY_A, AUTH_KEY_B, REQA, SAK,
    SELECT_ANTICOLLISION, SELECT_COMMIT,
};
use crate::keystream;
pub use crate::tracefmt::Sender;
use crate::tracefmt::{Trace, TraceEntry};

/// A frame on the air.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub etu: u64,
    pub sender: Sender,
    pub wire: WireBits,
}

/// One step of a genuine reader's script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReaderIntent {
    Anticollision,
    Authenticate { sector: usize, key_slot: KeySlot },
    Read { block: usize },
    Write { block: usize, data: Block },
    Increment { block: usize, value: i32 },
    Decrement { block: usize, value: i32 },
    Restore { block: usize },
    Transfer { block: usize },
}

impl ReaderIntent {
    /// Block touched by a memory intent.
    pub fn block(&self) -> Option<usize> {
        match self {
            ReaderIntent::Anticollision | ReaderIntent::Authenticate { .. } => None,
            ReaderIntent::Read { block }
            | ReaderIntent::Write { block, .. }
            | ReaderIntent::Increment { block, .. }
            | ReaderIntent::Decrement { block, .. }
            | ReaderIntent::Restore { block }
            | ReaderIntent::Transfer { block } => Some(*block),
        }
    }
}

/// Fixed latencies of the genuine reader, in ETU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latencies {
    /// Field on until the first REQA.
    pub startup: u64,
    /// Card answer after the end of a reader frame.
    pub tag_reply: u64,
    /// Reader pause after the end of the previous frame.
    pub reader_gap: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies { startup: 1024, tag_reply: 64, reader_gap: 4096 }
    }
}

/// Air time of a frame including start and end bits.
pub fn frame_etu(w: &WireBits) -> u64 {
    (w.len() as u64 + 2) * ETU_PER_BIT
}

/// Keys the genuine reader holds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReaderKeys {
    entries: Vec<(usize, KeySlot, SecretKey)>,
}

impl ReaderKeys {
    pub fn insert(&mut self, sector: usize, slot: KeySlot, key: SecretKey) {
        self.entries.retain(|(s, k, _)| !(*s == sector && *k == slot));
        self.entries.push((sector, slot, key));
    }

    pub fn get(&self, sector: usize, slot: KeySlot) -> Option<SecretKey> {
        self.entries.iter().find(|(s, k, _)| *s == sector && *k == slot).map(|e| e.2)
    }

    /// Every sector of `profile` with the same key in both slots.
    pub fn uniform(profile: Profile, key: SecretKey) -> ReaderKeys {
        let mut keys = ReaderKeys::default();
        for s in 0..profile.sector_count() {
            keys.insert(s, KeySlot::A, key);
            keys.insert(s, KeySlot::B, key);
        }
        keys
    }
}

/// A genuine reader.
#[derive(Debug, Clone)]
pub struct Reader {
    pub keys: ReaderKeys,
    pub variant: CipherVariant,
    pub commands: CommandTable,
    pub latencies: Latencies,
    rng: ChaCha8Rng,
}

impl Reader {
    /// Reader whose nonces come from a generator seeded with `nonce_seed`.
    pub fn new(keys: ReaderKeys, variant: CipherVariant, nonce_seed: u64) -> Reader {
        Reader {
            keys,
            variant,
            commands: CommandTable::default(),
            latencies: Latencies::default(),
            rng: ChaCha8Rng::seed_from_u64(nonce_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// The card stayed silent.
    NoAnswer,
    /// The card sent a 4-bit answer other than ACK.
    Nack(u8),
    /// The card answered with something the reader could not accept.
    BadAnswer,
    /// The reader has no key for the requested sector and slot.
    MissingKey,
    /// A memory intent with no preceding authentication, or a script that
    /// does not start with anticollision.
    InvalidScript,
}

/// A transaction that did not complete. `events` holds the log up to the
/// failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transaction aborted at step {step}: {reason:?}")]
pub struct TransactionError {
    pub step: usize,
    pub reason: AbortReason,
    pub events: Vec<TimedEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub events: Vec<TimedEvent>,
    /// Blocks returned by `Read` intents, in order.
    pub reads: Vec<(usize, Block)>,
}

/// A card in the field of a genuine reader.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub card: Card,
    now: u64,
}

impl Simulation {
    pub fn new(card: Card) -> Simulation {
        Simulation { card, now: 0 }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Lets time pass with the field off.
    pub fn idle(&mut self, etu: u64) {
        self.now += etu;
    }

    /// Powers the card up and runs `script` as one transaction.
    pub fn run_transaction(&mut self, reader: &mut Reader, script: &[ReaderIntent]) -> Result<Transcript, TransactionError> {
        self.card.power_up(self.now, 0);
        self.now += reader.latencies.startup;
        let mut run = Run { sim: self, reader, events: Vec::new(), reads: Vec::new(), uid: 0, cipher: None };
        for (step, intent) in script.iter().enumerate() {
            if let Err(reason) = run.intent(script, step, intent) {
                let events = core::mem::take(&mut run.events);
                return Err(TransactionError { step, reason, events });
            }
        }
        let Run { events, reads, .. } = run;
        self.now += 4 * reader.latencies.reader_gap;
        Ok(Transcript { events, reads })
    }
}

struct Run<'a> {
    sim: &'a mut Simulation,
    reader: &'a mut Reader,
    events: Vec<TimedEvent>,
    reads: Vec<(usize, Block)>,
    uid: u32,
    cipher: Option<CipherSession>,
}

impl Run<'_> {
    fn exchange(&mut self, wire: WireBits) -> Option<WireBits> {
        let lat = self.reader.latencies;
        let at = self.sim.now;
        let reply = self.sim.card.transition(at, &wire);
        self.sim.now += frame_etu(&wire);
        self.events.push(TimedEvent { etu: at, sender: Sender::Pcd, wire });
        match reply {
            Some(r) => {
                self.sim.now += lat.tag_reply;
                self.events.push(TimedEvent { etu: self.sim.now, sender: Sender::Tag, wire: r.clone() });
                self.sim.now += frame_etu(&r) + lat.reader_gap;
                Some(r)
            }
            None => {
                self.sim.now += lat.reader_gap;
                None
            }
        }
    }

    fn clear(&mut self, bytes: &[u8]) -> Result<Vec<u8>, AbortReason> {
        let reply = self.exchange(encode_frame(bytes, FrameKind::Standard).expect("non-empty")).ok_or(AbortReason::NoAnswer)?;
        let d = decode_frame(&reply).map_err(|_| AbortReason::BadAnswer)?;
        if d.kind != FrameKind::Standard || !d.all_parity_ok() {
            return Err(AbortReason::BadAnswer);
        }
        Ok(d.bytes)
    }

    /// Sends an encrypted frame; returns the decrypted answer, if any.
    fn secret(&mut self, bytes: &[u8]) -> Result<Option<(FrameKind, Vec<u8>)>, AbortReason> {
        let cipher = self.cipher.as_mut().ok_or(AbortReason::InvalidScript)?;
        let wire = keystream::apply(cipher, &encode_frame(bytes, FrameKind::Standard).expect("non-empty"));
        let Some(reply) = self.exchange(wire) else { return Ok(None) };
        let cipher = self.cipher.as_mut().expect("still authenticated");
        let d = decode_frame(&keystream::apply(cipher, &reply)).map_err(|_| AbortReason::BadAnswer)?;
        if d.kind == FrameKind::Standard && !d.all_parity_ok() {
            return Err(AbortReason::BadAnswer);
        }
        Ok(Some((d.kind, d.bytes)))
    }

    fn expect_ack(&mut self, bytes: &[u8]) -> Result<(), AbortReason> {
        match self.secret(bytes)? {
            Some((FrameKind::Nibble4, n)) if n[0] == ACK => Ok(()),
            Some((FrameKind::Nibble4, n)) => Err(AbortReason::Nack(n[0])),
            Some(_) => Err(AbortReason::BadAnswer),
            None => Err(AbortReason::NoAnswer),
        }
    }

    fn command(&mut self, code: u8, block: usize) -> Vec<u8> {
        with_crc(&[code, block as u8])
    }

    fn intent(&mut self, script: &[ReaderIntent], step: usize, intent: &ReaderIntent) -> Result<(), AbortReason> {
        if step == 0 && *intent != ReaderIntent::Anticollision {
            return Err(AbortReason::InvalidScript);
        }
        if intent.block().is_some() && self.cipher.is_none() {
            return Err(AbortReason::InvalidScript);
        }
        let table = self.reader.commands;
        match intent {
            ReaderIntent::Anticollision => self.anticollision(),
            ReaderIntent::Authenticate { sector, key_slot } => {
                // A reader authenticates for the block it is about to use, or
                // for the trailer when nothing in the sector follows.
                let profile = self.sim.card.memory().profile();
                let block = script[step + 1..]
                    .iter()
                    .take_while(|i| i.block().is_some())
                    .find_map(|i| i.block())
                    .filter(|b| profile.sector_of(*b) == Some(*sector))
                    .unwrap_or_else(|| profile.trailer_block(*sector));
                self.authenticate(*sector, *key_slot, block)
            }
            ReaderIntent::Read { block } => {
                let cmd = self.command(table.read, *block);
                match self.secret(&cmd)? {
                    Some((FrameKind::Standard, data)) if data.len() == 18 && check_crc(&data) => {
                        let mut b = [0u8; 16];
                        b.copy_from_slice(&data[..16]);
                        self.reads.push((*block, b));
                        Ok(())
                    }
                    Some((FrameKind::Nibble4, n)) => Err(AbortReason::Nack(n[0])),
                    Some(_) => Err(AbortReason::BadAnswer),
                    None => Err(AbortReason::NoAnswer),
                }
            }
            ReaderIntent::Write { block, data } => {
                let cmd = self.command(table.write, *block);
                self.expect_ack(&cmd)?;
                self.expect_ack(&with_crc(data))
            }
            ReaderIntent::Increment { block, value } => self.value_op(table.increment, *block, *value),
            ReaderIntent::Decrement { block, value } => self.value_op(table.decrement, *block, *value),
            ReaderIntent::Restore { block } => self.value_op(table.restore, *block, 0),
            ReaderIntent::Transfer { block } => {
                let cmd = self.command(table.transfer, *block);
                self.expect_ack(&cmd)
            }
        }
    }

    fn anticollision(&mut self) -> Result<(), AbortReason> {
        self.cipher = None;
        let reqa = encode_frame(&[REQA], FrameKind::Short7).expect("short frame");
        let atqa = self.exchange(reqa).ok_or(AbortReason::NoAnswer)?;
        if decode_frame(&atqa).map(|d| d.bytes).ok().as_deref() != Some(&ATQA[..]) {
            return Err(AbortReason::BadAnswer);
        }
        let uid = self.clear(&SELECT_ANTICOLLISION)?;
        if uid.len() != 5 || compute_bcc(&uid[..4]) != Ok(uid[4]) {
            return Err(AbortReason::BadAnswer);
        }
        let mut commit = SELECT_COMMIT.to_vec();
        commit.extend_from_slice(&uid);
        let sak = self.clear(&with_crc(&commit))?;
        if sak != with_crc(&[SAK]) {
            return Err(AbortReason::BadAnswer);
        }
        self.uid = u32::from_be_bytes([uid[0], uid[1], uid[2], uid[3]]);
        Ok(())
    }

    fn authenticate(&mut self, sector: usize, slot: KeySlot, block: usize) -> Result<(), AbortReason> {
        let key = self.reader.keys.get(sector, slot).ok_or(AbortReason::MissingKey)?;
        let code = match slot {
            KeySlot::A => AUTH_KEY_A,
            KeySlot::B => AUTH_KEY_B,
        };
        let request = with_crc(&[code, block as u8]);
        let nonce = if self.cipher.is_some() {
            match self.secret(&request)? {
                Some((FrameKind::Standard, n)) => n,
                Some((FrameKind::Nibble4, n)) => return Err(AbortReason::Nack(n[0])),
                _ => return Err(AbortReason::NoAnswer),
            }
        } else {
            self.clear(&request)?
        };
        if nonce.len() != 4 {
            return Err(AbortReason::BadAnswer);
        }
        let n_c = u32::from_be_bytes([nonce[0], nonce[1], nonce[2], nonce[3]]);
        let n_r = self.reader.rng.next_u32();
        self.cipher = Some(make_cipher(key, self.uid, n_c, n_r, self.reader.variant));
        let mut answer = n_r.to_be_bytes().to_vec();
        answer.extend_from_slice(&reader_challenge_answer(n_c).to_be_bytes());
        match self.secret(&answer)? {
            Some((FrameKind::Standard, at)) if at == card_challenge_answer(n_c).to_be_bytes() => Ok(()),
            Some(_) => Err(AbortReason::BadAnswer),
            None => Err(AbortReason::NoAnswer),
        }
    }

    fn value_op(&mut self, code: u8, block: usize, value: i32) -> Result<(), AbortReason> {
        let cmd = self.command(code, block);
        self.expect_ack(&cmd)?;
        // the card does not answer the operand frame
        match self.secret(&with_crc(&value.to_le_bytes()))? {
            None => Ok(()),
            Some((FrameKind::Nibble4, n)) => Err(AbortReason::Nack(n[0])),
            Some(_) => Err(AbortReason::BadAnswer),
        }
    }
}

/// What an eavesdropper records: bytes, parity anomalies and ETU deltas.
pub fn eavesdrop(events: &[TimedEvent]) -> Trace {
    let mut entries = Vec::with_capacity(events.len());
    let mut prev = events.first().map_or(0, |e| e.etu);
    for (i, e) in events.iter().enumerate() {
        let entry =
            TraceEntry::from_wire(e.etu - prev, i as u32 + 1, e.sender, &e.wire).expect("simulated frames are well formed");
        entries.push(entry);
        prev = e.etu;
    }
    Trace { entries }
}

/// Everything an attacker-controlled reader can do to a card.
pub trait AttackerPort {
    /// Sends a frame, returning the card's answer if it gave one.
    fn send(&mut self, frame: &WireBits) -> Option<WireBits>;
    /// Switches the field off and on again.
    fn power_cycle(&mut self);
    /// Lets `etu` pass with the field on.
    fn advance_clock(&mut self, etu: u64);
}

impl<P: AttackerPort + ?Sized> AttackerPort for &mut P {
    fn send(&mut self, frame: &WireBits) -> Option<WireBits> {
        (**self).send(frame)
    }

    fn power_cycle(&mut self) {
        (**self).power_cycle()
    }

    fn advance_clock(&mut self, etu: u64) {
        (**self).advance_clock(etu)
    }
}

/// An [`AttackerPort`] backed by a simulated card.
///
/// With `jitter > 0` every power-up shifts the card's nonce generator by a
/// uniformly drawn number of bit periods in `-jitter..=jitter`.
#[derive(Debug, Clone)]
pub struct CardPort {
    card: Card,
    now: u64,
    jitter: u32,
    rng: ChaCha8Rng,
    frames_sent: u64,
    power_cycles: u64,
}

impl CardPort {
    pub fn new(card: Card) -> CardPort {
        Self::with_jitter(card, 0, 0)
    }

    pub fn with_jitter(mut card: Card, jitter: u32, seed: u64) -> CardPort {
        card.power_up(0, 0);
        CardPort { card, now: 0, jitter, rng: ChaCha8Rng::seed_from_u64(seed), frames_sent: 0, power_cycles: 0 }
    }

    pub fn card(&self) -> &Card {
        &self.card
    }

    pub fn into_card(self) -> Card {
        self.card
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn power_cycles(&self) -> u64 {
        self.power_cycles
    }
}

impl AttackerPort for CardPort {
    fn send(&mut self, frame: &WireBits) -> Option<WireBits> {
        self.frames_sent += 1;
        self.card.transition(self.now, frame)
    }

    fn power_cycle(&mut self) {
        self.power_cycles += 1;
        self.now += 10_000;
        let offset = if self.jitter == 0 {
            0
        } else {
            let span = 2 * u64::from(self.jitter) + 1;
            (u64::from(self.rng.next_u32()) % span) as i64 - i64::from(self.jitter)
        };
        self.card.power_up(self.now, offset);
    }

    fn advance_clock(&mut self, etu: u64) {
        self.now += etu;
    }
}
