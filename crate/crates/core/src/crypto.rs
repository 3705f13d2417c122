//! Card nonce generator and the stand-in stream cipher.
//!
//! The real cipher is treated as a black box. [`CipherSession`] is a 48-bit
//! LFSR with a nonlinear output filter; any deterministic bitwise stream
//! cipher without ciphertext feedback would do, and [`CipherVariant`] selects
//! between two filter configurations so attack code can be exercised against
//! more than one.

use alloc::vec::Vec;
use core::fmt;

use crate::framing::{decode_frame, DecodedFrame, FramingError, WireBits};
use crate::keystream::{self, KeystreamSource};

/// Feedback mask for x^16 + x^14 + x^13 + x^11 + 1 in right-shift form.
pub const DEFAULT_PRNG_TAPS: u16 = 0x002d;

/// The card's 16-bit nonce LFSR. It shifts once per bit period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrngState {
    lfsr: u16,
    taps: u16,
    shifts: u64,
}

impl PrngState {
    /// Seeds the register. An all-zero seed would lock the LFSR and is rejected.
    pub fn seeded(seed: u16, taps: u16) -> Option<PrngState> {
        (seed != 0).then_some(PrngState { lfsr: seed, taps, shifts: 0 })
    }

    pub fn lfsr(&self) -> u16 {
        self.lfsr
    }

    pub fn taps(&self) -> u16 {
        self.taps
    }

    pub fn shifts(&self) -> u64 {
        self.shifts
    }

    fn output(&self) -> bool {
        self.lfsr & 1 == 1
    }

    /// One shift.
    pub fn step(self) -> PrngState {
        let feedback = (self.lfsr & self.taps).count_ones() & 1;
        PrngState { lfsr: (self.lfsr >> 1) | ((feedback as u16) << 15), taps: self.taps, shifts: self.shifts + 1 }
    }

    pub fn advance(self, n: u64) -> PrngState {
        (0..n).fold(self, |s, _| s.step())
    }

    /// The next 32 output bits, most significant first, and the state after them.
    /// The nonce is a function of the 16-bit register alone.
    pub fn draw_nonce(self) -> (u32, PrngState) {
        let mut s = self;
        let mut nonce = 0u32;
        for _ in 0..32 {
            nonce = (nonce << 1) | u32::from(s.output());
            s = s.step();
        }
        (nonce, s)
    }

    /// Number of shifts until the register value repeats.
    pub fn period(&self) -> u64 {
        let start = self.lfsr;
        let mut s = self.step();
        let mut n = 1;
        while s.lfsr != start {
            s = s.step();
            n += 1;
        }
        n
    }
}

pub fn prng_step(s: PrngState) -> PrngState {
    s.step()
}

pub fn draw_nonce(s: PrngState) -> (u32, PrngState) {
    s.draw_nonce()
}

/// A 48-bit sector key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretKey(u64);

impl SecretKey {
    pub const DEFAULT: SecretKey = SecretKey(0xffff_ffff_ffff);

    pub fn new(key: u64) -> Option<SecretKey> {
        (key >> 48 == 0).then_some(SecretKey(key))
    }

    pub fn from_bytes(bytes: [u8; 6]) -> SecretKey {
        SecretKey(bytes.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b)))
    }

    pub fn to_bytes(self) -> [u8; 6] {
        let b = self.0.to_be_bytes();
        [b[2], b[3], b[4], b[5], b[6], b[7]]
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:012x})", self.0)
    }
}

/// Selects the filter configuration of the stand-in cipher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CipherVariant {
    #[default]
    A,
    B,
}

impl CipherVariant {
    pub const ALL: [CipherVariant; 2] = [CipherVariant::A, CipherVariant::B];

    fn warmup(self) -> u32 {
        match self {
            CipherVariant::A => 64,
            CipherVariant::B => 97,
        }
    }

    fn filter(self, s: u64) -> bool {
        let bit = |i: u32| (s >> i) & 1 == 1;
        match self {
            CipherVariant::A => (bit(3) & bit(17)) ^ bit(29) ^ bit(41),
            CipherVariant::B => bit(7) ^ (bit(12) | bit(33)) ^ bit(45) ^ (bit(22) & bit(38)),
        }
    }
}

const CIPHER_MASK: u64 = (1 << 48) - 1;
/// Keystream bits produced before the reader nonce is mixed in.
const READER_NONCE_POINT: u64 = 32;

/// One authenticated cipher session.
///
/// The first 32 keystream bits (which encrypt the reader nonce) depend on key,
/// UID and card nonce only; the reader nonce is mixed in before bit 32.
#[derive(Clone)]
pub struct CipherSession {
    variant: CipherVariant,
    state: u64,
    produced: u64,
    reader_nonce: Option<u32>,
    mixed: bool,
}

impl fmt::Debug for CipherSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CipherSession").field("variant", &self.variant).field("produced", &self.produced).finish_non_exhaustive()
    }
}

impl CipherSession {
    /// Card-side session: the reader nonce is learned later through
    /// [`CipherSession::set_reader_nonce`].
    pub fn for_card(key: SecretKey, uid: u32, n_c: u32, variant: CipherVariant) -> CipherSession {
        let mut s = CipherSession { variant, state: key.0, produced: 0, reader_nonce: None, mixed: false };
        s.absorb(uid ^ n_c);
        for _ in 0..variant.warmup() {
            s.clock(false);
        }
        if s.state == 0 {
            s.state = 1;
        }
        s
    }

    pub fn set_reader_nonce(&mut self, n_r: u32) {
        debug_assert!(self.produced <= READER_NONCE_POINT && !self.mixed);
        self.reader_nonce = Some(n_r);
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }

    fn clock(&mut self, input: bool) {
        let s = self.state;
        let fb = ((s ^ (s >> 1) ^ (s >> 27) ^ (s >> 28)) & 1 == 1) ^ input;
        self.state = ((s >> 1) | (u64::from(fb) << 47)) & CIPHER_MASK;
    }

    fn absorb(&mut self, word: u32) {
        for i in (0..32).rev() {
            self.clock((word >> i) & 1 == 1);
        }
    }

    fn ensure_mixed(&mut self) {
        if self.produced == READER_NONCE_POINT && !self.mixed {
            self.mixed = true;
            let n_r = self.reader_nonce.unwrap_or(0);
            self.absorb(n_r);
            if self.state == 0 {
                self.state = 1;
            }
        }
    }
}

impl KeystreamSource for CipherSession {
    fn next_bit(&mut self) -> bool {
        self.ensure_mixed();
        let out = self.variant.filter(self.state);
        self.clock(false);
        self.produced += 1;
        out
    }

    fn peek_bit(&mut self) -> bool {
        self.ensure_mixed();
        self.variant.filter(self.state)
    }
}

/// Reader-side session with every input known up front.
pub fn make_cipher(key: SecretKey, uid: u32, n_c: u32, n_r: u32, variant: CipherVariant) -> CipherSession {
    let mut s = CipherSession::for_card(key, uid, n_c, variant);
    s.set_reader_nonce(n_r);
    s
}

pub fn keystream_bits(c: &mut CipherSession, n: usize) -> Vec<bool> {
    c.take_bits(n)
}

/// Encrypts a plaintext frame. Parity bits of the input must be correct.
pub fn encrypt_frame(c: &mut CipherSession, plain: &WireBits) -> Result<WireBits, FramingError> {
    if !decode_frame(plain)?.all_parity_ok() {
        return Err(FramingError::InvalidArgument("plaintext parity is not odd parity"));
    }
    Ok(keystream::apply(c, plain))
}

/// Decrypts a frame and reports which bytes carry valid parity afterwards.
pub fn decrypt_frame(c: &mut CipherSession, cipher: &WireBits) -> Result<DecodedFrame, FramingError> {
    decode_frame(&keystream::apply(c, cipher))
}

/// Answer the reader gives to the card's challenge.
pub fn reader_challenge_answer(n_c: u32) -> u32 {
    n_c.rotate_left(11) ^ 0x5a3c_96e1
}

/// Answer the card gives once it accepted the reader.
pub fn card_challenge_answer(n_c: u32) -> u32 {
    n_c.rotate_left(23) ^ 0xc3a5_1e78
}
