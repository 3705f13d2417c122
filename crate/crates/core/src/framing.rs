//! ISO 14443-A style framing.
//!
//! Bits go on the wire LSB first. A standard frame carries one odd parity bit
//! after every byte; the 7-bit REQA and the 4-bit ACK/NACK answers carry none.

use alloc::vec::Vec;
use thiserror::Error;

/// REQA, sent as a 7-bit short frame.
pub const REQA: u8 = 0x26;

/// ETU (1.18 µs) per bit period.
pub const ETU_PER_BIT: u64 = 8;
/// ATQA answered by a Classic 1K/4K card.
pub const ATQA: [u8; 2] = [0x04, 0x00];
/// Cascade level 1 SELECT, anticollision stage (NVB = 0x20).
pub const SELECT_ANTICOLLISION: [u8; 2] = [0x93, 0x20];
/// Cascade level 1 SELECT, commit stage (NVB = 0x70). Followed by UID, BCC, CRC.
pub const SELECT_COMMIT: [u8; 2] = [0x93, 0x70];
/// SAK of a Classic card; sent with CRC.
pub const SAK: u8 = 0x08;
/// Authentication request with key A / key B (plaintext, followed by block and CRC).
pub const AUTH_KEY_A: u8 = 0x60;
pub const AUTH_KEY_B: u8 = 0x61;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FramingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("malformed frame: {0} bits match no frame kind")]
    MalformedFrame(usize),
}

/// What a wire bit carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitKind {
    Data,
    Parity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    /// 7 data bits, no parity (REQA).
    Short7,
    /// 4 data bits, no parity (ACK/NACK).
    Nibble4,
    /// Whole bytes, each followed by a parity bit.
    Standard,
}

impl FrameKind {
    /// Infers the frame kind from a wire bit count.
    pub fn from_bit_len(len: usize) -> Option<FrameKind> {
        match len {
            4 => Some(FrameKind::Nibble4),
            7 => Some(FrameKind::Short7),
            n if n > 0 && n % 9 == 0 => Some(FrameKind::Standard),
            _ => None,
        }
    }
}

/// A frame as it travels over the air: data and parity bits interleaved in
/// transmission order, each tagged with its role.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct WireBits {
    bits: Vec<bool>,
    kinds: Vec<BitKind>,
}

impl WireBits {
    /// Builds wire bits from raw bits, tagging positions from the bit count.
    pub fn from_raw(bits: Vec<bool>) -> Result<WireBits, FramingError> {
        let kind = FrameKind::from_bit_len(bits.len()).ok_or(FramingError::MalformedFrame(bits.len()))?;
        let kinds = (0..bits.len())
            .map(|i| match kind {
                FrameKind::Standard if i % 9 == 8 => BitKind::Parity,
                _ => BitKind::Data,
            })
            .collect();
        Ok(WireBits { bits, kinds })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn kinds(&self) -> &[BitKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn kind(&self) -> Option<FrameKind> {
        FrameKind::from_bit_len(self.bits.len())
    }

    /// Number of data bits (payload length in bits).
    pub fn data_len(&self) -> usize {
        self.kinds.iter().filter(|k| **k == BitKind::Data).count()
    }

    pub fn flip(&mut self, index: usize) {
        self.bits[index] = !self.bits[index];
    }

    pub fn set(&mut self, index: usize, bit: bool) {
        self.bits[index] = bit;
    }

    /// Byte count of a standard frame, or 1 for a short frame.
    pub fn byte_len(&self) -> usize {
        match self.kind() {
            Some(FrameKind::Standard) => self.bits.len() / 9,
            Some(_) => 1,
            None => 0,
        }
    }
}

/// Bit count check: XOR of the four UID bytes.
pub fn compute_bcc(uid: &[u8]) -> Result<u8, FramingError> {
    if uid.len() != 4 {
        return Err(FramingError::InvalidArgument("BCC needs exactly 4 UID bytes"));
    }
    Ok(uid.iter().fold(0, |acc, b| acc ^ b))
}

fn crc_a_register(data: &[u8]) -> u16 {
    let mut crc: u16 = 0x6363;
    for &byte in data {
        let mut b = byte;
        for _ in 0..8 {
            let mix = (crc ^ u16::from(b)) & 1;
            crc >>= 1;
            if mix != 0 {
                crc ^= 0x8408;
            }
            b >>= 1;
        }
    }
    crc
}

/// ISO 14443-A CRC_A, low byte first.
pub fn crc_a(data: &[u8]) -> Result<[u8; 2], FramingError> {
    if data.is_empty() {
        return Err(FramingError::InvalidArgument("CRC_A over empty input"));
    }
    Ok(crc_a_register(data).to_le_bytes())
}

/// `data` followed by its CRC_A.
pub fn with_crc(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + 2);
    out.extend_from_slice(data);
    out.extend_from_slice(&crc_a_register(data).to_le_bytes());
    out
}

/// True when the last two bytes are the CRC_A of the rest.
pub fn check_crc(frame: &[u8]) -> bool {
    frame.len() > 2 && crc_a_register(&frame[..frame.len() - 2]).to_le_bytes() == frame[frame.len() - 2..]
}

/// Odd parity bit for one byte.
pub fn odd_parity(b: u8) -> bool {
    b.count_ones().is_multiple_of(2)
}

/// Lays out a payload on the wire. Short frames take their value from the low
/// bits of the single payload byte.
pub fn encode_frame(payload: &[u8], kind: FrameKind) -> Result<WireBits, FramingError> {
    let mut bits = Vec::new();
    let mut kinds = Vec::new();
    let push_data = |value: u8, n: usize, bits: &mut Vec<bool>, kinds: &mut Vec<BitKind>| {
        for i in 0..n {
            bits.push((value >> i) & 1 == 1);
            kinds.push(BitKind::Data);
        }
    };
    match kind {
        FrameKind::Short7 | FrameKind::Nibble4 => {
            let width = if kind == FrameKind::Short7 { 7 } else { 4 };
            match payload {
                [v] if u16::from(*v) < (1 << width) => push_data(*v, width, &mut bits, &mut kinds),
                _ => return Err(FramingError::InvalidArgument("short frame needs one value that fits its width")),
            }
        }
        FrameKind::Standard => {
            if payload.is_empty() {
                return Err(FramingError::InvalidArgument("standard frame needs at least one byte"));
            }
            for &b in payload {
                push_data(b, 8, &mut bits, &mut kinds);
                bits.push(odd_parity(b));
                kinds.push(BitKind::Parity);
            }
        }
    }
    Ok(WireBits { bits, kinds })
}

/// Result of decoding wire bits. `parity_ok` has one flag per byte of a
/// standard frame and is empty for short frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub kind: FrameKind,
    pub bytes: Vec<u8>,
    pub parity_ok: Vec<bool>,
}

impl DecodedFrame {
    pub fn all_parity_ok(&self) -> bool {
        self.parity_ok.iter().all(|ok| *ok)
    }
}

/// Decodes wire bits. Parity mismatches are reported, never rejected.
pub fn decode_frame(wire: &WireBits) -> Result<DecodedFrame, FramingError> {
    let bits = wire.bits();
    let kind = FrameKind::from_bit_len(bits.len()).ok_or(FramingError::MalformedFrame(bits.len()))?;
    let gather = |chunk: &[bool]| chunk.iter().enumerate().fold(0u8, |acc, (i, b)| acc | (u8::from(*b) << i));
    Ok(match kind {
        FrameKind::Short7 | FrameKind::Nibble4 => DecodedFrame { kind, bytes: alloc::vec![gather(bits)], parity_ok: Vec::new() },
        FrameKind::Standard => {
            let mut bytes = Vec::with_capacity(bits.len() / 9);
            let mut parity_ok = Vec::with_capacity(bits.len() / 9);
            for chunk in bits.chunks(9) {
                let b = gather(&chunk[..8]);
                bytes.push(b);
                parity_ok.push(chunk[8] == odd_parity(b));
            }
            DecodedFrame { kind, bytes, parity_ok }
        }
    })
}

/// Standard frame for `bytes` with the given received parity bits.
pub fn standard_with_parity(bytes: &[u8], parity: &[bool]) -> Result<WireBits, FramingError> {
    if bytes.len() != parity.len() {
        return Err(FramingError::InvalidArgument("one parity bit per byte"));
    }
    let mut wire = encode_frame(bytes, FrameKind::Standard)?;
    for (i, p) in parity.iter().enumerate() {
        wire.set(i * 9 + 8, *p);
    }
    Ok(wire)
}
