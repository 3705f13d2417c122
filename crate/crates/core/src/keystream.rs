//! The bitwise encryption law.
//!
//! Every data bit is XORed with the next keystream bit, which is then
//! consumed. Every parity bit is XORed with the upcoming keystream bit without
//! consuming it, so a parity bit and the first data bit of the following byte
//! (or following frame) share a keystream bit. Short frames have no parity
//! positions and consume one bit per data bit.

use alloc::vec::Vec;

use crate::framing::{BitKind, WireBits};

/// A source of keystream bits.
pub trait KeystreamSource {
    /// Returns the next bit and advances.
    fn next_bit(&mut self) -> bool;
    /// Returns the next bit without advancing.
    fn peek_bit(&mut self) -> bool;

    fn take_bits(&mut self, n: usize) -> Vec<bool> {
        (0..n).map(|_| self.next_bit()).collect()
    }
}

/// Applies the keystream to wire positions `start..end` in place. Encryption
/// and decryption are the same operation.
pub fn apply_range<K: KeystreamSource + ?Sized>(ks: &mut K, wire: &mut WireBits, start: usize, end: usize) {
    for i in start..end {
        let k = match wire.kinds()[i] {
            BitKind::Data => ks.next_bit(),
            BitKind::Parity => ks.peek_bit(),
        };
        if k {
            wire.flip(i);
        }
    }
}

/// Applies the keystream to a whole frame.
pub fn apply<K: KeystreamSource + ?Sized>(ks: &mut K, wire: &WireBits) -> WireBits {
    let mut out = wire.clone();
    let n = out.len();
    apply_range(ks, &mut out, 0, n);
    out
}

/// A fixed keystream held in memory, padded with zeros past its end.
#[derive(Debug, Clone, Default)]
pub struct FixedKeystream {
    bits: Vec<bool>,
    pos: usize,
}

impl FixedKeystream {
    pub fn new(bits: Vec<bool>) -> Self {
        FixedKeystream { bits, pos: 0 }
    }

    /// Keystream bits from bytes, LSB of each byte first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self::new(bytes_to_bits(bytes))
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

impl KeystreamSource for FixedKeystream {
    fn next_bit(&mut self) -> bool {
        let b = self.peek_bit();
        self.pos += 1;
        b
    }

    fn peek_bit(&mut self) -> bool {
        self.bits.get(self.pos).copied().unwrap_or(false)
    }
}

/// LSB-first bit expansion.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().flat_map(|b| (0..8).map(move |i| (b >> i) & 1 == 1)).collect()
}

/// Packs LSB-first bits into bytes; a trailing partial byte is zero padded.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (i, b)| acc | (u8::from(*b) << i))).collect()
}

/// Keystream bits tagged with the wire role they had when recovered.
///
/// `origin_offset` is the data-bit index (counted from the first encrypted
/// bit of the session) of the first data bit in `bits`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedKeystream {
    pub bits: Vec<bool>,
    pub kinds: Vec<BitKind>,
    pub origin_offset: usize,
}

impl AnnotatedKeystream {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Drops the bits that sat at parity positions.
    pub fn stripped(&self) -> Vec<bool> {
        self.bits.iter().zip(&self.kinds).filter(|(_, k)| **k == BitKind::Data).map(|(b, _)| *b).collect()
    }

    /// Checks that every parity-position bit equals the following data bit,
    /// where one is present.
    pub fn parity_rule_holds(&self) -> bool {
        self.kinds.iter().enumerate().all(|(i, k)| match (k, self.kinds.get(i + 1)) {
            (BitKind::Parity, Some(BitKind::Data)) => self.bits[i] == self.bits[i + 1],
            _ => true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::{decode_frame, encode_frame, FrameKind};

    #[test]
    fn increment_ciphertext_from_recorded_keystream() {
        // keystream 8d 8c c7 37 followed by a zero bit (the bit the trailing
        // parity peeks into the ACK)
        let plain = encode_frame(&[0xc1, 0x04, 0xf6, 0x8b], FrameKind::Standard).unwrap();
        let mut ks = FixedKeystream::from_bytes(&[0x8d, 0x8c, 0xc7, 0x37, 0x00]);
        let cipher = apply(&mut ks, &plain);
        let d = decode_frame(&cipher).unwrap();
        assert_eq!(d.bytes, [0x4c, 0x88, 0x31, 0xbc]);
        assert_eq!(d.parity_ok, [true, true, true, false]);
        assert_eq!(ks.position(), 32);
    }

    #[test]
    fn zero_keystream_is_identity() {
        let plain = encode_frame(&[1, 2, 3], FrameKind::Standard).unwrap();
        let mut ks = FixedKeystream::default();
        assert_eq!(apply(&mut ks, &plain), plain);
    }

    #[test]
    fn short_frames_consume_per_data_bit() {
        let plain = encode_frame(&[0xa], FrameKind::Nibble4).unwrap();
        let mut ks = FixedKeystream::from_bytes(&[0xff]);
        let c = apply(&mut ks, &plain);
        assert_eq!(decode_frame(&c).unwrap().bytes, [0x5]);
        assert_eq!(ks.position(), 4);
    }

    #[test]
    fn bit_packing_round_trip() {
        let bytes = [0x8d, 0x01, 0x80];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
    }
}
