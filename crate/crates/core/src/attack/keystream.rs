//! Keystream bookkeeping: recovery from known plaintext, remapping onto new
//! message shapes, command morphing and partial decryption.
//!
//! Keystream is indexed by data bit, counted from the first bit of the
//! reader's authentication answer. Parity positions do not get their own
//! index: a parity bit is encrypted with the keystream bit of the next data
//! position, so what it reveals is recorded at that index.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use super::AttackError;
use crate::framing::{decode_frame, encode_frame, odd_parity, BitKind, FrameKind, WireBits};
use crate::keystream::AnnotatedKeystream;
use crate::tracefmt::{is_auth_request, Sender, Trace, TraceEntry};

/// Size of an encrypted frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameShape {
    /// Whole bytes, each followed by a parity bit.
    Standard(usize),
    /// A 4-bit answer.
    Nibble,
}

impl FrameShape {
    pub fn data_bits(self) -> usize {
        match self {
            FrameShape::Standard(n) => 8 * n,
            FrameShape::Nibble => 4,
        }
    }

    pub fn of_wire(w: &WireBits) -> Option<FrameShape> {
        match w.kind()? {
            FrameKind::Standard => Some(FrameShape::Standard(w.byte_len())),
            FrameKind::Nibble4 => Some(FrameShape::Nibble),
            FrameKind::Short7 => None,
        }
    }

    fn of_entry(e: &TraceEntry) -> FrameShape {
        if e.len() == 1 {
            FrameShape::Nibble
        } else {
            FrameShape::Standard(e.len())
        }
    }
}

/// Where an encrypted message sits in the keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpan {
    pub seq: u32,
    pub start: usize,
    pub shape: FrameShape,
}

/// Keystream positions of the encrypted messages of one session in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CipherLayout {
    pub spans: Vec<FrameSpan>,
}

impl CipherLayout {
    /// The session begins with the reader answer two messages after the
    /// first plaintext authentication request. A trace without one is taken
    /// to be a fragment whose first message starts the keystream. The layout
    /// stops at a nested authentication, which starts a new session.
    pub fn from_trace(t: &Trace) -> CipherLayout {
        match t.entries.iter().position(is_auth_request) {
            Some(i) => Self::starting_at(t, t.entries[i].seq + 2, 0),
            None => Self::starting_at(t, 1, 0),
        }
    }

    /// Layout whose message `seq` starts at keystream index `start`.
    pub fn starting_at(t: &Trace, seq: u32, start: usize) -> CipherLayout {
        let mut spans = Vec::new();
        let mut pos = start;
        let from = (seq as usize).saturating_sub(1);
        let es = t.entries.get(from..).unwrap_or_default();
        for (i, e) in es.iter().enumerate() {
            if e.sender == Sender::Pcd && e.len() == 1 {
                break;
            }
            let shape = FrameShape::of_entry(e);
            spans.push(FrameSpan { seq: e.seq, start: pos, shape });
            pos += shape.data_bits();
            let nested = e.sender == Sender::Pcd
                && e.len() == 4
                && es.get(i + 1).is_some_and(|r| r.sender == Sender::Tag && r.len() == 4)
                && i > 1;
            if nested {
                break;
            }
        }
        CipherLayout { spans }
    }

    /// Consecutive shapes starting at `start`.
    pub fn from_shapes(start: usize, shapes: &[FrameShape]) -> CipherLayout {
        let mut pos = start;
        let spans = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let span = FrameSpan { seq: i as u32 + 1, start: pos, shape: *s };
                pos += s.data_bits();
                span
            })
            .collect();
        CipherLayout { spans }
    }

    pub fn span(&self, seq: u32) -> Option<&FrameSpan> {
        self.spans.iter().find(|s| s.seq == seq)
    }

    /// Index just past the last message.
    pub fn end(&self) -> usize {
        self.spans.last().map_or(0, |s| s.start + s.shape.data_bits())
    }
}

/// A run of known plaintext bytes inside one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownSegment {
    pub seq: u32,
    pub offset: usize,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnownPlaintext {
    pub segments: Vec<KnownSegment>,
}

impl KnownPlaintext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, seq: u32, offset: usize, bytes: &[u8]) -> Self {
        self.segments.push(KnownSegment { seq, offset, bytes: bytes.to_vec() });
        self
    }
}

/// Keystream bits learned so far, with conflict detection.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RecoveredKeystream {
    bits: Vec<Option<bool>>,
    from_data: BTreeSet<usize>,
    from_parity: BTreeSet<usize>,
}

impl RecoveredKeystream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keystream known contiguously on `range`.
    pub fn from_bits(start: usize, bits: &[bool]) -> Self {
        let mut ks = Self::new();
        for (i, b) in bits.iter().enumerate() {
            ks.learn(start + i, *b).expect("fresh keystream");
        }
        ks
    }

    pub fn bit(&self, index: usize) -> Option<bool> {
        self.bits.get(index).copied().flatten()
    }

    fn record(&mut self, index: usize, bit: bool) -> Result<(), AttackError> {
        if self.bits.len() <= index {
            self.bits.resize(index + 1, None);
        }
        match self.bits[index] {
            Some(b) if b != bit => Err(AttackError::Conflict { index }),
            _ => {
                self.bits[index] = Some(bit);
                Ok(())
            }
        }
    }

    /// Records the keystream bit of data position `index`.
    pub fn learn(&mut self, index: usize, bit: bool) -> Result<(), AttackError> {
        self.record(index, bit)?;
        self.from_data.insert(index);
        Ok(())
    }

    /// Records what a parity position revealed about data position `index`.
    pub fn learn_parity(&mut self, index: usize, bit: bool) -> Result<(), AttackError> {
        self.record(index, bit)?;
        self.from_parity.insert(index);
        Ok(())
    }

    /// Learns from an encrypted frame at `start` whose plaintext bytes are
    /// partly known. Known bytes reveal their data keystream and, through
    /// their parity bit, the keystream bit of the next data position.
    pub fn learn_frame(&mut self, start: usize, wire: &WireBits, plain: &[Option<u8>]) -> Result<(), AttackError> {
        let d = decode_frame(wire).map_err(|_| AttackError::InvalidArgument("malformed frame"))?;
        if plain.len() > d.bytes.len() {
            return Err(AttackError::InvalidArgument("more plaintext than ciphertext"));
        }
        let width = if d.kind == FrameKind::Standard { 8 } else { wire.data_len() };
        for (j, p) in plain.iter().enumerate() {
            let Some(p) = *p else { continue };
            let c = d.bytes[j];
            let base = start + width * j;
            for i in 0..width {
                self.learn(base + i, ((c ^ p) >> i) & 1 == 1)?;
            }
            if d.kind == FrameKind::Standard {
                let received = odd_parity(c) ^ !d.parity_ok[j];
                self.learn_parity(base + 8, received ^ odd_parity(p))?;
            }
        }
        Ok(())
    }

    /// Learns from a frame whose plaintext is entirely known.
    pub fn learn_known_frame(&mut self, start: usize, wire: &WireBits, plain: &[u8]) -> Result<(), AttackError> {
        let plain: Vec<Option<u8>> = plain.iter().map(|b| Some(*b)).collect();
        self.learn_frame(start, wire, &plain)
    }

    /// Merges another recovery into this one.
    pub fn merge(&mut self, other: &RecoveredKeystream) -> Result<(), AttackError> {
        for (i, b) in other.bits.iter().enumerate() {
            if let Some(b) = b {
                self.record(i, *b)?;
            }
        }
        self.from_data.extend(other.from_data.iter().copied());
        self.from_parity.extend(other.from_parity.iter().copied());
        Ok(())
    }

    /// Number of known data-bit keystream positions.
    pub fn known_bits(&self) -> usize {
        self.bits.iter().filter(|b| b.is_some()).count()
    }

    /// Keystream bits observed on the wire: data positions plus parity
    /// positions.
    pub fn observed_bits(&self) -> usize {
        self.from_data.len() + self.from_parity.len()
    }

    /// First unknown index at or after `from`.
    pub fn first_gap(&self, from: usize) -> usize {
        (from..).find(|i| self.bit(*i).is_none()).expect("finite")
    }

    /// Maximal runs of known bits.
    pub fn coverage(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for i in 0..=self.bits.len() {
            match (self.bit(i).is_some(), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        runs
    }

    /// The data-bit view: one entry per index from 0.
    pub fn stripped(&self) -> &[Option<bool>] {
        &self.bits
    }

    /// Known keystream in wire order for the messages of `layout`, with each
    /// parity position carrying the bit it was encrypted with. Stops at the
    /// first gap.
    pub fn annotated(&self, layout: &CipherLayout) -> AnnotatedKeystream {
        let mut out = AnnotatedKeystream { origin_offset: layout.spans.first().map_or(0, |s| s.start), ..Default::default() };
        for span in &layout.spans {
            let (bytes, width, parity) = match span.shape {
                FrameShape::Standard(n) => (n, 8, true),
                FrameShape::Nibble => (1, 4, false),
            };
            for j in 0..bytes {
                let base = span.start + width * j;
                for i in 0..width {
                    let Some(b) = self.bit(base + i) else { return out };
                    out.bits.push(b);
                    out.kinds.push(BitKind::Data);
                }
                if parity {
                    let Some(b) = self.bit(base + 8) else { return out };
                    out.bits.push(b);
                    out.kinds.push(BitKind::Parity);
                }
            }
        }
        out
    }

    /// Wire-position keystream for a frame of `shape` at `start`.
    pub fn wire_bits(&self, start: usize, shape: FrameShape) -> Result<Vec<bool>, AttackError> {
        let get = |i: usize| self.bit(i).ok_or(AttackError::Gap { index: i });
        let mut out = Vec::new();
        match shape {
            FrameShape::Standard(n) => {
                for j in 0..n {
                    for i in 0..8 {
                        out.push(get(start + 8 * j + i)?);
                    }
                    out.push(get(start + 8 * j + 8)?);
                }
            }
            FrameShape::Nibble => {
                for i in 0..4 {
                    out.push(get(start + i)?);
                }
            }
        }
        Ok(out)
    }

    /// Encrypts (or decrypts) a whole frame at `start`.
    pub fn apply(&self, start: usize, wire: &WireBits) -> Result<WireBits, AttackError> {
        let shape = FrameShape::of_wire(wire).ok_or(AttackError::InvalidArgument("short frames are never encrypted"))?;
        let ks = self.wire_bits(start, shape)?;
        let mut out = wire.clone();
        for (i, k) in ks.iter().enumerate() {
            if *k {
                out.flip(i);
            }
        }
        Ok(out)
    }

    /// Encrypts plaintext bytes as a standard frame at `start`.
    pub fn encrypt_bytes(&self, start: usize, plain: &[u8]) -> Result<WireBits, AttackError> {
        let wire = encode_frame(plain, FrameKind::Standard).map_err(|_| AttackError::InvalidArgument("empty frame"))?;
        self.apply(start, &wire)
    }

    /// Decrypts the bytes of `wire` whose keystream is known. For standard
    /// frames the second element says whether the decrypted parity is right,
    /// when that can be told.
    pub fn decrypt_partial(&self, start: usize, wire: &WireBits) -> (Vec<Option<u8>>, Vec<Option<bool>>) {
        let Ok(d) = decode_frame(wire) else { return (Vec::new(), Vec::new()) };
        let width = if d.kind == FrameKind::Standard { 8 } else { wire.data_len() };
        let mut bytes = Vec::with_capacity(d.bytes.len());
        let mut parity = Vec::with_capacity(d.bytes.len());
        for (j, c) in d.bytes.iter().enumerate() {
            let base = start + width * j;
            let k: Option<u8> = (0..width).try_fold(0u8, |acc, i| self.bit(base + i).map(|b| acc | (u8::from(b) << i)));
            let p = k.map(|k| c ^ k);
            bytes.push(p);
            let ok = match (d.kind, p, self.bit(base + 8)) {
                (FrameKind::Standard, Some(p), Some(kp)) => Some(odd_parity(*c) ^ !d.parity_ok[j] ^ kp == odd_parity(p)),
                _ => None,
            };
            parity.push(ok);
        }
        (bytes, parity)
    }
}

/// Recovers keystream from known plaintext in an eavesdropped trace.
pub fn recover_keystream(trace: &Trace, known: &KnownPlaintext) -> Result<RecoveredKeystream, AttackError> {
    let layout = CipherLayout::from_trace(trace);
    recover_with_layout(trace, &layout, known)
}

/// As [`recover_keystream`] with an explicit layout.
pub fn recover_with_layout(
    trace: &Trace,
    layout: &CipherLayout,
    known: &KnownPlaintext,
) -> Result<RecoveredKeystream, AttackError> {
    let mut ks = RecoveredKeystream::new();
    for seg in &known.segments {
        let span = layout.span(seg.seq).ok_or(AttackError::NotEncrypted { seq: seg.seq })?;
        let entry = trace.get(seg.seq).ok_or(AttackError::NotEncrypted { seq: seg.seq })?;
        if seg.offset + seg.bytes.len() > entry.len() {
            return Err(AttackError::InvalidArgument("known plaintext runs past the end of its message"));
        }
        let mut plain = vec![None; seg.offset];
        plain.extend(seg.bytes.iter().map(|b| Some(*b)));
        ks.learn_frame(span.start, &entry.to_wire(), &plain)?;
    }
    Ok(ks)
}

/// Lays recovered keystream over a sequence of frame shapes starting at
/// `start`: data positions take the next bit and advance, parity positions
/// take the next bit without advancing.
pub fn remap_keystream(ks: &RecoveredKeystream, start: usize, shapes: &[FrameShape]) -> Result<Vec<Vec<bool>>, AttackError> {
    let layout = CipherLayout::from_shapes(start, shapes);
    layout.spans.iter().map(|s| ks.wire_bits(s.start, s.shape)).collect()
}

/// Turns the ciphertext of `old_plain` into the ciphertext of `new_plain`
/// under the same keystream, by XORing the plaintext difference into the
/// data bits and fixing each parity bit accordingly.
pub fn morph_command(cipher_frame: &WireBits, old_plain: &[u8], new_plain: &[u8]) -> Result<WireBits, AttackError> {
    if old_plain.len() != new_plain.len() {
        return Err(AttackError::InvalidArgument("plaintexts differ in length"));
    }
    if cipher_frame.kind() != Some(FrameKind::Standard) || cipher_frame.byte_len() != old_plain.len() {
        return Err(AttackError::InvalidArgument("frame and plaintext differ in length"));
    }
    let mut out = cipher_frame.clone();
    for (j, (a, b)) in old_plain.iter().zip(new_plain).enumerate() {
        let diff = a ^ b;
        for i in 0..8 {
            if (diff >> i) & 1 == 1 {
                out.flip(9 * j + i);
            }
        }
        if diff.count_ones() % 2 == 1 {
            out.flip(9 * j + 8);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptedEntry {
    pub seq: u32,
    pub sender: Sender,
    /// `None` where the keystream is unknown.
    pub bytes: Vec<Option<u8>>,
    /// Parity check after decryption, where it can be told.
    pub parity_ok: Vec<Option<bool>>,
    pub encrypted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecryptedTrace {
    pub entries: Vec<DecryptedEntry>,
    pub warnings: Vec<String>,
}

impl fmt::Display for DecryptedTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            write!(f, "{:02} : {}", e.seq, e.sender)?;
            for (b, ok) in e.bytes.iter().zip(&e.parity_ok) {
                match b {
                    Some(b) => write!(f, " {b:02x}")?,
                    None => f.write_str(" ??")?,
                }
                if *ok == Some(false) {
                    f.write_str("!")?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Decrypts what the keystream covers. Plaintext messages before the
/// session are passed through. Many parity failures among decrypted bytes
/// mean the keystream is probably misaligned, which is reported as a
/// warning.
pub fn decrypt_trace(trace: &Trace, ks: &RecoveredKeystream) -> DecryptedTrace {
    let layout = CipherLayout::from_trace(trace);
    let mut out = DecryptedTrace::default();
    let (mut checked, mut failed) = (0usize, 0usize);
    for e in &trace.entries {
        let (bytes, parity_ok, encrypted) = match layout.span(e.seq) {
            Some(span) => {
                let (b, p) = ks.decrypt_partial(span.start, &e.to_wire());
                (b, p, true)
            }
            None => (
                e.bytes().iter().map(|b| Some(b.value)).collect(),
                e.bytes().iter().map(|b| Some(!b.anomaly || e.len() == 1)).collect(),
                false,
            ),
        };
        if encrypted {
            for ok in parity_ok.iter().flatten() {
                checked += 1;
                failed += usize::from(!ok);
            }
        }
        out.entries.push(DecryptedEntry { seq: e.seq, sender: e.sender, bytes, parity_ok, encrypted });
    }
    if checked >= 8 && failed * 4 > checked {
        out.warnings.push(format!("{failed} of {checked} decrypted parity bits are wrong; the keystream is probably misaligned"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::with_crc;
    use crate::tracefmt::parse_trace;

    // Three rows of a recorded increment: the command, its operand and the
    // transfer, with keystream recovered from a read in the same session.
    const INCREMENT: &str = "0: 01 : PCD 4c 88 31 bc!\n";

    #[test]
    fn increment_keystream_from_known_command() {
        let t = parse_trace(INCREMENT).unwrap();
        let ks = recover_keystream(&t, &KnownPlaintext::new().with(1, 0, &[0xc1, 0x04, 0xf6, 0x8b])).unwrap();
        let bytes: Vec<u8> =
            (0..4).map(|j| (0..8).fold(0u8, |acc, i| acc | (u8::from(ks.bit(8 * j + i).unwrap()) << i))).collect();
        assert_eq!(bytes, [0x8d, 0x8c, 0xc7, 0x37]);
        assert_eq!(ks.observed_bits(), 36);
        assert_eq!(ks.bit(32), Some(false));
        let layout = CipherLayout::from_trace(&t);
        assert!(ks.annotated(&layout).parity_rule_holds());
        // decrypting with it gives the command back
        let d = decrypt_trace(&t, &ks);
        assert_eq!(d.entries[0].bytes, [Some(0xc1), Some(0x04), Some(0xf6), Some(0x8b)]);
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn empty_knowledge_gives_empty_coverage() {
        let t = parse_trace(INCREMENT).unwrap();
        let ks = recover_keystream(&t, &KnownPlaintext::new()).unwrap();
        assert!(ks.coverage().is_empty());
        assert_eq!(decrypt_trace(&t, &ks).entries[0].bytes, [None; 4]);
    }

    #[test]
    fn conflicting_knowledge_is_rejected() {
        let t = parse_trace(INCREMENT).unwrap();
        let known = KnownPlaintext::new().with(1, 0, &[0xc1, 0x04]).with(1, 1, &[0x05]);
        assert!(matches!(recover_keystream(&t, &known), Err(AttackError::Conflict { .. })));
    }

    #[test]
    fn morph_examples() {
        let old = with_crc(&[0x30, 0x00]);
        let new = with_crc(&[0x30, 0x03]);
        let ks = RecoveredKeystream::from_bits(0, &[true, false, true, true, false, false, true, false].repeat(5));
        let c = ks.encrypt_bytes(0, &old).unwrap();
        assert_eq!(morph_command(&c, &old, &old).unwrap(), c);
        let m = morph_command(&c, &old, &new).unwrap();
        assert_eq!(m, ks.encrypt_bytes(0, &new).unwrap());
        let changed: Vec<usize> = (0..4).filter(|j| (0..9).any(|i| m.bits()[9 * j + i] != c.bits()[9 * j + i])).collect();
        assert_eq!(changed, [1, 2, 3]);
        assert!(morph_command(&c, &old, &new[..3]).is_err());
    }

    #[test]
    fn remap_needs_coverage() {
        let ks = RecoveredKeystream::from_bits(96, &[false; 40]);
        let frames = remap_keystream(&ks, 96, &[FrameShape::Standard(4), FrameShape::Nibble]).unwrap();
        assert_eq!(frames[0].len(), 36);
        assert_eq!(frames[1].len(), 4);
        assert_eq!(
            remap_keystream(&ks, 96, &[FrameShape::Standard(4), FrameShape::Standard(1)]),
            Err(AttackError::Gap { index: 136 })
        );
    }
}
