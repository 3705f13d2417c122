//! The textual trace format.
//!
//! One line per message:
//!
//! ```text
//! 16504: 07 : PCD 60 04 d1 3d
//! 6952: 09 : PCD c4! 94 a1 d2 6e! 96 86! 42
//! ```
//!
//! The first column is the number of ETU since the previous message, then the
//! sequence number and the sender. A `!` after a byte means the received
//! parity bit was not the odd parity of the received byte. Inside an
//! encrypted session that usually just means the parity bit was encrypted,
//! and the flag carries keystream information.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use crate::framing::{
    check_crc, decode_frame, encode_frame, odd_parity, standard_with_parity, FrameKind, FramingError, WireBits, AUTH_KEY_A,
    AUTH_KEY_B, REQA,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("trace entry has no bytes")]
    EmptyEntry,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: expected sequence number {expected:02}, found {found:02}")]
    Sequence { line: usize, expected: u32, found: u32 },
    #[error(transparent)]
    Framing(#[from] FramingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sender {
    Pcd,
    Tag,
}

impl Sender {
    pub fn as_str(self) -> &'static str {
        match self {
            Sender::Pcd => "PCD",
            Sender::Tag => "TAG",
        }
    }
}

impl fmt::Display for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sender {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "PCD" => Ok(Sender::Pcd),
            "TAG" => Ok(Sender::Tag),
            _ => Err(()),
        }
    }
}

/// A received byte and whether its parity bit looked wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceByte {
    pub value: u8,
    pub anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub etu_delta: u64,
    pub seq: u32,
    pub sender: Sender,
    bytes: Vec<TraceByte>,
}

impl TraceEntry {
    pub fn new(etu_delta: u64, seq: u32, sender: Sender, bytes: Vec<TraceByte>) -> Result<TraceEntry, TraceError> {
        if bytes.is_empty() {
            return Err(TraceError::EmptyEntry);
        }
        Ok(TraceEntry { etu_delta, seq, sender, bytes })
    }

    /// Entry with no parity anomalies.
    pub fn clear(etu_delta: u64, seq: u32, sender: Sender, bytes: &[u8]) -> Result<TraceEntry, TraceError> {
        Self::new(etu_delta, seq, sender, bytes.iter().map(|b| TraceByte { value: *b, anomaly: false }).collect())
    }

    pub fn bytes(&self) -> &[TraceByte] {
        &self.bytes
    }

    pub fn values(&self) -> Vec<u8> {
        self.bytes.iter().map(|b| b.value).collect()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn has_anomaly(&self) -> bool {
        self.bytes.iter().any(|b| b.anomaly)
    }

    /// The frame as it was on the air. A one-byte entry is a short frame:
    /// 7 bits from the reader, 4 bits from the card.
    pub fn to_wire(&self) -> WireBits {
        if self.bytes.len() == 1 {
            let (kind, mask) = match self.sender {
                Sender::Pcd => (FrameKind::Short7, 0x7f),
                Sender::Tag => (FrameKind::Nibble4, 0x0f),
            };
            return encode_frame(&[self.bytes[0].value & mask], kind).expect("short frame");
        }
        let values = self.values();
        let parity: Vec<bool> = self.bytes.iter().map(|b| odd_parity(b.value) ^ b.anomaly).collect();
        standard_with_parity(&values, &parity).expect("one parity bit per byte")
    }

    pub fn from_wire(etu_delta: u64, seq: u32, sender: Sender, wire: &WireBits) -> Result<TraceEntry, TraceError> {
        let d = decode_frame(wire)?;
        let bytes = match d.kind {
            FrameKind::Standard => {
                d.bytes.iter().zip(&d.parity_ok).map(|(v, ok)| TraceByte { value: *v, anomaly: !ok }).collect()
            }
            _ => d.bytes.iter().map(|v| TraceByte { value: *v, anomaly: false }).collect(),
        };
        Self::new(etu_delta, seq, sender, bytes)
    }
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:02} : {}", self.etu_delta, self.seq, self.sender)?;
        for b in &self.bytes {
            write!(f, " {:02x}", b.value)?;
            if b.anomaly {
                f.write_char('!')?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    /// Builds a trace, checking that sequence numbers run 1, 2, 3, ...
    pub fn new(entries: Vec<TraceEntry>) -> Result<Trace, TraceError> {
        for (i, e) in entries.iter().enumerate() {
            let expected = i as u32 + 1;
            if e.seq != expected {
                return Err(TraceError::Sequence { line: i + 1, expected, found: e.seq });
            }
        }
        Ok(Trace { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry with sequence number `seq`.
    pub fn get(&self, seq: u32) -> Option<&TraceEntry> {
        self.entries.get((seq as usize).checked_sub(1)?)
    }
}

/// Renders a trace, one line per entry, each terminated by a newline.
pub fn emit_trace(t: &Trace) -> String {
    let mut out = String::new();
    for e in &t.entries {
        let _ = writeln!(out, "{e}");
    }
    out
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&emit_trace(self))
    }
}

/// Parses the trace format. Blank lines and lines starting with `#` are
/// skipped; runs of whitespace are treated as a single space.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entry = parse_line(trimmed).map_err(|reason| TraceError::Malformed { line, reason })?;
        let expected = entries.len() as u32 + 1;
        if entry.seq != expected {
            return Err(TraceError::Sequence { line, expected, found: entry.seq });
        }
        entries.push(entry);
    }
    Ok(Trace { entries })
}

fn parse_line(line: &str) -> Result<TraceEntry, String> {
    let (etu, rest) = line.split_once(':').ok_or("missing ':' after ETU")?;
    let (seq, rest) = rest.split_once(':').ok_or("missing ':' after sequence number")?;
    let etu_delta = etu.trim().parse::<u64>().map_err(|_| format!("bad ETU value {:?}", etu.trim()))?;
    let seq = seq.trim().parse::<u32>().map_err(|_| format!("bad sequence number {:?}", seq.trim()))?;
    let mut words = rest.split_whitespace();
    let sender = words.next().ok_or("missing sender")?;
    let sender = sender.parse::<Sender>().map_err(|_| format!("unknown sender {sender:?}"))?;
    let mut bytes = Vec::new();
    for w in words {
        let (hex, anomaly) = match w.strip_suffix('!') {
            Some(h) => (h, true),
            None => (w, false),
        };
        if hex.len() != 2 {
            return Err(format!("bad byte {w:?}"));
        }
        let value = u8::from_str_radix(hex, 16).map_err(|_| format!("bad byte {w:?}"))?;
        bytes.push(TraceByte { value, anomaly });
    }
    TraceEntry::new(etu_delta, seq, sender, bytes).map_err(|e| format!("{e}"))
}

/// What a group of consecutive messages does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseLabel {
    Anticollision,
    Authentication,
    Read,
    Write,
    /// Increment, decrement or restore, optionally followed by a transfer.
    ValueOperation,
    /// A lone command answered by a 4-bit ACK/NACK (e.g. a transfer).
    Command,
    Unknown,
}

/// A labelled, inclusive run of sequence numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracePhase {
    pub label: PhaseLabel,
    pub first_seq: u32,
    pub last_seq: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmentation {
    pub phases: Vec<TracePhase>,
    pub warnings: Vec<String>,
}

/// Whether an entry is a plaintext authentication request `60|61 block CRC`.
pub fn is_auth_request(e: &TraceEntry) -> bool {
    let v = e.values();
    e.sender == Sender::Pcd && v.len() == 4 && !e.has_anomaly() && (v[0] == AUTH_KEY_A || v[0] == AUTH_KEY_B) && check_crc(&v)
}

fn is_reqa(e: &TraceEntry) -> bool {
    e.sender == Sender::Pcd && e.len() == 1 && e.bytes[0].value == REQA
}

/// Splits a trace into anticollision, authentication and command phases
/// using message sizes only. Labels are advisory.
pub fn segment_trace(t: &Trace) -> Segmentation {
    let mut seg = Segmentation::default();
    let es = &t.entries;
    let shape = |i: usize| es.get(i).map(|e| (e.sender, e.len()));
    let mut i = 0;
    while i < es.len() {
        let (label, n) = if is_reqa(&es[i]) {
            let n = es[i..].iter().position(is_auth_request).unwrap_or(es.len() - i);
            (PhaseLabel::Anticollision, n)
        } else if is_auth_request(&es[i]) {
            (PhaseLabel::Authentication, 4)
        } else if shape(i) == Some((Sender::Pcd, 4)) {
            match (shape(i + 1), shape(i + 2), shape(i + 3), shape(i + 4)) {
                (Some((Sender::Tag, 4)), Some((Sender::Pcd, 8)), ..) => (PhaseLabel::Authentication, 4),
                (Some((Sender::Tag, 1)), Some((Sender::Pcd, 18)), ..) => (PhaseLabel::Write, 4),
                (Some((Sender::Tag, 1)), Some((Sender::Pcd, 6)), Some((Sender::Pcd, 4)), Some((Sender::Tag, 1))) => {
                    (PhaseLabel::ValueOperation, 5)
                }
                (Some((Sender::Tag, 1)), Some((Sender::Pcd, 6)), ..) => (PhaseLabel::ValueOperation, 3),
                (Some((Sender::Tag, 1)), ..) => (PhaseLabel::Command, 2),
                (Some((Sender::Tag, n)), ..) if n > 4 => {
                    if n != 18 {
                        seg.warnings.push(format!("#{:02}: read answer has {n} bytes, expected 18", es[i + 1].seq));
                    }
                    (PhaseLabel::Read, 2)
                }
                _ => (PhaseLabel::Unknown, 1),
            }
        } else {
            (PhaseLabel::Unknown, 1)
        };
        let n = n.clamp(1, es.len() - i);
        if label == PhaseLabel::Unknown {
            seg.warnings.push(format!("#{:02}: unrecognised message", es[i].seq));
        }
        match seg.phases.last_mut() {
            Some(last) if label == PhaseLabel::Unknown && last.label == PhaseLabel::Unknown => {
                last.last_seq = es[i + n - 1].seq;
            }
            _ => seg.phases.push(TracePhase { label, first_seq: es[i].seq, last_seq: es[i + n - 1].seq }),
        }
        i += n;
    }
    seg
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn emit_examples() {
        let e = TraceEntry::clear(64, 2, Sender::Tag, &[0x04, 0x00]).unwrap();
        assert_eq!(e.to_string(), "64: 02 : TAG 04 00");
        let e = TraceEntry::new(6952, 9, Sender::Pcd, vec![TraceByte { value: 0xc4, anomaly: true }]).unwrap();
        assert_eq!(e.to_string(), "6952: 09 : PCD c4!");
        assert_eq!(TraceEntry::new(0, 1, Sender::Pcd, Vec::new()), Err(TraceError::EmptyEntry));
    }

    #[test]
    fn parse_examples() {
        let t = parse_trace("64: 01 : TAG 04 00\n").unwrap();
        assert_eq!(t.entries[0], TraceEntry::clear(64, 1, Sender::Tag, &[4, 0]).unwrap());
        let t = parse_trace("  16305:   01 :  PCD   93  70\n\n# comment\n").unwrap();
        assert_eq!(t.entries[0].values(), [0x93, 0x70]);
        assert!(matches!(parse_trace("0: 01 : PCD xx yy"), Err(TraceError::Malformed { line: 1, .. })));
        assert!(matches!(parse_trace("0: 01 : PCD 26\n0: 03 : TAG 04"), Err(TraceError::Sequence { line: 2, .. })));
        assert!(matches!(parse_trace("0: 01 : RDR 26"), Err(TraceError::Malformed { .. })));
        assert!(parse_trace("").unwrap().is_empty());
    }

    #[test]
    fn wire_round_trip_keeps_anomalies() {
        let e = parse_trace("0: 01 : PCD c4! 94 a1 d2 6e! 96 86! 42").unwrap().entries.remove(0);
        let w = e.to_wire();
        assert_eq!(w.len(), 72);
        assert_eq!(TraceEntry::from_wire(0, 1, Sender::Pcd, &w).unwrap(), e);
        let reqa = TraceEntry::clear(0, 1, Sender::Pcd, &[0x26]).unwrap();
        assert_eq!(reqa.to_wire().len(), 7);
        let ack = TraceEntry::clear(0, 1, Sender::Tag, &[0x0a]).unwrap();
        assert_eq!(ack.to_wire().len(), 4);
    }

    #[test]
    fn segments_anticollision_only() {
        let t = parse_trace("0: 01 : PCD 26\n64: 02 : TAG 04 00").unwrap();
        let s = segment_trace(&t);
        assert_eq!(s.phases, [TracePhase { label: PhaseLabel::Anticollision, first_seq: 1, last_seq: 2 }]);
    }

    #[test]
    fn segments_recorded_read_without_anticollision() {
        let t = parse_trace(
            "0: 01 : PCD 60 03 6e 49\n0: 02 : TAG e0 92 93 98\n0: 03 : PCD ad e7 96! 48! 20! 22 df 93\n\
             0: 04 : TAG bf 06 91! 82\n0: 05 : PCD b5! 05! 47 3f\n0: 06 : TAG 3f 14! 4f e9! 86 38! 96! 85 3e!",
        )
        .unwrap();
        let s = segment_trace(&t);
        let labels: Vec<_> = s.phases.iter().map(|p| (p.label, p.first_seq, p.last_seq)).collect();
        assert_eq!(labels, [(PhaseLabel::Authentication, 1, 4), (PhaseLabel::Read, 5, 6)]);
        assert_eq!(s.warnings.len(), 1);
    }
}
