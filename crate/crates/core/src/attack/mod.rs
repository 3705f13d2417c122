//! Attacks that need no key: nonce replay, keystream recovery and remapping,
//! command morphing, sector dumps, writes, command discovery and keystream
//! extension through short answers.
//!
//! Everything here talks to a card only through
//! [`AttackerPort`](crate::session::AttackerPort) and learns about the
//! protocol only from traces and public datasheet formats. It does not
//! depend on how the stream cipher, the nonce generator or the card are
//! implemented, so swapping the cipher changes nothing in this module.

use alloc::string::String;

mod cost;
mod discover;
mod dump;
mod extend;
mod keystream;
mod replay;
mod write;

pub use cost::{estimate_bruteforce, reappearance_interval, BIT_PERIOD_SECONDS};
pub use discover::{discover_commands, Discovery};
pub use dump::{read_sector, read_sector_zero, Confidence, SectorDump};
pub use extend::extend_keystream_via_ack;
pub use keystream::{
    decrypt_trace, morph_command, recover_keystream, remap_keystream, CipherLayout, DecryptedEntry, DecryptedTrace, FrameShape,
    FrameSpan, KnownPlaintext, KnownSegment, RecoveredKeystream,
};
pub use replay::{replay_until_nonce, select_card, AttackOptions, ReplayContext, ReplayedSession, Strategy};
pub use write::{write_without_key, WriteReport};

/// Data-bit index of the first bit of the reader's authentication answer.
pub const READER_ANSWER_START: usize = 0;
/// Data-bit index of the card's authentication answer.
pub const CARD_ANSWER_START: usize = 64;
/// Data-bit index of the first command after authentication.
pub const FIRST_COMMAND_START: usize = 96;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttackError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("keystream bit {index} is known with two different values")]
    Conflict { index: usize },
    #[error("keystream bit {index} is not known")]
    Gap { index: usize },
    #[error("message #{seq:02} is not part of the encrypted session")]
    NotEncrypted { seq: u32 },
    #[error("trace unusable: {0}")]
    MalformedTrace(String),
    #[error("no matching nonce after {attempts} attempts")]
    RetryLimit { attempts: u64 },
    #[error("trace authenticates sector {found}, not sector {expected}")]
    WrongSector { expected: usize, found: usize },
    #[error("card answered {0:#x}")]
    Nack(u8),
    #[error("card did not answer the {0}")]
    NoAnswer(&'static str),
    #[error("not applicable: {0}")]
    NotApplicable(&'static str),
    #[error("verification failed: {0}")]
    Verification(String),
}
