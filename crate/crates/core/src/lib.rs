//! Bit-accurate simulation of a MIFARE-Classic-style contactless card, a
//! genuine reader, a passive eavesdropper, and an attack toolkit that recovers
//! keystream and reads or modifies card memory without knowing the sector key.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! file system lives in the companion `mfreplay` crate.
//!
//! Layering:
//!
//! * [`framing`] – ISO 14443-A style frames: odd parity, CRC_A, short frames.
//! * [`keystream`] – the bitwise encryption law shared by card, reader and
//!   attacker (parity bits peek the next keystream bit without consuming it).
//! * [`crypto`] – the card's 16-bit nonce LFSR and a pluggable stand-in stream
//!   cipher.
//! * [`layout`] – datasheet formats: sector geometry, access bits, value blocks.
//! * [`card`] – card memory and the card state machine.
//! * [`session`] – simulated RF channel, genuine reader, eavesdropper and the
//!   restricted [`session::AttackerPort`].
//! * [`tracefmt`] – the textual trace interchange format.
//! * [`attack`] – replay, keystream recovery/mapping, sector dumps, writes,
//!   command discovery. This module only talks to the card through
//!   [`session::AttackerPort`] and never touches [`crypto`] or [`card`].
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod card;
pub mod commands;
pub mod crypto;
pub mod framing;
pub mod keystream;
pub mod layout;
pub mod session;
pub mod tracefmt;
