//! Post-authentication command codes and the 4-bit answers.
//!
//! The card and the attack toolkit both read codes from here, so a card
//! personalized with a custom table and the discovery attack agree on one
//! source of truth.

use core::fmt;

pub const ACK: u8 = 0xa;
pub const NACK_NOT_ALLOWED: u8 = 0x4;
pub const NACK_TRANSMISSION: u8 = 0x5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    Read,
    Write,
    Increment,
    Decrement,
    Restore,
    Transfer,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Read, Command::Write, Command::Increment, Command::Decrement, Command::Restore, Command::Transfer];

    pub fn name(self) -> &'static str {
        match self {
            Command::Read => "read",
            Command::Write => "write",
            Command::Increment => "increment",
            Command::Decrement => "decrement",
            Command::Restore => "restore",
            Command::Transfer => "transfer",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn is_value_op(self) -> bool {
        matches!(self, Command::Increment | Command::Decrement | Command::Restore)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Command byte for every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommandTable {
    pub read: u8,
    pub write: u8,
    pub increment: u8,
    pub decrement: u8,
    pub restore: u8,
    pub transfer: u8,
}

impl Default for CommandTable {
    fn default() -> Self {
        CommandTable { read: 0x30, write: 0xa0, increment: 0xc1, decrement: 0xc0, restore: 0xc2, transfer: 0xb0 }
    }
}

impl CommandTable {
    pub fn code(&self, cmd: Command) -> u8 {
        match cmd {
            Command::Read => self.read,
            Command::Write => self.write,
            Command::Increment => self.increment,
            Command::Decrement => self.decrement,
            Command::Restore => self.restore,
            Command::Transfer => self.transfer,
        }
    }

    pub fn set(&mut self, cmd: Command, code: u8) {
        match cmd {
            Command::Read => self.read = code,
            Command::Write => self.write = code,
            Command::Increment => self.increment = code,
            Command::Decrement => self.decrement = code,
            Command::Restore => self.restore = code,
            Command::Transfer => self.transfer = code,
        }
    }

    pub fn lookup(&self, code: u8) -> Option<Command> {
        Command::ALL.into_iter().find(|c| self.code(*c) == code)
    }

    /// Codes must be pairwise distinct and must not collide with the
    /// plaintext authentication requests.
    pub fn is_valid(&self) -> bool {
        let codes = Command::ALL.map(|c| self.code(c));
        codes.iter().enumerate().all(|(i, a)| {
            *a != crate::framing::AUTH_KEY_A && *a != crate::framing::AUTH_KEY_B && codes[i + 1..].iter().all(|b| a != b)
        })
    }
}
