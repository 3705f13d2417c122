//! Data formats from the card datasheet: sector geometry, access
//! condition bits and value blocks. Public knowledge, shared by the card and
//! the attack toolkit.

use thiserror::Error;

pub const BLOCK_SIZE: usize = 16;
pub type Block = [u8; BLOCK_SIZE];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("access condition copies disagree")]
    InconsistentAccessBits,
    #[error("value block copies disagree")]
    NotAValueBlock,
    #[error("block {0} does not exist")]
    NoSuchBlock(usize),
    #[error("sector {0} does not exist")]
    NoSuchSector(usize),
    #[error("access code {0:#b} does not fit in three bits")]
    BadAccessCode(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Profile {
    Classic1K,
    #[default]
    Classic4K,
}

impl Profile {
    pub fn sector_count(self) -> usize {
        match self {
            Profile::Classic1K => 16,
            Profile::Classic4K => 40,
        }
    }

    pub fn block_count(self) -> usize {
        match self {
            Profile::Classic1K => 64,
            Profile::Classic4K => 256,
        }
    }

    pub fn blocks_in_sector(self, sector: usize) -> usize {
        if self == Profile::Classic4K && sector >= 32 {
            16
        } else {
            4
        }
    }

    pub fn first_block(self, sector: usize) -> usize {
        if sector < 32 {
            sector * 4
        } else {
            128 + (sector - 32) * 16
        }
    }

    pub fn trailer_block(self, sector: usize) -> usize {
        self.first_block(sector) + self.blocks_in_sector(sector) - 1
    }

    pub fn sector_of(self, block: usize) -> Option<usize> {
        if block >= self.block_count() {
            None
        } else if block < 128 {
            Some(block / 4)
        } else {
            Some(32 + (block - 128) / 16)
        }
    }

    pub fn is_trailer(self, block: usize) -> bool {
        self.sector_of(block).is_some_and(|s| self.trailer_block(s) == block)
    }

    /// Index (0..4) of the access code governing a block.
    pub fn access_group(self, block: usize) -> Option<usize> {
        let sector = self.sector_of(block)?;
        let offset = block - self.first_block(sector);
        Some(if self.blocks_in_sector(sector) == 4 { offset } else { (offset / 5).min(3) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeySlot {
    A,
    B,
}

/// Operations governed by data-block access codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataOp {
    Read,
    Write,
    Increment,
    /// Decrement, restore and transfer share one permission.
    DecrementTransferRestore,
}

/// Per-block 3-bit codes `c1c2c3` (stored as `c1 << 2 | c2 << 1 | c3`).
/// Index 3 is the trailer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccessConditions {
    codes: [u8; 4],
}

impl AccessConditions {
    /// Transport configuration: data blocks fully open, trailer code 001.
    pub const TRANSPORT: AccessConditions = AccessConditions { codes: [0b000, 0b000, 0b000, 0b001] };

    pub fn new(codes: [u8; 4]) -> Result<AccessConditions, MemoryError> {
        match codes.iter().find(|c| **c > 7) {
            Some(c) => Err(MemoryError::BadAccessCode(*c)),
            None => Ok(AccessConditions { codes }),
        }
    }

    pub fn codes(&self) -> [u8; 4] {
        self.codes
    }

    pub fn code(&self, group: usize) -> u8 {
        self.codes[group]
    }

    fn nibble(&self, bit: u8) -> u8 {
        self.codes.iter().enumerate().fold(0, |acc, (i, c)| acc | (((c >> bit) & 1) << i))
    }

    /// Wire form: each condition bit once inverted and once non-inverted.
    pub fn pack(&self) -> [u8; 3] {
        let (c1, c2, c3) = (self.nibble(2), self.nibble(1), self.nibble(0));
        [(!c2 & 0xf) << 4 | (!c1 & 0xf), c1 << 4 | (!c3 & 0xf), c3 << 4 | c2]
    }

    pub fn unpack(bytes: [u8; 3]) -> Result<AccessConditions, MemoryError> {
        let c1 = bytes[1] >> 4;
        let c2 = bytes[2] & 0xf;
        let c3 = bytes[2] >> 4;
        if bytes[0] & 0xf != !c1 & 0xf || bytes[0] >> 4 != !c2 & 0xf || bytes[1] & 0xf != !c3 & 0xf {
            return Err(MemoryError::InconsistentAccessBits);
        }
        let mut codes = [0u8; 4];
        for (i, code) in codes.iter_mut().enumerate() {
            *code = ((c1 >> i) & 1) << 2 | ((c2 >> i) & 1) << 1 | ((c3 >> i) & 1);
        }
        Ok(AccessConditions { codes })
    }

    /// Key B can be read from the trailer (and then cannot authenticate).
    pub fn key_b_readable(&self) -> bool {
        matches!(self.codes[3], 0b000..=0b010)
    }

    /// Whether a key slot may authenticate to this sector at all.
    pub fn slot_usable(&self, slot: KeySlot) -> bool {
        slot == KeySlot::A || !self.key_b_readable()
    }

    pub fn allows_data(&self, group: usize, op: DataOp, slot: KeySlot) -> bool {
        use Perm::*;
        let (read, write, inc, dec) = match self.codes[group] {
            0b000 => (AB, AB, AB, AB),
            0b010 => (AB, Never, Never, Never),
            0b100 => (AB, B, Never, Never),
            0b110 => (AB, B, B, AB),
            0b001 => (AB, Never, Never, AB),
            0b011 => (B, B, Never, Never),
            0b101 => (B, Never, Never, Never),
            _ => (Never, Never, Never, Never),
        };
        let perm = match op {
            DataOp::Read => read,
            DataOp::Write => write,
            DataOp::Increment => inc,
            DataOp::DecrementTransferRestore => dec,
        };
        perm.allows(slot, self.key_b_readable())
    }

    /// Whether the whole trailer may be rewritten (key A, access bits and key B).
    pub fn allows_trailer_write(&self, slot: KeySlot) -> bool {
        use Perm::*;
        let (key_a, access, key_b) = match self.codes[3] {
            0b000 => (A, Never, A),
            0b001 => (A, A, A),
            0b011 => (B, B, B),
            _ => (Never, Never, Never),
        };
        let kb = self.key_b_readable();
        key_a.allows(slot, kb) && access.allows(slot, kb) && key_b.allows(slot, kb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Perm {
    A,
    B,
    AB,
    Never,
}

impl Perm {
    fn allows(self, slot: KeySlot, key_b_readable: bool) -> bool {
        let b_ok = slot == KeySlot::B && !key_b_readable;
        match self {
            Perm::A => slot == KeySlot::A,
            Perm::B => b_ok,
            Perm::AB => slot == KeySlot::A || b_ok,
            Perm::Never => false,
        }
    }
}

/// A signed 32-bit value stored three times plus a redundant address byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueBlock {
    pub value: i32,
    pub addr: u8,
}

impl ValueBlock {
    pub fn new(value: i32, addr: u8) -> Self {
        ValueBlock { value, addr }
    }

    pub fn encode(&self) -> Block {
        let v = self.value.to_le_bytes();
        let nv = (!self.value).to_le_bytes();
        let mut b = [0u8; BLOCK_SIZE];
        b[..4].copy_from_slice(&v);
        b[4..8].copy_from_slice(&nv);
        b[8..12].copy_from_slice(&v);
        b[12..].copy_from_slice(&[self.addr, !self.addr, self.addr, !self.addr]);
        b
    }

    pub fn decode(b: &Block) -> Result<ValueBlock, MemoryError> {
        let word = |i: usize| i32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let (v, nv, v2) = (word(0), word(4), word(8));
        if v != v2 || nv != !v || b[12] != b[14] || b[13] != b[15] || b[12] != !b[13] {
            return Err(MemoryError::NotAValueBlock);
        }
        Ok(ValueBlock { value: v, addr: b[12] })
    }
}
