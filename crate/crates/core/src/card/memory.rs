//! Card memory: sectors, trailers, access conditions and value blocks.

use alloc::vec::Vec;

use crate::crypto::SecretKey;
use crate::framing::compute_bcc;

pub use crate::layout::{AccessConditions, Block, DataOp, KeySlot, MemoryError, Profile, ValueBlock, BLOCK_SIZE};

/// Last block of a sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectorTrailer {
    pub key_a: SecretKey,
    pub access: AccessConditions,
    pub u_byte: u8,
    pub key_b: SecretKey,
}

impl SectorTrailer {
    pub fn transport() -> SectorTrailer {
        SectorTrailer { key_a: SecretKey::DEFAULT, access: AccessConditions::TRANSPORT, u_byte: 0x69, key_b: SecretKey::DEFAULT }
    }

    pub fn to_block(&self) -> Block {
        let mut b = [0u8; BLOCK_SIZE];
        b[..6].copy_from_slice(&self.key_a.to_bytes());
        b[6..9].copy_from_slice(&self.access.pack());
        b[9] = self.u_byte;
        b[10..].copy_from_slice(&self.key_b.to_bytes());
        b
    }

    pub fn from_block(b: &Block) -> Result<SectorTrailer, MemoryError> {
        let six = |s: &[u8]| {
            let mut k = [0u8; 6];
            k.copy_from_slice(s);
            SecretKey::from_bytes(k)
        };
        Ok(SectorTrailer {
            key_a: six(&b[..6]),
            access: AccessConditions::unpack([b[6], b[7], b[8]])?,
            u_byte: b[9],
            key_b: six(&b[10..]),
        })
    }

    /// What a read returns: key A always as zeros, key B as zeros unless readable.
    pub fn masked_read(&self) -> Block {
        let mut b = self.to_block();
        b[..6].fill(0);
        if !self.access.key_b_readable() {
            b[10..].fill(0);
        }
        b
    }

    pub fn key(&self, slot: KeySlot) -> SecretKey {
        match slot {
            KeySlot::A => self.key_a,
            KeySlot::B => self.key_b,
        }
    }
}

/// Persistent card memory, addressed by absolute block number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardMemory {
    profile: Profile,
    blocks: Vec<Block>,
}

impl CardMemory {
    /// Transport configuration: manufacturer block, empty data blocks,
    /// default keys everywhere.
    pub fn new(profile: Profile, uid: [u8; 4], manufacturer: [u8; 11]) -> CardMemory {
        let mut blocks = alloc::vec![[0u8; BLOCK_SIZE]; profile.block_count()];
        let m = &mut blocks[0];
        m[..4].copy_from_slice(&uid);
        m[4] = compute_bcc(&uid).unwrap_or_default();
        m[5..].copy_from_slice(&manufacturer);
        let mut mem = CardMemory { profile, blocks };
        for s in 0..profile.sector_count() {
            mem.set_trailer(s, &SectorTrailer::transport());
        }
        mem
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn uid(&self) -> [u8; 4] {
        let b = &self.blocks[0];
        [b[0], b[1], b[2], b[3]]
    }

    pub fn block(&self, n: usize) -> Result<&Block, MemoryError> {
        self.blocks.get(n).ok_or(MemoryError::NoSuchBlock(n))
    }

    pub fn set_block(&mut self, n: usize, data: Block) -> Result<(), MemoryError> {
        *self.blocks.get_mut(n).ok_or(MemoryError::NoSuchBlock(n))? = data;
        Ok(())
    }

    pub fn trailer(&self, sector: usize) -> Result<SectorTrailer, MemoryError> {
        if sector >= self.profile.sector_count() {
            return Err(MemoryError::NoSuchSector(sector));
        }
        SectorTrailer::from_block(&self.blocks[self.profile.trailer_block(sector)])
    }

    pub fn set_trailer(&mut self, sector: usize, t: &SectorTrailer) {
        let n = self.profile.trailer_block(sector);
        self.blocks[n] = t.to_block();
    }

    /// What a read of `block` returns, ignoring permissions.
    pub fn read_view(&self, block: usize) -> Result<Block, MemoryError> {
        if self.profile.is_trailer(block) {
            let sector = self.profile.sector_of(block).ok_or(MemoryError::NoSuchBlock(block))?;
            Ok(self.trailer(sector)?.masked_read())
        } else {
            self.block(block).copied()
        }
    }
}
