#![allow(dead_code)]

use mfreplay_core::card::{AccessConditions, Card, KeySlot, Personalization, Profile, SectorTrailer, ValueBlock};
use mfreplay_core::commands::CommandTable;
use mfreplay_core::crypto::{CipherVariant, SecretKey};
use mfreplay_core::session::{eavesdrop, CardPort, Reader, ReaderIntent, ReaderKeys, Simulation};
use mfreplay_core::tracefmt::Trace;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const UID: [u8; 4] = [0x2a, 0x69, 0x8d, 0x43];
pub const MANUFACTURER: [u8; 11] = [0x08, 0x04, 0x00, 0x62, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69];
pub const KEY: SecretKey = SecretKey::DEFAULT;

/// Trailer with data blocks open to key A and key B unreadable.
pub fn locked_trailer(key_a: SecretKey, key_b: SecretKey) -> SectorTrailer {
    SectorTrailer { key_a, access: AccessConditions::new([0, 0, 0, 0b011]).unwrap(), u_byte: 0x69, key_b }
}

pub fn transport(variant: CipherVariant, commands: CommandTable) -> Personalization {
    let mut p = Personalization::transport(Profile::Classic4K, UID, MANUFACTURER);
    p.cipher = variant;
    p.commands = commands;
    p
}

/// Card with random keys, random UID, random data and key B unreadable
/// everywhere.
pub fn random_personalization(seed: u64, variant: CipherVariant) -> Personalization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uid = [0u8; 4];
    rng.fill_bytes(&mut uid);
    let mut mfr = MANUFACTURER;
    rng.fill_bytes(&mut mfr[5..]);
    let mut p = Personalization::transport(Profile::Classic4K, uid, mfr);
    p.cipher = variant;
    p.prng_seed = (rng.next_u32() as u16) | 1;
    for s in 0..Profile::Classic4K.sector_count() {
        let key_a = SecretKey::new(rng.next_u64() & 0xffff_ffff_ffff).unwrap();
        let key_b = SecretKey::new(rng.next_u64() & 0xffff_ffff_ffff).unwrap();
        p.memory.set_trailer(s, &locked_trailer(key_a, key_b));
        let first = Profile::Classic4K.first_block(s);
        for b in first.max(1)..Profile::Classic4K.trailer_block(s) {
            let mut data = [0u8; 16];
            rng.fill_bytes(&mut data);
            p.memory.set_block(b, data).unwrap();
        }
    }
    p
}

pub fn keys_of(p: &Personalization) -> ReaderKeys {
    let mut keys = ReaderKeys::default();
    for s in 0..p.memory.profile().sector_count() {
        let t = p.memory.trailer(s).unwrap();
        keys.insert(s, KeySlot::A, t.key(KeySlot::A));
        keys.insert(s, KeySlot::B, t.key(KeySlot::B));
    }
    keys
}

/// Runs one genuine transaction, returning the eavesdropped trace and the
/// card as it is afterwards.
pub fn record(p: Personalization, script: &[ReaderIntent], reader_seed: u64) -> (Trace, Card) {
    let mut reader = Reader::new(keys_of(&p), p.cipher, reader_seed);
    reader.commands = p.commands;
    let mut sim = Simulation::new(Card::new(p));
    let t = sim.run_transaction(&mut reader, script).expect("genuine transaction");
    (eavesdrop(&t.events), sim.card)
}

pub fn auth_read(sector: usize, block: usize) -> Vec<ReaderIntent> {
    vec![ReaderIntent::Anticollision, ReaderIntent::Authenticate { sector, key_slot: KeySlot::A }, ReaderIntent::Read { block }]
}

pub fn port(card: Card) -> CardPort {
    CardPort::new(card)
}

pub fn value(v: i32, addr: u8) -> [u8; 16] {
    ValueBlock::new(v, addr).encode()
}
