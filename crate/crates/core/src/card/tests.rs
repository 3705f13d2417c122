use super::*;
use crate::crypto::SecretKey;
use crate::session::{AbortReason, Reader, ReaderIntent, ReaderKeys, Simulation};
use alloc::vec;

const UID: [u8; 4] = [0xde, 0xad, 0xbe, 0xef];

fn config() -> Personalization {
    let mut p = Personalization::transport(Profile::Classic1K, UID, [0; 11]);
    p.memory.set_block(4, ValueBlock::new(100, 4).encode()).unwrap();
    p
}

fn run(
    p: Personalization,
    script: Vec<ReaderIntent>,
) -> (Card, Result<crate::session::Transcript, crate::session::TransactionError>) {
    let mut sim = Simulation::new(Card::new(p));
    let mut r = Reader::new(ReaderKeys::uniform(Profile::Classic1K, SecretKey::DEFAULT), CipherVariant::A, 3);
    let out = sim.run_transaction(&mut r, &script);
    (sim.card, out)
}

fn auth(sector: usize) -> Vec<ReaderIntent> {
    vec![ReaderIntent::Anticollision, ReaderIntent::Authenticate { sector, key_slot: KeySlot::A }]
}

#[test]
fn manufacturer_block_is_read_only() {
    let mut s = auth(0);
    s.push(ReaderIntent::Write { block: 0, data: [0; 16] });
    let (card, out) = run(config(), s);
    assert_eq!(out.unwrap_err().reason, AbortReason::Nack(NACK_NOT_ALLOWED));
    assert!(matches!(card.phase(), Phase::Halted));
    assert_eq!(card.memory().block(0).unwrap()[..4], UID);
}

#[test]
fn write_then_read_back() {
    let mut s = auth(1);
    s.push(ReaderIntent::Write { block: 5, data: [7; 16] });
    s.push(ReaderIntent::Read { block: 5 });
    let (_, out) = run(config(), s);
    assert_eq!(out.unwrap().reads, [(5, [7; 16])]);
}

#[test]
fn value_operations() {
    let mut s = auth(1);
    s.extend([
        ReaderIntent::Decrement { block: 4, value: 30 },
        ReaderIntent::Transfer { block: 4 },
        ReaderIntent::Transfer { block: 5 },
        ReaderIntent::Restore { block: 4 },
        ReaderIntent::Transfer { block: 6 },
        ReaderIntent::Read { block: 5 },
    ]);
    let (card, out) = run(config(), s);
    out.unwrap();
    assert_eq!(ValueBlock::decode(card.memory().block(4).unwrap()).unwrap().value, 70);
    // the register survives a transfer; an undecodable target gets its own address
    assert_eq!(*card.memory().block(5).unwrap(), ValueBlock::new(70, 5).encode());
    assert_eq!(*card.memory().block(6).unwrap(), ValueBlock::new(70, 6).encode());
    assert_eq!(card.transfer_register(), Some(70));
}

#[test]
fn refusals() {
    // transfer with nothing in the register
    let mut s = auth(1);
    s.push(ReaderIntent::Transfer { block: 4 });
    assert_eq!(run(config(), s).1.unwrap_err().reason, AbortReason::Nack(NACK_NOT_ALLOWED));
    // increment of a non-value block
    let mut s = auth(1);
    s.push(ReaderIntent::Increment { block: 5, value: 1 });
    assert_eq!(run(config(), s).1.unwrap_err().reason, AbortReason::Nack(NACK_NOT_ALLOWED));
    // block outside the authenticated sector
    let mut s = auth(1);
    s.push(ReaderIntent::Read { block: 8 });
    assert_eq!(run(config(), s).1.unwrap_err().reason, AbortReason::Nack(NACK_NOT_ALLOWED));
    // overflow
    let mut p = config();
    p.memory.set_block(4, ValueBlock::new(i32::MAX, 4).encode()).unwrap();
    let mut s = auth(1);
    s.push(ReaderIntent::Increment { block: 4, value: 1 });
    assert_eq!(run(p, s).1.unwrap_err().reason, AbortReason::Nack(NACK_NOT_ALLOWED));
}

#[test]
fn key_b_cannot_authenticate_while_readable() {
    let s = vec![ReaderIntent::Anticollision, ReaderIntent::Authenticate { sector: 1, key_slot: KeySlot::B }];
    let (card, out) = run(config(), s);
    assert_eq!(out.unwrap_err().reason, AbortReason::NoAnswer);
    assert!(matches!(card.phase(), Phase::Halted));
    let mut p = config();
    let mut t = p.memory.trailer(1).unwrap();
    t.access = AccessConditions::new([0, 0, 0, 0b011]).unwrap();
    p.memory.set_trailer(1, &t);
    let s = vec![ReaderIntent::Anticollision, ReaderIntent::Authenticate { sector: 1, key_slot: KeySlot::B }];
    run(p, s).1.unwrap();
}

#[test]
fn trailer_reads_are_masked() {
    let mut s = auth(1);
    s.push(ReaderIntent::Read { block: 7 });
    let (_, out) = run(config(), s);
    let (_, data) = out.unwrap().reads[0];
    assert_eq!(data[..6], [0; 6]);
    assert_eq!(data[6..10], [0xff, 0x07, 0x80, 0x69]);
    // key B is readable in the transport configuration
    assert_eq!(data[10..], [0xff; 6]);
}

#[test]
fn unknown_code_refused_and_halted_card_wakes() {
    let mut p = config();
    p.commands = CommandTable::default();
    let mut card = Card::new(p.clone());
    let mut sim = Simulation::new(card.clone());
    let mut r = Reader::new(ReaderKeys::uniform(Profile::Classic1K, SecretKey::DEFAULT), CipherVariant::A, 3);
    r.commands.read = 0x31;
    let out = sim.run_transaction(&mut r, &[auth(1), vec![ReaderIntent::Read { block: 4 }]].concat());
    assert_eq!(out.unwrap_err().reason, AbortReason::Nack(NACK_NOT_ALLOWED));
    // halted cards wake up again on REQA
    card.power_up(0, 0);
    card.phase = Phase::Halted;
    let reqa = encode_frame(&[REQA], FrameKind::Short7).unwrap();
    assert!(card.transition(0, &reqa).is_some());
    assert_eq!(card.phase().name(), "ready");
}

#[test]
fn nonce_depends_only_on_time_since_power_up() {
    let mut a = Card::new(config());
    let mut b = Card::new(config());
    a.power_up(0, 0);
    b.power_up(1_000_000, 0);
    assert_eq!(a.prng_at(800), b.prng_at(1_000_800));
    assert_eq!(a.prng_at(800).shifts(), 100);
    // going back in time recomputes from the seed
    assert_eq!(a.prng_at(80).shifts(), 10);
}
