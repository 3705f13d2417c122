mod common;

use common::*;
use mfreplay_core::attack::{read_sector, read_sector_zero, AttackOptions, Confidence, Strategy as Replay};
use mfreplay_core::card::Profile;
use mfreplay_core::crypto::CipherVariant;
use mfreplay_core::session::CardPort;
use proptest::prelude::*;

fn variant() -> impl Strategy<Value = CipherVariant> {
    prop::sample::select(CipherVariant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sector_zero_never_reports_a_false_byte(seed in any::<u64>(), v in variant()) {
        let p = random_personalization(seed, v);
        let truth: Vec<[u8; 16]> = (0..4).map(|b| p.memory.read_view(b).unwrap()).collect();
        let (trace, card) = record(p, &auth_read(0, 0), seed);
        let dump = read_sector_zero(&mut port(card), &trace, &AttackOptions::default()).unwrap();
        prop_assert_eq!(dump.recovered(), 64);
        for (b, row) in dump.blocks.iter().enumerate() {
            prop_assert_eq!(row.map(|x| x.0), truth[b]);
        }
    }

    #[test]
    fn any_sector_reads_with_a_known_block(seed in any::<u64>(), v in variant(), sector in 1usize..40, k in 0usize..3) {
        let p = random_personalization(seed, v);
        let first = Profile::Classic4K.first_block(sector);
        let n = Profile::Classic4K.blocks_in_sector(sector);
        let truth: Vec<[u8; 16]> = (first..first + n).map(|b| p.memory.read_view(b).unwrap()).collect();
        let (trace, card) = record(p, &auth_read(sector, first + k), seed);
        let dump = read_sector(&mut port(card), &trace, Some((first + k, truth[k])), &AttackOptions::default()).unwrap();
        prop_assert_eq!(dump.recovered(), 16 * n);
        prop_assert_eq!(dump.count(Confidence::Unknown), 0);
        for (b, row) in dump.blocks.iter().enumerate() {
            prop_assert_eq!(row.map(|x| x.0), truth[b]);
        }
    }

    #[test]
    fn fixed_delay_retries_through_jitter(seed in any::<u64>(), jitter in 0u32..5) {
        let p = random_personalization(seed, CipherVariant::B);
        let (trace, card) = record(p, &auth_read(0, 1), seed);
        let mut port = CardPort::with_jitter(card, jitter, seed);
        let opts = AttackOptions { strategy: Replay::FixedDelay { power_up_etu: 1024 }, budget: Some(400), ..AttackOptions::default() };
        let dump = read_sector_zero(&mut port, &trace, &opts).unwrap();
        prop_assert_eq!(dump.recovered(), 64);
    }
}
