use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use shuttlenet::numerics::Rng;
use shuttlenet::rally_data::{
    gen_synthetic, load_rallies, normalize_coords, split_dataset, write_rallies, Dataset, ShotType,
    SynthConfig, MAX_RALLY_LEN,
};

fn synthetic(seed: u64, matches: usize, rallies: usize) -> Dataset {
    let cfg = SynthConfig {
        matches,
        rallies_per_match: rallies,
        ..SynthConfig::default()
    };
    gen_synthetic(&cfg, &mut Rng::new(seed)).unwrap()
}

#[test]
fn generated_dataset_round_trips_through_csv() {
    let d = synthetic(3, 4, 12);
    let mut buf = Vec::new();
    write_rallies(&d, &mut buf).unwrap();
    let back = load_rallies(buf.as_slice()).unwrap();
    assert!(back.rejected.is_empty());
    let b = back.dataset;
    assert_eq!(b.rallies.len(), d.rallies.len());
    for (x, y) in d.rallies.iter().zip(&b.rallies) {
        assert_eq!(x.rally_id, y.rally_id);
        assert_eq!(x.match_id, y.match_id);
        assert_eq!(d.players.name(x.player_a), b.players.name(y.player_a));
        assert_eq!(d.players.name(x.player_b), b.players.name(y.player_b));
        assert_eq!(x.strokes.len(), y.strokes.len());
        for (s, t) in x.strokes.iter().zip(&y.strokes) {
            assert_eq!(s.seq_no, t.seq_no);
            assert_eq!(s.shot_type, t.shot_type);
            assert_eq!(d.players.name(s.player), b.players.name(t.player));
            assert_eq!(s.x.to_bits(), t.x.to_bits());
            assert_eq!(s.y.to_bits(), t.y.to_bits());
        }
    }
}

#[test]
fn generated_rallies_satisfy_invariants() {
    let d = synthetic(5, 6, 30);
    for r in &d.rallies {
        r.validate(MAX_RALLY_LEN).unwrap();
        assert!(r.len() >= 4);
    }
}

#[test]
fn transition_frequencies_match_config() {
    let cfg = SynthConfig {
        matches: 400,
        rallies_per_match: 100,
        ..SynthConfig::default()
    };
    let d = gen_synthetic(&cfg, &mut Rng::new(11)).unwrap();
    let archetype_of: HashMap<&str, &str> = cfg
        .players
        .iter()
        .map(|p| (p.name.as_str(), p.archetype.as_str()))
        .collect();
    // counts[archetype][incoming][response]
    let mut counts: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    let mut total = 0;
    for r in &d.rallies {
        for w in r.strokes.windows(2) {
            let arch = archetype_of[d.players.name(w[1].player)];
            let table = counts
                .entry(arch)
                .or_insert_with(|| vec![vec![0.0; 10]; 10]);
            table[w[0].shot_type.ordinal()][w[1].shot_type.ordinal()] += 1.0;
            total += 1;
        }
    }
    assert!(total >= 10_000, "only {total} transitions");
    let mut checked = 0;
    for a in &cfg.archetypes {
        let table = &counts[a.name.as_str()];
        for (incoming, row) in table.iter().enumerate() {
            let n: f64 = row.iter().sum();
            if n < 2000.0 {
                continue;
            }
            let mass: f64 = a.transitions[incoming].iter().sum();
            for (resp, c) in row.iter().enumerate() {
                let want = a.transitions[incoming][resp] / mass;
                assert!(
                    (c / n - want).abs() < 0.03,
                    "{}: {:?} -> {:?}: {} vs {want}",
                    a.name,
                    ShotType::ALL[incoming],
                    ShotType::ALL[resp],
                    c / n
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 6);
}

#[test]
fn split_matches_per_match_recount() {
    let d = synthetic(8, 5, 13);
    let (train, test) = split_dataset(&d, 0.8).unwrap();
    let mut per_match: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &d.rallies {
        per_match
            .entry(r.match_id.clone())
            .or_default()
            .push(r.rally_id.clone());
    }
    let mut want_train = Vec::new();
    let mut want_test = Vec::new();
    for ids in per_match.values() {
        let k = ((0.8 * ids.len() as f64).floor() as usize).max(1);
        want_train.extend(ids[..k].iter().cloned());
        want_test.extend(ids[k..].iter().cloned());
    }
    let mut got_train: Vec<String> = train.rallies.iter().map(|r| r.rally_id.clone()).collect();
    let mut got_test: Vec<String> = test.rallies.iter().map(|r| r.rally_id.clone()).collect();
    for v in [
        &mut want_train,
        &mut want_test,
        &mut got_train,
        &mut got_test,
    ] {
        v.sort();
    }
    assert_eq!(got_train, want_train);
    assert_eq!(got_test, want_test);
    assert_eq!(train.rallies.len(), 5 * 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_a_partition(seed in 0u64..1000, matches in 1usize..5, rallies in 1usize..15, ratio in 0.05f64..0.95) {
        let d = synthetic(seed, matches, rallies);
        let (train, test) = split_dataset(&d, ratio).unwrap();
        prop_assert_eq!(train.rallies.len() + test.rallies.len(), d.rallies.len());
        let mut ids: Vec<&str> = train.rallies.iter().chain(&test.rallies).map(|r| r.rally_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), d.rallies.len());
        for m in d.match_ids() {
            prop_assert!(train.rallies.iter().any(|r| r.match_id == m));
            // every test rally of a match comes after all its training rallies
            let pos = |id: &str| d.rallies.iter().position(|r| r.rally_id == id).unwrap();
            let last_train = train.rallies.iter().filter(|r| r.match_id == m).map(|r| pos(&r.rally_id)).max().unwrap();
            for r in test.rallies.iter().filter(|r| r.match_id == m) {
                prop_assert!(pos(&r.rally_id) > last_train);
            }
        }
    }

    #[test]
    fn normalization_is_invertible(seed in 0u64..1000) {
        let d = synthetic(seed, 2, 5);
        let n = normalize_coords(&d);
        let m = n.coordinate_mean();
        prop_assert!(m.x.abs() < 1e-12 && m.y.abs() < 1e-12);
        let back = n.denormalize();
        for (a, b) in d.rallies.iter().flat_map(|r| &r.strokes).zip(back.rallies.iter().flat_map(|r| &r.strokes)) {
            prop_assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_rallies_always_valid(seed in 0u64..10_000) {
        let d = synthetic(seed, 1, 5);
        prop_assert_eq!(d.rallies.len(), 5);
        for r in &d.rallies {
            prop_assert!(r.validate(MAX_RALLY_LEN).is_ok());
        }
    }
}
