use proptest::prelude::*;

use shuttlenet::attention::{taa, AttentionMask, TaaHead};
use shuttlenet::embedding::{embed, EmbeddingTables, PairedSequence, PlayerSplit, StrokeInput};
use shuttlenet::extractors::align_contexts;
use shuttlenet::fusion::{AblationFlags, Pgfn};
use shuttlenet::graph::Graph;
use shuttlenet::model::{ModelConfig, ShuttleNet};
use shuttlenet::numerics::{softmax, uniform_matrix, Matrix, ParamStore, Rng};

fn strokes(rng: &mut Rng, n: usize) -> Vec<StrokeInput> {
    (0..n)
        .map(|i| StrokeInput {
            shot: 1 + rng.below(10),
            player: if i % 2 == 0 { 1 } else { 0 },
            x: rng.standard_normal(),
            y: rng.standard_normal(),
        })
        .collect()
}

fn small_model(seed: u64, flags: AblationFlags) -> ShuttleNet {
    ShuttleNet::new(
        ModelConfig {
            d: 6,
            heads: 2,
            ff_dim: 12,
            max_len: 35,
            num_players: 2,
            flags,
        },
        &mut Rng::new(seed),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(xs in prop::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
        let p = softmax(&xs);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_then_interleave_is_identity(len in 1usize..35) {
        let players: Vec<u8> = (0..len).map(|i| (i % 2) as u8).collect();
        let s = PlayerSplit::new(&players);
        let items: Vec<usize> = (0..len).map(|i| i * 7 + 3).collect();
        let (a, b) = s.split(&items);
        prop_assert_eq!(s.interleave(&a, &b), items);
    }

    #[test]
    fn embedding_is_linear_in_player_rows(seed in 0u64..1000) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let t = EmbeddingTables::new(&mut store, &mut rng, 2, 4);
        let s = strokes(&mut rng, 5);
        let before = {
            let mut g = Graph::eval(&store);
            let e = embed(&mut g, &t, &s);
            (g.value(e.types).clone(), g.value(e.areas).clone())
        };
        let delta: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        for (k, d) in delta.iter().enumerate() {
            store.get_mut(t.player)[(1, k)] += d;
        }
        let mut g = Graph::eval(&store);
        let e = embed(&mut g, &t, &s);
        for (i, st) in s.iter().enumerate() {
            for (k, dk) in delta.iter().enumerate() {
                let shift = if st.player == 1 { *dk } else { 0.0 };
                prop_assert!((g.value(e.types)[(i, k)] - before.0[(i, k)] - shift).abs() < 1e-12);
                prop_assert!((g.value(e.areas)[(i, k)] - before.1[(i, k)] - shift).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taa_collapses_without_area_projections(seed in 0u64..1000, len in 1usize..8, d in 1usize..6) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let head = TaaHead::new(&mut store, &mut rng, "h", d);
        for id in head.area_params() {
            *store.get_mut(id) = Matrix::zeros(d, d);
        }
        let es = uniform_matrix(&mut rng, len, d, 2.0);
        let mut g = Graph::eval(&store);
        let seq = PairedSequence { types: g.constant(es.clone()), areas: g.constant(uniform_matrix(&mut rng, len, d, 2.0)) };
        let out = taa(&mut g, &head, seq, &AttentionMask::full(len));
        let q = es.matmul(store.get(head.q_s));
        let k = es.matmul(store.get(head.k_s));
        let v = es.matmul(store.get(head.v_s));
        for i in 0..len {
            let scores: Vec<f64> = (0..len)
                .map(|j| (0..d).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / (4.0 * d as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in 0..d {
                let want: f64 = (0..len).map(|j| w[j] * v[(j, c)]).sum();
                prop_assert!((g.value(out)[(i, c)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_matches_last_seen_scan(seed in 0u64..10_000, n in 1usize..30, b_first in any::<bool>()) {
        use shuttlenet::embedding::Side;
        let _ = seed;
        let first = if b_first { Side::B } else { Side::A };
        let sides: Vec<Side> = (0..n).map(|i| if i % 2 == 0 { first } else { first.other() }).collect();
        let dec_a: Vec<usize> = (0..sides.iter().filter(|&&s| s == Side::A).count()).map(|i| 100 + i).collect();
        let dec_b: Vec<usize> = (0..sides.iter().filter(|&&s| s == Side::B).count()).map(|i| 200 + i).collect();
        let (ha, hb) = align_contexts(&dec_a, &dec_b, &sides);
        let (mut last_a, mut last_b, mut ia, mut ib) = (None, None, 0, 0);
        for (i, s) in sides.iter().enumerate() {
            match s {
                Side::A => { last_a = Some(dec_a[ia]); ia += 1; }
                Side::B => { last_b = Some(dec_b[ib]); ib += 1; }
            }
            prop_assert_eq!(ha[i], last_a);
            prop_assert_eq!(hb[i], last_b);
        }
    }

    #[test]
    fn fused_contexts_stay_in_unit_interval(seed in 0u64..1000, scale in 0.01f64..3.0) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let p = Pgfn::new(&mut store, &mut rng, 5, AblationFlags::FULL);
        let mut g = Graph::eval(&store);
        let xs: Vec<_> = (0..3).map(|_| g.constant(uniform_matrix(&mut rng, 3, 5, scale))).collect();
        let z = p.forward(&mut g, [Some(xs[0]), Some(xs[1]), Some(xs[2])]);
        prop_assert!(g.value(z).as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn model_outputs_are_causal(seed in 0u64..1000, n in 3usize..12, tau in 1usize..3) {
        let m = small_model(seed, AblationFlags::FULL);
        let mut rng = Rng::new(seed + 1);
        let s = strokes(&mut rng, n);
        let dec = &s[tau - 1..n - 1];
        let next: Vec<usize> = s[tau..].iter().map(|x| x.player).collect();
        let run = |dec: &[StrokeInput]| {
            let mut g = Graph::eval(&m.params);
            let out = m.forward(&mut g, &s[..tau], dec, &next);
            (g.value(out.logits).clone(), g.value(out.raw).clone())
        };
        let base = run(dec);
        let i = rng.below(dec.len());
        let mut changed = dec.to_vec();
        for c in changed.iter_mut().skip(i + 1) {
            c.shot = 1 + rng.below(10);
            c.x += rng.standard_normal();
            c.y -= rng.standard_normal();
        }
        let other = run(&changed);
        for r in 0..=i {
            for (a, b) in base.0.row(r).iter().zip(other.0.row(r)).chain(base.1.row(r).iter().zip(other.1.row(r))) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn all_parameters_receive_gradient_through_full_model() {
    let m = small_model(3, AblationFlags::FULL);
    let s = strokes(&mut Rng::new(4), 8);
    let mut g = Graph::eval(&m.params);
    let l = m.rally_loss(&mut g, &s, 3);
    let t = g.tape.add(l.type_sum, l.area_sum);
    assert_eq!(g.tape.bound_param_count(), m.params.len());
    let grads = g.tape.backward(t);
    let pg = g.tape.param_grads(&m.params, &grads);
    for (id, gm) in m.params.ids().zip(&pg) {
        assert!(gm.is_finite(), "{}", m.params.name(id));
    }
}
