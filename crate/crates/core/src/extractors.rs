//! Rally extractor (TRE), player extractor (TPE) and context alignment.
//!
//! Both extractors read observed strokes `0..τ` and decoder inputs
//! `τ-1..N-1`: decode step `j` is fed stroke `τ-1+j` and predicts stroke
//! `τ+j`. The rally extractor encodes everything at absolute positions; the
//! player extractor splits by hitter and runs one shared encoder-decoder per
//! player with positions restarting at 0.

use serde::{Deserialize, Serialize};

use crate::attention::{DecoderLayer, EncoderLayer};
use crate::embedding::{
    add_positional, embed, EmbeddingTables, PairedSequence, PlayerSplit, Side, StrokeInput,
};
use crate::graph::Graph;
use crate::numerics::{Matrix, ParamStore, Rng, Var};

/// Layer dimensions shared by all extractors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub d: usize,
    pub heads: usize,
    pub ff: usize,
    pub use_taa: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderDecoder {
    pub encoder: EncoderLayer,
    pub decoder: DecoderLayer,
}

impl EncoderDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dims: LayerDims) -> Self {
        let LayerDims {
            d,
            heads,
            ff,
            use_taa,
        } = dims;
        Self {
            encoder: EncoderLayer::new(store, rng, &format!("{prefix}.enc"), d, heads, ff, use_taa),
            decoder: DecoderLayer::new(store, rng, &format!("{prefix}.dec"), d, heads, ff, use_taa),
        }
    }

    /// Encodes `observed` at positions `0..`, decodes `targets` at positions
    /// `target_start..` with a causal mask. An empty `observed` is replaced by a
    /// single zero position so cross-attention has a key.
    pub fn forward(
        &self,
        g: &mut Graph,
        tables: &EmbeddingTables,
        observed: &[StrokeInput],
        targets: &[StrokeInput],
        target_start: usize,
    ) -> Var {
        assert!(!targets.is_empty(), "empty decoder input");
        let enc_in = if observed.is_empty() {
            let d = g.store().get(tables.shot).cols();
            let z = g.constant(Matrix::zeros(1, d));
            PairedSequence { types: z, areas: z }
        } else {
            let e = embed(g, tables, observed);
            add_positional(g, e, 0)
        };
        let enc_len = enc_in.len(g);
        let memory = self.encoder.forward(g, enc_in, &vec![false; enc_len]);
        let dec_in = embed(g, tables, targets);
        let dec_in = add_positional(g, dec_in, target_start);
        self.decoder.forward(
            g,
            dec_in,
            &vec![false; targets.len()],
            memory,
            &vec![false; enc_len],
        )
    }
}

/// Rally contexts `H_L`, one row per decode step.
pub fn tre_forward(
    g: &mut Graph,
    stack: &EncoderDecoder,
    tables: &EmbeddingTables,
    observed: &[StrokeInput],
    targets: &[StrokeInput],
) -> Var {
    assert!(
        !observed.is_empty(),
        "at least one observed stroke is required"
    );
    stack.forward(g, tables, observed, targets, observed.len())
}

/// Per-player decoder outputs before alignment. `dec_a` has one row per
/// decoder input hit by A (`None` if there are none); likewise `dec_b`.
#[derive(Clone, Debug)]
pub struct PlayerContexts {
    pub dec_a: Option<Var>,
    pub dec_b: Option<Var>,
    /// Hitter of each decoder input.
    pub sides: Vec<Side>,
}

/// Runs the shared stack once per player. `first` is the side that hit
/// `observed[0]`; the sequence alternates from there.
pub fn tpe_forward(
    g: &mut Graph,
    stack: &EncoderDecoder,
    tables: &EmbeddingTables,
    observed: &[StrokeInput],
    targets: &[StrokeInput],
    first: Side,
) -> PlayerContexts {
    assert!(
        !observed.is_empty(),
        "at least one observed stroke is required"
    );
    let tau = observed.len();
    let obs_split = PlayerSplit::by_parity(tau, first);
    // decoder input j repeats stroke tau-1+j, so its hitter continues the parity
    let dec_first = if (tau - 1).is_multiple_of(2) {
        first
    } else {
        first.other()
    };
    let dec_split = PlayerSplit::by_parity(targets.len(), dec_first);
    check_alternation(observed, targets, &obs_split, &dec_split);

    let (obs_a, obs_b) = obs_split.split(observed);
    let (dec_a_in, dec_b_in) = dec_split.split(targets);
    let mut run = |obs: &[StrokeInput], dec: &[StrokeInput]| {
        (!dec.is_empty()).then(|| stack.forward(g, tables, obs, dec, obs.len()))
    };
    let dec_a = run(&obs_a, &dec_a_in);
    let dec_b = run(&obs_b, &dec_b_in);
    let sides = (0..targets.len())
        .map(|j| {
            if dec_split.a.contains(&j) {
                Side::A
            } else {
                Side::B
            }
        })
        .collect();
    PlayerContexts {
        dec_a,
        dec_b,
        sides,
    }
}

fn check_alternation(
    observed: &[StrokeInput],
    targets: &[StrokeInput],
    obs: &PlayerSplit,
    dec: &PlayerSplit,
) {
    let player_of = |split: &PlayerSplit, items: &[StrokeInput], side: Side| {
        split.side(side).first().map(|&i| items[i].player)
    };
    for side in [Side::A, Side::B] {
        let expected = player_of(obs, observed, side).or_else(|| player_of(dec, targets, side));
        for (split, items) in [(obs, observed), (dec, targets)] {
            for &i in split.side(side) {
                assert!(
                    Some(items[i].player) == expected,
                    "players do not alternate"
                );
            }
        }
    }
    let a = player_of(obs, observed, Side::A).or_else(|| player_of(dec, targets, Side::A));
    let b = player_of(obs, observed, Side::B).or_else(|| player_of(dec, targets, Side::B));
    if let (Some(a), Some(b)) = (a, b) {
        assert!(a != b, "players do not alternate");
    }
}

/// Copy-forward alignment: entry `i` of the first list is the index into A's
/// contexts of A's latest stroke at or before `i` (`None` before A's first
/// stroke); likewise for B.
pub fn align_indices(sides: &[Side]) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let (mut a, mut b) = (
        Vec::with_capacity(sides.len()),
        Vec::with_capacity(sides.len()),
    );
    let (mut na, mut nb) = (0usize, 0usize);
    for s in sides {
        match s {
            Side::A => na += 1,
            Side::B => nb += 1,
        }
        a.push(na.checked_sub(1));
        b.push(nb.checked_sub(1));
    }
    (a, b)
}

/// Value-level alignment; `None` stands for the zero vector.
pub fn align_contexts<T: Clone>(
    dec_a: &[T],
    dec_b: &[T],
    sides: &[Side],
) -> (Vec<Option<T>>, Vec<Option<T>>) {
    let count = |side| sides.iter().filter(|&&s| s == side).count();
    assert_eq!(
        dec_a.len(),
        count(Side::A),
        "dec_A length does not match the horizon"
    );
    assert_eq!(
        dec_b.len(),
        count(Side::B),
        "dec_B length does not match the horizon"
    );
    let (ia, ib) = align_indices(sides);
    (
        ia.into_iter()
            .map(|i| i.map(|i| dec_a[i].clone()))
            .collect(),
        ib.into_iter()
            .map(|i| i.map(|i| dec_b[i].clone()))
            .collect(),
    )
}

/// Aligned player contexts `(H_A, H_B)`, each `n × d`.
pub fn align_player_contexts(g: &mut Graph, ctx: &PlayerContexts, d: usize) -> (Var, Var) {
    let (ia, ib) = align_indices(&ctx.sides);
    let mut pick = |dec: Option<Var>, idx: &[Option<usize>]| {
        let src = dec.unwrap_or_else(|| g.constant(Matrix::zeros(1, d)));
        g.tape.select_rows(src, idx)
    };
    let ha = pick(ctx.dec_a, &ia);
    let hb = pick(ctx.dec_b, &ib);
    (ha, hb)
}
