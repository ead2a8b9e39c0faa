//! Paired type/area stroke embeddings, sinusoidal positions and the
//! per-player split.
//!
//! For stroke `i` with type `s`, player `p` and landing point `a = (x, y)`:
//!
//! ```text
//! type stream  e_s = M_s[s] + M_p[p]
//! area stream  e_a = ReLU(a · M_a) + M_p[p]
//! ```
//!
//! The same tables serve the encoder and the decoder side of every extractor.

use crate::graph::Graph;
use crate::numerics::{uniform_matrix, Matrix, ParamId, ParamStore, Rng, Var};
use crate::rally_data::{MAX_RALLY_LEN, NUM_SHOT_CLASSES};

const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbeddingTables {
    /// `N_s × d`, row 0 is padding.
    pub shot: ParamId,
    /// `N_p × d`
    pub player: ParamId,
    /// `2 × d`
    pub area: ParamId,
}

impl EmbeddingTables {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, num_players: usize, d: usize) -> Self {
        assert!(num_players > 0 && d > 0);
        Self {
            shot: store.add(
                "embed.shot",
                uniform_matrix(rng, NUM_SHOT_CLASSES, d, INIT_SCALE),
            ),
            player: store.add(
                "embed.player",
                uniform_matrix(rng, num_players, d, INIT_SCALE),
            ),
            area: store.add("embed.area", uniform_matrix(rng, 2, d, INIT_SCALE)),
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.shot, self.player, self.area]
    }
}

/// Model-side view of a stroke: class index, player row, normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrokeInput {
    pub shot: usize,
    pub player: usize,
    pub x: f64,
    pub y: f64,
}

/// Type stream and area stream, both `L × d`.
#[derive(Clone, Copy, Debug)]
pub struct PairedSequence {
    pub types: Var,
    pub areas: Var,
}

impl PairedSequence {
    pub fn len(&self, g: &Graph) -> usize {
        g.value(self.types).rows()
    }

    /// Rows `idx` of both streams.
    pub fn select(&self, g: &mut Graph, idx: &[usize]) -> PairedSequence {
        PairedSequence {
            types: g.tape.gather_rows(self.types, idx),
            areas: g.tape.gather_rows(self.areas, idx),
        }
    }
}

pub fn embed(g: &mut Graph, tables: &EmbeddingTables, strokes: &[StrokeInput]) -> PairedSequence {
    assert!(!strokes.is_empty(), "embedding an empty stroke sequence");
    let shot_rows = g.store().get(tables.shot).rows();
    let player_rows = g.store().get(tables.player).rows();
    for s in strokes {
        assert!(
            s.shot < shot_rows,
            "shot class {} out of vocabulary",
            s.shot
        );
        assert!(
            s.player < player_rows,
            "player {} not in the embedding table",
            s.player
        );
    }
    let shots: Vec<usize> = strokes.iter().map(|s| s.shot).collect();
    let players: Vec<usize> = strokes.iter().map(|s| s.player).collect();
    let coords = Matrix::from_fn(strokes.len(), 2, |r, c| {
        if c == 0 {
            strokes[r].x
        } else {
            strokes[r].y
        }
    });

    let shot_table = g.p(tables.shot);
    let player_table = g.p(tables.player);
    let s_emb = g.tape.gather_rows(shot_table, &shots);
    let p_emb = g.tape.gather_rows(player_table, &players);
    let coords = g.constant(coords);
    let a_proj = g.linear(coords, tables.area);
    let a_emb = g.tape.relu(a_proj);
    PairedSequence {
        types: g.tape.add(s_emb, p_emb),
        areas: g.tape.add(a_emb, p_emb),
    }
}

/// Player embedding rows as an `n × d` node.
pub fn player_rows(g: &mut Graph, tables: &EmbeddingTables, players: &[usize]) -> Var {
    let table = g.p(tables.player);
    g.tape.gather_rows(table, players)
}

/// Standard transformer sinusoid: `pe[2i] = sin(pos / 10000^(2i/d))`,
/// `pe[2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(pos: usize, d: usize) -> Vec<f64> {
    assert!(
        pos < MAX_RALLY_LEN,
        "position {pos} exceeds max rally length {MAX_RALLY_LEN}"
    );
    (0..d)
        .map(|k| {
            let pair = (k / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub fn positional_matrix(start: usize, len: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (start..start + len)
        .map(|p| positional_encoding(p, d))
        .collect();
    Matrix::from_rows(&rows)
}

/// Adds the same `pe_{start+i}` to both streams at row `i`.
pub fn add_positional(g: &mut Graph, seq: PairedSequence, start_pos: usize) -> PairedSequence {
    let (len, d) = g.value(seq.types).shape();
    let pe = g.constant(positional_matrix(start_pos, len, d));
    PairedSequence {
        types: g.tape.add(seq.types, pe),
        areas: g.tape.add(seq.areas, pe),
    }
}

/// Which of the two rally players hit a stroke. `A` is the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

impl Side {
    /// Side of the stroke at 0-based rally position `pos`.
    pub fn at(pos: usize) -> Side {
        if pos.is_multiple_of(2) {
            Side::A
        } else {
            Side::B
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// Positions of each player's strokes in an alternating sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlayerSplit {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl PlayerSplit {
    /// Splits positions by the hitter. Panics unless `players` strictly alternates.
    pub fn new<P: PartialEq>(players: &[P]) -> Self {
        for i in 2..players.len() {
            assert!(
                players[i] == players[i - 2],
                "players do not alternate at position {i}"
            );
        }
        if players.len() >= 2 {
            assert!(
                players[0] != players[1],
                "players do not alternate at position 1"
            );
        }
        Self::by_parity(players.len(), Side::A)
    }

    /// Split for a sequence of `len` strokes whose first stroke is by `first`.
    pub fn by_parity(len: usize, first: Side) -> Self {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..len {
            let side = if i % 2 == 0 { first } else { first.other() };
            match side {
                Side::A => a.push(i),
                Side::B => b.push(i),
            }
        }
        Self { a, b }
    }

    pub fn side(&self, side: Side) -> &[usize] {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn split<T: Clone>(&self, items: &[T]) -> (Vec<T>, Vec<T>) {
        (
            self.a.iter().map(|&i| items[i].clone()).collect(),
            self.b.iter().map(|&i| items[i].clone()).collect(),
        )
    }

    /// Inverse of [`PlayerSplit::split`].
    pub fn interleave<T: Clone>(&self, a: &[T], b: &[T]) -> Vec<T> {
        assert_eq!(a.len(), self.a.len());
        assert_eq!(b.len(), self.b.len());
        let n = a.len() + b.len();
        let mut out: Vec<Option<T>> = vec![None; n];
        for (v, &i) in a.iter().zip(&self.a) {
            out[i] = Some(v.clone());
        }
        for (v, &i) in b.iter().zip(&self.b) {
            out[i] = Some(v.clone());
        }
        out.into_iter().map(Option::unwrap).collect()
    }
}
