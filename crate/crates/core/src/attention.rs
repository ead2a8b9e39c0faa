//! Type-area attention and the encoder/decoder layers built on it.
//!
//! A type-area head projects both streams into queries, keys and values and
//! scores positions with the sum of all four query-key products:
//!
//! ```text
//! A   = Q_a K_aᵀ + Q_a K_sᵀ + Q_s K_aᵀ + Q_s K_sᵀ
//! out = softmax(A / sqrt(4d)) (V_a + V_s)
//! ```
//!
//! Every head uses full `d × d` projections, and the concatenated heads are
//! mapped back to `d` by a `(h·d) × d` output matrix. Layers are post-norm:
//! `LN(x + Dropout(sublayer(x)))`.

use serde::{Deserialize, Serialize};

use crate::embedding::PairedSequence;
use crate::graph::Graph;
use crate::numerics::{uniform_matrix, Matrix, ParamId, ParamStore, Rng, Var};

/// Score written into disallowed attention entries before the softmax.
pub const MASK_FILL: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

fn xavier(
    store: &mut ParamStore,
    rng: &mut Rng,
    name: String,
    rows: usize,
    cols: usize,
) -> ParamId {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    store.add(name, uniform_matrix(rng, rows, cols, limit))
}

/// Which (query, key) pairs may attend. Row-major `q × k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Everything may attend to every non-padded key. `pad[j]` marks key `j` as padding.
    pub fn key_padding(queries: usize, pad: &[bool]) -> Self {
        let keys = pad.len();
        let allowed = (0..queries).flat_map(|_| pad.iter().map(|p| !p)).collect();
        Self {
            queries,
            keys,
            allowed,
        }
    }

    pub fn full(len: usize) -> Self {
        Self::key_padding(len, &vec![false; len])
    }

    /// Query `i` attends to keys `j <= i` that are not padding.
    pub fn causal(len: usize, pad: &[bool]) -> Self {
        assert_eq!(pad.len(), len);
        let allowed = (0..len)
            .flat_map(|i| (0..len).map(move |j| j <= i))
            .zip(pad.iter().cycle())
            .map(|(ok, p)| ok && !p)
            .collect();
        Self {
            queries: len,
            keys: len,
            allowed,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }

    /// Fill mask for [`crate::numerics::Tape::masked_fill`]. Panics if any
    /// query row has no allowed key.
    fn fill_mask(&self) -> Vec<bool> {
        for q in 0..self.queries {
            assert!(
                (0..self.keys).any(|k| self.allows(q, k)),
                "attention row {q} has no allowed positions"
            );
        }
        self.allowed.iter().map(|a| !a).collect()
    }
}

/// `softmax(masked(scores) * scale) · values`
fn attend(g: &mut Graph, scores: Var, scale: f64, values: Var, mask: &AttentionMask) -> Var {
    assert_eq!(g.value(scores).shape(), mask.shape(), "mask shape mismatch");
    let scaled = g.tape.scale(scores, scale);
    let masked = g.tape.masked_fill(scaled, &mask.fill_mask(), MASK_FILL);
    let weights = g.tape.softmax_rows(masked);
    g.tape.matmul(weights, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaaHead {
    pub q_s: ParamId,
    pub k_s: ParamId,
    pub v_s: ParamId,
    pub q_a: ParamId,
    pub k_a: ParamId,
    pub v_a: ParamId,
}

impl TaaHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, d: usize) -> Self {
        let mut w = |n: &str| xavier(store, rng, format!("{prefix}.{n}"), d, d);
        Self {
            q_s: w("q_s"),
            k_s: w("k_s"),
            v_s: w("v_s"),
            q_a: w("q_a"),
            k_a: w("k_a"),
            v_a: w("v_a"),
        }
    }

    pub fn area_params(&self) -> [ParamId; 3] {
        [self.q_a, self.k_a, self.v_a]
    }
}

/// Single type-area attention head over a paired sequence.
pub fn taa(g: &mut Graph, head: &TaaHead, seq: PairedSequence, mask: &AttentionMask) -> Var {
    let (len, d) = g.value(seq.types).shape();
    assert_eq!(
        g.value(seq.areas).shape(),
        (len, d),
        "streams must have equal shapes"
    );
    let q_s = g.linear(seq.types, head.q_s);
    let k_s = g.linear(seq.types, head.k_s);
    let v_s = g.linear(seq.types, head.v_s);
    let q_a = g.linear(seq.areas, head.q_a);
    let k_a = g.linear(seq.areas, head.k_a);
    let v_a = g.linear(seq.areas, head.v_a);
    let aa = g.tape.matmul_t(q_a, k_a);
    let as_ = g.tape.matmul_t(q_a, k_s);
    let sa = g.tape.matmul_t(q_s, k_a);
    let ss = g.tape.matmul_t(q_s, k_s);
    let s1 = g.tape.add(aa, as_);
    let s2 = g.tape.add(sa, ss);
    let scores = g.tape.add(s1, s2);
    let values = g.tape.add(v_a, v_s);
    attend(g, scores, 1.0 / (4.0 * d as f64).sqrt(), values, mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadTaa {
    pub heads: Vec<TaaHead>,
    /// `(h·d) × d`
    pub w_o: ParamId,
}

impl MultiHeadTaa {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, d: usize, h: usize) -> Self {
        assert!(h >= 1, "need at least one head");
        let heads = (0..h)
            .map(|i| TaaHead::new(store, rng, &format!("{prefix}.head{i}"), d))
            .collect();
        let w_o = xavier(store, rng, format!("{prefix}.w_o"), h * d, d);
        Self { heads, w_o }
    }

    pub fn forward(&self, g: &mut Graph, seq: PairedSequence, mask: &AttentionMask) -> Var {
        let outs: Vec<Var> = self.heads.iter().map(|h| taa(g, h, seq, mask)).collect();
        let cat = g.tape.concat_cols(&outs);
        g.linear(cat, self.w_o)
    }
}

/// Standard single-stream multi-head attention with `1/sqrt(d)` scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    /// `(W_q, W_k, W_v)` per head, each `d × d`.
    pub heads: Vec<[ParamId; 3]>,
    pub w_o: ParamId,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, d: usize, h: usize) -> Self {
        assert!(h >= 1, "need at least one head");
        let heads = (0..h)
            .map(|i| {
                let mut w = |n: &str| xavier(store, rng, format!("{prefix}.head{i}.{n}"), d, d);
                [w("q"), w("k"), w("v")]
            })
            .collect();
        let w_o = xavier(store, rng, format!("{prefix}.w_o"), h * d, d);
        Self { heads, w_o }
    }

    pub fn forward(&self, g: &mut Graph, queries: Var, memory: Var, mask: &AttentionMask) -> Var {
        let d = g.value(queries).cols();
        assert!(g.value(memory).rows() > 0, "attention over an empty memory");
        let outs: Vec<Var> = self
            .heads
            .iter()
            .map(|[wq, wk, wv]| {
                let q = g.linear(queries, *wq);
                let k = g.linear(memory, *wk);
                let v = g.linear(memory, *wv);
                let scores = g.tape.matmul_t(q, k);
                attend(g, scores, 1.0 / (d as f64).sqrt(), v, mask)
            })
            .collect();
        let cat = g.tape.concat_cols(&outs);
        g.linear(cat, self.w_o)
    }
}

/// First sublayer of every encoder/decoder layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SelfAttention {
    TypeArea(MultiHeadTaa),
    /// Ablation: the streams are concatenated, projected to `d`, and fed to
    /// ordinary self-attention.
    Concat {
        w_in: ParamId,
        mha: MultiHeadAttention,
    },
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        d: usize,
        h: usize,
        use_taa: bool,
    ) -> Self {
        if use_taa {
            SelfAttention::TypeArea(MultiHeadTaa::new(
                store,
                rng,
                &format!("{prefix}.taa"),
                d,
                h,
            ))
        } else {
            let w_in = xavier(store, rng, format!("{prefix}.concat_in"), 2 * d, d);
            let mha = MultiHeadAttention::new(store, rng, &format!("{prefix}.self"), d, h);
            SelfAttention::Concat { w_in, mha }
        }
    }

    /// Returns `(residual input, attention output)`. The residual for the
    /// two-stream form is the sum of the streams.
    fn forward(&self, g: &mut Graph, seq: PairedSequence, mask: &AttentionMask) -> (Var, Var) {
        match self {
            SelfAttention::TypeArea(mh) => {
                let residual = g.tape.add(seq.types, seq.areas);
                (residual, mh.forward(g, seq, mask))
            }
            SelfAttention::Concat { w_in, mha } => {
                let cat = g.tape.concat_cols(&[seq.types, seq.areas]);
                let x = g.linear(cat, *w_in);
                (x, mha.forward(g, x, x, mask))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Matrix::filled(1, d, 1.0)),
            bias: store.add(format!("{prefix}.bias"), Matrix::zeros(1, d)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.p(self.gain);
        let bias = g.p(self.bias);
        g.tape.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// Position-wise `d → ff → d` with ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, d: usize, ff: usize) -> Self {
        Self {
            w1: xavier(store, rng, format!("{prefix}.w1"), d, ff),
            b1: store.add(format!("{prefix}.b1"), Matrix::zeros(1, ff)),
            w2: xavier(store, rng, format!("{prefix}.w2"), ff, d),
            b2: store.add(format!("{prefix}.b2"), Matrix::zeros(1, d)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = g.linear(x, self.w1);
        let b1 = g.p(self.b1);
        let h = g.tape.add_row(h, b1);
        let h = g.tape.relu(h);
        let o = g.linear(h, self.w2);
        let b2 = g.p(self.b2);
        g.tape.add_row(o, b2)
    }
}

fn residual_norm(g: &mut Graph, residual: Var, sub: Var, norm: &LayerNormParams) -> Var {
    let sub = g.dropout(sub);
    let sum = g.tape.add(residual, sub);
    norm.forward(g, sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub self_attn: SelfAttention,
    pub norm1: LayerNormParams,
    pub ff: FeedForward,
    pub norm2: LayerNormParams,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        d: usize,
        h: usize,
        ff: usize,
        use_taa: bool,
    ) -> Self {
        Self {
            self_attn: SelfAttention::new(store, rng, &format!("{prefix}.attn"), d, h, use_taa),
            norm1: LayerNormParams::new(store, &format!("{prefix}.norm1"), d),
            ff: FeedForward::new(store, rng, &format!("{prefix}.ff"), d, ff),
            norm2: LayerNormParams::new(store, &format!("{prefix}.norm2"), d),
        }
    }

    /// `pad[j]` marks padded positions; they are never attended to.
    pub fn forward(&self, g: &mut Graph, seq: PairedSequence, pad: &[bool]) -> Var {
        let len = seq.len(g);
        assert_eq!(pad.len(), len);
        let mask = AttentionMask::key_padding(len, pad);
        let (residual, attn) = self.self_attn.forward(g, seq, &mask);
        let x = residual_norm(g, residual, attn, &self.norm1);
        let f = self.ff.forward(g, x);
        residual_norm(g, x, f, &self.norm2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub self_attn: SelfAttention,
    pub norm1: LayerNormParams,
    pub cross: MultiHeadAttention,
    pub norm2: LayerNormParams,
    pub ff: FeedForward,
    pub norm3: LayerNormParams,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        d: usize,
        h: usize,
        ff: usize,
        use_taa: bool,
    ) -> Self {
        Self {
            self_attn: SelfAttention::new(store, rng, &format!("{prefix}.attn"), d, h, use_taa),
            norm1: LayerNormParams::new(store, &format!("{prefix}.norm1"), d),
            cross: MultiHeadAttention::new(store, rng, &format!("{prefix}.cross"), d, h),
            norm2: LayerNormParams::new(store, &format!("{prefix}.norm2"), d),
            ff: FeedForward::new(store, rng, &format!("{prefix}.ff"), d, ff),
            norm3: LayerNormParams::new(store, &format!("{prefix}.norm3"), d),
        }
    }

    /// Causal self-attention over `target`, then cross-attention into
    /// `memory` (`m × d`, padded where `memory_pad` is true).
    pub fn forward(
        &self,
        g: &mut Graph,
        target: PairedSequence,
        target_pad: &[bool],
        memory: Var,
        memory_pad: &[bool],
    ) -> Var {
        let len = target.len(g);
        assert!(
            g.value(memory).rows() > 0,
            "decoder needs a non-empty encoder context"
        );
        assert_eq!(memory_pad.len(), g.value(memory).rows());
        let mask = AttentionMask::causal(len, target_pad);
        let (residual, attn) = self.self_attn.forward(g, target, &mask);
        let x = residual_norm(g, residual, attn, &self.norm1);
        let cross_mask = AttentionMask::key_padding(len, memory_pad);
        let c = self.cross.forward(g, x, memory, &cross_mask);
        let x = residual_norm(g, x, c, &self.norm2);
        let f = self.ff.forward(g, x);
        residual_norm(g, x, f, &self.norm3)
    }
}
