//! The full forecaster: embeddings, extractors, fusion and heads over one
//! parameter store.

use serde::{Deserialize, Serialize};

use crate::embedding::{player_rows, EmbeddingTables, Side, StrokeInput};
use crate::extractors::{
    align_player_contexts, tpe_forward, tre_forward, EncoderDecoder, LayerDims,
};
use crate::fusion::{AblationFlags, Pgfn};
use crate::graph::Graph;
use crate::numerics::{Matrix, ParamStore, Rng, Var};
use crate::predictor::{area_loss_sum, heads_forward, type_loss_sum, HeadOutputs, HeadParams};
use crate::rally_data::{Rally, MAX_RALLY_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub num_players: usize,
    pub flags: AblationFlags,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d == 0 || self.heads == 0 || self.ff_dim == 0 || self.num_players == 0 {
            return Err("d, heads, ff_dim and num_players must be positive".into());
        }
        if self.max_len < 2 || self.max_len > MAX_RALLY_LEN {
            return Err(format!("max_len must be in [2, {MAX_RALLY_LEN}]"));
        }
        self.flags.validate()
    }

    fn dims(&self) -> LayerDims {
        LayerDims {
            d: self.d,
            heads: self.heads,
            ff: self.ff_dim,
            use_taa: self.flags.use_taa,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuttleNet {
    pub config: ModelConfig,
    pub tables: EmbeddingTables,
    /// Rally extractor; absent when the rally context is disabled.
    pub tre: Option<EncoderDecoder>,
    /// Player extractor, shared by both players; absent when both player
    /// contexts are disabled.
    pub tpe: Option<EncoderDecoder>,
    pub fusion: Pgfn,
    pub heads: HeadParams,
    pub params: ParamStore,
}

/// Per-rally loss sums over the decode positions.
#[derive(Clone, Copy, Debug)]
pub struct RallyLoss {
    pub type_sum: Var,
    pub area_sum: Var,
    pub strokes: usize,
}

/// Model-side view of a rally.
pub fn rally_inputs(r: &Rally) -> Vec<StrokeInput> {
    r.strokes
        .iter()
        .map(|s| StrokeInput {
            shot: s.shot_type.class_index(),
            player: s.player.0,
            x: s.x,
            y: s.y,
        })
        .collect()
}

impl ShuttleNet {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Self {
        config.validate().expect("invalid model config");
        let mut params = ParamStore::new();
        let tables = EmbeddingTables::new(&mut params, rng, config.num_players, config.d);
        let tre = config
            .flags
            .use_rally
            .then(|| EncoderDecoder::new(&mut params, rng, "tre", config.dims()));
        let tpe = config
            .flags
            .uses_players()
            .then(|| EncoderDecoder::new(&mut params, rng, "tpe", config.dims()));
        let fusion = Pgfn::new(&mut params, rng, config.d, config.flags);
        let heads = HeadParams::new(&mut params, rng, config.d);
        Self {
            config,
            tables,
            tre,
            tpe,
            fusion,
            heads,
            params,
        }
    }

    /// Number of scalars whose parameter name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .ids()
            .filter(|&id| self.params.name(id).starts_with(prefix))
            .map(|id| self.params.get(id).len())
            .sum()
    }

    /// Head outputs for each decode step. `observed` is strokes `0..τ` of a
    /// rally served by the hitter of `observed[0]`; `dec_inputs[j]` is stroke
    /// `τ-1+j`; `next_players[j]` hits the predicted stroke `τ+j`.
    pub fn forward(
        &self,
        g: &mut Graph,
        observed: &[StrokeInput],
        dec_inputs: &[StrokeInput],
        next_players: &[usize],
    ) -> HeadOutputs {
        assert!(
            !observed.is_empty(),
            "at least one observed stroke is required"
        );
        assert_eq!(dec_inputs.len(), next_players.len());
        assert!(
            observed.len() + dec_inputs.len() <= self.config.max_len,
            "rally longer than max_len"
        );
        let flags = self.config.flags;
        let h_l = self
            .tre
            .as_ref()
            .map(|tre| tre_forward(g, tre, &self.tables, observed, dec_inputs));
        let (h_a, h_b) = match &self.tpe {
            Some(tpe) => {
                let ctx = tpe_forward(g, tpe, &self.tables, observed, dec_inputs, Side::A);
                let (a, b) = align_player_contexts(g, &ctx, self.config.d);
                (flags.use_a.then_some(a), flags.use_b.then_some(b))
            }
            None => (None, None),
        };
        let z = self.fusion.forward(g, [h_a, h_b, h_l]);
        let p = player_rows(g, &self.tables, next_players);
        heads_forward(g, &self.heads, z, p)
    }

    /// Teacher-forced loss sums for strokes `τ..N`. Requires `N > τ`.
    pub fn rally_loss(&self, g: &mut Graph, strokes: &[StrokeInput], tau: usize) -> RallyLoss {
        assert!(
            tau >= 1 && strokes.len() > tau,
            "rally must be longer than tau"
        );
        let targets = &strokes[tau..];
        let next_players: Vec<usize> = targets.iter().map(|s| s.player).collect();
        let out = self.forward(
            g,
            &strokes[..tau],
            &strokes[tau - 1..strokes.len() - 1],
            &next_players,
        );
        let valid = vec![true; targets.len()];
        let types: Vec<usize> = targets.iter().map(|s| s.shot).collect();
        let coords = Matrix::from_fn(targets.len(), 2, |r, c| {
            if c == 0 {
                targets[r].x
            } else {
                targets[r].y
            }
        });
        RallyLoss {
            type_sum: type_loss_sum(g, out.logits, &types, &valid),
            area_sum: area_loss_sum(g, out.raw, &coords, &valid),
            strokes: targets.len(),
        }
    }
}
