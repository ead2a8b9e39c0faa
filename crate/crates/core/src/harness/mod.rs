//! Training, best-of-K evaluation, forecasting and the ablation matrix.

mod ablate;
mod adam;
mod evaluate;
mod forecast;
mod model_file;
mod train;

use serde::{Deserialize, Serialize};

use crate::fusion::AblationFlags;
use crate::model::ShuttleNet;
use crate::rally_data::{CoordMean, DataError, Dataset, PlayerRegistry, Rally, MAX_RALLY_LEN};

pub use ablate::{ablate, format_report, AblationRow, MeanStd};
pub use adam::Adam;
pub use evaluate::{
    evaluate, rollout, score_rollout, teacher_forced_accuracy, Evaluation, Metrics, RallyEval,
    RolloutStep,
};
pub use forecast::{
    forecast, parse_observed, ForecastRequest, ForecastStep, ObservedStroke, Rollout,
};
pub use model_file::{
    load_model, load_model_from_str, save_model, save_model_to_string, MODEL_FORMAT_VERSION,
};
pub use train::{train, train_model, EpochStats, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no rally is longer than tau = {tau}; nothing to train or evaluate on")]
    NoUsableRallies { tau: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("player `{0}` is not known to the model")]
    UnknownPlayer(String),
    #[error("invalid forecast request: {0}")]
    Forecast(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub tau: usize,
    pub k: usize,
    pub seed: u64,
    pub flags: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 2,
            ff_dim: 64,
            max_len: MAX_RALLY_LEN,
            dropout: 0.1,
            batch_size: 32,
            epochs: 150,
            learning_rate: 1e-4,
            tau: 4,
            k: 10,
            seed: 42,
            flags: AblationFlags::FULL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.d == 0 || self.heads == 0 || self.ff_dim == 0 || self.batch_size == 0 || self.k == 0
        {
            return bad("d, heads, ff_dim, batch_size and k must be positive");
        }
        if self.max_len < 2 || self.max_len > MAX_RALLY_LEN {
            return bad(&format!("max_len must be in [2, {MAX_RALLY_LEN}]"));
        }
        if self.tau == 0 || self.tau >= self.max_len {
            return bad("tau must satisfy 1 <= tau < max_len");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        self.flags.validate().map_err(HarnessError::Config)
    }
}

/// A trained network with the vocabulary and coordinate offset it was fit on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub net: ShuttleNet,
    pub players: PlayerRegistry,
    pub coord_mean: CoordMean,
}

impl TrainedModel {
    /// Re-indexes `data` onto the model's player table and centers it on the
    /// model's coordinate mean.
    pub fn prepare(&self, data: &Dataset) -> Result<Dataset> {
        let mut out = data.denormalize();
        for r in &mut out.rallies {
            let map = |p| {
                let name = data.players.name(p);
                self.players
                    .lookup(name)
                    .ok_or_else(|| HarnessError::UnknownPlayer(name.to_string()))
            };
            r.player_a = map(r.player_a)?;
            r.player_b = map(r.player_b)?;
            for s in &mut r.strokes {
                s.player = map(s.player)?;
            }
        }
        out.players = self.players.clone();
        Ok(out.normalize_with(self.coord_mean))
    }
}

/// Rallies cut to `max_len` strokes and filtered to those longer than `tau`.
/// Returns the dataset indices alongside.
pub(crate) fn usable_rallies(data: &Dataset, tau: usize, max_len: usize) -> Vec<(usize, Rally)> {
    let mut out = Vec::new();
    let mut short = 0;
    for (i, r) in data.rallies.iter().enumerate() {
        if r.len() <= tau {
            short += 1;
            continue;
        }
        let mut r = r.clone();
        if r.len() > max_len {
            log::info!(
                "rally `{}` truncated from {} to {max_len} strokes",
                r.rally_id,
                r.len()
            );
            r.strokes.truncate(max_len);
        }
        out.push((i, r));
    }
    if short > 0 {
        log::info!("skipped {short} rallies with at most tau = {tau} strokes");
    }
    out
}
