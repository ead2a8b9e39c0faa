use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{rollout, HarnessError, Result, TrainedModel};
use crate::embedding::StrokeInput;
use crate::numerics::{GaussianParams, Rng};
use crate::rally_data::{DataError, ShotType, HEADER};

const FORECAST_STREAM: u64 = 4;

/// An observed stroke in raw court coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedStroke {
    pub player: String,
    pub shot_type: ShotType,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRequest {
    /// Strokes so far, in order; the first hitter is the server.
    pub observed: Vec<ObservedStroke>,
    /// Receiving player; required when only one stroke has been observed.
    pub opponent: Option<String>,
    pub horizon: usize,
    pub rollouts: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    /// 0-based rally position of the predicted stroke.
    pub position: usize,
    pub player: String,
    /// Probability per shot type, in the fixed type order.
    pub type_probs: Vec<(ShotType, f64)>,
    /// Landing distribution in raw court coordinates.
    pub gaussian: GaussianParams,
    pub sampled_type: ShotType,
    pub sampled_x: f64,
    pub sampled_y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: Vec<ForecastStep>,
}

/// Reads the strokes of one partial rally in the rally CSV format. Only
/// `player`, `shot_type`, `x` and `y` are used.
pub fn parse_observed<R: Read>(source: R) -> Result<Vec<ObservedStroke>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(DataError::from)?
        .iter()
        .map(String::from)
        .collect();
    if header != HEADER {
        return Err(DataError::Header {
            expected: HEADER.join(","),
            found: header.join(","),
        }
        .into());
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(DataError::from)?;
        let line = i + 2;
        let bad = |m: String| HarnessError::Forecast(format!("row {line}: {m}"));
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k]
                .parse()
                .map_err(|_| bad(format!("bad coordinate `{}`", &rec[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("non-finite coordinate".into()))
            }
        };
        out.push(ObservedStroke {
            player: rec[3].to_string(),
            shot_type: rec[4].parse().map_err(bad)?,
            x: num(5)?,
            y: num(6)?,
        });
    }
    Ok(out)
}

/// Independent rollouts continuing the observed strokes for `horizon` steps.
pub fn forecast(model: &TrainedModel, req: &ForecastRequest) -> Result<Vec<Rollout>> {
    let bad = |m: &str| Err(HarnessError::Forecast(m.to_string()));
    if req.observed.is_empty() {
        return bad("at least one observed stroke is required");
    }
    if req.horizon == 0 || req.rollouts == 0 {
        return bad("horizon and rollout count must be positive");
    }
    let max_len = model.net.config.max_len;
    if req.observed.len() + req.horizon > max_len {
        return Err(HarnessError::Forecast(format!(
            "{} observed strokes plus horizon {} exceed max_len {max_len}",
            req.observed.len(),
            req.horizon
        )));
    }
    let server = req.observed[0].player.clone();
    let receiver = match (req.observed.get(1), &req.opponent) {
        (Some(s), Some(o)) if &s.player != o => {
            return bad("opponent does not match the observed receiver")
        }
        (Some(s), _) => s.player.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => return bad("the opponent must be given when only one stroke is observed"),
    };
    if server == receiver {
        return bad("server and receiver must differ");
    }
    for (i, s) in req.observed.iter().enumerate() {
        let expected = if i % 2 == 0 { &server } else { &receiver };
        if &s.player != expected {
            return bad("observed players do not alternate");
        }
    }
    let id = |name: &str| {
        model
            .players
            .lookup(name)
            .map(|p| p.0)
            .ok_or_else(|| HarnessError::UnknownPlayer(name.to_string()))
    };
    let ids = [id(&server)?, id(&receiver)?];
    let names = [server, receiver];
    let m = model.coord_mean;
    let observed: Vec<StrokeInput> = req
        .observed
        .iter()
        .enumerate()
        .map(|(i, s)| StrokeInput {
            shot: s.shot_type.class_index(),
            player: ids[i % 2],
            x: s.x - m.x,
            y: s.y - m.y,
        })
        .collect();
    let tau = observed.len();
    let next: Vec<usize> = (tau..tau + req.horizon).map(|p| ids[p % 2]).collect();
    let master = Rng::new(req.seed);
    Ok((0..req.rollouts)
        .map(|r| {
            let mut rng = master.derive(&[FORECAST_STREAM, r as u64]);
            let steps = rollout(model, &observed, &next, &mut rng);
            Rollout {
                steps: steps
                    .into_iter()
                    .enumerate()
                    .map(|(j, s)| ForecastStep {
                        position: tau + j,
                        player: names[(tau + j) % 2].clone(),
                        type_probs: ShotType::ALL
                            .iter()
                            .map(|&t| (t, s.prediction.prob(t)))
                            .collect(),
                        gaussian: s.prediction.gaussian.translated(m.x, m.y),
                        sampled_type: s.shot,
                        sampled_x: s.x + m.x,
                        sampled_y: s.y + m.y,
                    })
                    .collect(),
            }
        })
        .collect())
}
