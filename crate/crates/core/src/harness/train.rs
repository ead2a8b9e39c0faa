use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{usable_rallies, Adam, HarnessError, Result, TrainConfig, TrainedModel};
use crate::graph::Graph;
use crate::model::{rally_inputs, ModelConfig, ShuttleNet};
use crate::numerics::{Matrix, Rng};
use crate::rally_data::Dataset;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Per-stroke mean losses over one epoch (training mode, so with dropout).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub type_loss: f64,
    pub area_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<EpochStats>,
}

/// Trains a fresh model. Raw datasets are centered on their own mean first.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.players.is_empty() {
        return Err(HarnessError::NoUsableRallies { tau: cfg.tau });
    }
    let mean = data.coord_mean.unwrap_or_else(|| data.coordinate_mean());
    let net = ShuttleNet::new(
        ModelConfig {
            d: cfg.d,
            heads: cfg.heads,
            ff_dim: cfg.ff_dim,
            max_len: cfg.max_len,
            num_players: data.players.len(),
            flags: cfg.flags,
        },
        &mut Rng::new(cfg.seed).derive(&[INIT_STREAM]),
    );
    let model = TrainedModel {
        net,
        players: data.players.clone(),
        coord_mean: mean,
    };
    train_model(model, data, cfg)
}

/// Continues training `model` on `data`.
pub fn train_model(
    mut model: TrainedModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = model.prepare(data)?;
    let rallies: Vec<Vec<_>> = usable_rallies(&data, cfg.tau, cfg.max_len)
        .into_iter()
        .map(|(_, r)| rally_inputs(&r))
        .collect();
    if rallies.is_empty() {
        return Err(HarnessError::NoUsableRallies { tau: cfg.tau });
    }
    log::info!(
        "training on {} rallies, {} parameters, {} epochs",
        rallies.len(),
        model.net.params.scalar_count(),
        cfg.epochs
    );

    let master = Rng::new(cfg.seed);
    let mut opt = Adam::new(&model.net.params, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..rallies.len()).collect();
    for epoch in 0..cfg.epochs {
        master
            .derive(&[SHUFFLE_STREAM, epoch as u64])
            .shuffle(&mut order);
        let (mut ts, mut as_, mut n) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let net = &model.net;
            let results: Vec<(f64, f64, usize, Vec<Matrix>)> = batch
                .par_iter()
                .map(|&i| {
                    let rng = master.derive(&[DROPOUT_STREAM, epoch as u64, i as u64]);
                    let mut g = Graph::train(&net.params, cfg.dropout, rng);
                    let l = net.rally_loss(&mut g, &rallies[i], cfg.tau);
                    let total = g.tape.add(l.type_sum, l.area_sum);
                    let grads = g.tape.backward(total);
                    (
                        g.tape.scalar(l.type_sum),
                        g.tape.scalar(l.area_sum),
                        l.strokes,
                        g.tape.param_grads(&net.params, &grads),
                    )
                })
                .collect();
            let strokes: usize = results.iter().map(|r| r.2).sum();
            let mut sum: Vec<Matrix> = results[0].3.clone();
            for r in &results[1..] {
                for (acc, g) in sum.iter_mut().zip(&r.3) {
                    acc.add_assign(g);
                }
            }
            let scale = 1.0 / strokes as f64;
            let sum: Vec<Matrix> = sum.iter().map(|m| m.scale(scale)).collect();
            for r in &results {
                ts += r.0;
                as_ += r.1;
            }
            n += strokes;
            opt.step(&mut model.net.params, &sum);
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: (ts + as_) / n as f64,
            type_loss: ts / n as f64,
            area_loss: as_ / n as f64,
        };
        log::debug!(
            "epoch {}: loss {:.4} (type {:.4}, area {:.4})",
            stats.epoch,
            stats.loss,
            stats.type_loss,
            stats.area_loss
        );
        history.push(stats);
    }
    Ok(TrainOutcome { model, history })
}
