use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{usable_rallies, HarnessError, Result, TrainedModel};
use crate::embedding::StrokeInput;
use crate::graph::Graph;
use crate::model::rally_inputs;
use crate::numerics::{bvn_sample, Rng};
use crate::predictor::StepPrediction;
use crate::rally_data::{Dataset, ShotType};

const EVAL_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub shot: ShotType,
    /// Sampled landing point, model coordinates.
    pub x: f64,
    pub y: f64,
    pub prediction: StepPrediction,
}

/// Samples strokes `τ..τ+next_players.len()` autoregressively, feeding each
/// sample back as the next decoder input.
pub fn rollout(
    model: &TrainedModel,
    observed: &[StrokeInput],
    next_players: &[usize],
    rng: &mut Rng,
) -> Vec<RolloutStep> {
    assert!(
        !observed.is_empty(),
        "at least one observed stroke is required"
    );
    let net = &model.net;
    let mut dec = vec![*observed.last().unwrap()];
    let mut steps = Vec::with_capacity(next_players.len());
    for j in 0..next_players.len() {
        let mut g = Graph::eval(&net.params);
        let out = net.forward(&mut g, observed, &dec, &next_players[..=j]);
        let l = g.value(out.logits);
        let r = g.value(out.raw);
        let pred = StepPrediction::from_row(l.row(j), r.row(j));
        let shot = pred.sample_type(rng);
        let (x, y) = bvn_sample(&pred.gaussian, rng);
        dec.push(StrokeInput {
            shot: shot.class_index(),
            player: next_players[j],
            x,
            y,
        });
        steps.push(RolloutStep {
            shot,
            x,
            y,
            prediction: pred,
        });
    }
    steps
}

/// `(ce_sum, squared_error_sum, abs_error_sum)` of one rollout against the
/// true strokes. Squared error is `dx² + dy²`, absolute error `|dx| + |dy|`.
pub fn score_rollout(steps: &[RolloutStep], truth: &[StrokeInput]) -> (f64, f64, f64) {
    assert_eq!(steps.len(), truth.len());
    let (mut ce, mut se, mut ae) = (0.0, 0.0, 0.0);
    for (s, t) in steps.iter().zip(truth) {
        let shot = ShotType::from_class_index(t.shot).expect("truth is the pad class");
        ce -= s.prediction.prob(shot).ln();
        let (dx, dy) = (s.x - t.x, s.y - t.y);
        se += dx * dx + dy * dy;
        ae += dx.abs() + dy.abs();
    }
    (ce, se, ae)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RallyEval {
    pub rally_id: String,
    pub strokes: usize,
    pub ce_sum: f64,
    pub se_sum: f64,
    pub ae_sum: f64,
    /// Index of the chosen rollout.
    pub best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ce: f64,
    pub mse: f64,
    pub mae: f64,
    pub strokes: usize,
    pub rallies: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub rallies: Vec<RallyEval>,
}

/// Best-of-`k` evaluation on strokes `τ..N` of every rally longer than `τ`.
/// Rollout `r` of dataset rally `i` draws from a stream derived from
/// `(seed, i, r)`, so the rollouts for `k` are a prefix of those for `k' > k`.
pub fn evaluate(
    model: &TrainedModel,
    data: &Dataset,
    tau: usize,
    k: usize,
    seed: u64,
) -> Result<Evaluation> {
    if tau == 0 || k == 0 {
        return Err(HarnessError::Config("tau and k must be positive".into()));
    }
    let data = model.prepare(data)?;
    let rallies = usable_rallies(&data, tau, model.net.config.max_len);
    if rallies.is_empty() {
        return Err(HarnessError::NoUsableRallies { tau });
    }
    let master = Rng::new(seed);
    let per_rally: Vec<RallyEval> = rallies
        .par_iter()
        .map(|(i, r)| {
            let strokes = rally_inputs(r);
            let truth = &strokes[tau..];
            let next: Vec<usize> = truth.iter().map(|s| s.player).collect();
            let mut best: Option<(usize, (f64, f64, f64))> = None;
            for roll in 0..k {
                let mut rng = master.derive(&[EVAL_STREAM, *i as u64, roll as u64]);
                let steps = rollout(model, &strokes[..tau], &next, &mut rng);
                let score = score_rollout(&steps, truth);
                if best.is_none_or(|(_, b)| score.1 < b.1) {
                    best = Some((roll, score));
                }
            }
            let (best, (ce, se, ae)) = best.unwrap();
            RallyEval {
                rally_id: r.rally_id.clone(),
                strokes: truth.len(),
                ce_sum: ce,
                se_sum: se,
                ae_sum: ae,
                best,
            }
        })
        .collect();
    let n: usize = per_rally.iter().map(|r| r.strokes).sum();
    let sum = |f: fn(&RallyEval) -> f64| per_rally.iter().map(f).sum::<f64>() / n as f64;
    let metrics = Metrics {
        ce: sum(|r| r.ce_sum),
        mse: sum(|r| r.se_sum),
        mae: sum(|r| r.ae_sum),
        strokes: n,
        rallies: per_rally.len(),
    };
    Ok(Evaluation {
        metrics,
        rallies: per_rally,
    })
}

/// Teacher-forced argmax shot-type accuracy on strokes `τ..N`.
pub fn teacher_forced_accuracy(model: &TrainedModel, data: &Dataset, tau: usize) -> Result<f64> {
    let data = model.prepare(data)?;
    let rallies = usable_rallies(&data, tau, model.net.config.max_len);
    if rallies.is_empty() {
        return Err(HarnessError::NoUsableRallies { tau });
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (_, r) in &rallies {
        let s = rally_inputs(r);
        let next: Vec<usize> = s[tau..].iter().map(|x| x.player).collect();
        let mut g = Graph::eval(&model.net.params);
        let out = model
            .net
            .forward(&mut g, &s[..tau], &s[tau - 1..s.len() - 1], &next);
        let logits = g.value(out.logits);
        for (j, t) in s[tau..].iter().enumerate() {
            let row = logits.row(j);
            let arg = (1..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            hit += usize::from(arg == t.shot);
            total += 1;
        }
    }
    Ok(hit as f64 / total as f64)
}
