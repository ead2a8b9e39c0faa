//! Shot-type and landing-area heads over fused contexts, and their losses.
//!
//! Both heads read `x = z + p_next`, the fused context plus the embedding of
//! the player who hits the predicted stroke:
//!
//! ```text
//! ŝ = softmax(x W_s)                  (pad class masked out)
//! r = x W_a,  μ = r[0..2], σ = exp r[2..4], ρ = tanh r[4]
//! ```

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::numerics::{
    softmax, uniform_matrix, GaussianParams, Matrix, ParamId, ParamStore, Rng, Var,
};
use crate::rally_data::{ShotType, NUM_SHOT_CLASSES};

const PAD_FILL: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `d × N_s`
    pub w_s: ParamId,
    /// `d × 5`
    pub w_a: ParamId,
}

impl HeadParams {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, d: usize) -> Self {
        let lim = |out: usize| (6.0 / (d + out) as f64).sqrt();
        Self {
            w_s: store.add(
                "head.shot",
                uniform_matrix(rng, d, NUM_SHOT_CLASSES, lim(NUM_SHOT_CLASSES)),
            ),
            w_a: store.add("head.area", uniform_matrix(rng, d, 5, lim(5))),
        }
    }
}

/// Head outputs for `n` steps.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `n × N_s`, pad column filled with a large negative value.
    pub logits: Var,
    /// `n × 5` raw Gaussian parameters.
    pub raw: Var,
}

/// Applies both heads to `z + players` (each `n × d`).
pub fn heads_forward(g: &mut Graph, heads: &HeadParams, z: Var, players: Var) -> HeadOutputs {
    assert_eq!(
        g.value(z).shape(),
        g.value(players).shape(),
        "context/player shape mismatch"
    );
    let x = g.tape.add(z, players);
    let logits = g.linear(x, heads.w_s);
    let n = g.value(logits).rows();
    let pad: Vec<bool> = (0..n * NUM_SHOT_CLASSES)
        .map(|i| i % NUM_SHOT_CLASSES == 0)
        .collect();
    let logits = g.tape.masked_fill(logits, &pad, PAD_FILL);
    let raw = g.linear(x, heads.w_a);
    HeadOutputs { logits, raw }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    /// Probability of each [`ShotType`] in [`ShotType::ALL`] order.
    pub type_probs: Vec<f64>,
    pub gaussian: GaussianParams,
}

impl StepPrediction {
    /// From one row of logits (pad column first) and one raw 5-vector.
    pub fn from_row(logits: &[f64], raw: &[f64]) -> Self {
        assert_eq!(logits.len(), NUM_SHOT_CLASSES);
        assert_eq!(raw.len(), 5);
        Self {
            type_probs: softmax(&logits[1..]),
            gaussian: GaussianParams::from_raw(&[raw[0], raw[1], raw[2], raw[3], raw[4]]),
        }
    }

    /// All steps of a head evaluation.
    pub fn from_outputs(g: &Graph, out: HeadOutputs) -> Vec<Self> {
        let (l, r) = (g.value(out.logits), g.value(out.raw));
        (0..l.rows())
            .map(|i| Self::from_row(l.row(i), r.row(i)))
            .collect()
    }

    pub fn prob(&self, s: ShotType) -> f64 {
        self.type_probs[s.ordinal()]
    }

    pub fn sample_type(&self, rng: &mut Rng) -> ShotType {
        ShotType::ALL[rng.categorical(&self.type_probs)]
    }

    /// Shot types by decreasing probability.
    pub fn ranked(&self) -> Vec<(ShotType, f64)> {
        let mut v: Vec<(ShotType, f64)> =
            ShotType::ALL.iter().map(|&s| (s, self.prob(s))).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }
}

/// Direct evaluation of both heads for one step from plain vectors.
pub fn predict_step(
    store: &ParamStore,
    heads: &HeadParams,
    z: &[f64],
    player: &[f64],
) -> StepPrediction {
    assert_eq!(z.len(), player.len(), "context/player dimension mismatch");
    let x = Matrix::row_vector(&z.iter().zip(player).map(|(a, b)| a + b).collect::<Vec<_>>());
    let mut logits = x.matmul(store.get(heads.w_s));
    logits[(0, 0)] = PAD_FILL;
    let raw = x.matmul(store.get(heads.w_a));
    StepPrediction::from_row(logits.row(0), raw.row(0))
}

fn kept(valid: &[bool]) -> Vec<usize> {
    let idx: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    assert!(!idx.is_empty(), "loss over zero unmasked positions");
    idx
}

/// Summed cross-entropy over positions with `valid[i]`. `types` are class
/// indices (1..N_s).
pub fn type_loss_sum(g: &mut Graph, logits: Var, types: &[usize], valid: &[bool]) -> Var {
    assert_eq!(types.len(), valid.len());
    assert_eq!(g.value(logits).rows(), valid.len());
    let idx = kept(valid);
    let rows = g.tape.gather_rows(logits, &idx);
    let targets: Vec<usize> = idx.iter().map(|&i| types[i]).collect();
    assert!(
        targets.iter().all(|&t| t > 0 && t < NUM_SHOT_CLASSES),
        "target is the pad class"
    );
    g.tape.cross_entropy_sum(rows, &targets)
}

/// Summed Gaussian NLL over positions with `valid[i]`. `coords` is `n × 2`.
pub fn area_loss_sum(g: &mut Graph, raw: Var, coords: &Matrix, valid: &[bool]) -> Var {
    assert_eq!(coords.rows(), valid.len());
    assert_eq!(g.value(raw).rows(), valid.len());
    let idx = kept(valid);
    let rows = g.tape.gather_rows(raw, &idx);
    let targets = Matrix::from_fn(idx.len(), 2, |r, c| coords[(idx[r], c)]);
    g.tape.bvn_nll_sum(rows, &targets)
}

fn mean(g: &mut Graph, sum: Var, valid: &[bool]) -> Var {
    let n = valid.iter().filter(|&&v| v).count();
    g.tape.scale(sum, 1.0 / n as f64)
}

/// Mean cross-entropy over unmasked positions.
pub fn type_loss(g: &mut Graph, logits: Var, types: &[usize], valid: &[bool]) -> Var {
    let s = type_loss_sum(g, logits, types, valid);
    mean(g, s, valid)
}

/// Mean Gaussian NLL over unmasked positions.
pub fn area_loss(g: &mut Graph, raw: Var, coords: &Matrix, valid: &[bool]) -> Var {
    let s = area_loss_sum(g, raw, coords, valid);
    mean(g, s, valid)
}

pub fn total_loss(g: &mut Graph, type_loss: Var, area_loss: Var) -> Var {
    g.tape.add(type_loss, area_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bvn_nll;
    use std::f64::consts::{LN_10, PI};

    fn heads(d: usize, seed: u64) -> (ParamStore, HeadParams) {
        let mut store = ParamStore::new();
        let h = HeadParams::new(&mut store, &mut Rng::new(seed), d);
        (store, h)
    }

    #[test]
    fn predictions_are_well_formed() {
        let (store, h) = heads(4, 1);
        let mut rng = Rng::new(2);
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
            let p: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let s = predict_step(&store, &h, &z, &p);
            assert!((s.type_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(s.type_probs.len(), 10);
            assert!(
                s.gaussian.sigma_x > 0.0 && s.gaussian.sigma_y > 0.0 && s.gaussian.rho.abs() < 1.0
            );
        }
        let a = predict_step(&store, &h, &[0.5; 4], &[0.1, 0.2, 0.3, 0.4]);
        let b = predict_step(&store, &h, &[0.5; 4], &[-0.1, 0.0, 0.3, 0.2]);
        assert_ne!(a, b);
    }

    #[test]
    fn two_dim_by_hand() {
        let mut store = ParamStore::new();
        let ws = Matrix::from_fn(2, NUM_SHOT_CLASSES, |r, c| {
            (r as f64 + 1.0) * 0.1 * c as f64 - 0.3
        });
        let wa = Matrix::from_rows(&[
            vec![0.5, -0.2, 0.1, 0.3, 0.7],
            vec![-1.0, 0.4, -0.2, 0.05, -0.3],
        ]);
        let h = HeadParams {
            w_s: store.add("s", ws.clone()),
            w_a: store.add("a", wa.clone()),
        };
        let (z, p) = ([0.6, 0.2], [-0.1, 0.3]);
        let x = [z[0] + p[0], z[1] + p[1]];
        let pred = predict_step(&store, &h, &z, &p);
        let logits: Vec<f64> = (1..NUM_SHOT_CLASSES)
            .map(|c| x[0] * ws[(0, c)] + x[1] * ws[(1, c)])
            .collect();
        let zsum: f64 = logits.iter().map(|l| l.exp()).sum();
        for (i, l) in logits.iter().enumerate() {
            assert!((pred.type_probs[i] - l.exp() / zsum).abs() < 1e-15);
        }
        let r: Vec<f64> = (0..5)
            .map(|c| x[0] * wa[(0, c)] + x[1] * wa[(1, c)])
            .collect();
        let gp = pred.gaussian;
        assert!((gp.mu_x - r[0]).abs() < 1e-15 && (gp.mu_y - r[1]).abs() < 1e-15);
        assert!((gp.sigma_x - r[2].exp()).abs() < 1e-15 && (gp.sigma_y - r[3].exp()).abs() < 1e-15);
        assert!((gp.rho - r[4].tanh()).abs() < 1e-15);
    }

    #[test]
    fn uniform_prediction_costs_ln_10() {
        let (mut store, h) = heads(3, 3);
        *store.get_mut(h.w_s) = Matrix::zeros(3, NUM_SHOT_CLASSES);
        let mut g = Graph::eval(&store);
        let z = g.constant(Matrix::filled(4, 3, 0.3));
        let p = g.constant(Matrix::filled(4, 3, -0.2));
        let out = heads_forward(&mut g, &h, z, p);
        let l = type_loss(&mut g, out.logits, &[1, 4, 10, 7], &[true; 4]);
        assert!((g.tape.scalar(l) - LN_10).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let empty = ParamStore::new();
        let mut g = Graph::eval(&empty);
        let logits = Matrix::from_fn(
            2,
            NUM_SHOT_CLASSES,
            |r, c| if c == 3 + r { 0.0 } else { -1e9 },
        );
        let l = g.constant(logits);
        let loss = type_loss(&mut g, l, &[3, 4], &[true, true]);
        assert_eq!(g.tape.scalar(loss), 0.0);
    }

    #[test]
    fn area_loss_at_mean_with_unit_params() {
        let empty = ParamStore::new();
        let mut g = Graph::eval(&empty);
        let raw = g.constant(Matrix::from_rows(&[
            vec![0.3, -0.4, 0.0, 0.0, 0.0],
            vec![1.0, 2.0, 0.0, 0.0, 0.0],
        ]));
        let coords = Matrix::from_rows(&[vec![0.3, -0.4], vec![1.0, 2.0]]);
        let l = area_loss(&mut g, raw, &coords, &[true, true]);
        assert!((g.tape.scalar(l) - (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn shrinking_sigma_toward_truth_lowers_loss() {
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let log_sigma = 1.0 - 0.1 * k as f64;
            let empty = ParamStore::new();
            let mut g = Graph::eval(&empty);
            let raw = g.constant(Matrix::row_vector(&[0.0, 0.0, log_sigma, log_sigma, 0.0]));
            let l = area_loss(&mut g, raw, &Matrix::zeros(1, 2), &[true]);
            let v = g.tape.scalar(l);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn random_losses_match_direct_sums() {
        let mut rng = Rng::new(11);
        let n = 6;
        let valid = [true, false, true, true, false, true];
        let mut logits = uniform_matrix(&mut rng, n, NUM_SHOT_CLASSES, 2.0);
        for i in 0..n {
            logits[(i, 0)] = PAD_FILL;
        }
        let raw = uniform_matrix(&mut rng, n, 5, 0.8);
        let coords = uniform_matrix(&mut rng, n, 2, 1.5);
        let types: Vec<usize> = (0..n).map(|_| 1 + rng.below(10)).collect();
        let empty = ParamStore::new();
        let mut g = Graph::eval(&empty);
        let lv = g.constant(logits.clone());
        let rv = g.constant(raw.clone());
        let lt = type_loss(&mut g, lv, &types, &valid);
        let la = area_loss(&mut g, rv, &coords, &valid);
        let total = total_loss(&mut g, lt, la);
        let (mut ce, mut nll, mut cnt) = (0.0, 0.0, 0.0);
        for i in (0..n).filter(|&i| valid[i]) {
            let row = logits.row(i);
            let m = row[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row[1..].iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ce += lse - row[types[i]];
            let r = raw.row(i);
            nll += bvn_nll(
                coords[(i, 0)],
                coords[(i, 1)],
                &GaussianParams::from_raw(&[r[0], r[1], r[2], r[3], r[4]]),
            );
            cnt += 1.0;
        }
        assert!((g.tape.scalar(lt) - ce / cnt).abs() < 1e-12);
        assert!((g.tape.scalar(la) - nll / cnt).abs() < 1e-12);
        assert!((g.tape.scalar(total) - (ce + nll) / cnt).abs() < 1e-12);
    }

    #[test]
    fn masked_positions_have_no_gradient() {
        let (store, h) = heads(3, 5);
        let mut rng = Rng::new(6);
        let z = uniform_matrix(&mut rng, 4, 3, 1.0);
        let p = uniform_matrix(&mut rng, 4, 3, 1.0);
        let valid = [true, false, true, false];
        let grads = |types: &[usize], coords: &Matrix| {
            let mut g = Graph::eval(&store);
            let zv = g.constant(z.clone());
            let pv = g.constant(p.clone());
            let out = heads_forward(&mut g, &h, zv, pv);
            let lt = type_loss(&mut g, out.logits, types, &valid);
            let la = area_loss(&mut g, out.raw, coords, &valid);
            let l = total_loss(&mut g, lt, la);
            let gr = g.tape.backward(l);
            g.tape.param_grads(&store, &gr)
        };
        let coords = uniform_matrix(&mut rng, 4, 2, 1.0);
        let base = grads(&[1, 2, 3, 4], &coords);
        let mut moved = coords.clone();
        moved[(1, 0)] += 10.0;
        moved[(3, 1)] -= 4.0;
        let other = grads(&[1, 9, 3, 5], &moved);
        assert_eq!(base, other);
    }

    #[test]
    #[should_panic(expected = "zero unmasked positions")]
    fn fully_masked_loss_panics() {
        let empty = ParamStore::new();
        let mut g = Graph::eval(&empty);
        let l = g.constant(Matrix::zeros(2, NUM_SHOT_CLASSES));
        type_loss(&mut g, l, &[1, 2], &[false, false]);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let pred = StepPrediction::from_row(
            &[PAD_FILL, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            &[0.0; 5],
        );
        let mut rng = Rng::new(3);
        let n = 20000;
        let hits = (0..n)
            .filter(|_| pred.sample_type(&mut rng) == ShotType::ALL[0])
            .count();
        assert!((hits as f64 / n as f64 - pred.type_probs[0]).abs() < 0.015);
        assert_eq!(pred.ranked()[0].0, ShotType::ALL[0]);
    }
}
