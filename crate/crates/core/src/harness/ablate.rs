use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, Result, TrainConfig};
use crate::fusion::AblationFlags;
use crate::rally_data::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        assert!(!xs.is_empty());
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    pub ce: MeanStd,
    pub mse: MeanStd,
    pub mae: MeanStd,
    /// Per-seed `(ce, mse, mae)`.
    pub runs: Vec<(f64, f64, f64)>,
}

/// Trains and evaluates every variant once per seed. `cfg.flags` and
/// `cfg.seed` are overridden per run.
pub fn ablate(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    variants: &[(String, AblationFlags)],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for (name, flags) in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run_cfg = TrainConfig {
                flags: *flags,
                seed,
                ..cfg.clone()
            };
            log::info!("ablation `{name}`, seed {seed}");
            let out = train(train_set, &run_cfg)?;
            let m = evaluate(&out.model, test_set, run_cfg.tau, run_cfg.k, seed)?.metrics;
            runs.push((m.ce, m.mse, m.mae));
        }
        let col =
            |f: fn(&(f64, f64, f64)) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            name: name.clone(),
            flags: *flags,
            ce: col(|r| r.0),
            mse: col(|r| r.1),
            mae: col(|r| r.2),
            runs,
        });
    }
    Ok(rows)
}

pub fn format_report(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let _ = writeln!(
        s,
        "{:<width$}  {:>17}  {:>17}  {:>17}",
        "variant", "CE", "MSE", "MAE"
    );
    for r in rows {
        let cell = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        let _ = writeln!(
            s,
            "{:<width$}  {:>17}  {:>17}  {:>17}",
            r.name,
            cell(r.ce),
            cell(r.mse),
            cell(r.mae)
        );
    }
    s
}
