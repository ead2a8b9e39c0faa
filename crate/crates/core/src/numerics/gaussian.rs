//! Softmax and the bivariate normal used by the landing-area head.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Rng;

/// Lower bound applied to `1 - rho^2` before it is used as a divisor.
pub const ONE_MINUS_RHO2_FLOOR: f64 = 1e-9;

/// Shift-stabilized softmax. Panics on an empty vector.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-step bivariate Gaussian over landing coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl GaussianParams {
    pub fn new(mu_x: f64, mu_y: f64, sigma_x: f64, sigma_y: f64, rho: f64) -> Self {
        let g = Self {
            mu_x,
            mu_y,
            sigma_x,
            sigma_y,
            rho,
        };
        assert!(g.is_valid(), "invalid Gaussian parameters {g:?}");
        g
    }

    /// Maps a raw 5-vector `(mx, my, log sx, log sy, atanh rho)` to parameters.
    pub fn from_raw(raw: &[f64]) -> Self {
        assert_eq!(raw.len(), 5);
        Self {
            mu_x: raw[0],
            mu_y: raw[1],
            sigma_x: raw[2].exp(),
            sigma_y: raw[3].exp(),
            rho: raw[4].tanh(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mu_x.is_finite()
            && self.mu_y.is_finite()
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.sigma_x.is_finite()
            && self.sigma_y.is_finite()
            && self.rho.abs() < 1.0
    }

    /// Shifts the mean by `(dx, dy)`; used to map forecasts back to court units.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            mu_x: self.mu_x + dx,
            mu_y: self.mu_y + dy,
            ..*self
        }
    }
}

/// Negative log-density of `(x, y)` under `g`.
pub fn bvn_nll(x: f64, y: f64, g: &GaussianParams) -> f64 {
    assert!(
        x.is_finite() && y.is_finite() && g.is_valid(),
        "bvn_nll needs finite inputs and valid parameters"
    );
    let zx = (x - g.mu_x) / g.sigma_x;
    let zy = (y - g.mu_y) / g.sigma_y;
    let one_m = (1.0 - g.rho * g.rho).max(ONE_MINUS_RHO2_FLOOR);
    let q = (zx * zx - 2.0 * g.rho * zx * zy + zy * zy) / one_m;
    (2.0 * PI).ln() + g.sigma_x.ln() + g.sigma_y.ln() + 0.5 * one_m.ln() + 0.5 * q
}

/// Draws one point: `x = mx + sx z1`, `y = my + sy (rho z1 + sqrt(1 - rho^2) z2)`.
pub fn bvn_sample(g: &GaussianParams, rng: &mut Rng) -> (f64, f64) {
    let z1 = rng.standard_normal();
    let z2 = rng.standard_normal();
    let x = g.mu_x + g.sigma_x * z1;
    let y = g.mu_y + g.sigma_y * (g.rho * z1 + (1.0 - g.rho * g.rho).sqrt() * z2);
    (x, y)
}
