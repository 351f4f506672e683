//! Synthetic daily Svensson parameter histories for demos and tests.
//!
//! Each parameter follows a discretized Ornstein-Uhlenbeck process around a
//! typical US-Treasury level; decay scales evolve in log space so they stay
//! positive.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::market_data::SvenssonParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: usize,
    /// Long-run levels of (beta0..beta3, tau1, tau2).
    pub mean: [f64; 6],
    /// Daily shock sizes; for tau1/tau2 in log units.
    pub daily_vol: [f64; 6],
    /// Mean reversion per day.
    pub reversion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 2000,
            mean: [0.045, -0.02, -0.01, 0.01, 1.5, 8.0],
            daily_vol: [0.0006, 0.0009, 0.0015, 0.0015, 0.01, 0.01],
            reversion: 0.005,
            seed: 0,
        }
    }
}

/// Business-day style labels `D00000`, `D00001`, ...
fn label(i: usize) -> String {
    format!("D{i:05}")
}

pub fn generate(cfg: &SynthConfig) -> Vec<SvenssonParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = [
        cfg.mean[0],
        cfg.mean[1],
        cfg.mean[2],
        cfg.mean[3],
        cfg.mean[4].ln(),
        cfg.mean[5].ln(),
    ];
    let mut state = target;
    let mut out = Vec::with_capacity(cfg.days);
    for i in 0..cfg.days {
        let v = [
            state[0],
            state[1],
            state[2],
            state[3],
            state[4].exp(),
            state[5].exp(),
        ];
        out.push(SvenssonParams::from_array(v, label(i)));
        for j in 0..6 {
            let z: f64 = StandardNormal.sample(&mut rng);
            state[j] += cfg.reversion * (target[j] - state[j]) + cfg.daily_vol[j] * z;
        }
    }
    out
}
