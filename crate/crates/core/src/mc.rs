//! Euler-Maruyama Monte Carlo pricer for caplets under the discretized
//! Musiela dynamics with local volatility.
//!
//! Each path draws from its own ChaCha stream keyed by `(seed, path index)`,
//! and per-path values are reduced in index order, so serial and parallel
//! runs give bit-identical prices.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::hjm::{caplet_payoff_rates, CapletContract, DriftKernel, IntegrationMatrix};
use crate::market_data::DiscreteCurve;
use crate::vol_model::{VolModel, N_FACTORS};

/// Above this share of non-finite paths the price is refused.
const MAX_REJECT_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Time step in years; the last step is shortened to land on settlement.
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Fan paths out over the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 0.01,
            seed: 0,
            antithetic: false,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub price: f64,
    pub std_error: f64,
    #[serde(rename = "elapsed_s")]
    pub elapsed: f64,
    #[serde(skip_serializing_if = "is_zero", default)]
    pub rejected_paths: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// Rates used for the `sqrt(f)` volatility scaling: floored at zero.
///
/// The simulated state itself is never floored.
pub fn negative_rate_policy(f: &[f64]) -> Vec<f64> {
    f.iter().map(|&x| x.max(0.0)).collect()
}

/// Fourth-order central differences inside, fourth-order one-sided stencils
/// on the two outermost nodes at each end. Grids with fewer than five nodes
/// fall back to second order.
pub fn fd_slope(f: &[f64], h: f64, out: &mut [f64]) {
    let k = f.len();
    if k < 3 {
        let d = (f[k - 1] - f[0]) / h;
        out.iter_mut().for_each(|o| *o = d);
        return;
    }
    if k < 5 {
        let inv2h = 0.5 / h;
        out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * inv2h;
        for i in 1..k - 1 {
            out[i] = (f[i + 1] - f[i - 1]) * inv2h;
        }
        out[k - 1] = (3.0 * f[k - 1] - 4.0 * f[k - 2] + f[k - 3]) * inv2h;
        return;
    }
    let inv12h = 1.0 / (12.0 * h);
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * inv12h;
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * inv12h;
    for i in 2..k - 2 {
        out[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) * inv12h;
    }
    out[k - 2] = (3.0 * f[k - 1] + 10.0 * f[k - 2] - 18.0 * f[k - 3] + 6.0 * f[k - 4] - f[k - 5]) * inv12h;
    out[k - 1] = (25.0 * f[k - 1] - 48.0 * f[k - 2] + 36.0 * f[k - 3] - 16.0 * f[k - 4] + 3.0 * f[k - 5]) * inv12h;
}

/// Steps of size `dt` with a final partial step so that they sum to `horizon`.
fn step_sizes(horizon: f64, dt: f64) -> (usize, f64) {
    let n = ((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let last = horizon - (n - 1) as f64 * dt;
    (n, last)
}

/// One Euler path of the forward curve over `horizon`, stepping as the pricer
/// does. `None` if the state stops being finite.
pub fn evolve_curve<R: rand::Rng + ?Sized>(
    rates: &[f64],
    kernel: &mut DriftKernel,
    spacing: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let k = rates.len();
    let mut f = rates.to_vec();
    let (mut slope, mut mu) = (vec![0.0; k], vec![0.0; k]);
    let (n_steps, last) = step_sizes(horizon, dt);
    for step in 0..n_steps {
        let h = if step + 1 == n_steps { last } else { dt };
        let z: [f64; N_FACTORS] = std::array::from_fn(|_| StandardNormal.sample(rng));
        fd_slope(&f, spacing, &mut slope);
        kernel.drift_into(&f, &slope, &mut mu);
        let sig = kernel.sigma();
        for j in 0..k {
            let shock: f64 = (0..N_FACTORS).map(|n| sig[n][j] * z[n]).sum();
            f[j] += mu[j] * h + h.sqrt() * shock;
        }
    }
    f.iter().all(|x| x.is_finite()).then_some(f)
}

struct PathWorker {
    kernel: DriftKernel,
    slope: Vec<f64>,
    mu: Vec<f64>,
    state: [Vec<f64>; 2],
}

impl PathWorker {
    fn new(vols: &VolModel, c: &IntegrationMatrix) -> Self {
        let k = c.grid().k();
        Self {
            kernel: DriftKernel::new(vols, c),
            slope: vec![0.0; k],
            mu: vec![0.0; k],
            state: [vec![0.0; k], vec![0.0; k]],
        }
    }

    /// Discounted payoff(s) of one path, or of an antithetic pair.
    fn run(
        &mut self,
        curve0: &[f64],
        c: &IntegrationMatrix,
        contract: &CapletContract,
        cfg: &McConfig,
        index: usize,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let legs = if cfg.antithetic { 2 } else { 1 };
        let h_grid = c.grid().spacing();
        let (n_steps, last) = step_sizes(contract.tau1, cfg.dt);
        let mut disc = [0.0; 2];
        for leg in 0..legs {
            self.state[leg].copy_from_slice(curve0);
        }
        let mut z = [0.0; N_FACTORS];
        for step in 0..n_steps {
            let h = if step + 1 == n_steps { last } else { cfg.dt };
            let sqh = h.sqrt();
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            for leg in 0..legs {
                let sign = if leg == 0 { 1.0 } else { -1.0 };
                let f = &mut self.state[leg];
                fd_slope(f, h_grid, &mut self.slope);
                self.kernel.drift_into(f, &self.slope, &mut self.mu);
                let sig = self.kernel.sigma();
                let r_old = f[0];
                for k in 0..f.len() {
                    let shock = sig[0][k] * z[0] + sig[1][k] * z[1] + sig[2][k] * z[2];
                    f[k] += self.mu[k] * h + sign * sqh * shock;
                }
                disc[leg] += 0.5 * (r_old + f[0]) * h;
            }
        }
        let mut total = 0.0;
        for leg in 0..legs {
            let payoff = caplet_payoff_rates(c, &self.state[leg], contract).unwrap_or(f64::NAN);
            total += (-disc[leg]).exp() * payoff;
        }
        total / legs as f64
    }
}

/// Fixed-order pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Monte Carlo caplet price at the curve `curve0`.
pub fn simulate_price(
    curve0: &DiscreteCurve,
    vols: &VolModel,
    c: &IntegrationMatrix,
    contract: &CapletContract,
    cfg: &McConfig,
) -> Result<McResult> {
    let start = Instant::now();
    if !curve0.grid.same_as(c.grid()) {
        return Err(FinnError::GridMismatch {
            model_k: c.grid().k(),
            model_tau_max: c.grid().tau_max(),
            curve_k: curve0.grid.k(),
            curve_tau_max: curve0.grid.tau_max(),
        });
    }
    contract.validate(&curve0.grid)?;
    if cfg.n_paths < 2 || !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(FinnError::InvalidParameters(format!(
            "need n_paths >= 2 and dt > 0, got {} and {}",
            cfg.n_paths, cfg.dt
        )));
    }
    if curve0.min_rate() <= 0.0 {
        return Err(FinnError::InvalidParameters(
            "initial curve must be strictly positive".into(),
        ));
    }

    if contract.tau1 == 0.0 {
        let price = caplet_payoff_rates(c, &curve0.rates, contract)?;
        return Ok(McResult {
            price,
            std_error: 0.0,
            elapsed: start.elapsed().as_secs_f64(),
            rejected_paths: 0,
        });
    }

    let samples = if cfg.antithetic {
        cfg.n_paths.div_ceil(2)
    } else {
        cfg.n_paths
    };
    let values: Vec<f64> = if cfg.parallel {
        (0..samples)
            .into_par_iter()
            .map_init(
                || PathWorker::new(vols, c),
                |w, i| w.run(&curve0.rates, c, contract, cfg, i),
            )
            .collect()
    } else {
        let mut w = PathWorker::new(vols, c);
        (0..samples)
            .map(|i| w.run(&curve0.rates, c, contract, cfg, i))
            .collect()
    };

    let accepted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let rejected = samples - accepted.len();
    if rejected as f64 > MAX_REJECT_SHARE * samples as f64 || accepted.len() < 2 {
        return Err(FinnError::ExplodingPaths {
            rejected,
            paths: samples,
        });
    }
    let n = accepted.len() as f64;
    let mean = pairwise_sum(&accepted) / n;
    let sq: Vec<f64> = accepted.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    Ok(McResult {
        price: mean,
        std_error: (var / n).sqrt(),
        elapsed: start.elapsed().as_secs_f64(),
        rejected_paths: rejected,
    })
}
