//! Network versus Monte Carlo comparison and CSV tables.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::hjm::IntegrationMatrix;
use crate::market_data::CurveDataset;
use crate::mc::{simulate_price, McConfig};
use crate::neural::NetworkParams;
use crate::pricing::price;
use crate::trainer::{Sample, Sampler, SamplerConfig, TEST_STREAM};
use crate::vol_model::VolModel;

/// `n` plain draws (no zero-strike relabeling) from the test stream of `seed`.
pub fn make_test_set(dataset: &CurveDataset, cfg: &SamplerConfig, n: usize, seed: u64) -> Result<Vec<Sample>> {
    let cfg = SamplerConfig {
        seed,
        ..cfg.clone()
    };
    Ok(Sampler::new(dataset, &cfg, TEST_STREAM)?.draw_plain(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub finn_price: f64,
    pub mc_price: f64,
    pub mc_std_error: f64,
    pub strike: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub k: usize,
    pub mae: f64,
    pub mc_time_per_contract: f64,
    pub finn_time_per_contract: f64,
    pub speedup: f64,
    pub n_contracts: usize,
    pub scatter: Vec<ScatterRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub mc: McConfig,
    /// Timed repetitions of the network loop (median reported) after one warmup pass.
    pub finn_reps: usize,
    /// Timed repetitions of the Monte Carlo loop; its prices come from the first.
    pub mc_reps: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            mc: McConfig::default(),
            finn_reps: 5,
            mc_reps: 1,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median seconds per contract of the network pricing loop, and its prices.
pub fn time_network(model: &NetworkParams, dataset: &CurveDataset, tests: &[Sample], reps: usize) -> Result<(f64, Vec<f64>)> {
    let run = || -> Result<Vec<f64>> {
        tests
            .iter()
            .map(|s| {
                let r = &dataset.records[s.record];
                price(model, &r.curve, &r.params, &s.contract).map(|q| q.price)
            })
            .collect()
    };
    let prices = run()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let p = run()?;
        times.push(t.elapsed().as_secs_f64());
        debug_assert_eq!(p, prices);
    }
    Ok((median(times) / tests.len().max(1) as f64, prices))
}

/// Seconds per contract of the Monte Carlo loop, and its (price, SE) pairs.
pub fn time_monte_carlo(
    dataset: &CurveDataset,
    vols: &VolModel,
    tests: &[Sample],
    mc: &McConfig,
    reps: usize,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let c = IntegrationMatrix::new(&dataset.grid);
    let mut out = Vec::new();
    let mut times = Vec::new();
    for rep in 0..reps.max(1) {
        let t = Instant::now();
        for (i, s) in tests.iter().enumerate() {
            let r = &dataset.records[s.record];
            let res = simulate_price(&r.curve, vols, &c, &s.contract, mc).map_err(|e| {
                FinnError::ContractFailed {
                    index: i,
                    contract: format!("{:?} on record {}", s.contract, s.record),
                    source: Box::new(e),
                }
            })?;
            if rep == 0 {
                out.push((res.price, res.std_error));
            }
        }
        times.push(t.elapsed().as_secs_f64());
    }
    Ok((median(times) / tests.len().max(1) as f64, out))
}

/// Benchmark on a fresh `n`-contract test set drawn with the default sampler.
pub fn run_benchmark(
    model: &NetworkParams,
    dataset: &CurveDataset,
    vols: &VolModel,
    opts: &BenchOptions,
    n: usize,
    seed: u64,
) -> Result<BenchReport> {
    let tests = make_test_set(dataset, &SamplerConfig::default(), n, seed)?;
    run_benchmark_on(model, dataset, vols, opts, &tests)
}

pub fn run_benchmark_on(
    model: &NetworkParams,
    dataset: &CurveDataset,
    vols: &VolModel,
    opts: &BenchOptions,
    tests: &[Sample],
) -> Result<BenchReport> {
    if !model.grid.same_as(&dataset.grid) {
        return Err(FinnError::GridMismatch {
            model_k: model.grid.k(),
            model_tau_max: model.grid.tau_max(),
            curve_k: dataset.grid.k(),
            curve_tau_max: dataset.grid.tau_max(),
        });
    }
    let (finn_t, finn) = time_network(model, dataset, tests, opts.finn_reps)?;
    let (mc_t, mc) = time_monte_carlo(dataset, vols, tests, &opts.mc, opts.mc_reps)?;
    let scatter: Vec<ScatterRow> = tests
        .iter()
        .zip(finn.iter().zip(&mc))
        .map(|(s, (&f, &(m, se)))| ScatterRow {
            finn_price: f,
            mc_price: m,
            mc_std_error: se,
            strike: s.contract.strike,
        })
        .collect();
    let n = scatter.len();
    let mae = if n == 0 {
        0.0
    } else {
        scatter.iter().map(|r| (r.finn_price - r.mc_price).abs()).sum::<f64>() / n as f64
    };
    Ok(BenchReport {
        k: dataset.grid.k(),
        mae,
        mc_time_per_contract: mc_t,
        finn_time_per_contract: finn_t,
        speedup: mc_t / finn_t,
        n_contracts: n,
        scatter,
    })
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// Writes `error.csv` (k, mae), `timing.csv` (k, mc_s, finn_s, speedup, mae)
/// and `scatter.csv` (k, finn_price, mc_price, mc_std_error, strike) into `dir`.
pub fn emit_tables(reports: &[BenchReport], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut err = csv::Writer::from_path(dir.join("error.csv"))?;
    err.write_record(["k", "mae"])?;
    let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
    timing.write_record(["k", "mc_s", "finn_s", "speedup", "mae"])?;
    let mut scatter = csv::Writer::from_path(dir.join("scatter.csv"))?;
    scatter.write_record(["k", "finn_price", "mc_price", "mc_std_error", "strike"])?;
    for r in reports {
        let k = r.k.to_string();
        err.write_record([k.clone(), fmt(r.mae)])?;
        timing.write_record([
            k.clone(),
            fmt(r.mc_time_per_contract),
            fmt(r.finn_time_per_contract),
            fmt(r.speedup),
            fmt(r.mae),
        ])?;
        for s in &r.scatter {
            scatter.write_record([
                k.clone(),
                fmt(s.finn_price),
                fmt(s.mc_price),
                fmt(s.mc_std_error),
                fmt(s.strike),
            ])?;
        }
    }
    err.flush()?;
    timing.flush()?;
    scatter.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
