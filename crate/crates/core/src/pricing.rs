//! Price and Greeks from a trained network.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::hjm::CapletContract;
use crate::market_data::{DiscreteCurve, SvenssonParams};
use crate::neural::{input_vector, tau1_index, NetworkParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceQuote {
    pub price: f64,
    /// Calendar-time decay `-dV/dtau1` per year. The raw tenor derivative
    /// `dV/dtau1` is its negative.
    pub theta: f64,
    /// `dV/df_k` for each grid node.
    pub curve_deltas: Vec<f64>,
    #[serde(rename = "eval_time_s")]
    pub eval_time: f64,
}

impl PriceQuote {
    /// `dV/dtau1`, the opposite sign convention to [`theta`](Self::theta).
    pub fn dv_dtau1(&self) -> f64 {
        -self.theta
    }
}

/// Loads a checkpoint; fails on version or shape mismatch.
pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkParams> {
    NetworkParams::load(path)
}

fn check(model: &NetworkParams, curve: &DiscreteCurve, contract: &CapletContract) -> Result<()> {
    if !model.grid.same_as(&curve.grid) {
        return Err(FinnError::GridMismatch {
            model_k: model.grid.k(),
            model_tau_max: model.grid.tau_max(),
            curve_k: curve.grid.k(),
            curve_tau_max: curve.grid.tau_max(),
        });
    }
    contract.validate(&curve.grid)
}

/// One forward and one reverse pass.
pub fn price(
    model: &NetworkParams,
    curve: &DiscreteCurve,
    svensson: &SvenssonParams,
    contract: &CapletContract,
) -> Result<PriceQuote> {
    check(model, curve, contract)?;
    let k = curve.grid.k();
    let start = Instant::now();
    let x = input_vector(&curve.rates, svensson, contract);
    let (value, grad) = model.value_and_grad(&x)?;
    let eval_time = start.elapsed().as_secs_f64();
    Ok(PriceQuote {
        price: value,
        theta: -grad[tau1_index(k)],
        curve_deltas: grad[..k].to_vec(),
        eval_time,
    })
}

/// One pricing request.
#[derive(Debug, Clone, Copy)]
pub struct PriceRequest<'a> {
    pub curve: &'a DiscreteCurve,
    pub svensson: &'a SvenssonParams,
    pub contract: CapletContract,
}

/// Quotes for every request in order, plus total wall-clock seconds.
pub fn batch_price(model: &NetworkParams, requests: &[PriceRequest<'_>]) -> Result<(Vec<PriceQuote>, f64)> {
    let start = Instant::now();
    let quotes = requests
        .iter()
        .map(|r| price(model, r.curve, r.svensson, &r.contract))
        .collect::<Result<Vec<_>>>()?;
    Ok((quotes, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{discretize, TenorGrid};
    use crate::neural::NormStats;

    fn setup() -> (NetworkParams, DiscreteCurve, SvenssonParams) {
        let g = TenorGrid::new(6, 5.0).unwrap();
        let sv = SvenssonParams::new(0.04, -0.01, 0.0, 0.01, 1.5, 7.0);
        let curve = discretize(&sv, &g).unwrap();
        let net = NetworkParams::init(&g, &[8, 8], NormStats::identity(15), 3).unwrap();
        (net, curve, sv)
    }

    #[test]
    fn theta_is_negative_tau_derivative() {
        let (net, curve, sv) = setup();
        let ct = CapletContract::new(1.0, 0.5, 0.02);
        let q = price(&net, &curve, &sv, &ct).unwrap();
        let h = 1e-5;
        let up = price(&net, &curve, &sv, &CapletContract { tau1: 1.0 + h, ..ct }).unwrap().price;
        let dn = price(&net, &curve, &sv, &CapletContract { tau1: 1.0 - h, ..ct }).unwrap().price;
        let fd = (up - dn) / (2.0 * h);
        assert!((q.dv_dtau1() - fd).abs() < 1e-8);
        assert_eq!(q.theta, -q.dv_dtau1());
        assert_eq!(q.curve_deltas.len(), 6);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let (net, _, sv) = setup();
        let other = discretize(&sv, &TenorGrid::new(7, 5.0).unwrap()).unwrap();
        let ct = CapletContract::new(1.0, 0.5, 0.02);
        assert!(matches!(
            price(&net, &other, &sv, &ct),
            Err(FinnError::GridMismatch { .. })
        ));
    }

    #[test]
    fn batch_matches_single_calls() {
        let (net, curve, sv) = setup();
        assert!(batch_price(&net, &[]).unwrap().0.is_empty());
        let ct = CapletContract::new(0.8, 0.25, 0.01);
        let req = PriceRequest {
            curve: &curve,
            svensson: &sv,
            contract: ct,
        };
        let (qs, _) = batch_price(&net, &[req, req]).unwrap();
        let single = price(&net, &curve, &sv, &ct).unwrap();
        assert_eq!(qs[0].price.to_bits(), qs[1].price.to_bits());
        assert_eq!(qs[0].price.to_bits(), single.price.to_bits());
        assert_eq!(qs[0].curve_deltas, single.curve_deltas);
    }
}
