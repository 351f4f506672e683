mod common;

use hjm_finn::error::FinnError;
use hjm_finn::hjm::*;
use hjm_finn::market_data::*;
use hjm_finn::neural::{input_vector, tau1_index};
use hjm_finn::pricing::*;
use hjm_finn::trainer::{PriceFunction, ZeroStrikeEvaluator};

fn setup(k: usize) -> (TenorGrid, DiscreteCurve, SvenssonParams) {
    let g = TenorGrid::new(k, 5.0).unwrap();
    let sv = SvenssonParams::new(0.045, -0.02, -0.01, 0.012, 1.4, 7.0);
    let curve = discretize(&sv, &g).unwrap();
    (g, curve, sv)
}

#[test]
fn greeks_match_bump_and_revalue() {
    let (_, curve, sv) = setup(10);
    let h = 1e-5;
    for seed in 0..5 {
        let net = common::random_net(10, &[8, 8, 8], seed);
        let ct = CapletContract::new(0.6 + 0.7 * seed as f64, 0.5, 0.01 * seed as f64);
        let q = price(&net, &curve, &sv, &ct).unwrap();
        let bumped = |k: usize, s: f64| {
            let mut c = curve.clone();
            c.rates[k] += s;
            price(&net, &c, &sv, &ct).unwrap().price
        };
        let fd: Vec<f64> = (0..10).map(|k| (bumped(k, h) - bumped(k, -h)) / (2.0 * h)).collect();
        let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in q.curve_deltas.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3 * scale), "{a} vs {b}");
        }
        let t = |d: f64| price(&net, &curve, &sv, &CapletContract { tau1: ct.tau1 + d, ..ct }).unwrap().price;
        let fd_t = (t(h) - t(-h)) / (2.0 * h);
        assert!((q.dv_dtau1() - fd_t).abs() <= 1e-4 * fd_t.abs().max(1e-6));
        assert_eq!(q.theta, -q.dv_dtau1());
    }
}

#[test]
fn zero_strike_deltas_have_the_closed_form_sign_pattern() {
    let (g, curve, sv) = setup(25);
    let c = IntegrationMatrix::new(&g);
    let eval = ZeroStrikeEvaluator::new(&g);
    let (t1, d) = (1.9, 0.7);
    let x = input_vector(&curve.rates, &sv, &CapletContract::new(t1, d, 0.0));
    let h = 1e-6;
    for k in 0..25 {
        let mut e = vec![0.0; x.len()];
        e[k] = 1.0;
        let (_, delta, _) = eval.value_and_directional(&x, &e, &[]).unwrap();
        let bump = |s: f64| {
            let mut cv = curve.clone();
            cv.rates[k] += s;
            zero_strike_value(&cv, &c, t1, d).unwrap()
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        assert!((delta - fd).abs() < 1e-8, "node {k}: {delta} vs {fd}");
        // Nodes sharing a trapezoid panel with either end of the accrual mix both signs.
        let (tau, sp) = (g.nodes()[k], g.spacing());
        if tau <= t1 - sp {
            assert!(delta < 0.0, "node {k} at {tau}");
        } else if tau >= t1 + sp && tau <= t1 + d - sp {
            assert!(delta > 0.0, "node {k} at {tau}");
        } else if tau > t1 + d + sp {
            assert_eq!(delta, 0.0);
        }
    }
    // Value and tenor derivative of the evaluator.
    let mut e = vec![0.0; x.len()];
    e[tau1_index(25)] = 1.0;
    let (v, dt, _) = eval.value_and_directional(&x, &e, &[]).unwrap();
    assert_eq!(v, zero_strike_value(&curve, &c, t1, d).unwrap());
    let z = |s: f64| zero_strike_value(&curve, &c, t1 + s, d).unwrap();
    assert!((dt - (z(h) - z(-h)) / (2.0 * h)).abs() < 1e-8);
}

#[test]
fn quotes_are_deterministic() {
    let (_, curve, sv) = setup(10);
    let net = common::random_net(10, &[8, 8], 4);
    let ct = CapletContract::new(2.0, 0.5, 0.03);
    let a = price(&net, &curve, &sv, &ct).unwrap();
    let b = price(&net, &curve, &sv, &ct).unwrap();
    assert_eq!(a.price.to_bits(), b.price.to_bits());
    assert_eq!(a.theta.to_bits(), b.theta.to_bits());
    assert_eq!(a.curve_deltas, b.curve_deltas);
}

#[test]
fn invalid_requests_are_errors() {
    let (_, _, sv) = setup(10);
    let net = common::random_net(10, &[8], 1);
    let other = discretize(&sv, &TenorGrid::new(25, 5.0).unwrap()).unwrap();
    let ct = CapletContract::new(1.0, 0.5, 0.02);
    assert!(matches!(price(&net, &other, &sv, &ct), Err(FinnError::GridMismatch { .. })));
    let (_, curve, _) = setup(10);
    assert!(price(&net, &curve, &sv, &CapletContract::new(4.8, 0.5, 0.02)).is_err());
}

#[test]
fn batch_pricing() {
    let (_, curve, sv) = setup(10);
    let net = common::random_net(10, &[8, 8], 2);
    let (empty, _) = batch_price(&net, &[]).unwrap();
    assert!(empty.is_empty());
    let reqs: Vec<PriceRequest> = [0.5, 1.5, 1.5, 3.0]
        .iter()
        .map(|&t| PriceRequest {
            curve: &curve,
            svensson: &sv,
            contract: CapletContract::new(t, 0.5, 0.02),
        })
        .collect();
    let (qs, secs) = batch_price(&net, &reqs).unwrap();
    assert_eq!(qs.len(), 4);
    assert!(secs >= 0.0);
    assert_eq!(qs[1].price.to_bits(), qs[2].price.to_bits());
    for (q, r) in qs.iter().zip(&reqs) {
        assert_eq!(q.price, price(&net, r.curve, r.svensson, &r.contract).unwrap().price);
    }
}

#[test]
fn checkpoint_loading() {
    let (_, curve, sv) = setup(10);
    let net = common::random_net(10, &[8, 8], 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    net.save(&path).unwrap();
    let back = load_model(&path).unwrap();
    let ct = CapletContract::new(1.1, 0.4, 0.02);
    assert_eq!(price(&back, &curve, &sv, &ct).unwrap().price, price(&net, &curve, &sv, &ct).unwrap().price);

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["version"] = serde_json::json!(999);
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(load_model(&path).is_err());
    assert!(load_model(dir.path().join("missing.json")).is_err());
}

#[test]
fn quote_serializes_with_documented_keys() {
    let (_, curve, sv) = setup(10);
    let net = common::random_net(10, &[8], 5);
    let q = price(&net, &curve, &sv, &CapletContract::new(1.0, 0.5, 0.02)).unwrap();
    let v = serde_json::to_value(&q).unwrap();
    assert!(v["price"].is_f64() && v["theta"].is_f64() && v["eval_time_s"].is_f64());
    assert_eq!(v["curve_deltas"].as_array().unwrap().len(), 10);
}
