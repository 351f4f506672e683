#![allow(dead_code)]

use hjm_finn::market_data::TenorGrid;
use hjm_finn::neural::{Activation, NetworkParams, NormStats};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random network with shifted/scaled normalization so the
/// chain rule through the first layer is exercised.
pub fn random_net(k: usize, widths: &[usize], seed: u64) -> NetworkParams {
    let g = TenorGrid::new(k, 5.0).unwrap();
    let n = k + 9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut norm = NormStats::identity(n);
    for j in 0..n {
        norm.shift[j] = rng.random_range(-0.5..0.5);
        norm.scale[j] = rng.random_range(0.3..2.0);
    }
    let mut p = NetworkParams::init(&g, widths, norm, seed).unwrap();
    for w in p.weights.iter_mut() {
        w.mapv_inplace(|x| 2.5 * x);
    }
    p
}

pub fn random_input(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Straight-line evaluator written independently of the jet engine.
pub fn scalar_forward(p: &NetworkParams, x: &[f64]) -> f64 {
    let mut a: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(j, v)| (v - p.norm.shift[j]) / p.norm.scale[j])
        .collect();
    for l in 0..p.weights.len() {
        let w = &p.weights[l];
        let mut next = vec![0.0; w.nrows()];
        for i in 0..w.nrows() {
            let mut z = p.biases[l][i];
            for j in 0..w.ncols() {
                z += w[[i, j]] * a[j];
            }
            next[i] = match p.activations[l] {
                Activation::Silu => z / (1.0 + (-z).exp()),
                Activation::Softplus => (1.0 + z.exp()).ln(),
                Activation::Identity => z,
                Activation::Square => z * z,
            };
        }
        a = next;
    }
    a[0]
}

/// `|a - b| <= tol * max(|a|, |b|, floor)` componentwise.
pub fn assert_close(a: &[f64], b: &[f64], tol: f64, floor: f64, what: &str) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let denom = x.abs().max(y.abs()).max(floor);
        assert!(
            (x - y).abs() <= tol * denom,
            "{what}[{i}]: {x} vs {y} (rel {})",
            (x - y).abs() / denom
        );
    }
}

pub fn max_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let dn = f(&xp);
            xp[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Dense central-difference Hessian over the first `k` inputs.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> Array2<f64> {
    let mut hm = Array2::zeros((k, k));
    let mut xp = x.to_vec();
    let f0 = f(x);
    for i in 0..k {
        for j in i..k {
            let v = if i == j {
                xp[i] = x[i] + h;
                let up = f(&xp);
                xp[i] = x[i] - h;
                let dn = f(&xp);
                xp[i] = x[i];
                (up - 2.0 * f0 + dn) / (h * h)
            } else {
                let mut e = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * h;
                    xp[j] = x[j] + sj * h;
                    let v = f(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * h * h)
            };
            hm[[i, j]] = v;
            hm[[j, i]] = v;
        }
    }
    hm
}

/// Flattened parameters in a fixed order, and the inverse.
pub fn flatten(p: &NetworkParams) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in p.weights.iter().zip(&p.biases) {
        v.extend(w.iter());
        v.extend(b.iter());
    }
    v
}

pub fn unflatten(p: &NetworkParams, theta: &[f64]) -> NetworkParams {
    let mut q = p.clone();
    let mut it = theta.iter();
    for (w, b) in q.weights.iter_mut().zip(q.biases.iter_mut()) {
        w.iter_mut().for_each(|x| *x = *it.next().unwrap());
        b.iter_mut().for_each(|x| *x = *it.next().unwrap());
    }
    q
}

pub fn flatten_grads(g: &hjm_finn::neural::ParamGrads) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        v.extend(w.iter());
        v.extend(b.iter());
    }
    v
}

/// `V = ½ fᵀAf` as `Σ_j (λ_j/2) (u_jᵀ f)²` with one square layer.
pub fn quadratic_net(a: &Array2<f64>) -> NetworkParams {
    let k = a.nrows();
    let g = TenorGrid::new(k, 5.0).unwrap();
    let mut p = NetworkParams::zeros(&g, &[k]).unwrap();
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(k, k, |i, j| a[[i, j]]));
    for j in 0..k {
        for i in 0..k {
            p.weights[0][[j, i]] = eig.eigenvectors[(i, j)];
        }
        p.weights[1][[0, j]] = 0.5 * eig.eigenvalues[j];
    }
    p.activations = vec![Activation::Square, Activation::Identity];
    p
}
