//! Deterministic HJM quantities on a discrete tenor grid: trapezoidal
//! integration, bond prices, forward LIBOR, the Musiela no-arbitrage drift
//! and caplet values.
//!
//! All values are per unit notional. Bond prices at off-node maturities use a
//! partial trapezoid panel with `f` linearly interpolated inside the panel, so
//! the integral is exact for piecewise-linear curves.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::market_data::{DiscreteCurve, TenorGrid};
use crate::vol_model::{VolModel, N_FACTORS};

const RANGE_TOL: f64 = 1e-12;

/// Lower-triangular trapezoid weights: row `i` integrates from node 0 to node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationMatrix {
    grid: TenorGrid,
    weights: Array2<f64>,
}

impl IntegrationMatrix {
    pub fn new(grid: &TenorGrid) -> Self {
        let k = grid.k();
        let h = grid.spacing();
        let mut weights = Array2::zeros((k, k));
        for i in 1..k {
            weights[[i, 0]] = 0.5 * h;
            for j in 1..i {
                weights[[i, j]] = h;
            }
            weights[[i, i]] = 0.5 * h;
        }
        Self {
            grid: grid.clone(),
            weights,
        }
    }

    pub fn grid(&self) -> &TenorGrid {
        &self.grid
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Dense product `C g`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.grid.k(), "integrand length");
        self.weights
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(g).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Same result as [`apply`](Self::apply) via a running trapezoid sum.
    pub fn cumulative_into(&self, g: &[f64], out: &mut [f64]) {
        let half = 0.5 * self.grid.spacing();
        out[0] = 0.0;
        for i in 1..g.len() {
            out[i] = out[i - 1] + half * (g[i - 1] + g[i]);
        }
    }

    /// Weights `w` with `int_0^tau f ds ~= w . f`, including the partial panel.
    pub fn integral_weights(&self, tau: f64) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.grid.k()];
        self.add_integral_weights(tau, 1.0, &mut w)?;
        Ok(w)
    }

    /// Accumulates `scale * integral_weights(tau)` into `w`.
    pub fn add_integral_weights(&self, tau: f64, scale: f64, w: &mut [f64]) -> Result<()> {
        let (i, s) = self.locate(tau)?;
        let h = self.grid.spacing();
        if i > 0 {
            w[0] += scale * 0.5 * h;
            for wj in w.iter_mut().take(i).skip(1) {
                *wj += scale * h;
            }
            w[i] += scale * 0.5 * h;
        }
        let q = s * s / (2.0 * h);
        w[i] += scale * (s - q);
        w[i + 1] += scale * q;
        Ok(())
    }

    /// `int_0^tau f ds` on the discrete curve.
    pub fn integral(&self, rates: &[f64], tau: f64) -> Result<f64> {
        let (i, s) = self.locate(tau)?;
        let h = self.grid.spacing();
        let mut acc = 0.0;
        for j in 1..=i {
            acc += 0.5 * h * (rates[j - 1] + rates[j]);
        }
        acc += s * rates[i] + s * s / (2.0 * h) * (rates[i + 1] - rates[i]);
        Ok(acc)
    }

    /// Panel index `i <= K-2` and offset `tau - tau_i`.
    fn locate(&self, tau: f64) -> Result<(usize, f64)> {
        let tau_max = self.grid.tau_max();
        if !(tau >= -RANGE_TOL && tau <= tau_max * (1.0 + RANGE_TOL)) {
            return Err(FinnError::OutOfRange(format!(
                "maturity {tau} outside [0, {tau_max}]"
            )));
        }
        let tau = tau.clamp(0.0, tau_max);
        let h = self.grid.spacing();
        let k = self.grid.k();
        let i = ((tau / h).floor() as usize).min(k - 2);
        Ok((i, tau - self.grid.nodes()[i]))
    }
}

/// Linear interpolation of the curve at `tau` (the derivative of the discrete integral).
pub fn interp_rate(curve: &DiscreteCurve, tau: f64) -> Result<f64> {
    let c = IntegrationMatrix::new(&curve.grid);
    let (i, s) = c.locate(tau)?;
    let h = curve.grid.spacing();
    Ok(curve.rates[i] + s / h * (curve.rates[i + 1] - curve.rates[i]))
}

/// `P(tau) = exp(-int_0^tau f ds)`.
pub fn bond_price(curve: &DiscreteCurve, c: &IntegrationMatrix, tau: f64) -> Result<f64> {
    Ok((-c.integral(&curve.rates, tau)?).exp())
}

/// Simply compounded forward rate over `[tau_a, tau_b]`.
pub fn libor(curve: &DiscreteCurve, c: &IntegrationMatrix, tau_a: f64, tau_b: f64) -> Result<f64> {
    if !(tau_b > tau_a) {
        return Err(FinnError::OutOfRange(format!(
            "degenerate accrual [{tau_a}, {tau_b}]"
        )));
    }
    let pa = bond_price(curve, c, tau_a)?;
    let pb = bond_price(curve, c, tau_b)?;
    Ok((pa / pb - 1.0) / (tau_b - tau_a))
}

/// Caplet features: time to settlement, accrual length and strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapletContract {
    pub tau1: f64,
    pub delta: f64,
    pub strike: f64,
}

impl CapletContract {
    pub fn new(tau1: f64, delta: f64, strike: f64) -> Self {
        Self {
            tau1,
            delta,
            strike,
        }
    }

    pub fn validate(&self, grid: &TenorGrid) -> Result<()> {
        let ok = self.tau1.is_finite()
            && self.delta.is_finite()
            && self.strike.is_finite()
            && self.tau1 >= 0.0
            && self.delta > 0.0
            && self.strike >= 0.0;
        if !ok {
            return Err(FinnError::InvalidParameters(format!(
                "invalid caplet {self:?}"
            )));
        }
        if self.tau1 + self.delta > grid.tau_max() * (1.0 + RANGE_TOL) {
            return Err(FinnError::OutOfRange(format!(
                "caplet ends at {} beyond grid horizon {}",
                self.tau1 + self.delta,
                grid.tau_max()
            )));
        }
        Ok(())
    }

    pub fn with_strike(self, strike: f64) -> Self {
        Self { strike, ..self }
    }

    pub fn at_settlement(self) -> Self {
        Self { tau1: 0.0, ..self }
    }
}

/// Value at settlement: `delta * P(delta) * max(L(0, delta) - strike, 0)`.
pub fn caplet_payoff(curve: &DiscreteCurve, c: &IntegrationMatrix, contract: &CapletContract) -> Result<f64> {
    let d = contract.delta;
    let p = bond_price(curve, c, d)?;
    let l = libor(curve, c, 0.0, d)?;
    Ok(d * p * (l - contract.strike).max(0.0))
}

/// [`caplet_payoff`] on raw node rates laid out on `c`'s grid.
pub fn caplet_payoff_rates(c: &IntegrationMatrix, rates: &[f64], contract: &CapletContract) -> Result<f64> {
    let d = contract.delta;
    let p = (-c.integral(rates, d)?).exp();
    let l = (1.0 / p - 1.0) / d;
    Ok(d * p * (l - contract.strike).max(0.0))
}

/// Zero-strike caplet value `P(tau1) - P(tau1 + delta)`.
pub fn zero_strike_value(curve: &DiscreteCurve, c: &IntegrationMatrix, tau1: f64, delta: f64) -> Result<f64> {
    Ok(bond_price(curve, c, tau1)? - bond_price(curve, c, tau1 + delta)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftVector {
    pub values: Vec<f64>,
}

/// Musiela drift `df/dtau + sum_n sigma_n(tau_k, f_k) * (C sigma_n(., f))_k`.
///
/// Local volatility enters both the outer factor and the integrand.
pub fn musiela_drift(
    curve: &DiscreteCurve,
    slope: &[f64],
    vols: &VolModel,
    c: &IntegrationMatrix,
) -> Result<DriftVector> {
    let k = curve.grid.k();
    if slope.len() != k {
        return Err(FinnError::Shape(format!(
            "slope has {} entries for K={k}",
            slope.len()
        )));
    }
    let profile = vols.node_profile(&curve.grid);
    let sig = vols.curve_vols(&profile, &curve.rates);
    let mut values = slope.to_vec();
    for s in sig.iter() {
        let integ = c.apply(s);
        for (v, (a, b)) in values.iter_mut().zip(s.iter().zip(&integ)) {
            *v += a * b;
        }
    }
    Ok(DriftVector { values })
}

/// Reusable buffers for repeated drift evaluation on one grid.
#[derive(Debug, Clone)]
pub struct DriftKernel {
    c: IntegrationMatrix,
    profile: Vec<[f64; N_FACTORS]>,
    vols: VolModel,
    sigma: [Vec<f64>; N_FACTORS],
    integ: Vec<f64>,
}

impl DriftKernel {
    pub fn new(vols: &VolModel, c: &IntegrationMatrix) -> Self {
        let k = c.grid().k();
        Self {
            c: c.clone(),
            profile: vols.node_profile(c.grid()),
            vols: vols.clone(),
            sigma: std::array::from_fn(|_| vec![0.0; k]),
            integ: vec![0.0; k],
        }
    }

    /// Writes the drift into `out` and leaves the local vols in [`sigma`](Self::sigma).
    pub fn drift_into(&mut self, rates: &[f64], slope: &[f64], out: &mut [f64]) {
        for (k, (&f, p)) in rates.iter().zip(&self.profile).enumerate() {
            let s = self.vols.level_scale(f);
            for n in 0..N_FACTORS {
                self.sigma[n][k] = p[n] * s;
            }
        }
        out.copy_from_slice(slope);
        for n in 0..N_FACTORS {
            self.c.cumulative_into(&self.sigma[n], &mut self.integ);
            for ((o, s), g) in out.iter_mut().zip(&self.sigma[n]).zip(&self.integ) {
                *o += s * g;
            }
        }
    }

    pub fn sigma(&self) -> &[Vec<f64>; N_FACTORS] {
        &self.sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{discretize, SvenssonParams};
    use approx::assert_abs_diff_eq;

    fn grid(k: usize) -> TenorGrid {
        TenorGrid::new(k, 5.0).unwrap()
    }

    #[test]
    fn row_zero_empty_and_constants_integrate_to_tenor() {
        let g = grid(11);
        let c = IntegrationMatrix::new(&g);
        assert!(c.weights().row(0).iter().all(|&w| w == 0.0));
        let ones = vec![1.0; 11];
        for (i, v) in c.apply(&ones).iter().enumerate() {
            assert_abs_diff_eq!(*v, g.nodes()[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_integrand_exact() {
        let g = grid(11);
        let c = IntegrationMatrix::new(&g);
        let lin: Vec<f64> = g.nodes().to_vec();
        for (i, v) in c.apply(&lin).iter().enumerate() {
            let t = g.nodes()[i];
            assert_abs_diff_eq!(*v, t * t / 2.0, epsilon = 1e-14);
        }
        // off-node too
        let curve = DiscreteCurve::new(g.clone(), lin).unwrap();
        assert_abs_diff_eq!(c.integral(&curve.rates, 2.3).unwrap(), 2.3 * 2.3 / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_matches_dense() {
        let g = grid(25);
        let c = IntegrationMatrix::new(&g);
        let f: Vec<f64> = g.nodes().iter().map(|t| (0.3 * t).sin() + 0.1 * t).collect();
        let dense = c.apply(&f);
        let mut run = vec![0.0; 25];
        c.cumulative_into(&f, &mut run);
        for (a, b) in dense.iter().zip(&run) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn integral_weights_match_integral() {
        let g = grid(10);
        let c = IntegrationMatrix::new(&g);
        let p = SvenssonParams::new(0.045, -0.02, -0.01, 0.012, 1.7, 8.5);
        let curve = discretize(&p, &g).unwrap();
        for tau in [0.0, 0.2, 1.0, 2.3, 4.99, 5.0] {
            let w = c.integral_weights(tau).unwrap();
            let dotted: f64 = w.iter().zip(&curve.rates).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(dotted, c.integral(&curve.rates, tau).unwrap(), epsilon = 1e-15);
        }
        assert!(c.integral_weights(5.1).is_err());
        assert!(c.integral_weights(-0.1).is_err());
    }

    #[test]
    fn bond_prices_flat_curve() {
        let g = grid(10);
        let c = IntegrationMatrix::new(&g);
        let curve = DiscreteCurve::flat(g, 0.04);
        assert_eq!(bond_price(&curve, &c, 0.0).unwrap(), 1.0);
        for tau in [0.7, 2.0, 3.33, 5.0] {
            assert_abs_diff_eq!(bond_price(&curve, &c, tau).unwrap(), (-0.04 * tau).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn libor_flat_and_zero() {
        let g = grid(10);
        let c = IntegrationMatrix::new(&g);
        let curve = DiscreteCurve::flat(g.clone(), 0.05);
        let l = libor(&curve, &c, 1.0, 1.5).unwrap();
        assert_abs_diff_eq!(l, ((0.05f64 * 0.5).exp() - 1.0) / 0.5, epsilon = 1e-14);
        let zero = DiscreteCurve::flat(g, 0.0);
        assert_eq!(libor(&zero, &c, 0.5, 1.0).unwrap(), 0.0);
        assert!(libor(&curve, &c, 1.0, 1.0).is_err());
    }

    #[test]
    fn libor_consistent_with_bond_prices() {
        let g = grid(25);
        let c = IntegrationMatrix::new(&g);
        let p = SvenssonParams::new(0.05, -0.015, 0.02, -0.01, 2.1, 6.0);
        let curve = discretize(&p, &g).unwrap();
        let (a, b) = (0.8, 1.55);
        let pa = bond_price(&curve, &c, a).unwrap();
        let pb = bond_price(&curve, &c, b).unwrap();
        let l = libor(&curve, &c, a, b).unwrap();
        assert_abs_diff_eq!(l, (pa / pb - 1.0) / (b - a), epsilon = 1e-14);
    }

    #[test]
    fn payoff_cases() {
        let g = grid(10);
        let c = IntegrationMatrix::new(&g);
        let flat = DiscreteCurve::flat(g, 0.05);
        let otm = CapletContract::new(0.0, 0.5, 0.2);
        assert_eq!(caplet_payoff(&flat, &c, &otm).unwrap(), 0.0);

        let zs = CapletContract::new(0.0, 0.5, 0.0);
        assert_abs_diff_eq!(caplet_payoff(&flat, &c, &zs).unwrap(), 1.0 - (-0.025f64).exp(), epsilon = 1e-15);

        // 0.5 * e^{-0.025} * ((e^{0.025} - 1)/0.5 - 0.03)
        let k3 = CapletContract::new(0.0, 0.5, 0.03);
        assert_abs_diff_eq!(caplet_payoff(&flat, &c, &k3).unwrap(), 0.010_060_439_291_242_358, epsilon = 1e-15);
    }

    #[test]
    fn zero_strike_closed_form() {
        let g = grid(10);
        let c = IntegrationMatrix::new(&g);
        let flat = DiscreteCurve::flat(g, 0.03);
        let v = zero_strike_value(&flat, &c, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(v, (-0.03f64).exp() - (-0.045f64).exp(), epsilon = 1e-15);
        let at0 = zero_strike_value(&flat, &c, 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(at0, 1.0 - bond_price(&flat, &c, 0.5).unwrap(), epsilon = 1e-16);
        assert!(zero_strike_value(&flat, &c, 4.8, 0.5).is_err());
    }

    #[test]
    fn zero_vol_drift_is_slope() {
        let g = grid(10);
        let c = IntegrationMatrix::new(&g);
        let p = SvenssonParams::new(0.05, -0.015, 0.02, -0.01, 2.1, 6.0);
        let curve = discretize(&p, &g).unwrap();
        let slope = crate::market_data::discretize_slope(&p, &g).unwrap();
        let d = musiela_drift(&curve, &slope, &VolModel::zero(), &c).unwrap();
        assert_eq!(d.values, slope);
    }

    #[test]
    fn flat_constant_vol_drift() {
        let g = grid(11);
        let c = IntegrationMatrix::new(&g);
        let curve = DiscreteCurve::flat(g.clone(), 0.04);
        let s = 0.011;
        let vols = VolModel::constant([s, s, s], false);
        let d = musiela_drift(&curve, &[0.0; 11], &vols, &c).unwrap();
        for (k, v) in d.values.iter().enumerate() {
            assert_abs_diff_eq!(*v, 3.0 * s * s * g.nodes()[k], epsilon = 1e-16);
        }
    }

    #[test]
    fn kernel_matches_dense_drift() {
        let g = grid(25);
        let c = IntegrationMatrix::new(&g);
        let p = SvenssonParams::new(0.05, -0.015, 0.02, -0.01, 2.1, 6.0);
        let curve = discretize(&p, &g).unwrap();
        let slope = crate::market_data::discretize_slope(&p, &g).unwrap();
        let mut vols = VolModel::constant([0.05, -0.02, 0.01], true);
        vols.coeffs[0][1] = 0.01;
        vols.coeffs[1][2] = 0.004;
        let dense = musiela_drift(&curve, &slope, &vols, &c).unwrap();
        let mut kernel = DriftKernel::new(&vols, &c);
        let mut out = vec![0.0; 25];
        kernel.drift_into(&curve.rates, &slope, &mut out);
        for (a, b) in dense.values.iter().zip(&out) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-16);
        }
    }

    #[test]
    fn contract_validation() {
        let g = grid(10);
        assert!(CapletContract::new(1.0, 0.5, 0.02).validate(&g).is_ok());
        assert!(CapletContract::new(4.8, 0.5, 0.02).validate(&g).is_err());
        assert!(CapletContract::new(1.0, 0.0, 0.02).validate(&g).is_err());
        assert!(CapletContract::new(-1.0, 0.5, 0.02).validate(&g).is_err());
        assert!(CapletContract::new(1.0, 0.5, -0.01).validate(&g).is_err());
    }
}
