//! Three-factor volatility structure: covariance of daily forward-rate
//! changes, principal components, Chebyshev fits and local volatility.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::market_data::{svensson_forward, SvenssonParams, TenorGrid};

pub const N_FACTORS: usize = 3;
pub const CHEB_TERMS: usize = 4;
pub const TRADING_DAYS: f64 = 252.0;
pub const DEFAULT_CAP: f64 = 0.4;

/// Annualized uncentered second-moment matrix of tenor changes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub entries: Array2<f64>,
    /// Changes were scaled by `1/sqrt(f)` before taking moments.
    pub proportional: bool,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// `annualization * E[x x']` over the rows of `changes` (no mean removal).
pub fn covariance(changes: &Array2<f64>, annualization: f64, proportional: bool) -> Result<CovMatrix> {
    let n = changes.nrows();
    if n < 2 {
        return Err(FinnError::InvalidParameters(format!(
            "covariance needs at least 2 observations, got {n}"
        )));
    }
    let mut entries = changes.t().dot(changes);
    entries *= annualization / n as f64;
    // exact symmetry
    let d = entries.nrows();
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (entries[[i, j]] + entries[[j, i]]);
            entries[[i, j]] = s;
            entries[[j, i]] = s;
        }
    }
    Ok(CovMatrix {
        entries,
        proportional,
    })
}

/// Daily changes of a (days x tenors) level matrix.
///
/// With `proportional`, each change is divided by `sqrt(f)` at the start of the
/// interval, and intervals whose starting curve has any rate `<= eps` are skipped.
pub fn level_changes(levels: &Array2<f64>, proportional: bool, eps: f64) -> Array2<f64> {
    let dim = levels.ncols();
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0;
    for t in 1..levels.nrows() {
        let start = levels.row(t - 1);
        let end = levels.row(t);
        if proportional && start.iter().any(|&f| f <= eps) {
            continue;
        }
        for j in 0..dim {
            let df = end[j] - start[j];
            rows.push(if proportional { df / start[j].sqrt() } else { df });
        }
        count += 1;
    }
    Array2::from_shape_vec((count, dim), rows).expect("row-major change matrix")
}

/// Evaluates Svensson curves at fixed tenors, one row per observation.
pub fn tenor_levels(rows: &[SvenssonParams], tenors: &[f64]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), tenors.len()));
    for (i, p) in rows.iter().enumerate() {
        for (j, &tau) in tenors.iter().enumerate() {
            out[[i, j]] = svensson_forward(p, tau)?;
        }
    }
    Ok(out)
}

/// The annual estimation tenors `1, 2, ..., n` years.
pub fn annual_tenors(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFactors {
    /// Top three eigenvalues, descending.
    pub eigenvalues: [f64; N_FACTORS],
    /// Unit eigenvectors, one per factor, on the estimation tenors.
    pub loadings: [Vec<f64>; N_FACTORS],
    /// `sqrt(lambda_n) * v_n`.
    pub adjusted: [Vec<f64>; N_FACTORS],
}

/// Top three eigenpairs of a covariance matrix.
///
/// Each eigenvector is flipped so that its largest-magnitude entry is positive.
pub fn pca_top3(c: &CovMatrix) -> Result<PcaFactors> {
    let d = c.dim();
    if d < N_FACTORS {
        return Err(FinnError::Shape(format!(
            "need at least {N_FACTORS} tenors for PCA, got {d}"
        )));
    }
    let m = DMatrix::from_fn(d, d, |i, j| c.entries[[i, j]]);
    let eig = m
        .try_symmetric_eigen(1e-15, 10_000)
        .ok_or(FinnError::EigenNonConvergence)?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = [0.0; N_FACTORS];
    let mut loadings: [Vec<f64>; N_FACTORS] = Default::default();
    let mut adjusted: [Vec<f64>; N_FACTORS] = Default::default();
    for (n, &idx) in order.iter().take(N_FACTORS).enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0);
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        adjusted[n] = v.iter().map(|x| lambda.sqrt() * x).collect();
        eigenvalues[n] = lambda;
        loadings[n] = v;
    }
    Ok(PcaFactors {
        eigenvalues,
        loadings,
        adjusted,
    })
}

/// Maps `tau` from `domain` onto `[-1, 1]`, clamped.
fn mapped_argument(domain: [f64; 2], tau: f64) -> f64 {
    (2.0 * (tau - domain[0]) / (domain[1] - domain[0]) - 1.0).clamp(-1.0, 1.0)
}

/// Clenshaw evaluation of `sum_j c_j T_j(x)`.
pub fn chebyshev_eval(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    coeffs.first().copied().unwrap_or(0.0) + x * b1 - b2
}

/// Fitted volatility functions and the local-volatility cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolModel {
    pub coeffs: [[f64; CHEB_TERMS]; N_FACTORS],
    pub fit_domain: [f64; 2],
    pub cap_m: f64,
    pub proportional: bool,
    #[serde(default)]
    pub eigenvalues: [f64; N_FACTORS],
}

impl VolModel {
    /// Tenor-independent factors, mostly useful for tests and diagnostics.
    pub fn constant(levels: [f64; N_FACTORS], proportional: bool) -> Self {
        let mut coeffs = [[0.0; CHEB_TERMS]; N_FACTORS];
        for (c, l) in coeffs.iter_mut().zip(levels) {
            c[0] = l;
        }
        Self {
            coeffs,
            fit_domain: [0.0, 30.0],
            cap_m: DEFAULT_CAP,
            proportional,
            eigenvalues: [0.0; N_FACTORS],
        }
    }

    pub fn zero() -> Self {
        Self::constant([0.0; N_FACTORS], true)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap_m > 0.0 && self.cap_m.is_finite()) {
            return Err(FinnError::InvalidParameters(format!(
                "local-vol cap must be positive, got {}",
                self.cap_m
            )));
        }
        if !(self.fit_domain[1] > self.fit_domain[0]) {
            return Err(FinnError::InvalidParameters(
                "empty Chebyshev fit domain".into(),
            ));
        }
        if self.coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(FinnError::InvalidParameters(
                "non-finite Chebyshev coefficient".into(),
            ));
        }
        Ok(())
    }

    /// Proportional volatility `sigma~_n(tau)` for each factor.
    pub fn sigma_tilde(&self, tau: f64) -> [f64; N_FACTORS] {
        let x = mapped_argument(self.fit_domain, tau);
        let mut out = [0.0; N_FACTORS];
        for (o, c) in out.iter_mut().zip(self.coeffs.iter()) {
            *o = chebyshev_eval(c, x);
        }
        out
    }

    /// Level scaling `min(sqrt(max(f, 0)), M)`, or 1 when not proportional.
    #[inline]
    pub fn level_scale(&self, f: f64) -> f64 {
        if self.proportional {
            f.max(0.0).sqrt().min(self.cap_m)
        } else {
            1.0
        }
    }

    /// State-dependent volatility `sigma~(tau) * min(sqrt(f), M)`.
    pub fn local_vol(&self, tau: f64, f: f64) -> [f64; N_FACTORS] {
        let s = self.level_scale(f);
        self.sigma_tilde(tau).map(|v| v * s)
    }

    /// `sigma~_n` at every grid node, laid out `[node][factor]`.
    pub fn node_profile(&self, grid: &TenorGrid) -> Vec<[f64; N_FACTORS]> {
        grid.nodes().iter().map(|&t| self.sigma_tilde(t)).collect()
    }

    /// Local vols on a curve, laid out `[factor][node]`.
    pub fn curve_vols(&self, profile: &[[f64; N_FACTORS]], rates: &[f64]) -> [Vec<f64>; N_FACTORS] {
        let mut out: [Vec<f64>; N_FACTORS] = Default::default();
        for (n, o) in out.iter_mut().enumerate() {
            *o = profile
                .iter()
                .zip(rates)
                .map(|(p, &f)| p[n] * self.level_scale(f))
                .collect();
        }
        out
    }
}

/// Least-squares degree-3 Chebyshev fit of each adjusted factor over
/// `fit_domain` (defaults to `[0, max(tenors)]`).
pub fn fit_chebyshev(
    factors: &PcaFactors,
    tenors: &[f64],
    fit_domain: Option<[f64; 2]>,
    cap_m: f64,
    proportional: bool,
) -> Result<VolModel> {
    let mut distinct = tenors.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < CHEB_TERMS {
        return Err(FinnError::RankDeficient(format!(
            "{} distinct tenors for {} Chebyshev terms",
            distinct.len(),
            CHEB_TERMS
        )));
    }
    let hi = tenors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let domain = fit_domain.unwrap_or([0.0, hi]);
    let design = DMatrix::from_fn(tenors.len(), CHEB_TERMS, |i, j| {
        let x = mapped_argument(domain, tenors[i]);
        let mut basis = [0.0; CHEB_TERMS];
        basis[j] = 1.0;
        chebyshev_eval(&basis, x)
    });
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(FinnError::RankDeficient(
            "Chebyshev design matrix is singular on the given tenors".into(),
        ));
    }

    let mut coeffs = [[0.0; CHEB_TERMS]; N_FACTORS];
    for (n, target) in factors.adjusted.iter().enumerate() {
        if target.len() != tenors.len() {
            return Err(FinnError::Shape(format!(
                "factor {n} has {} loadings for {} tenors",
                target.len(),
                tenors.len()
            )));
        }
        let b = DVector::from_column_slice(target);
        let sol = svd
            .solve(&b, 1e-14 * smax)
            .map_err(|e| FinnError::RankDeficient(e.to_string()))?;
        for j in 0..CHEB_TERMS {
            coeffs[n][j] = sol[j];
        }
    }
    let model = VolModel {
        coeffs,
        fit_domain: domain,
        cap_m,
        proportional,
        eigenvalues: factors.eigenvalues,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct VolEstimateOptions {
    pub proportional: bool,
    pub eps: f64,
    pub annualization: f64,
    pub cap_m: f64,
}

impl Default for VolEstimateOptions {
    fn default() -> Self {
        Self {
            proportional: true,
            eps: crate::market_data::DEFAULT_EPS,
            annualization: TRADING_DAYS,
            cap_m: DEFAULT_CAP,
        }
    }
}

/// Full estimation: changes -> covariance -> PCA -> Chebyshev fit.
pub fn estimate(levels: &Array2<f64>, tenors: &[f64], opts: &VolEstimateOptions) -> Result<VolModel> {
    if levels.ncols() != tenors.len() {
        return Err(FinnError::Shape(format!(
            "{} level columns for {} tenors",
            levels.ncols(),
            tenors.len()
        )));
    }
    let changes = level_changes(levels, opts.proportional, opts.eps);
    let cov = covariance(&changes, opts.annualization, opts.proportional)?;
    let factors = pca_top3(&cov)?;
    fit_chebyshev(&factors, tenors, None, opts.cap_m, opts.proportional)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_changes_give_zero_matrix() {
        let x = Array2::<f64>::zeros((10, 4));
        let c = covariance(&x, 252.0, false).unwrap();
        assert!(c.entries.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_row_gives_outer_product() {
        let row = [0.001, -0.002, 0.0005];
        let x = Array2::from_shape_fn((7, 3), |(_, j)| row[j]);
        let c = covariance(&x, 252.0, false).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(c.entries[[i, j]], 252.0 * row[i] * row[j], epsilon = 1e-18);
            }
        }
    }

    #[test]
    fn covariance_needs_two_rows() {
        let x = Array2::<f64>::zeros((1, 3));
        assert!(covariance(&x, 252.0, false).is_err());
    }

    #[test]
    fn diagonal_pca() {
        let c = CovMatrix {
            entries: array![[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 0.25]],
            proportional: false,
        };
        let f = pca_top3(&c).unwrap();
        assert_abs_diff_eq!(f.eigenvalues[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.eigenvalues[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.eigenvalues[2], 0.25, epsilon = 1e-14);
        let expect = [[0.0, 2.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.5]];
        for n in 0..3 {
            for k in 0..3 {
                assert_abs_diff_eq!(f.adjusted[n][k], expect[n][k], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn isotropic_pca_norms() {
        let c = CovMatrix {
            entries: Array2::eye(3) * 0.09,
            proportional: false,
        };
        let f = pca_top3(&c).unwrap();
        for n in 0..3 {
            assert_abs_diff_eq!(f.eigenvalues[n], 0.09, epsilon = 1e-15);
            let norm: f64 = f.adjusted[n].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 0.3, epsilon = 1e-14);
        }
    }

    #[test]
    fn pca_needs_three_tenors() {
        let c = CovMatrix {
            entries: Array2::eye(2),
            proportional: false,
        };
        assert!(pca_top3(&c).is_err());
    }

    fn factors_from(adjusted: [Vec<f64>; 3]) -> PcaFactors {
        PcaFactors {
            eigenvalues: [1.0, 0.5, 0.25],
            loadings: adjusted.clone(),
            adjusted,
        }
    }

    #[test]
    fn constant_factor_fits_t0() {
        let tenors = annual_tenors(30);
        let f = factors_from([vec![0.01; 30], vec![0.0; 30], vec![-0.002; 30]]);
        let m = fit_chebyshev(&f, &tenors, None, DEFAULT_CAP, true).unwrap();
        assert_abs_diff_eq!(m.coeffs[0][0], 0.01, epsilon = 1e-15);
        for j in 1..4 {
            assert_abs_diff_eq!(m.coeffs[0][j], 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m.coeffs[2][0], -0.002, epsilon = 1e-15);
        for tau in [0.0, 0.3, 7.0, 31.0] {
            assert_abs_diff_eq!(m.sigma_tilde(tau)[0], 0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_factor_recovers_slope() {
        let tenors = annual_tenors(30);
        let lin: Vec<f64> = tenors.iter().map(|t| 0.02 + 0.005 * (2.0 * t / 30.0 - 1.0)).collect();
        let f = factors_from([lin.clone(), lin.clone(), lin]);
        let m = fit_chebyshev(&f, &tenors, None, DEFAULT_CAP, true).unwrap();
        assert_abs_diff_eq!(m.coeffs[0][0], 0.02, epsilon = 1e-14);
        assert_abs_diff_eq!(m.coeffs[0][1], 0.005, epsilon = 1e-14);
        assert_abs_diff_eq!(m.coeffs[0][2], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.coeffs[0][3], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn too_few_distinct_tenors_is_rank_deficient() {
        let tenors = vec![1.0, 1.0, 2.0, 3.0, 3.0];
        let f = factors_from([vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]]);
        assert!(matches!(
            fit_chebyshev(&f, &tenors, None, DEFAULT_CAP, true),
            Err(FinnError::RankDeficient(_))
        ));
    }

    #[test]
    fn midpoint_value_is_c0_minus_c2() {
        let mut m = VolModel::zero();
        m.coeffs[1] = [0.3, -0.2, 0.11, 0.05];
        let mid = 0.5 * (m.fit_domain[0] + m.fit_domain[1]);
        assert_abs_diff_eq!(m.sigma_tilde(mid)[1], 0.3 - 0.11, epsilon = 1e-16);
    }

    #[test]
    fn local_vol_scaling() {
        let m = VolModel::constant([1.0, 2.0, 3.0], true);
        let v = m.local_vol(1.0, 0.04);
        assert_abs_diff_eq!(v[0], 0.2, epsilon = 1e-16);
        assert_abs_diff_eq!(v[2], 0.6, epsilon = 1e-15);
        assert_eq!(m.local_vol(1.0, 1.0), [0.4, 0.8, 1.2000000000000002]);
        assert_eq!(m.local_vol(1.0, 0.0), [0.0; 3]);
        assert_eq!(m.local_vol(1.0, -0.01), [0.0; 3]);
        let abs = VolModel::constant([1.0, 2.0, 3.0], false);
        assert_eq!(abs.local_vol(1.0, 0.04), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn proportional_changes_skip_low_levels() {
        let levels = array![[0.04, 0.05], [0.041, 0.049], [0.001, 0.05], [0.04, 0.05]];
        let ch = level_changes(&levels, true, 0.005);
        assert_eq!(ch.nrows(), 2);
        assert_abs_diff_eq!(ch[[0, 0]], 0.001 / 0.04f64.sqrt(), epsilon = 1e-16);
        let abs = level_changes(&levels, false, 0.005);
        assert_eq!(abs.nrows(), 3);
    }
}
