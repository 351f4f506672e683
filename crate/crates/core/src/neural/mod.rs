//! Feed-forward pricing network with an in-graph normalization layer.
//!
//! Input layout is fixed: `(f_1..f_K, beta0..beta3, tau1_sv, tau2_sv, tau1, delta, strike)`.
//! Inputs are raw; the normalization (`(x - shift) / scale`) is the first
//! differentiable layer, so every derivative is with respect to raw inputs.

pub mod adam;
pub mod jet;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::hjm::CapletContract;
use crate::market_data::{CurveDataset, SvenssonParams, TenorGrid};
use crate::vol_model::VolModel;

pub use adam::AdamState;
pub use jet::{JetPlan, JetTape, StreamKind};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Inputs beyond the K forward rates: six Svensson parameters and three contract features.
pub const EXTRA_INPUTS: usize = 9;
pub const FULL_WIDTH: usize = 500;
pub const HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Softplus,
    Identity,
    /// `z^2`; only used to build exact polynomial test networks.
    Square,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Value and first three derivatives.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Silu => {
                let s = sigmoid(z);
                let ds = s * (1.0 - s);
                let u = 1.0 - 2.0 * s;
                (
                    z * s,
                    s * (1.0 + z * (1.0 - s)),
                    ds * (2.0 + z * u),
                    ds * (u * (3.0 + z * u) - 2.0 * z * ds),
                )
            }
            Activation::Softplus => {
                let v = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                let s = sigmoid(z);
                let ds = s * (1.0 - s);
                (v, s, ds, ds * (1.0 - 2.0 * s))
            }
            Activation::Identity => (z, 1.0, 0.0, 0.0),
            Activation::Square => (z * z, 2.0 * z, 2.0, 0.0),
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        self.eval(z).0
    }
}

/// How forward-rate inputs enter the normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateScaling {
    /// Raw rates.
    Identity,
    /// Per-node z-scores over the training records.
    #[default]
    ZScore,
}

/// Per-input affine normalization `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// z-scores for the Svensson inputs, `tau_max` divisor for the two time
    /// features, identity for the strike; forward rates per `rates`.
    pub fn from_dataset(dataset: &CurveDataset, rates: RateScaling) -> Result<Self> {
        if dataset.is_empty() {
            return Err(FinnError::EmptyDataset);
        }
        let k = dataset.grid.k();
        let mut norm = Self::identity(k + EXTRA_INPUTS);
        let n = dataset.len() as f64;
        let zscore = |vals: Vec<f64>| {
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 })
        };
        for j in 0..6 {
            let (m, s) = zscore(dataset.records.iter().map(|r| r.params.as_array()[j]).collect());
            norm.shift[k + j] = m;
            norm.scale[k + j] = s;
        }
        if rates == RateScaling::ZScore {
            for j in 0..k {
                let (m, s) = zscore(dataset.records.iter().map(|r| r.curve.rates[j]).collect());
                norm.shift[j] = m;
                norm.scale[j] = s;
            }
        }
        norm.scale[k + 6] = dataset.grid.tau_max();
        norm.scale[k + 7] = dataset.grid.tau_max();
        Ok(norm)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.shift.len() != n || self.scale.len() != n {
            return Err(FinnError::Shape(format!(
                "norm stats have {}/{} entries for {n} inputs",
                self.shift.len(),
                self.scale.len()
            )));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            || self.shift.iter().any(|s| !s.is_finite())
        {
            return Err(FinnError::InvalidParameters(
                "norm scales must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Input names in network order.
pub fn input_layout(k: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=k).map(|i| format!("f_{i}")).collect();
    for n in ["beta0", "beta1", "beta2", "beta3", "tau1_sv", "tau2_sv", "tau1", "delta", "strike"] {
        names.push(n.to_string());
    }
    names
}

/// Index of the settlement-time input.
pub fn tau1_index(k: usize) -> usize {
    k + 6
}

pub fn strike_index(k: usize) -> usize {
    k + 8
}

/// Writes the raw input vector for one (curve, parameters, contract) triple.
pub fn fill_input(out: &mut [f64], rates: &[f64], sv: &SvenssonParams, contract: &CapletContract) {
    let k = rates.len();
    out[..k].copy_from_slice(rates);
    out[k..k + 6].copy_from_slice(&sv.as_array());
    out[k + 6] = contract.tau1;
    out[k + 7] = contract.delta;
    out[k + 8] = contract.strike;
}

pub fn input_vector(rates: &[f64], sv: &SvenssonParams, contract: &CapletContract) -> Vec<f64> {
    let mut x = vec![0.0; rates.len() + EXTRA_INPUTS];
    fill_input(&mut x, rates, sv, contract);
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `weights[l]` is `(fan_out, fan_in)`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activations: Vec<Activation>,
    pub norm: NormStats,
    pub grid: TenorGrid,
    pub vol_model: Option<VolModel>,
}

/// Gradient with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(p: &NetworkParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: p.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Value, input gradient and per-direction Hessian quadratic forms at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalWithDerivs {
    pub value: f64,
    pub grad_inputs: Vec<f64>,
    pub hvp_results: Vec<f64>,
}

impl NetworkParams {
    /// MLP with SiLU hidden layers and a softplus output, fan-in uniform init
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` from `seed`.
    pub fn init(grid: &TenorGrid, hidden: &[usize], norm: NormStats, seed: u64) -> Result<Self> {
        let n_in = grid.k() + EXTRA_INPUTS;
        norm.validate(n_in)?;
        if hidden.contains(&0) {
            return Err(FinnError::InvalidParameters("hidden widths must be positive".into()));
        }
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound)));
        }
        let mut activations = vec![Activation::Silu; hidden.len()];
        activations.push(Activation::Softplus);
        Ok(Self {
            weights,
            biases,
            activations,
            norm,
            grid: grid.clone(),
            vol_model: None,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(grid: &TenorGrid, hidden: &[usize]) -> Result<Self> {
        let n_in = grid.k() + EXTRA_INPUTS;
        let mut p = Self::init(grid, hidden, NormStats::identity(n_in), 0)?;
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        p.biases.iter_mut().for_each(|b| b.fill(0.0));
        Ok(p)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.n_inputs()];
        sizes.extend(self.weights.iter().map(|w| w.nrows()));
        sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 || self.biases.len() != n || self.activations.len() != n {
            return Err(FinnError::Shape("layer lists disagree in length".into()));
        }
        for l in 0..n {
            if self.biases[l].len() != self.weights[l].nrows() {
                return Err(FinnError::Shape(format!("bias {l} does not match its weight rows")));
            }
            if l > 0 && self.weights[l].ncols() != self.weights[l - 1].nrows() {
                return Err(FinnError::Shape(format!("layer {l} fan-in mismatch")));
            }
        }
        if self.weights[n - 1].nrows() != 1 {
            return Err(FinnError::Shape("network must have a scalar output".into()));
        }
        if self.n_inputs() != self.grid.k() + EXTRA_INPUTS {
            return Err(FinnError::Shape(format!(
                "{} inputs for a K={} grid",
                self.n_inputs(),
                self.grid.k()
            )));
        }
        self.norm.validate(self.n_inputs())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(FinnError::Shape(format!(
                "input has {} entries, network takes {}",
                x.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.point_pass(x, false).0)
    }

    /// Single-point forward (and optional reverse) pass with plain loops;
    /// avoids the GEMM packing and bookkeeping of the batched jet engine.
    fn point_pass(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let n_layers = self.weights.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut slopes: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(
            x.iter()
                .zip(self.norm.shift.iter().zip(&self.norm.scale))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        );
        for l in 0..n_layers {
            let w = &self.weights[l];
            let a = &acts[l];
            let act = self.activations[l];
            let mut out = Vec::with_capacity(w.nrows());
            let mut d = Vec::with_capacity(w.nrows());
            for (row, b) in w.rows().into_iter().zip(&self.biases[l]) {
                let row = row.to_slice().expect("row-major weights");
                let z = b + row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
                let (v, d1, _, _) = act.eval(z);
                out.push(v);
                d.push(d1);
            }
            acts.push(out);
            slopes.push(d);
        }
        let value = acts[n_layers][0];
        if !want_grad {
            return (value, Vec::new());
        }
        let mut g = vec![1.0];
        for l in (0..n_layers).rev() {
            let w = &self.weights[l];
            let mut prev = vec![0.0; w.ncols()];
            for ((row, gi), di) in w.rows().into_iter().zip(&g).zip(&slopes[l]) {
                let gz = gi * di;
                if gz != 0.0 {
                    let row = row.to_slice().expect("row-major weights");
                    for (p, wv) in prev.iter_mut().zip(row) {
                        *p += gz * wv;
                    }
                }
            }
            g = prev;
        }
        for (gv, s) in g.iter_mut().zip(&self.norm.scale) {
            *gv /= s;
        }
        (value, g)
    }

    /// Forward over many rows of raw inputs.
    pub fn forward_batch(&self, xs: ndarray::ArrayView2<f64>) -> Result<Vec<f64>> {
        let plan = JetPlan::values(xs.nrows());
        let tape = jet::forward(self, &plan, xs)?;
        Ok(tape.output().to_vec())
    }

    /// Value and exact gradient with respect to every raw input.
    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        Ok(self.point_pass(x, true))
    }

    pub fn grad_inputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(x)?.1)
    }

    /// `sigma_nᵀ D_f² V sigma_n` for each direction, with directions given on
    /// the K forward-rate inputs only.
    pub fn hvp(&self, x: &[f64], dirs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.eval_with_derivs(x, dirs)?.hvp_results)
    }

    pub fn eval_with_derivs(&self, x: &[f64], dirs: &[Vec<f64>]) -> Result<EvalWithDerivs> {
        self.check_input(x)?;
        let k = self.grid.k();
        if let Some(d) = dirs.iter().find(|d| d.len() != k) {
            return Err(FinnError::Shape(format!(
                "direction has {} entries, expected K={k}",
                d.len()
            )));
        }
        let n = self.n_inputs();
        let mut kinds = vec![StreamKind::Value];
        for i in 0..dirs.len() {
            kinds.push(StreamKind::Tangent { base: 0 });
            kinds.push(StreamKind::Second {
                base: 0,
                tangent: 1 + 2 * i,
            });
        }
        let plan = JetPlan::new(kinds, 1)?;
        let mut xs = Array2::zeros((plan.rows(), n));
        xs.row_mut(0).assign(&ndarray::ArrayView1::from(x));
        for (i, d) in dirs.iter().enumerate() {
            for (j, v) in d.iter().enumerate() {
                xs[[1 + 2 * i, j]] = *v;
            }
        }
        let tape = jet::forward(self, &plan, xs.view())?;
        let mut g_out = vec![0.0; plan.rows()];
        g_out[0] = 1.0;
        let (_, g) = jet::backward(self, &tape, &g_out, true)?;
        let g = g.expect("input gradient requested");
        let out = tape.output();
        Ok(EvalWithDerivs {
            value: out[0],
            grad_inputs: g.row(0).to_vec(),
            hvp_results: (0..dirs.len()).map(|i| out[2 + 2 * i]).collect(),
        })
    }

    /// Exact parameter gradient of a loss built from the outputs of any jet
    /// plan. `loss` maps the stacked outputs to `(value, d value / d outputs)`.
    pub fn grad_params<F>(&self, plan: &JetPlan, inputs: ndarray::ArrayView2<f64>, loss: F) -> Result<(f64, ParamGrads)>
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let tape = jet::forward(self, plan, inputs)?;
        let (value, g_out) = loss(tape.output());
        let (grads, _) = jet::backward(self, &tape, &g_out, false)?;
        Ok((value, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes(),
            activations: self.activations.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
            norm_stats: self.norm.clone(),
            input_layout: input_layout(self.grid.k()),
            grid: self.grid.clone(),
            vol_model: self.vol_model.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(FinnError::VersionMismatch {
                found: c.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if c.input_layout != input_layout(c.grid.k()) {
            return Err(FinnError::Shape("unrecognized input layout".into()));
        }
        let mut weights = Vec::new();
        for (l, rows) in c.weights.iter().enumerate() {
            let n_out = rows.len();
            let n_in = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != n_in) {
                return Err(FinnError::Shape(format!("ragged weight matrix {l}")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            weights.push(Array2::from_shape_vec((n_out, n_in), flat).expect("rectangular"));
        }
        let p = Self {
            weights,
            biases: c.biases.into_iter().map(Array1::from).collect(),
            activations: c.activations,
            norm: c.norm_stats,
            grid: c.grid,
            vol_model: c.vol_model,
        };
        p.validate()?;
        if p.layer_sizes() != c.layer_sizes {
            return Err(FinnError::Shape("layer_sizes disagree with the weights".into()));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(s)?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != CHECKPOINT_VERSION as u64 {
                return Err(FinnError::VersionMismatch {
                    found: v as u32,
                    expected: CHECKPOINT_VERSION,
                });
            }
        }
        Self::from_checkpoint(serde_json::from_value(raw)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of [`NetworkParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub norm_stats: NormStats,
    pub input_layout: Vec<String>,
    pub grid: TenorGrid,
    pub vol_model: Option<VolModel>,
}
