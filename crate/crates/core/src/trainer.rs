//! Sampling, the three-part loss and the curriculum training loop.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};
use crate::hjm::{
    bond_price, caplet_payoff, interp_rate, musiela_drift, zero_strike_value, CapletContract, DriftKernel,
    IntegrationMatrix,
};
use crate::market_data::{discretize_slope, CurveDataset, CurveRecord, DiscreteCurve, SvenssonParams, TenorGrid};
use crate::mc::{evolve_curve, fd_slope};
use crate::neural::{
    fill_input, input_vector, jet, tau1_index, AdamState, JetPlan, NetworkParams, NormStats, RateScaling,
    StreamKind,
};
use crate::vol_model::{VolModel, N_FACTORS};

/// RNG stream used for training batches; test sets draw from [`TEST_STREAM`].
pub const TRAIN_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub tau1_range: [f64; 2],
    pub delta_range: [f64; 2],
    pub strike_range: [f64; 2],
    pub strike_nodes: usize,
    pub zero_strike_fraction: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau1_range: [0.0, 5.0],
            delta_range: [1.0 / 3.0, 0.75],
            strike_range: [0.0, 0.07],
            strike_nodes: 16,
            zero_strike_fraction: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, grid: &TenorGrid) -> Result<()> {
        let bad = |m: &str| Err(FinnError::InvalidParameters(m.to_string()));
        let [t0, t1] = self.tau1_range;
        let [d0, d1] = self.delta_range;
        if !(t0 >= 0.0 && t1 >= t0 && d0 > 0.0 && d1 >= d0) {
            return bad("sampler ranges must be ordered, delta positive");
        }
        if t0 + d0 > grid.tau_max() {
            return bad("sampler ranges do not fit the grid horizon");
        }
        if !(0.0..=1.0).contains(&self.zero_strike_fraction) {
            return bad("zero_strike_fraction must lie in [0, 1]");
        }
        if self.strike_nodes == 0 || self.strike_range[1] < self.strike_range[0] {
            return bad("need at least one strike node on an ordered range");
        }
        Ok(())
    }

    /// Chebyshev nodes on `strike_range`, ascending.
    pub fn strike_grid(&self) -> Vec<f64> {
        let n = self.strike_nodes;
        let [a, b] = self.strike_range;
        let mut v: Vec<f64> = (0..n)
            .map(|j| {
                let x = ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
                0.5 * (a + b) + 0.5 * (b - a) * x
            })
            .collect();
        v.reverse();
        v
    }

    /// Largest usable settlement time on a grid with horizon `tau_max`.
    pub fn tau1_upper(&self, tau_max: f64) -> f64 {
        self.tau1_range[1].min(tau_max - self.delta_range[0])
    }
}

/// One training or test item: a dataset record and a contract on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub record: usize,
    pub contract: CapletContract,
    /// Zero-strike relabeled copy of another sample in the same batch.
    pub relabeled: bool,
}

/// Stateful sampler; each call to [`draw`](Self::draw) advances the stream.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    strikes: Vec<f64>,
    n_records: usize,
    tau_max: f64,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(dataset: &CurveDataset, cfg: &SamplerConfig, stream: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(FinnError::EmptyDataset);
        }
        cfg.validate(&dataset.grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        Ok(Self {
            strikes: cfg.strike_grid(),
            cfg: cfg.clone(),
            n_records: dataset.len(),
            tau_max: dataset.grid.tau_max(),
            rng,
        })
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    fn one(&mut self) -> Sample {
        let record = self.rng.random_range(0..self.n_records);
        let [t0, _] = self.cfg.tau1_range;
        let t1 = self.cfg.tau1_upper(self.tau_max);
        let tau1 = loop {
            let t = t0 + (t1 - t0) * self.rng.random::<f64>();
            if t > 0.0 || t1 == 0.0 {
                break t;
            }
        };
        let [d0, d1] = self.cfg.delta_range;
        let d1 = d1.min(self.tau_max - tau1);
        let delta = d0 + (d1 - d0) * self.rng.random::<f64>();
        let strike = self.strikes[self.rng.random_range(0..self.strikes.len())];
        Sample {
            record,
            contract: CapletContract::new(tau1, delta, strike),
            relabeled: false,
        }
    }

    /// `n` iid draws followed by `ceil(fraction * n)` zero-strike clones of the first draws.
    pub fn draw(&mut self, n: usize) -> Vec<Sample> {
        let mut out: Vec<Sample> = (0..n).map(|_| self.one()).collect();
        out.extend(self.clones(&out));
        out
    }

    /// `n` iid draws with no relabeling.
    pub fn draw_plain(&mut self, n: usize) -> Vec<Sample> {
        (0..n).map(|_| self.one()).collect()
    }

    fn clones(&self, base: &[Sample]) -> Vec<Sample> {
        let m = (self.cfg.zero_strike_fraction * base.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        base.iter()
            .take(m)
            .map(|s| Sample {
                contract: s.contract.with_strike(0.0),
                relabeled: true,
                ..*s
            })
            .collect()
    }
}

/// One seeded batch from `cfg.seed`.
pub fn sample_batch(dataset: &CurveDataset, cfg: &SamplerConfig, n: usize) -> Result<Vec<Sample>> {
    Ok(Sampler::new(dataset, cfg, TRAIN_STREAM)?.draw(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub regimes: Vec<Regime>,
}

impl TrainSchedule {
    pub fn full() -> Self {
        Self::with_epochs([15000, 5000, 2500])
    }

    pub fn desk() -> Self {
        Self::with_epochs([3000, 1000, 500])
    }

    /// Full-scale learning rates and batch layout with custom epoch counts.
    pub fn with_epochs(epochs: [usize; 3]) -> Self {
        let lr = [1e-4, 1e-5, 1e-6];
        let layout = [(100, 10), (100, 10), (500, 2)];
        Self {
            regimes: (0..3)
                .map(|i| Regime {
                    epochs: epochs[i],
                    learning_rate: lr[i],
                    batch_size: layout[i].0,
                    batches_per_epoch: layout[i].1,
                })
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Self { regimes: Vec::new() }
    }

    pub fn total_epochs(&self) -> usize {
        self.regimes.iter().map(|r| r.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.regimes {
            if !(r.learning_rate > 0.0) || r.batch_size == 0 || r.batches_per_epoch == 0 {
                return Err(FinnError::InvalidParameters(format!("bad regime {r:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pde: f64,
    pub bc: f64,
    pub zs: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(pde: f64, bc: f64, zs: f64) -> Self {
        Self {
            pde,
            bc,
            zs,
            total: pde + bc + zs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub regime: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Anything that can report value, a first directional derivative along
/// `d0` and second directional derivatives along each of `dirs` (forward
/// rates only) at a raw input point.
pub trait PriceFunction {
    fn value_and_directional(&self, x: &[f64], d0: &[f64], dirs: &[Vec<f64>]) -> Result<(f64, f64, Vec<f64>)>;
}

impl PriceFunction for NetworkParams {
    fn value_and_directional(&self, x: &[f64], d0: &[f64], dirs: &[Vec<f64>]) -> Result<(f64, f64, Vec<f64>)> {
        let n = self.n_inputs();
        let mut kinds = vec![StreamKind::Value, StreamKind::Tangent { base: 0 }];
        for i in 0..dirs.len() {
            kinds.push(StreamKind::Tangent { base: 0 });
            kinds.push(StreamKind::Second {
                base: 0,
                tangent: 2 + 2 * i,
            });
        }
        let plan = JetPlan::new(kinds, 1)?;
        let mut xs = Array2::zeros((plan.rows(), n));
        for j in 0..n {
            xs[[0, j]] = x[j];
            xs[[1, j]] = d0[j];
        }
        for (i, d) in dirs.iter().enumerate() {
            for (j, v) in d.iter().enumerate() {
                xs[[2 + 2 * i, j]] = *v;
            }
        }
        let tape = jet::forward(self, &plan, xs.view())?;
        let y = tape.output();
        Ok((y[0], y[1], (0..dirs.len()).map(|i| y[3 + 2 * i]).collect()))
    }
}

/// Closed-form zero-strike price `P(tau1) - P(tau1 + delta)` on the discrete
/// integration rule, with analytic derivatives.
#[derive(Debug, Clone)]
pub struct ZeroStrikeEvaluator {
    c: IntegrationMatrix,
}

impl ZeroStrikeEvaluator {
    pub fn new(grid: &TenorGrid) -> Self {
        Self {
            c: IntegrationMatrix::new(grid),
        }
    }
}

impl PriceFunction for ZeroStrikeEvaluator {
    fn value_and_directional(&self, x: &[f64], d0: &[f64], dirs: &[Vec<f64>]) -> Result<(f64, f64, Vec<f64>)> {
        let grid = self.c.grid();
        let k = grid.k();
        let curve = DiscreteCurve::new(grid.clone(), x[..k].to_vec())?;
        let t1 = x[k + 6];
        let t2 = t1 + x[k + 7];
        let (p1, p2) = (bond_price(&curve, &self.c, t1)?, bond_price(&curve, &self.c, t2)?);
        let (w1, w2) = (self.c.integral_weights(t1)?, self.c.integral_weights(t2)?);
        let dot = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        // dV/dtau1 moves both ends of the accrual.
        let dv_dt1 = -p1 * interp_rate(&curve, t1)? + p2 * interp_rate(&curve, t2)?;
        let first = -p1 * dot(&w1, &d0[..k]) + p2 * dot(&w2, &d0[..k]) + dv_dt1 * d0[k + 6];
        let second = dirs
            .iter()
            .map(|s| p1 * dot(&w1, s).powi(2) - p2 * dot(&w2, s).powi(2))
            .collect();
        Ok((p1 - p2, first, second))
    }
}

/// Direction `d0 = (mu on f, -1 on tau1)`: its derivative is `-dV/dtau1 + mu·D_f V`.
fn transport_direction(mu: &[f64], n_inputs: usize) -> Vec<f64> {
    let k = mu.len();
    let mut d0 = vec![0.0; n_inputs];
    d0[..k].copy_from_slice(mu);
    d0[tau1_index(k)] = -1.0;
    d0
}

/// Signed residual `-dV/dtau1 + mu·D_f V + ½ Σ σ_nᵀ D_f² V σ_n - r V`.
pub fn pde_residual<F: PriceFunction + ?Sized>(
    v: &F,
    curve: &DiscreteCurve,
    svensson: &SvenssonParams,
    contract: &CapletContract,
    vols: &VolModel,
    c: &IntegrationMatrix,
) -> Result<f64> {
    let slope = discretize_slope(svensson, &curve.grid)?;
    let mu = musiela_drift(curve, &slope, vols, c)?.values;
    let sig = vols.curve_vols(&vols.node_profile(&curve.grid), &curve.rates);
    let x = input_vector(&curve.rates, svensson, contract);
    let d0 = transport_direction(&mu, x.len());
    let (value, transport, hess) = v.value_and_directional(&x, &d0, &sig)?;
    Ok(transport + 0.5 * hess.iter().sum::<f64>() - curve.short_rate() * value)
}

/// `(V(tau1 = 0) - payoff)²`.
pub fn boundary_loss(
    net: &NetworkParams,
    curve: &DiscreteCurve,
    svensson: &SvenssonParams,
    contract: &CapletContract,
) -> Result<f64> {
    let c = IntegrationMatrix::new(&curve.grid);
    let at = contract.at_settlement();
    let target = caplet_payoff(curve, &c, &at)?;
    let v = net.forward(&input_vector(&curve.rates, svensson, &at))?;
    Ok((v - target).powi(2))
}

/// `(V(strike = 0) - (P(tau1) - P(tau1 + delta)))²`.
pub fn zero_strike_loss(
    net: &NetworkParams,
    curve: &DiscreteCurve,
    svensson: &SvenssonParams,
    tau1: f64,
    delta: f64,
) -> Result<f64> {
    let c = IntegrationMatrix::new(&curve.grid);
    let target = zero_strike_value(curve, &c, tau1, delta)?;
    let v = net.forward(&input_vector(
        &curve.rates,
        svensson,
        &CapletContract::new(tau1, delta, 0.0),
    ))?;
    Ok((v - target).powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub weight_decay: f64,
    /// Weights on (pde, bc, zs) in the optimized objective.
    pub loss_weights: [f64; 3],
    /// Output-layer bias at initialization; `None` keeps the uniform draw.
    pub output_bias: Option<f64>,
    pub rate_scaling: RateScaling,
    /// Adds evolved curves to the collocation set; `None` trains on the
    /// dataset curves only.
    #[serde(default)]
    pub augmentation: Option<PathAugmentation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![crate::neural::FULL_WIDTH; crate::neural::HIDDEN_LAYERS],
            weight_decay: crate::neural::adam::DEFAULT_WEIGHT_DECAY,
            loss_weights: [1.0; 3],
            output_bias: None,
            rate_scaling: RateScaling::default(),
            augmentation: None,
        }
    }
}

/// Hidden width of the reduced preset.
pub const DESK_WIDTH: usize = 64;

impl TrainConfig {
    /// Full-width network with a uniform output-bias draw.
    pub fn full() -> Self {
        Self::default()
    }

    /// Width [`DESK_WIDTH`], output bias started near softplus^-1(0.01) so the
    /// initial prices sit at a typical caplet level, and evolved-curve
    /// augmentation.
    pub fn desk() -> Self {
        Self {
            hidden: vec![DESK_WIDTH; crate::neural::HIDDEN_LAYERS],
            output_bias: Some(-4.6),
            augmentation: Some(PathAugmentation::default()),
            ..Self::default()
        }
    }
}

/// Extra collocation curves: each dataset record is evolved under the model
/// dynamics for a uniform time on `[0, horizon]`. The copies keep the
/// Svensson inputs of their source record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAugmentation {
    pub copies: usize,
    pub horizon: f64,
    /// Euler step of the evolution.
    pub dt: f64,
}

impl Default for PathAugmentation {
    fn default() -> Self {
        Self {
            copies: AUG_COPIES,
            horizon: AUG_HORIZON,
            dt: 0.05,
        }
    }
}

pub const AUG_COPIES: usize = 4;
pub const AUG_HORIZON: f64 = 4.6;

/// RNG stream of the curve evolution.
pub const AUGMENT_STREAM: u64 = 3;

/// Evolved copies of every record, in record order. Paths that end with a
/// rate at or below the dataset floor are dropped.
pub fn evolve_records(dataset: &CurveDataset, vols: &VolModel, aug: &PathAugmentation, seed: u64) -> Result<Vec<CurveRecord>> {
    if !(aug.horizon >= 0.0 && aug.dt > 0.0) {
        return Err(FinnError::InvalidParameters(format!("bad augmentation {aug:?}")));
    }
    let c = IntegrationMatrix::new(&dataset.grid);
    let mut kernel = DriftKernel::new(vols, &c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(AUGMENT_STREAM);
    let floor = dataset.filter_report.eps;
    let mut out = Vec::with_capacity(dataset.len() * aug.copies);
    for r in &dataset.records {
        for _ in 0..aug.copies {
            let t = aug.horizon * rng.random::<f64>();
            let path = evolve_curve(&r.curve.rates, &mut kernel, dataset.grid.spacing(), t, aug.dt, &mut rng);
            if let Some(rates) = path.filter(|f| f.iter().all(|&x| x > floor)) {
                out.push(CurveRecord {
                    params: r.params.clone(),
                    curve: DiscreteCurve::new(dataset.grid.clone(), rates)?,
                });
            }
        }
    }
    Ok(out)
}

/// Per-record quantities that do not depend on the contract.
struct RecordState {
    mu: Vec<f64>,
    sigma: [Vec<f64>; N_FACTORS],
}

/// Stream layout of a training batch.
const S_VALUE: usize = 0;
const S_TRANSPORT: usize = 1;
const S_BC: usize = 2 + 2 * N_FACTORS;
const S_ZS: usize = S_BC + 1;

fn loss_plan(m: usize) -> Result<JetPlan> {
    let mut kinds = vec![StreamKind::Value, StreamKind::Tangent { base: 0 }];
    for n in 0..N_FACTORS {
        kinds.push(StreamKind::Tangent { base: 0 });
        kinds.push(StreamKind::Second {
            base: 0,
            tangent: 2 + 2 * n,
        });
    }
    kinds.push(StreamKind::Value);
    kinds.push(StreamKind::Value);
    JetPlan::new(kinds, m)
}

/// Batch loss evaluator shared by training and diagnostics.
pub struct LossAssembler<'a> {
    dataset: &'a CurveDataset,
    c: IntegrationMatrix,
    states: Vec<RecordState>,
    weights: [f64; 3],
}

/// Result of one batch evaluation.
pub struct BatchLoss {
    pub loss: LossBreakdown,
    pub objective: f64,
    pub grads: crate::neural::ParamGrads,
}

impl<'a> LossAssembler<'a> {
    pub fn new(dataset: &'a CurveDataset, vols: &VolModel, weights: [f64; 3]) -> Result<Self> {
        Self::with_evolved(dataset, dataset.len(), vols, weights)
    }

    /// Records from index `analytic` on are evolved curves: their drift uses
    /// finite-difference slopes instead of the Svensson derivative.
    pub fn with_evolved(dataset: &'a CurveDataset, analytic: usize, vols: &VolModel, weights: [f64; 3]) -> Result<Self> {
        let c = IntegrationMatrix::new(&dataset.grid);
        let profile = vols.node_profile(&dataset.grid);
        let mut states = Vec::with_capacity(dataset.len());
        for r in &dataset.records {
            let slope = if states.len() < analytic {
                discretize_slope(&r.params, &dataset.grid)?
            } else {
                let mut s = vec![0.0; dataset.grid.k()];
                fd_slope(&r.curve.rates, dataset.grid.spacing(), &mut s);
                s
            };
            let mu = musiela_drift(&r.curve, &slope, vols, &c)?.values;
            let sigma = vols.curve_vols(&profile, &r.curve.rates);
            states.push(RecordState { mu, sigma });
        }
        Ok(Self {
            dataset,
            c,
            states,
            weights,
        })
    }

    fn inputs(&self, batch: &[Sample], n_in: usize) -> Result<(JetPlan, Array2<f64>, Vec<[f64; 3]>)> {
        let m = batch.len();
        let k = self.dataset.grid.k();
        let plan = loss_plan(m)?;
        let mut xs = Array2::zeros((plan.rows(), n_in));
        // per item: (short rate, bc target, zs target)
        let mut aux = Vec::with_capacity(m);
        let mut x = vec![0.0; n_in];
        for (i, s) in batch.iter().enumerate() {
            let rec = &self.dataset.records[s.record];
            let st = &self.states[s.record];
            let ct = s.contract;
            fill_input(&mut x, &rec.curve.rates, &rec.params, &ct);
            xs.row_mut(S_VALUE * m + i).assign(&ndarray::ArrayView1::from(&x[..]));
            let mut row = xs.row_mut(S_BC * m + i);
            row.assign(&ndarray::ArrayView1::from(&x[..]));
            row[tau1_index(k)] = 0.0;
            let mut row = xs.row_mut(S_ZS * m + i);
            row.assign(&ndarray::ArrayView1::from(&x[..]));
            row[k + 8] = 0.0;
            let mut row = xs.row_mut(S_TRANSPORT * m + i);
            for j in 0..k {
                row[j] = st.mu[j];
            }
            row[tau1_index(k)] = -1.0;
            for n in 0..N_FACTORS {
                let mut row = xs.row_mut((2 + 2 * n) * m + i);
                for j in 0..k {
                    row[j] = st.sigma[n][j];
                }
            }
            let bc = crate::hjm::caplet_payoff_rates(&self.c, &rec.curve.rates, &ct.at_settlement())?;
            let zs = zero_strike_value(&rec.curve, &self.c, ct.tau1, ct.delta)?;
            aux.push([rec.curve.rates[0], bc, zs]);
        }
        Ok((plan, xs, aux))
    }

    /// Loss components and, if `with_grads`, the exact parameter gradient of
    /// the weighted objective.
    pub fn evaluate(&self, net: &NetworkParams, batch: &[Sample], with_grads: bool) -> Result<BatchLoss> {
        let m = batch.len();
        if m == 0 {
            return Err(FinnError::InvalidParameters("empty batch".into()));
        }
        let (plan, xs, aux) = self.inputs(batch, net.n_inputs())?;
        let tape = jet::forward(net, &plan, xs.view())?;
        let y = tape.output();
        let inv = 1.0 / m as f64;
        let [wp, wb, wz] = self.weights;
        let mut g = vec![0.0; plan.rows()];
        let (mut pde, mut bc, mut zs) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let [r, t_bc, t_zs] = aux[i];
            let v = y[S_VALUE * m + i];
            let mut res = y[S_TRANSPORT * m + i] - r * v;
            for n in 0..N_FACTORS {
                res += 0.5 * y[(3 + 2 * n) * m + i];
            }
            let e_bc = y[S_BC * m + i] - t_bc;
            let e_zs = y[S_ZS * m + i] - t_zs;
            pde += res * res * inv;
            bc += e_bc * e_bc * inv;
            zs += e_zs * e_zs * inv;
            g[S_VALUE * m + i] = -2.0 * wp * r * res * inv;
            g[S_TRANSPORT * m + i] = 2.0 * wp * res * inv;
            for n in 0..N_FACTORS {
                g[(3 + 2 * n) * m + i] = wp * res * inv;
            }
            g[S_BC * m + i] = 2.0 * wb * e_bc * inv;
            g[S_ZS * m + i] = 2.0 * wz * e_zs * inv;
        }
        let loss = LossBreakdown::new(pde, bc, zs);
        let objective = wp * pde + wb * bc + wz * zs;
        let grads = if with_grads {
            jet::backward(net, &tape, &g, false)?.0
        } else {
            crate::neural::ParamGrads::zeros_like(net)
        };
        Ok(BatchLoss {
            loss,
            objective,
            grads,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochLog>,
}

/// Fresh network for `dataset` with normalization statistics baked in.
pub fn init_network(dataset: &CurveDataset, vols: &VolModel, cfg: &TrainConfig, seed: u64) -> Result<NetworkParams> {
    let norm = NormStats::from_dataset(dataset, cfg.rate_scaling)?;
    let mut net = NetworkParams::init(&dataset.grid, &cfg.hidden, norm, seed)?;
    if let Some(b) = cfg.output_bias {
        let last = net.biases.len() - 1;
        net.biases[last].fill(b);
    }
    net.vol_model = Some(vols.clone());
    Ok(net)
}

/// Runs the curriculum. Batches are redrawn every epoch from a stream seeded
/// by `seed`; the network is initialized from the same seed.
pub fn train(
    dataset: &CurveDataset,
    vols: &VolModel,
    schedule: &TrainSchedule,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with_progress(dataset, vols, schedule, sampler_cfg, cfg, seed, |_| {})
}

pub fn train_with_progress(
    dataset: &CurveDataset,
    vols: &VolModel,
    schedule: &TrainSchedule,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    schedule.validate()?;
    let net = init_network(dataset, vols, cfg, seed)?;
    continue_training(net, dataset, vols, schedule, sampler_cfg, cfg, seed, &mut progress)
}

#[allow(clippy::too_many_arguments)]
fn continue_training(
    mut net: NetworkParams,
    dataset: &CurveDataset,
    vols: &VolModel,
    schedule: &TrainSchedule,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
    progress: &mut impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut collocation = dataset.clone();
    if let Some(aug) = &cfg.augmentation {
        collocation.records.extend(evolve_records(dataset, vols, aug, seed)?);
    }
    let assembler = LossAssembler::with_evolved(&collocation, dataset.len(), vols, cfg.loss_weights)?;
    let mut sampler = Sampler::new(
        &collocation,
        &SamplerConfig {
            seed,
            ..sampler_cfg.clone()
        },
        TRAIN_STREAM,
    )?;
    let mut adam = AdamState::new(&net, 1.0, cfg.weight_decay);
    let mut history = Vec::with_capacity(schedule.total_epochs());
    let mut epoch = 0;
    for (ri, regime) in schedule.regimes.iter().enumerate() {
        adam.lr = regime.learning_rate;
        for _ in 0..regime.epochs {
            let mut acc = [0.0; 3];
            for b in 0..regime.batches_per_epoch {
                let batch = sampler.draw(regime.batch_size);
                let out = assembler.evaluate(&net, &batch, true)?;
                let l = out.loss;
                for (term, v) in [("pde", l.pde), ("bc", l.bc), ("zs", l.zs)] {
                    if !v.is_finite() {
                        return Err(FinnError::NonFiniteLoss { epoch, batch: b, term });
                    }
                }
                if !out.grads.is_finite() {
                    return Err(FinnError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        term: "gradient",
                    });
                }
                adam.step(&mut net, &out.grads)?;
                acc[0] += l.pde;
                acc[1] += l.bc;
                acc[2] += l.zs;
            }
            let nb = regime.batches_per_epoch as f64;
            let log = EpochLog {
                epoch,
                regime: ri,
                lr: regime.learning_rate,
                loss: LossBreakdown::new(acc[0] / nb, acc[1] / nb, acc[2] / nb),
            };
            progress(&log);
            history.push(log);
            epoch += 1;
        }
    }
    Ok(TrainOutcome {
        params: net,
        history,
    })
}

/// CSV with header `epoch,pde,bc,zs,lr`.
pub fn write_loss_history<W: Write>(history: &[EpochLog], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "pde", "bc", "zs", "lr"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:e}", h.loss.pde),
            format!("{:e}", h.loss.bc),
            format!("{:e}", h.loss.zs),
            format!("{:e}", h.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median of `window`-epoch blocks of the total loss.
pub fn windowed_medians(history: &[EpochLog], window: usize) -> Vec<f64> {
    history
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| {
            let mut v: Vec<f64> = c.iter().map(|h| h.loss.total).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        })
        .collect()
}
