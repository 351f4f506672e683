use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hjm_finn::bench::{emit_tables, make_test_set, run_benchmark_on, BenchOptions, BenchReport};
use hjm_finn::hjm::{CapletContract, IntegrationMatrix};
use hjm_finn::market_data::{
    discretize, filter_rows, ingest, parse_svensson_rows, write_svensson_csv, CurveDataset, IngestOptions,
    SvenssonParams, TenorGrid, DEFAULT_EPS,
};
use hjm_finn::mc::{simulate_price, McConfig};
use hjm_finn::neural::{NetworkParams, RateScaling};
use hjm_finn::pricing::{load_model, price};
use hjm_finn::synth::{generate, SynthConfig};
use hjm_finn::trainer::{
    train_with_progress, write_loss_history, PathAugmentation, SamplerConfig, TrainConfig, TrainSchedule,
};
use hjm_finn::vol_model::{annual_tenors, estimate, tenor_levels, VolEstimateOptions, VolModel, DEFAULT_CAP};

#[derive(Parser)]
#[command(name = "hjm-finn", version, about = "Caplet pricing under three-factor HJM dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic daily Svensson parameter history as CSV.
    Synth {
        #[arg(long, default_value_t = 2000)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter a Svensson parameter file and discretize it onto a tenor grid.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        /// Parameter file quotes BETA columns in percent.
        #[arg(long)]
        percent: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the three-factor volatility model.
    EstimateVol {
        /// A curve dataset (.json), a Svensson parameter CSV, or with
        /// --matrix a CSV whose header row holds tenors and whose rows hold rates.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        matrix: bool,
        #[arg(long)]
        percent: bool,
        /// Estimation tenors are 1..=N years.
        #[arg(long, default_value_t = 30)]
        tenors: usize,
        /// Absolute rather than proportional (sqrt f) scaling.
        #[arg(long)]
        absolute: bool,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: f64,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo caplet price.
    McPrice {
        #[command(flatten)]
        curve: CurveArgs,
        #[command(flatten)]
        contract: ContractArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Volatility model JSON; omit with --zero-vol.
        #[arg(long, required_unless_present = "zero_vol")]
        vol: Option<PathBuf>,
        #[arg(long)]
        zero_vol: bool,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        antithetic: bool,
        #[arg(long)]
        parallel: bool,
    },
    /// Train a network and write its checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vol: PathBuf,
        /// Regrid the dataset to this many nodes first.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Epochs per regime, overriding the preset schedule.
        #[arg(long, value_delimiter = ',')]
        epochs: Option<Vec<usize>>,
        /// Hidden width, overriding the preset.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, value_enum, default_value_t = Scaling::Zscore)]
        rate_scaling: Scaling,
        /// Evolved copies per record added to the collocation set, overriding
        /// the preset; 0 disables.
        #[arg(long)]
        augment: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV; defaults to the checkpoint path with a .losses.csv suffix.
        #[arg(long)]
        losses: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Network price, theta and curve deltas as JSON.
    Price(PriceArgs),
    /// Curve deltas as CSV.
    Greeks(PriceArgs),
    /// Compare network and Monte Carlo prices and timings.
    Bench {
        /// One checkpoint per grid; repeat for a sweep over K.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Volatility JSON; defaults to the one stored in each checkpoint.
        #[arg(long)]
        vol: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Exit with status 1 if any model's MAE exceeds this.
        #[arg(long)]
        max_mae: Option<f64>,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 5.0)]
    tau_max: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<TenorGrid> {
        Ok(TenorGrid::new(self.k, self.tau_max)?)
    }
}

#[derive(Args)]
struct CurveArgs {
    /// JSON object with beta0..beta3, tau1, tau2.
    #[arg(long, conflicts_with_all = ["svensson", "flat"])]
    curve: Option<PathBuf>,
    /// Inline parameters: beta0,beta1,beta2,beta3,tau1,tau2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    svensson: Option<Vec<f64>>,
    /// Constant forward rate.
    #[arg(long)]
    flat: Option<f64>,
}

impl CurveArgs {
    fn params(&self) -> Result<SvenssonParams> {
        let p = match (&self.curve, &self.svensson, self.flat) {
            (Some(path), _, _) => serde_json::from_str(&read(path)?)
                .with_context(|| format!("parsing curve {}", path.display()))?,
            (_, Some(v), _) => match v[..] {
                [b0, b1, b2, b3, t1, t2] => SvenssonParams::new(b0, b1, b2, b3, t1, t2),
                _ => bail!("--svensson takes 6 comma-separated values, got {}", v.len()),
            },
            (_, _, Some(r)) => SvenssonParams::flat(r),
            _ => bail!("give one of --curve, --svensson or --flat"),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct ContractArgs {
    #[arg(long)]
    tau1: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    strike: f64,
}

impl ContractArgs {
    fn contract(&self) -> CapletContract {
        CapletContract::new(self.tau1, self.delta, self.strike)
    }
}

#[derive(Args)]
struct PriceArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    curve: CurveArgs,
    #[command(flatten)]
    contract: ContractArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Identity,
    Zscore,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_vol(path: &Path) -> Result<VolModel> {
    let v: VolModel = serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    v.validate()?;
    Ok(v)
}

fn write_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Parameter rows for volatility estimation, filtered as for ingestion.
fn estimation_rows(input: &Path, percent: bool, grid: &TenorGrid, eps: f64) -> Result<Vec<SvenssonParams>> {
    if input.extension().is_some_and(|e| e == "json") {
        let ds = CurveDataset::load(input)?;
        return Ok(ds.records.into_iter().map(|r| r.params).collect());
    }
    let parsed = parse_svensson_rows(File::open(input)?, percent)?;
    let opts = IngestOptions {
        eps,
        percent,
        bounds: None,
    };
    let ds = filter_rows(parsed, grid, &opts)?;
    Ok(ds.records.into_iter().map(|r| r.params).collect())
}

fn read_matrix(input: &Path) -> Result<(Vec<f64>, ndarray::Array2<f64>)> {
    let mut rdr = csv::Reader::from_path(input)?;
    let tenors: Vec<f64> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().parse::<f64>().with_context(|| format!("tenor header {h:?}")))
        .collect::<Result<_>>()?;
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != tenors.len() {
            bail!("row {} has {} values for {} tenors", rows + 1, rec.len(), tenors.len());
        }
        for v in rec.iter() {
            data.push(v.trim().parse::<f64>()?);
        }
        rows += 1;
    }
    let shape = (rows, tenors.len());
    Ok((tenors, ndarray::Array2::from_shape_vec(shape, data)?))
}

fn regrid_to(ds: CurveDataset, grid: &TenorGrid) -> Result<CurveDataset> {
    if ds.grid.same_as(grid) {
        Ok(ds)
    } else {
        Ok(ds.regrid(grid)?)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { days, seed, out } => {
            let rows = generate(&SynthConfig {
                days,
                seed,
                ..SynthConfig::default()
            });
            write_svensson_csv(File::create(&out)?, rows.iter())?;
        }
        Command::Ingest {
            input,
            grid,
            eps,
            percent,
            out,
        } => {
            let opts = IngestOptions {
                eps,
                percent,
                bounds: None,
            };
            let ds = ingest(&input, &grid.grid()?, &opts)?;
            ds.save(&out)?;
            eprintln!("{} records kept; {:?}", ds.len(), ds.filter_report);
        }
        Command::EstimateVol {
            input,
            matrix,
            percent,
            tenors,
            absolute,
            cap,
            eps,
            grid,
            out,
        } => {
            let (tenors, levels) = if matrix {
                read_matrix(&input)?
            } else {
                let rows = estimation_rows(&input, percent, &grid.grid()?, eps)?;
                let t = annual_tenors(tenors);
                let levels = tenor_levels(&rows, &t)?;
                (t, levels)
            };
            let opts = VolEstimateOptions {
                proportional: !absolute,
                eps,
                cap_m: cap,
                ..VolEstimateOptions::default()
            };
            let v = estimate(&levels, &tenors, &opts)?;
            std::fs::write(&out, serde_json::to_string_pretty(&v)?)?;
        }
        Command::McPrice {
            curve,
            contract,
            grid,
            vol,
            zero_vol,
            paths,
            dt,
            seed,
            antithetic,
            parallel,
        } => {
            let grid = grid.grid()?;
            let curve = discretize(&curve.params()?, &grid)?;
            let vols = match vol {
                Some(p) if !zero_vol => load_vol(&p)?,
                _ => VolModel::zero(),
            };
            let cfg = McConfig {
                n_paths: paths,
                dt,
                seed,
                antithetic,
                parallel,
            };
            let c = IntegrationMatrix::new(&grid);
            write_json(&simulate_price(&curve, &vols, &c, &contract.contract(), &cfg)?)?;
        }
        Command::Train {
            data,
            vol,
            k,
            preset,
            epochs,
            width,
            rate_scaling,
            augment,
            seed,
            out,
            losses,
            quiet,
        } => {
            let mut ds = CurveDataset::load(&data)?;
            if let Some(k) = k {
                let grid = TenorGrid::new(k, ds.grid.tau_max())?;
                ds = regrid_to(ds, &grid)?;
            }
            let vols = load_vol(&vol)?;
            let (mut cfg, mut schedule) = match preset {
                Preset::Desk => (TrainConfig::desk(), TrainSchedule::desk()),
                Preset::Full => (TrainConfig::full(), TrainSchedule::full()),
            };
            if let Some(e) = epochs {
                let [a, b, c] = e[..] else {
                    bail!("--epochs takes 3 comma-separated counts, got {}", e.len());
                };
                schedule = TrainSchedule::with_epochs([a, b, c]);
            }
            if let Some(w) = width {
                cfg.hidden = vec![w; cfg.hidden.len()];
            }
            match augment {
                Some(0) => cfg.augmentation = None,
                Some(n) => {
                    cfg.augmentation = Some(PathAugmentation {
                        copies: n,
                        ..cfg.augmentation.unwrap_or_default()
                    })
                }
                None => {}
            }
            cfg.rate_scaling = match rate_scaling {
                Scaling::Identity => RateScaling::Identity,
                Scaling::Zscore => RateScaling::ZScore,
            };
            let total = schedule.total_epochs();
            let step = (total / 20).max(1);
            let outcome = train_with_progress(&ds, &vols, &schedule, &SamplerConfig::default(), &cfg, seed, |log| {
                if !quiet && (log.epoch % step == 0 || log.epoch + 1 == total) {
                    eprintln!(
                        "epoch {:>6} lr {:.0e} pde {:.3e} bc {:.3e} zs {:.3e}",
                        log.epoch, log.lr, log.loss.pde, log.loss.bc, log.loss.zs
                    );
                }
            })?;
            outcome.params.save(&out)?;
            let losses = losses.unwrap_or_else(|| out.with_extension("losses.csv"));
            write_loss_history(&outcome.history, File::create(&losses)?)?;
        }
        Command::Price(args) => {
            let (model, curve, params, contract) = price_inputs(&args)?;
            write_json(&price(&model, &curve, &params, &contract)?)?;
        }
        Command::Greeks(args) => {
            let (model, curve, params, contract) = price_inputs(&args)?;
            let q = price(&model, &curve, &params, &contract)?;
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(["tau", "delta"])?;
            for (tau, d) in curve.grid.nodes().iter().zip(&q.curve_deltas) {
                w.write_record([format!("{tau:e}"), format!("{d:e}")])?;
            }
            w.flush()?;
        }
        Command::Bench {
            model,
            data,
            vol,
            n,
            paths,
            dt,
            seed,
            reps,
            out,
            max_mae,
        } => {
            let base = CurveDataset::load(&data)?;
            let shared_vol = vol.as_deref().map(load_vol).transpose()?;
            let opts = BenchOptions {
                mc: McConfig {
                    n_paths: paths,
                    dt,
                    ..McConfig::default()
                },
                finn_reps: reps,
                mc_reps: 1,
            };
            let mut reports: Vec<BenchReport> = Vec::new();
            for path in &model {
                let net = load_model(path)?;
                let vols = match (&shared_vol, &net.vol_model) {
                    (Some(v), _) | (None, Some(v)) => v.clone(),
                    (None, None) => bail!("{} stores no volatility model; pass --vol", path.display()),
                };
                let ds = regrid_to(base.clone(), &net.grid)?;
                let tests = make_test_set(&ds, &SamplerConfig::default(), n, seed)?;
                let r = run_benchmark_on(&net, &ds, &vols, &opts, &tests)?;
                eprintln!(
                    "K={} mae {:.3e} mc {:.3e}s finn {:.3e}s speedup {:.0}",
                    r.k, r.mae, r.mc_time_per_contract, r.finn_time_per_contract, r.speedup
                );
                reports.push(r);
            }
            emit_tables(&reports, &out)?;
            if let Some(gate) = max_mae {
                if let Some(r) = reports.iter().find(|r| !(r.mae <= gate)) {
                    eprintln!("K={} mae {:.3e} exceeds --max-mae {gate:e}", r.k, r.mae);
                    return Ok(ExitCode::from(1));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn price_inputs(args: &PriceArgs) -> Result<(NetworkParams, hjm_finn::market_data::DiscreteCurve, SvenssonParams, CapletContract)> {
    let model = load_model(&args.model)?;
    let params = args.curve.params()?;
    let curve = discretize(&params, &model.grid)?;
    Ok((model, curve, params, args.contract.contract()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
