//! Svensson forward curves: parameter records, tenor grids, discretization and
//! ingestion of parameter time series with outlier filtering.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FinnError, Result};

/// Default positivity floor applied to every discretized forward rate.
pub const DEFAULT_EPS: f64 = 0.005;

const DATASET_VERSION: u32 = 1;
const PARAM_COLUMNS: [&str; 6] = ["BETA0", "BETA1", "BETA2", "BETA3", "TAU1", "TAU2"];

/// Svensson parameters for one observation date.
///
/// Rates are decimal per annum, decay scales in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvenssonParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub tau1: f64,
    pub tau2: f64,
    #[serde(default)]
    pub date: String,
}

impl SvenssonParams {
    pub fn new(beta0: f64, beta1: f64, beta2: f64, beta3: f64, tau1: f64, tau2: f64) -> Self {
        Self {
            beta0,
            beta1,
            beta2,
            beta3,
            tau1,
            tau2,
            date: String::new(),
        }
    }

    pub fn with_date(mut self, date: impl Into<String>) -> Self {
        self.date = date.into();
        self
    }

    /// A curve with constant instantaneous forward rate `rate`.
    pub fn flat(rate: f64) -> Self {
        Self::new(rate, 0.0, 0.0, 0.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(FinnError::InvalidParameters(format!(
                "non-finite Svensson parameter on {:?}",
                self.date
            )));
        }
        if self.tau1 <= 0.0 || self.tau2 <= 0.0 {
            return Err(FinnError::InvalidParameters(format!(
                "decay scales must be positive (tau1={}, tau2={})",
                self.tau1, self.tau2
            )));
        }
        Ok(())
    }

    /// Parameters in column order `BETA0..BETA3, TAU1, TAU2`.
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.beta0, self.beta1, self.beta2, self.beta3, self.tau1, self.tau2,
        ]
    }

    pub fn from_array(values: [f64; 6], date: impl Into<String>) -> Self {
        Self::new(values[0], values[1], values[2], values[3], values[4], values[5])
            .with_date(date)
    }
}

/// Instantaneous forward rate of the Svensson curve at tenor `tau`.
pub fn svensson_forward(p: &SvenssonParams, tau: f64) -> Result<f64> {
    check_tenor(tau)?;
    let x1 = tau / p.tau1;
    let x2 = tau / p.tau2;
    let f = p.beta0 + (p.beta1 + p.beta2 * x1) * (-x1).exp() + p.beta3 * x2 * (-x2).exp();
    finite_or_invalid(f, p)
}

/// Analytic tenor derivative `df/dtau` of the Svensson curve.
pub fn svensson_dtau(p: &SvenssonParams, tau: f64) -> Result<f64> {
    check_tenor(tau)?;
    let x1 = tau / p.tau1;
    let x2 = tau / p.tau2;
    let d = (-p.beta1 / p.tau1 + (p.beta2 / p.tau1) * (1.0 - x1)) * (-x1).exp()
        + (p.beta3 / p.tau2) * (1.0 - x2) * (-x2).exp();
    finite_or_invalid(d, p)
}

fn check_tenor(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(FinnError::OutOfRange(format!("tenor must be >= 0, got {tau}")))
    }
}

fn finite_or_invalid(v: f64, p: &SvenssonParams) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FinnError::InvalidParameters(format!(
            "Svensson curve is non-finite for {p:?}"
        )))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridSpec {
    k_count: usize,
    tau_max: f64,
}

/// Equally spaced tenor nodes `0 = tau_0 < ... < tau_{K-1} = tau_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct TenorGrid {
    k_count: usize,
    tau_max: f64,
    nodes: Vec<f64>,
}

impl TryFrom<GridSpec> for TenorGrid {
    type Error = FinnError;

    fn try_from(spec: GridSpec) -> Result<Self> {
        TenorGrid::new(spec.k_count, spec.tau_max)
    }
}

impl From<TenorGrid> for GridSpec {
    fn from(g: TenorGrid) -> Self {
        GridSpec {
            k_count: g.k_count,
            tau_max: g.tau_max,
        }
    }
}

impl TenorGrid {
    pub fn new(k_count: usize, tau_max: f64) -> Result<Self> {
        if k_count < 2 {
            return Err(FinnError::InvalidGrid(format!(
                "need at least 2 nodes, got {k_count}"
            )));
        }
        if !(tau_max.is_finite() && tau_max > 0.0) {
            return Err(FinnError::InvalidGrid(format!(
                "tau_max must be positive, got {tau_max}"
            )));
        }
        let step = tau_max / (k_count - 1) as f64;
        let mut nodes: Vec<f64> = (0..k_count).map(|k| k as f64 * step).collect();
        nodes[k_count - 1] = tau_max;
        Ok(Self {
            k_count,
            tau_max,
            nodes,
        })
    }

    pub fn k(&self) -> usize {
        self.k_count
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.tau_max / (self.k_count - 1) as f64
    }

    /// Same node count and horizon (bitwise on the horizon).
    pub fn same_as(&self, other: &TenorGrid) -> bool {
        self.k_count == other.k_count && self.tau_max == other.tau_max
    }
}

/// Forward rates sampled on a tenor grid; `rates[0]` is the short rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCurve {
    pub grid: TenorGrid,
    pub rates: Vec<f64>,
}

impl DiscreteCurve {
    pub fn new(grid: TenorGrid, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != grid.k() {
            return Err(FinnError::Shape(format!(
                "curve has {} rates for a {}-node grid",
                rates.len(),
                grid.k()
            )));
        }
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(FinnError::InvalidParameters(
                "curve contains non-finite rates".into(),
            ));
        }
        Ok(Self { grid, rates })
    }

    pub fn flat(grid: TenorGrid, rate: f64) -> Self {
        let rates = vec![rate; grid.k()];
        Self { grid, rates }
    }

    pub fn short_rate(&self) -> f64 {
        self.rates[0]
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Samples the Svensson curve at every grid node.
pub fn discretize(p: &SvenssonParams, grid: &TenorGrid) -> Result<DiscreteCurve> {
    p.validate()?;
    let rates = grid
        .nodes()
        .iter()
        .map(|&tau| svensson_forward(p, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteCurve {
        grid: grid.clone(),
        rates,
    })
}

/// Analytic slope `df/dtau` at every grid node.
pub fn discretize_slope(p: &SvenssonParams, grid: &TenorGrid) -> Result<Vec<f64>> {
    grid.nodes()
        .iter()
        .map(|&tau| svensson_dtau(p, tau))
        .collect()
}

/// Per-parameter `[q05, q95]` bounds, in column order `BETA0..TAU2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl QuantileBounds {
    pub fn contains(&self, values: &[f64; 6]) -> bool {
        values
            .iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub rows_in: usize,
    pub dropped_malformed: usize,
    pub dropped_quantile: usize,
    pub dropped_nonpositive: usize,
    pub rows_out: usize,
    pub bounds: QuantileBounds,
    pub eps: f64,
}

impl FilterReport {
    pub fn total_dropped(&self) -> usize {
        self.dropped_malformed + self.dropped_quantile + self.dropped_nonpositive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub params: SvenssonParams,
    pub curve: DiscreteCurve,
}

/// Filtered curve records on a common grid, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDataset {
    pub grid: TenorGrid,
    pub records: Vec<CurveRecord>,
    pub filter_report: FilterReport,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub eps: f64,
    /// Divide `BETA*` columns by 100 (GSW files quote rates in percent).
    pub percent: bool,
    /// Reuse previously persisted quantile bounds instead of recomputing them.
    pub bounds: Option<QuantileBounds>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            percent: false,
            bounds: None,
        }
    }
}

/// Linear-interpolation empirical quantile of `sorted` (ascending) at level `p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn compute_bounds(rows: &[SvenssonParams]) -> QuantileBounds {
    let mut lower = [0.0; 6];
    let mut upper = [0.0; 6];
    for j in 0..6 {
        let mut col: Vec<f64> = rows.iter().map(|r| r.as_array()[j]).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        lower[j] = quantile_sorted(&col, 0.05);
        upper[j] = quantile_sorted(&col, 0.95);
    }
    QuantileBounds { lower, upper }
}

/// Raw parse result: well-formed parameter rows plus the count of rejected ones.
#[derive(Debug, Clone)]
pub struct ParsedRows {
    pub rows: Vec<SvenssonParams>,
    pub rows_in: usize,
    pub malformed: usize,
}

/// Parses a delimited Svensson parameter file (comma or tab, auto-detected).
///
/// Leading lines before the header containing `BETA0` are skipped, which
/// accommodates preambles in published GSW files.
pub fn parse_svensson_rows<R: Read>(reader: R, percent: bool) -> Result<ParsedRows> {
    let mut buf = BufReader::new(reader);
    let mut header = String::new();
    loop {
        header.clear();
        if buf.read_line(&mut header)? == 0 {
            return Err(FinnError::Parse("no header row with a BETA0 column".into()));
        }
        if header.to_ascii_uppercase().contains("BETA0") {
            break;
        }
    }
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let body = header.clone().into_bytes();
    let chained = body.as_slice().chain(buf);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(chained);

    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| FinnError::Parse(format!("missing column {name}")))
    };
    let date_col = find("Date")?;
    let cols = PARAM_COLUMNS
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut out = ParsedRows {
        rows: Vec::new(),
        rows_in: 0,
        malformed: 0,
    };
    for record in rdr.records() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.rows_in += 1;
        let mut values = [0.0; 6];
        let mut ok = true;
        for (slot, &c) in values.iter_mut().zip(cols.iter()) {
            match record.get(c).and_then(|s| s.parse::<f64>().ok()) {
                Some(v) if v.is_finite() => *slot = v,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            out.malformed += 1;
            continue;
        }
        if percent {
            for v in values.iter_mut().take(4) {
                *v /= 100.0;
            }
        }
        let date = record.get(date_col).unwrap_or("").to_string();
        let params = SvenssonParams::from_array(values, date);
        if params.validate().is_err() {
            out.malformed += 1;
            continue;
        }
        out.rows.push(params);
    }
    Ok(out)
}

/// Reads, filters and discretizes a Svensson parameter file.
pub fn ingest(path: impl AsRef<Path>, grid: &TenorGrid, opts: &IngestOptions) -> Result<CurveDataset> {
    let file = File::open(path.as_ref())?;
    ingest_reader(file, grid, opts)
}

pub fn ingest_reader<R: Read>(reader: R, grid: &TenorGrid, opts: &IngestOptions) -> Result<CurveDataset> {
    let parsed = parse_svensson_rows(reader, opts.percent)?;
    filter_rows(parsed, grid, opts)
}

/// Applies the quantile and positivity stages to already parsed rows.
pub fn filter_rows(parsed: ParsedRows, grid: &TenorGrid, opts: &IngestOptions) -> Result<CurveDataset> {
    if parsed.rows.is_empty() {
        return Err(FinnError::EmptyDataset);
    }
    let bounds = match &opts.bounds {
        Some(b) => b.clone(),
        None => compute_bounds(&parsed.rows),
    };

    let mut dropped_quantile = 0;
    let mut dropped_nonpositive = 0;
    let mut records = Vec::new();
    for params in parsed.rows {
        if !bounds.contains(&params.as_array()) {
            dropped_quantile += 1;
            continue;
        }
        let curve = discretize(&params, grid)?;
        if curve.rates.iter().any(|&r| r < opts.eps) {
            dropped_nonpositive += 1;
            continue;
        }
        records.push(CurveRecord { params, curve });
    }
    if records.is_empty() {
        return Err(FinnError::EmptyDataset);
    }
    let filter_report = FilterReport {
        rows_in: parsed.rows_in,
        dropped_malformed: parsed.malformed,
        dropped_quantile,
        dropped_nonpositive,
        rows_out: records.len(),
        bounds,
        eps: opts.eps,
    };
    Ok(CurveDataset {
        grid: grid.clone(),
        records,
        filter_report,
    })
}

#[derive(Serialize, Deserialize)]
struct RecordDoc {
    params: SvenssonParams,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    version: u32,
    grid: TenorGrid,
    records: Vec<RecordDoc>,
    filter_report: FilterReport,
}

impl CurveDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Re-discretizes every record on a different grid. Records keep their
    /// parameters; the positivity stage is not re-applied.
    pub fn regrid(&self, grid: &TenorGrid) -> Result<CurveDataset> {
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(CurveRecord {
                    params: r.params.clone(),
                    curve: discretize(&r.params, grid)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CurveDataset {
            grid: grid.clone(),
            records,
            filter_report: self.filter_report.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DatasetDoc {
            version: DATASET_VERSION,
            grid: self.grid.clone(),
            records: self
                .records
                .iter()
                .map(|r| RecordDoc {
                    params: r.params.clone(),
                    rates: r.curve.rates.clone(),
                })
                .collect(),
            filter_report: self.filter_report.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(text)?;
        if doc.version != DATASET_VERSION {
            return Err(FinnError::VersionMismatch {
                found: doc.version,
                expected: DATASET_VERSION,
            });
        }
        let records = doc
            .records
            .into_iter()
            .map(|r| {
                Ok(CurveRecord {
                    params: r.params,
                    curve: DiscreteCurve::new(doc.grid.clone(), r.rates)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if records.is_empty() {
            return Err(FinnError::EmptyDataset);
        }
        Ok(Self {
            grid: doc.grid,
            records,
            filter_report: doc.filter_report,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes the surviving parameter rows back out in the ingest format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_svensson_csv(writer, self.records.iter().map(|r| &r.params))
    }
}

/// Writes parameter rows as `Date,BETA0,...,TAU2` (decimal units).
pub fn write_svensson_csv<'a, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = &'a SvenssonParams>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["Date", "BETA0", "BETA1", "BETA2", "BETA3", "TAU1", "TAU2"])?;
    for p in rows {
        let vals = p.as_array();
        let mut rec = vec![p.date.clone()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
