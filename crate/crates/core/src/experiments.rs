//! Simulation harness for the factor-model benchmarks.
//!
//! A configuration spans a grid of cells `(p, m, radial law, method)`. Each
//! replication draws a fresh `p x K` Gaussian loading and `m · n` factor-model
//! observations, estimates the loading space with every requested method on
//! the same data, and records `ρ₁` against the true span. Replication seeds
//! depend only on the base seed and the data-generating coordinates
//! `(p, m, radial, replication)`, so results do not depend on scheduling.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributed::{full_sample_basis, run_distributed, EstimatorKind, InProcess};
use crate::elliptical::{
    sample_factor_model, sample_persistent_factor_model, standard_gaussian_loading, FactorModelSpec, RadialLaw,
};
use crate::error::{Error, Result};
use crate::factor::{rolling_forecast_error, RollingSpec};
use crate::grassmann::rho1;
use crate::matrix::{DenseMatrix, OrthonormalBasis};
use crate::rng::derive_seed;

/// Eigenspace estimator compared in the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Distributed Kendall's tau.
    DEca,
    /// Distributed sample covariance.
    DPca,
    /// Kendall's tau on the pooled sample.
    FEca,
    /// Sample covariance on the pooled sample.
    FPca,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::DEca, Method::DPca, Method::FEca, Method::FPca];

    pub fn kind(self) -> EstimatorKind {
        match self {
            Method::DEca | Method::FEca => EstimatorKind::Eca,
            Method::DPca | Method::FPca => EstimatorKind::Pca,
        }
    }

    pub fn distributed(self) -> bool {
        matches!(self, Method::DEca | Method::DPca)
    }

    /// Estimated basis from `data` spread over `m` machines.
    pub fn estimate(self, data: &DenseMatrix, m: usize, k: usize) -> Result<OrthonormalBasis> {
        if self.distributed() {
            Ok(run_distributed(data, m, k, self.kind(), &InProcess)?.basis)
        } else {
            full_sample_basis(data, k, self.kind())
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::DEca => "D-ECA",
            Method::DPca => "D-PCA",
            Method::FEca => "F-ECA",
            Method::FPca => "F-PCA",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.to_ascii_lowercase().as_str() {
            "deca" => Ok(Method::DEca),
            "dpca" => Ok(Method::DPca),
            "feca" => Ok(Method::FEca),
            "fpca" => Ok(Method::FPca),
            _ => Err(Error::InvalidParameter(format!("unknown method '{s}'"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

fn default_k() -> usize {
    3
}

fn default_n() -> usize {
    200
}

fn default_alpha() -> f64 {
    1.0
}

/// A simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p_values: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n_per_machine: usize,
    pub m_values: Vec<usize>,
    pub radials: Vec<RadialLaw>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    /// Pervasiveness exponent passed to the factor model.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Measure wall time per estimate. Off by default: timings are the only
    /// non-reproducible output.
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    /// The desk-scale grid: `p ∈ {20, 50}`, `m ∈ {5, 10, 20, 40}`, `n = 200`,
    /// `K = 3`, Gaussian and `t₃, t₂, t₁` radials, all four methods, 100
    /// replications.
    fn default() -> Self {
        Self {
            p_values: vec![20, 50],
            k: 3,
            n_per_machine: 200,
            m_values: vec![5, 10, 20, 40],
            radials: vec![
                RadialLaw::Gaussian,
                RadialLaw::StudentT { nu: 3.0 },
                RadialLaw::StudentT { nu: 2.0 },
                RadialLaw::StudentT { nu: 1.0 },
            ],
            methods: Method::ALL.to_vec(),
            replications: 100,
            base_seed: 20240601,
            alpha: 1.0,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.p_values.is_empty() || self.m_values.is_empty() || self.radials.is_empty() || self.methods.is_empty() {
            return bad("p_values, m_values, radials and methods must be non-empty".into());
        }
        if let Some(p) = self.p_values.iter().find(|&&p| p < self.k || self.k == 0) {
            return bad(format!("k = {} must lie in 1..=p for p = {p}", self.k));
        }
        if self.m_values.contains(&0) {
            return bad("m values must be at least 1".into());
        }
        if self.n_per_machine < 2 {
            return bad("n_per_machine must be at least 2".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Stable numeric identifier of a radial law for seed derivation.
fn radial_id(r: RadialLaw) -> u64 {
    match r {
        RadialLaw::Gaussian => 0,
        RadialLaw::StudentT { nu } => nu.to_bits(),
    }
}

/// Seed of one replication's data. Independent of the method, so all
/// methods in a cell see the same draws.
pub fn replication_seed(base: u64, p: usize, m: usize, radial: RadialLaw, replication: usize) -> u64 {
    derive_seed(base, &[p as u64, m as u64, radial_id(radial), replication as u64])
}

/// One replication of one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub p: usize,
    pub m: usize,
    pub radial: RadialLaw,
    pub method: Method,
    pub replication: usize,
    pub rho1: f64,
    /// Milliseconds spent estimating, or 0 when timing is off.
    pub wall_ms: f64,
}

/// Grid coordinates shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub p: usize,
    pub m: usize,
    pub radial: RadialLaw,
}

fn replicate(
    cfg: &ExperimentConfig,
    cell: Cell,
    methods: &[Method],
    replication: usize,
) -> Result<Vec<ReplicationRecord>> {
    let seed = replication_seed(cfg.base_seed, cell.p, cell.m, cell.radial, replication);
    let loading = standard_gaussian_loading(cell.p, cfg.k, derive_seed(seed, &[0]))?;
    let truth = OrthonormalBasis::orthonormalize(&loading)?;
    let spec = FactorModelSpec::new(loading, cell.radial, cfg.alpha)?;
    let x = sample_factor_model(&spec, cell.m * cfg.n_per_machine, derive_seed(seed, &[1]))?.x;
    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let basis = method.estimate(&x, cell.m, cfg.k)?;
            let wall_ms = if cfg.record_timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            Ok(ReplicationRecord {
                p: cell.p,
                m: cell.m,
                radial: cell.radial,
                method,
                replication,
                rho1: rho1(&basis.into(), &truth.clone().into())?,
                wall_ms,
            })
        })
        .collect()
}

/// All replications of `methods` in one cell, ordered by method (as given)
/// then replication. Any failed replication fails the cell.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell, methods: &[Method]) -> Result<Vec<ReplicationRecord>> {
    let per_rep = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replicate(cfg, cell, methods, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(methods
        .iter()
        .flat_map(|&method| per_rep.iter().flatten().filter(move |rec| rec.method == method).cloned())
        .collect())
}

/// Cells in configuration order: `p`, then `m`, then radial law.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &p in &cfg.p_values {
        for &m in &cfg.m_values {
            for &radial in &cfg.radials {
                out.push(Cell { p, m, radial });
            }
        }
    }
    out
}

/// Runs the whole grid. Records are ordered by cell, then method (in
/// configuration order), then replication.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    let jobs: Vec<(Cell, usize)> = cells(cfg)
        .into_iter()
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(cell, r)| replicate(cfg, cell, &cfg.methods, r))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<ReplicationRecord> = results.into_iter().flatten().collect();
    let cell_index = |rec: &ReplicationRecord| {
        let p = cfg.p_values.iter().position(|&v| v == rec.p);
        let m = cfg.m_values.iter().position(|&v| v == rec.m);
        let r = cfg.radials.iter().position(|&v| v == rec.radial);
        let method = cfg.methods.iter().position(|&v| v == rec.method);
        (p, m, r, method, rec.replication)
    };
    records.sort_by_key(cell_index);
    Ok(records)
}

/// Mean and spread of one cell and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub p: usize,
    pub m: usize,
    pub radial: RadialLaw,
    pub method: Method,
    pub mean_rho1: f64,
    /// Sample standard deviation (`n - 1` divisor); 0 for a single replication.
    pub sd_rho1: f64,
    pub n_reps: usize,
}

/// Groups records by `(p, m, radial, method)` in order of first appearance.
pub fn summarize(records: &[ReplicationRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    for rec in records {
        let same = |row: &SummaryRow| {
            row.p == rec.p && row.m == rec.m && row.radial == rec.radial && row.method == rec.method
        };
        match groups.iter_mut().find(|(row, _)| same(row)) {
            Some((_, values)) => values.push(rec.rho1),
            None => groups.push((
                SummaryRow {
                    p: rec.p,
                    m: rec.m,
                    radial: rec.radial,
                    method: rec.method,
                    mean_rho1: 0.0,
                    sd_rho1: 0.0,
                    n_reps: 0,
                },
                vec![rec.rho1],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut row, values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            row.mean_rho1 = mean;
            row.sd_rho1 = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            row.n_reps = values.len();
            row
        })
        .collect()
}

/// Least-squares line `log ρ₁ = intercept + slope · log m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits the log-log line through `(m, mean ρ₁)` points; needs at least three
/// distinct `m` values and positive errors.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "a slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(m, e)) = points.iter().find(|&&(m, e)| !(m > 0.0 && e > 0.0)) {
        return Err(Error::InvalidParameter(format!("log-log fit needs positive values, got ({m}, {e})")));
    }
    let xs: Vec<f64> = points.iter().map(|&(m, _)| m.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all m values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
    })
}

/// Slope over every `m` present in `rows` for one `(p, radial, method)`.
pub fn slope_for(rows: &[SummaryRow], p: usize, radial: RadialLaw, method: Method) -> Result<SlopeFit> {
    let mut points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.p == p && r.radial == radial && r.method == method)
        .map(|r| (r.m as f64, r.mean_rho1))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    fit_loglog_slope(&points)
}

/// Difference between D-ECA and F-ECA in one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGap {
    pub cell: Cell,
    pub deca: f64,
    pub feca: f64,
    pub gap: f64,
}

/// Per-cell `|mean ρ₁(D-ECA) − mean ρ₁(F-ECA)|`, for every cell that has
/// both methods. Fails when no cell has both.
pub fn compare_deca_feca(rows: &[SummaryRow]) -> Result<Vec<CellGap>> {
    let gaps: Vec<CellGap> = rows
        .iter()
        .filter(|r| r.method == Method::DEca)
        .filter_map(|d| {
            rows.iter()
                .find(|f| f.method == Method::FEca && f.p == d.p && f.m == d.m && f.radial == d.radial)
                .map(|f| CellGap {
                    cell: Cell {
                        p: d.p,
                        m: d.m,
                        radial: d.radial,
                    },
                    deca: d.mean_rho1,
                    feca: f.mean_rho1,
                    gap: (d.mean_rho1 - f.mean_rho1).abs(),
                })
        })
        .collect();
    if gaps.is_empty() {
        return Err(Error::InsufficientData("no cell has both D-ECA and F-ECA results".into()));
    }
    Ok(gaps)
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

const RESULTS_HEADER: [&str; 7] = ["p", "m", "radial", "method", "replication", "rho1", "wall_ms"];
const SUMMARY_HEADER: [&str; 7] = ["p", "m", "radial", "method", "mean_rho1", "sd_rho1", "n_reps"];

/// Writes `results.csv` (one row per replication) and `summary.csv` (one
/// row per cell and method) into `dir`, returning both paths.
pub fn emit_results(records: &[ReplicationRecord], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let results = dir.join(RESULTS_FILE);
    let summary = dir.join(SUMMARY_FILE);
    write_rows(&results, &RESULTS_HEADER, records)?;
    write_rows(&summary, &SUMMARY_HEADER, &summarize(records))?;
    Ok((results, summary))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Csv(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_results(path: &Path) -> Result<Vec<ReplicationRecord>> {
    read_rows(path, &RESULTS_HEADER)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path, &SUMMARY_HEADER)
}

/// Synthetic rolling-forecast comparison on a factor model with
/// autoregressive factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastStudy {
    pub p: usize,
    pub k: usize,
    /// Observations per replication.
    pub n: usize,
    pub window: usize,
    pub horizon: usize,
    /// Machines per window for the distributed methods.
    pub m: usize,
    /// Autoregressive coefficient of the factors.
    pub phi: f64,
    pub radial: RadialLaw,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
}

impl Default for ForecastStudy {
    fn default() -> Self {
        Self {
            p: 20,
            k: 3,
            n: 300,
            window: 100,
            horizon: 1,
            m: 4,
            phi: 0.8,
            radial: RadialLaw::StudentT { nu: 2.0 },
            methods: vec![Method::DEca, Method::DPca],
            replications: 20,
            base_seed: 20240601,
        }
    }
}

/// Overall rolling MSE of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub method: Method,
    pub replication: usize,
    pub mse: f64,
}

/// Runs every method on the same simulated series in each replication.
/// Records are ordered by replication, then method.
pub fn run_forecast_study(study: &ForecastStudy) -> Result<Vec<ForecastRecord>> {
    if study.replications == 0 || study.methods.is_empty() {
        return Err(Error::Config("a forecast study needs replications and methods".into()));
    }
    let per_rep = (0..study.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<ForecastRecord>> {
            let seed = derive_seed(study.base_seed, &[study.p as u64, radial_id(study.radial), r as u64]);
            let loading = standard_gaussian_loading(study.p, study.k, derive_seed(seed, &[0]))?;
            let spec = FactorModelSpec::new(loading, study.radial, 1.0)?;
            let x = sample_persistent_factor_model(&spec, study.n, study.phi, 50, derive_seed(seed, &[1]))?.x;
            study
                .methods
                .iter()
                .map(|&method| {
                    let spec = RollingSpec {
                        window: study.window,
                        horizon: study.horizon,
                        k: study.k,
                        m: study.m,
                        kind: method.kind(),
                        distributed: method.distributed(),
                    };
                    Ok(ForecastRecord {
                        method,
                        replication: r,
                        mse: rolling_forecast_error(&x, &spec)?.overall(),
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}
