//! `dpca` command-line tool.

mod manifest;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dpca::distributed::{partition_rows, run_distributed, CostLedger, EstimatorKind, InProcess, Tcp, Transport};
use dpca::elliptical::{sample_persistent_factor_model, standard_gaussian_loading, FactorModelSpec, RadialLaw};
use dpca::experiments::{emit_results, read_summary, run_experiment, slope_for, summarize, ExperimentConfig, Method};
use dpca::factor::{group_mse, rolling_forecast_error, run_factor_pipeline, RollingSpec};
use dpca::grassmann::{rho, rho1};
use dpca::io::{ingest_csv, numbered, read_groups, write_matrix_csv, Dataset, MissingPolicy};
use dpca::matrix::OrthonormalBasis;
use dpca::rng::derive_seed;

use manifest::write_manifest;

#[derive(Parser)]
#[command(name = "dpca", version, about = "Robust distributed principal eigenspace estimation")]
struct Cli {
    /// Worker threads for the library's parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write results.csv and summary.csv.
    Simulate(SimulateArgs),
    /// Estimate the top-k eigenspace of a CSV dataset across m machines.
    Estimate(EstimateArgs),
    /// Distributed factor-model fit: loading space and per-machine scores.
    Factor(FactorArgs),
    /// Rolling-window factor forecasts and their errors.
    Forecast(ForecastArgs),
    /// Log-log slope of mean error against m from a summary CSV.
    Slope(SlopeArgs),
    /// Write a synthetic factor-model dataset.
    Generate(GenerateArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// TOML file with the grid; the built-in desk-scale grid when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Add p = 100 to the grid.
    #[arg(long)]
    with_p100: bool,
    /// Record wall time per estimate (makes outputs non-reproducible).
    #[arg(long)]
    record_timing: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TransportArg {
    Inproc,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MissingArg {
    Error,
    Drop,
}

impl From<MissingArg> for MissingPolicy {
    fn from(m: MissingArg) -> Self {
        match m {
            MissingArg::Error => MissingPolicy::ErrorOnMissing,
            MissingArg::Drop => MissingPolicy::DropRows,
        }
    }
}

#[derive(Args, Serialize)]
struct DataArgs {
    /// Input CSV (numeric, optional header row).
    data: PathBuf,
    /// Handling of rows with missing or non-numeric cells.
    #[arg(long, value_enum, default_value = "error")]
    missing: MissingArg,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        ingest_csv(&self.data, self.missing.into()).with_context(|| format!("reading {}", self.data.display()))
    }
}

#[derive(Args, Serialize)]
struct TransportArgs {
    #[arg(long, value_enum, default_value = "inproc")]
    transport: TransportArg,
    /// Coordinator address for --transport tcp, e.g. 127.0.0.1:0.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Address workers connect to (default: the bound listen address).
    #[arg(long)]
    connect: Option<SocketAddr>,
}

impl TransportArgs {
    fn build(&self) -> Result<Box<dyn Transport>> {
        match self.transport {
            TransportArg::Inproc => {
                if self.listen.is_some() || self.connect.is_some() {
                    bail!("--listen/--connect only apply to --transport tcp");
                }
                Ok(Box::new(InProcess))
            }
            TransportArg::Tcp => match self.listen {
                Some(listen) => Ok(Box::new(Tcp::new(listen, self.connect))),
                None => bail!("--transport tcp requires --listen <addr:port>"),
            },
        }
    }
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: DataArgs,
    /// Subspace dimension.
    #[arg(long)]
    k: usize,
    /// Number of machines; must divide the number of rows.
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value = "eca")]
    method: EstimatorKind,
    #[command(flatten)]
    #[serde(flatten)]
    transport: TransportArgs,
    /// p x k CSV basis to compare against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FactorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: DataArgs,
    /// Number of factors.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Pervasiveness exponent in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    transport: TransportArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ForecastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: DataArgs,
    /// Number of factors.
    #[arg(long)]
    k: usize,
    /// Machines per training window for the distributed methods.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Training window length.
    #[arg(long)]
    window: usize,
    /// Forecast horizon.
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    /// Two-column `column_name,group` file.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Methods to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "D-ECA,F-ECA,F-PCA,D-PCA")]
    methods: Vec<Method>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SlopeArgs {
    /// summary.csv written by `simulate`.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long, default_value = "D-ECA")]
    method: Method,
    /// Restrict to one dimension.
    #[arg(long)]
    p: Option<usize>,
    /// Restrict to one radial law.
    #[arg(long)]
    radial: Option<RadialLaw>,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "gaussian")]
    radial: RadialLaw,
    /// Autoregressive coefficient of the factors (0 for i.i.d.).
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Factor(a) => factor(a),
        Command::Forecast(a) => forecast(a),
        Command::Slope(a) => slope(a),
        Command::Generate(a) => generate(a),
    }
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if args.with_p100 && !cfg.p_values.contains(&100) {
        cfg.p_values.push(100);
    }
    cfg.record_timing |= args.record_timing;
    cfg.validate()?;
    create_dir(&args.out)?;
    let records = run_experiment(&cfg)?;
    let (results, summary) = emit_results(&records, &args.out)?;
    write_manifest(&args.out, "simulate", &args, Some(&cfg))?;
    for row in summarize(&records) {
        println!(
            "p={:<4} m={:<3} {:<9} {:<6} mean_rho1={:.4} sd={:.4}",
            row.p,
            row.m,
            row.radial.to_string(),
            row.method.to_string(),
            row.mean_rho1,
            row.sd_rho1
        );
    }
    println!("wrote {} and {}", results.display(), summary.display());
    Ok(())
}

fn print_ledger(ledger: &CostLedger) {
    println!(
        "communication: {} messages, {} scalars uplinked, {} scalars downlinked",
        ledger.messages, ledger.scalars_uplinked, ledger.scalars_downlinked
    );
}

#[derive(Serialize)]
struct Diagnostics {
    rho: f64,
    rho1: f64,
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let transport = args.transport.build()?;
    let data = args.input.load()?;
    let run = run_distributed(&data.values, args.m, args.k, args.method, transport.as_ref())?;
    create_dir(&args.out)?;
    write_matrix_csv(&args.out.join("basis.csv"), run.basis.columns(), &numbered("v", args.k))?;
    println!("estimated {}x{} basis from {} rows on {} machines", data.p(), args.k, data.n(), args.m);
    print_ledger(&run.ledger);
    let diagnostics = match &args.reference {
        Some(path) => {
            let reference = ingest_csv(path, MissingPolicy::ErrorOnMissing)
                .with_context(|| format!("reading {}", path.display()))?;
            let reference = OrthonormalBasis::orthonormalize(&reference.values).context("reference basis")?;
            let (a, b) = (run.basis.clone().into(), reference.into());
            let d = Diagnostics {
                rho: rho(&a, &b)?,
                rho1: rho1(&a, &b)?,
            };
            println!("rho = {:.6e}", d.rho);
            println!("rho1 = {:.6e}", d.rho1);
            let text = toml::to_string(&d)?;
            fs::write(args.out.join("diagnostics.toml"), text)?;
            Some(d)
        }
        None => None,
    };
    write_manifest(&args.out, "estimate", &args, diagnostics.as_ref())?;
    Ok(())
}

fn factor(args: FactorArgs) -> Result<()> {
    let transport = args.transport.build()?;
    let data = args.input.load()?;
    let parts = partition_rows(&data.values, args.m)?;
    let out = run_factor_pipeline(&parts, args.k, args.alpha, transport.as_ref())?;
    create_dir(&args.out)?;
    let names = numbered("f", args.k);
    write_matrix_csv(&args.out.join("loading_basis.csv"), out.loading.basis().columns(), &numbered("v", args.k))?;
    write_matrix_csv(&args.out.join("loading_scaled.csv"), out.loading.scaled(), &numbered("l", args.k))?;
    for s in &out.scores {
        write_matrix_csv(&args.out.join(format!("scores_machine_{}.csv", s.machine_id)), &s.scores, &names)?;
    }
    println!(
        "fitted {} factors on {} machines (loading scale p^(alpha/2) = {:.6})",
        args.k,
        args.m,
        out.loading.scale()
    );
    print_ledger(&out.ledger);
    write_manifest(&args.out, "factor", &args, None::<&()>)?;
    Ok(())
}

fn forecast(args: ForecastArgs) -> Result<()> {
    if args.methods.is_empty() {
        bail!("--methods must list at least one method");
    }
    let data = args.input.load()?;
    let columns = data.column_names();
    let groups = match &args.groups {
        Some(path) => read_groups(path, &columns)?,
        None => vec!["all".to_string(); columns.len()],
    };
    create_dir(&args.out)?;
    let mut per_var = csv_writer(&args.out.join("forecast_variables.csv"))?;
    per_var.write_record(["method", "column", "group", "mse"])?;
    let mut table: Vec<(Method, Vec<(String, f64)>)> = Vec::new();
    for &method in &args.methods {
        let spec = RollingSpec {
            window: args.window,
            horizon: args.horizon,
            k: args.k,
            m: args.m,
            kind: method.kind(),
            distributed: method.distributed(),
        };
        let result = rolling_forecast_error(&data.values, &spec).with_context(|| format!("{method}"))?;
        for ((col, group), mse) in columns.iter().zip(&groups).zip(&result.per_variable) {
            per_var.write_record([method.to_string(), col.clone(), group.clone(), mse.to_string()])?;
        }
        table.push((method, group_mse(&result.per_variable, &groups)?));
    }
    per_var.flush()?;

    let (base, base_groups) = &table[0];
    let mut grouped = csv_writer(&args.out.join("forecast_groups.csv"))?;
    grouped.write_record(["group", "method", "mse", "ratio"])?;
    println!("h = {}: ratios {base}/method by group", args.horizon);
    for (method, rows) in &table {
        let mut line = format!("{:<8}", method.to_string());
        for ((group, mse), (_, base_mse)) in rows.iter().zip(base_groups) {
            let ratio = base_mse / mse;
            grouped.write_record([group.clone(), method.to_string(), mse.to_string(), ratio.to_string()])?;
            line.push_str(&format!(" {group}={ratio:.5}"));
        }
        println!("{line}");
    }
    grouped.flush()?;
    write_manifest(&args.out, "forecast", &args, None::<&()>)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn slope(args: SlopeArgs) -> Result<()> {
    let rows = read_summary(&args.summary).with_context(|| format!("reading {}", args.summary.display()))?;
    let mut keys: Vec<(usize, RadialLaw)> = Vec::new();
    for r in rows.iter().filter(|r| r.method == args.method) {
        let key = (r.p, r.radial);
        let wanted = args.p.is_none_or(|p| p == r.p) && args.radial.is_none_or(|x| x == r.radial);
        if wanted && !keys.contains(&key) {
            keys.push(key);
        }
    }
    if keys.is_empty() {
        bail!("no {} rows match the requested p and radial law", args.method);
    }
    for (p, radial) in keys {
        let fit = slope_for(&rows, p, radial, args.method).with_context(|| format!("p = {p}, {radial}"))?;
        println!(
            "p={p} radial={radial} method={} slope={:.4} intercept={:.4} r2={:.4} points={}",
            args.method, fit.slope, fit.intercept, fit.r_squared, fit.points
        );
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let loading = standard_gaussian_loading(args.p, args.k, derive_seed(args.seed, &[0]))?;
    let spec = FactorModelSpec::new(loading.clone(), args.radial, 1.0)?;
    let sample = sample_persistent_factor_model(&spec, args.n, args.phi, 50, derive_seed(args.seed, &[1]))?;
    create_dir(&args.out)?;
    write_matrix_csv(&args.out.join("data.csv"), &sample.x, &numbered("x", args.p))?;
    write_matrix_csv(&args.out.join("loading.csv"), &loading, &numbered("l", args.k))?;
    write_matrix_csv(&args.out.join("factors.csv"), &sample.f, &numbered("f", args.k))?;
    println!("wrote {} rows of {} variables to {}", args.n, args.p, args.out.join("data.csv").display());
    write_manifest(&args.out, "generate", &args, None::<&()>)?;
    Ok(())
}
