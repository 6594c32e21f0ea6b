mod input;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rsmv::cardinality::{cardinality_surface, SurfaceBackend};
use rsmv::closed_form::{frontier, rmv_frontier, rsmv_objective, support_of};
use rsmv::dc::{build_problem, solve_accelerated, solve_l1mv, solve_pdca, SolveReport, SolveStatus, SolverConfig};
use rsmv::exact::{relative_gap, solve_exact, RobustTerm, MAX_ASSETS};
use rsmv::market::{MarketModel, ParamCov};
use rsmv::report::{write_csv, write_csv_path, write_json, write_surface_csv, write_surface_json, FrontierRow};

use input::{load_market, parse_grid, parse_phi, parse_scalar, read_config, solver_config, usage, FileConfig, Source, Usage};

const EXIT_MAX_ITER: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "rsmv", version, about = "Robust sparse mean-variance portfolios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write a JSON report and a CSV summary.
    Solve(SolveArgs),
    /// MV and robust MV efficient frontiers as CSV.
    Frontier(FrontierArgs),
    /// Cardinality of the solution over an (epsilon, phi) grid.
    Surface(SurfaceArgs),
    /// Compare all solvers on a batch of instances.
    Bench(BenchArgs),
    /// Fit an equicorrelation covariance to a market.
    FitCov(FitCovArgs),
}

#[derive(Args)]
struct MarketArgs {
    /// CSV of periodic returns, one column per asset.
    #[arg(long, group = "source")]
    returns: Option<PathBuf>,
    /// JSON with `mean` and `cov`.
    #[arg(long, group = "source")]
    market: Option<PathBuf>,
    /// Synthetic one-factor market with this many assets.
    #[arg(long, group = "source")]
    synthetic: Option<usize>,
    #[arg(long, default_value = "monthly")]
    frequency: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Key-value (TOML) file overriding flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

impl MarketArgs {
    fn load(&self, seed: u64) -> Result<MarketModel> {
        let src = match (&self.returns, &self.market, self.synthetic) {
            (Some(p), _, _) => Source::Returns(p, &self.frequency),
            (_, Some(p), _) => Source::Market(p),
            (_, _, Some(n)) => Source::Synthetic(n, seed),
            _ => return usage("one of --returns, --market or --synthetic is required"),
        };
        load_market(src)
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Solver {
    Pdca,
    AcPdca,
    L1mv,
    Exact,
}

impl Solver {
    fn name(self) -> &'static str {
        match self {
            Solver::Pdca => "pdca",
            Solver::AcPdca => "ac-pdca",
            Solver::L1mv => "l1mv",
            Solver::Exact => "exact",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match <Solver as ValueEnum>::from_str(s, true) {
            Ok(v) => Ok(v),
            Err(_) => usage(format!("unknown solver '{s}'")),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, default_value = "1")]
    kappa: String,
    #[arg(long, default_value = "1")]
    epsilon: String,
    /// Scalar cost for every asset, or a file with one cost per asset.
    #[arg(long, default_value = "0.001")]
    phi: String,
    #[arg(long, value_enum, default_value_t = Solver::Pdca)]
    solver: Solver,
    /// Capped-l1 parameter; chosen automatically when absent.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// JSON report path; the CSV summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Earlier report to compute the relative gap against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct FrontierArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, default_value = "0.5:1.5:0.1")]
    kappa: String,
    /// Robust levels; empty for the MV frontier only.
    #[arg(long, default_value = "")]
    epsilon: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SurfaceArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, default_value = "1")]
    kappa: String,
    #[arg(long)]
    epsilon: String,
    #[arg(long)]
    phi: String,
    #[arg(long, value_enum, default_value_t = Solver::Exact)]
    solver: Solver,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Long-format CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON grid.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Synthetic instances, seeds `seed..seed+instances`. Ignored for file input.
    #[arg(long, default_value_t = 1)]
    instances: u64,
    #[arg(long, default_value = "1")]
    kappa: String,
    #[arg(long, default_value = "1")]
    epsilon: String,
    #[arg(long, default_value = "0.001")]
    phi: String,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitCovArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct SolveOutput {
    solver: Solver,
    kappa: f64,
    epsilon: f64,
    phi: Vec<f64>,
    /// Original-units objective with the exact cardinality cost.
    objective: f64,
    cardinality: usize,
    weights: Vec<f64>,
    support: Vec<usize>,
    status: SolveStatus,
    wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<SolveReport>,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    solver: &'a str,
    objective: f64,
    cardinality: usize,
    outer_iterations: usize,
    newton_iterations: usize,
    wall_time: f64,
    status: SolveStatus,
}

#[derive(Serialize)]
struct BenchRecord {
    instance: String,
    solver: &'static str,
    objective: Option<f64>,
    cardinality: Option<usize>,
    wall_time: f64,
    status: String,
    gap: Option<f64>,
    /// pDCA-family rows: is the support inside the l1 support.
    subset_of_l1mv: Option<bool>,
}

#[derive(Serialize)]
struct FitCovOutput {
    sigma: f64,
    rho: f64,
    n: usize,
    residual: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let precondition = matches!(
                e.downcast_ref::<rsmv::Error>(),
                Some(
                    rsmv::Error::InvalidInput(_)
                        | rsmv::Error::NonPositiveKappa(_)
                        | rsmv::Error::NonPositivePhi { .. }
                        | rsmv::Error::EpsilonBelowWvarThreshold { .. }
                )
            );
            if precondition || e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let market = match &cli.command {
        Command::Solve(a) => &a.market,
        Command::Frontier(a) => &a.market,
        Command::Surface(a) => &a.market,
        Command::Bench(a) => &a.market,
        Command::FitCov(a) => &a.market,
    };
    let file = read_config(market.config.as_deref())?;
    let workers = file.workers.or(market.workers);
    if workers == Some(0) {
        return usage("--workers must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?;
    pool.install(|| match &cli.command {
        Command::Solve(a) => cmd_solve(a, &file),
        Command::Frontier(a) => cmd_frontier(a, &file),
        Command::Surface(a) => cmd_surface(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
        Command::FitCov(a) => cmd_fit_cov(a, &file),
    })
}

fn exit_for(status: SolveStatus) -> ExitCode {
    match status {
        SolveStatus::Converged => ExitCode::SUCCESS,
        SolveStatus::MaxIter => ExitCode::from(EXIT_MAX_ITER),
        SolveStatus::NumericalFailure => ExitCode::from(EXIT_NUMERICAL),
    }
}

fn text_or(file: &Option<input::NumOrStr>, flag: &str) -> String {
    file.as_ref().map(|v| v.text()).unwrap_or_else(|| flag.to_string())
}

fn check_t(t: Option<f64>) -> Result<Option<f64>> {
    match t {
        Some(v) if !(v > 0.0) || !v.is_finite() => usage(format!("--t must be positive, got {v}")),
        _ => Ok(t),
    }
}

/// Runs one solver. Reported objectives are recomputed from the weights.
fn solve_one(
    m: &MarketModel,
    kappa: f64,
    epsilon: f64,
    phi: &[f64],
    solver: Solver,
    t: Option<f64>,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    let started = Instant::now();
    let (weights, status, report) = match solver {
        Solver::Exact => {
            let s = solve_exact(m, kappa, epsilon, phi, None, RobustTerm::Ellipsoid).map_err(guard_hint)?;
            (s.weights.clone(), SolveStatus::Converged, None)
        }
        _ => {
            let prob = build_problem(m, kappa, epsilon, phi, t)?;
            let r = match solver {
                Solver::Pdca => solve_pdca(&prob, cfg, None)?,
                Solver::AcPdca => solve_accelerated(&prob, cfg)?,
                _ => solve_l1mv(&prob, cfg)?,
            };
            (r.portfolio.weights.clone(), r.status, Some(r))
        }
    };
    let x = DVector::from_column_slice(&weights);
    let support = support_of(&weights);
    Ok(SolveOutput {
        solver,
        kappa,
        epsilon,
        phi: phi.to_vec(),
        objective: rsmv_objective(m, kappa, epsilon, phi, &x),
        cardinality: support.len(),
        weights,
        support,
        status,
        wall_time: report.as_ref().map_or(started.elapsed().as_secs_f64(), |r| r.wall_time),
        gap: None,
        report,
    })
}

fn guard_hint(e: rsmv::Error) -> anyhow::Error {
    match e {
        rsmv::Error::EnumerationBudget { .. } => Usage(format!("{e}; use --solver pdca for instances this large")).into(),
        e => e.into(),
    }
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

fn cmd_solve(a: &SolveArgs, file: &FileConfig) -> Result<ExitCode> {
    let seed = file.seed.unwrap_or(a.market.seed);
    let m = a.market.load(seed)?;
    let kappa = file.kappa.map_or_else(|| parse_scalar(&a.kappa, "kappa"), Ok)?;
    let epsilon = parse_scalar(&text_or(&file.epsilon, &a.epsilon), "epsilon")?;
    let phi = parse_phi(&text_or(&file.phi, &a.phi), m.n())?;
    let solver = file.solver.as_deref().map_or(Ok(a.solver), Solver::parse)?;
    let t = check_t(file.t.or(a.t))?;
    let cfg = solver_config(file, a.tol)?;

    let mut out = solve_one(&m, kappa, epsilon, &phi, solver, t, &cfg)?;
    if let Some(b) = &a.baseline {
        let text = std::fs::read_to_string(b).with_context(|| format!("reading {}", b.display()))?;
        let base: SolveOutput = serde_json::from_str(&text).with_context(|| format!("parsing {}", b.display()))?;
        out.gap = Some(relative_gap(out.objective, base.objective));
    }
    let summary = SolveSummary {
        solver: solver.name(),
        objective: out.objective,
        cardinality: out.cardinality,
        outer_iterations: out.report.as_ref().map_or(0, |r| r.outer_iterations),
        newton_iterations: out.report.as_ref().map_or(0, |r| r.newton_iterations_total),
        wall_time: out.wall_time,
        status: out.status,
    };
    match &a.out {
        Some(path) => {
            write_json(path, &out)?;
            write_csv_path(summary_path(path), &[summary])?;
        }
        None => write_csv(std::io::stdout().lock(), &[summary])?,
    }
    if let Some(g) = out.gap {
        println!("gap {g}");
    }
    if let Some(f) = out.report.as_ref().and_then(|r| r.failure.as_deref()) {
        eprintln!("solver: {f}");
    }
    Ok(exit_for(out.status))
}

fn cmd_frontier(a: &FrontierArgs, file: &FileConfig) -> Result<ExitCode> {
    let m = a.market.load(file.seed.unwrap_or(a.market.seed))?;
    let kappas = match file.kappa {
        Some(k) => vec![k],
        None => parse_grid(&a.kappa, "kappa")?,
    };
    if kappas.is_empty() {
        return usage("kappa grid is empty");
    }
    let eps = parse_grid(&text_or(&file.epsilon, &a.epsilon), "epsilon")?;
    let mut rows: Vec<FrontierRow> = frontier(&m, &kappas)?.iter().map(|p| FrontierRow::from_point(p, None)).collect();
    for e in eps {
        rows.extend(rmv_frontier(&m, &kappas, e)?.iter().map(|p| FrontierRow::from_point(p, Some(e))));
    }
    match &a.out {
        Some(p) => write_csv_path(p, &rows)?,
        None => write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_surface(a: &SurfaceArgs, file: &FileConfig) -> Result<ExitCode> {
    let m = a.market.load(file.seed.unwrap_or(a.market.seed))?;
    let kappa = file.kappa.map_or_else(|| parse_scalar(&a.kappa, "kappa"), Ok)?;
    let eps = parse_grid(&text_or(&file.epsilon, &a.epsilon), "epsilon")?;
    let phi = parse_grid(&text_or(&file.phi, &a.phi), "phi")?;
    let backend = match file.solver.as_deref().map_or(Ok(a.solver), Solver::parse)? {
        Solver::Exact => SurfaceBackend::Exact,
        Solver::Pdca => SurfaceBackend::Pdca,
        Solver::AcPdca => SurfaceBackend::AcPdca,
        Solver::L1mv => return usage("surface supports exact, pdca and ac-pdca"),
    };
    if backend == SurfaceBackend::Exact && m.n() > MAX_ASSETS {
        return usage(format!("{} assets is over the exact limit of {MAX_ASSETS}; use --solver pdca", m.n()));
    }
    let cfg = solver_config(file, a.tol)?;
    let t = check_t(file.t.or(a.t))?;
    let s = cardinality_surface(&m, kappa, &eps, &phi, backend, t, &cfg).map_err(guard_hint)?;
    match &a.out {
        Some(p) => write_surface_csv(std::fs::File::create(p)?, &s)?,
        None => write_surface_csv(std::io::stdout().lock(), &s)?,
    }
    if let Some(p) = &a.json {
        write_surface_json(p, &s)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_instance(id: String, m: &MarketModel, kappa: f64, epsilon: f64, phi: &[f64], t: Option<f64>) -> Vec<BenchRecord> {
    let cfg = SolverConfig::default();
    let mut solvers = vec![Solver::Pdca, Solver::AcPdca, Solver::L1mv];
    if m.n() <= MAX_ASSETS {
        solvers.insert(0, Solver::Exact);
    }
    let outs: Vec<(Solver, Result<SolveOutput>)> =
        solvers.iter().map(|&s| (s, solve_one(m, kappa, epsilon, phi, s, t, &cfg))).collect();
    let find = |s: Solver| outs.iter().find(|(k, _)| *k == s).and_then(|(_, r)| r.as_ref().ok());
    let exact = find(Solver::Exact).map(|o| o.objective);
    let l1_support = find(Solver::L1mv).map(|o| o.support.clone());
    outs.iter()
        .map(|(s, r)| match r {
            Ok(o) => BenchRecord {
                instance: id.clone(),
                solver: s.name(),
                objective: Some(o.objective),
                cardinality: Some(o.cardinality),
                wall_time: o.wall_time,
                status: serde_json::to_value(o.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                gap: exact.filter(|_| *s != Solver::Exact).map(|e| relative_gap(o.objective, e)),
                subset_of_l1mv: match (s, &l1_support) {
                    (Solver::Pdca | Solver::AcPdca, Some(l1)) => Some(o.support.iter().all(|i| l1.contains(i))),
                    _ => None,
                },
            },
            Err(e) => BenchRecord {
                instance: id.clone(),
                solver: s.name(),
                objective: None,
                cardinality: None,
                wall_time: 0.0,
                status: format!("error: {e}"),
                gap: None,
                subset_of_l1mv: None,
            },
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

fn cmd_bench(a: &BenchArgs, file: &FileConfig) -> Result<ExitCode> {
    let seed = file.seed.unwrap_or(a.market.seed);
    let kappa = file.kappa.map_or_else(|| parse_scalar(&a.kappa, "kappa"), Ok)?;
    let epsilon = parse_scalar(&text_or(&file.epsilon, &a.epsilon), "epsilon")?;
    let phi_text = text_or(&file.phi, &a.phi);
    let t = check_t(file.t.or(a.t))?;
    let instances: Vec<(String, MarketModel)> = if a.market.synthetic.is_some() {
        (seed..seed + a.instances).map(|s| Ok((format!("synthetic-{s}"), a.market.load(s)?))).collect::<Result<_>>()?
    } else {
        vec![("input".to_string(), a.market.load(seed)?)]
    };
    let phis = instances.iter().map(|(_, m)| parse_phi(&phi_text, m.n())).collect::<Result<Vec<_>>>()?;
    let rows: Vec<BenchRecord> = instances
        .par_iter()
        .zip(phis.par_iter())
        .map(|((id, m), phi)| bench_instance(id.clone(), m, kappa, epsilon, phi, t))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    match &a.out {
        Some(p) => write_csv_path(p, &rows)?,
        None => write_csv(std::io::stdout().lock(), &rows)?,
    }
    let mut err = std::io::stderr().lock();
    for s in ["pdca", "ac-pdca", "l1mv"] {
        let of = |r: &&BenchRecord| r.solver == s;
        if let Some(g) = median(rows.iter().filter(of).filter_map(|r| r.gap).collect()) {
            writeln!(err, "{s}: median gap {g}")?;
        }
        let inc: Vec<bool> = rows.iter().filter(of).filter_map(|r| r.subset_of_l1mv).collect();
        if !inc.is_empty() {
            let hits = inc.iter().filter(|b| **b).count();
            writeln!(err, "{s}: support inside l1mv support in {hits} of {}", inc.len())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit_cov(a: &FitCovArgs, file: &FileConfig) -> Result<ExitCode> {
    let m = a.market.load(file.seed.unwrap_or(a.market.seed))?;
    let p = ParamCov::fit(m.cov())?;
    let out = FitCovOutput { sigma: p.sigma, rho: p.rho, n: p.n, residual: p.frobenius_residual(m.cov()) };
    match &a.out {
        Some(path) => write_json(path, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(ExitCode::SUCCESS)
}
