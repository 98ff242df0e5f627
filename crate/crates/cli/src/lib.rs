//! Command-line front end: solve MAPs, evaluate MAP laws and utilities,
//! run simulations and sweeps, and validate the analytic results against
//! simulation. Every command writes CSV with a header row.

pub mod checks;
pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use spatial_aloha::analytic::{self, uniform_grid, MapDistribution};
use spatial_aloha::numerics::QuadConfig;
use spatial_aloha::sim::{self, MetricsReport, SimConfig, SweepAxis};
use spatial_aloha::solver::{self, DEFAULT_TOL};
use spatial_aloha::{LocalView, ModelParams, StoppingSetSpec};

use checks::Check;

/// Environment variable naming the default directory for output files.
pub const OUT_DIR_ENV: &str = "SPATIAL_ALOHA_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "spatial-aloha",
    version,
    about = "Proportionally fair spatial Aloha experiments",
    args_override_self = true
)]
pub struct Cli {
    /// key=value file supplying defaults for any flag; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the MAP equation for one local view, or for every node of a sampled network
    Solve(SolveArgs),
    /// Law of the typical node's MAP as a CSV of P(ψ > ρ)
    Ccdf(CcdfArgs),
    /// Mean utility per unit area
    Utility(UtilityArgs),
    /// Monte Carlo metrics for one stopping set
    Simulate(SimulateArgs),
    /// Monte Carlo metrics over a grid of densities, radii or neighbour counts
    Sweep(SweepArgs),
    /// Analytic-versus-empirical checks; exits with status 0 iff all pass
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Transmitter density (a grid such as `0.02:1:10` for `sweep`)
    #[arg(long, default_value = "0.25")]
    pub lambda: String,
    /// Link length
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Path-loss exponent
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// SINR threshold
    #[arg(long = "threshold", visible_alias = "T", default_value_t = 10.0)]
    pub threshold: f64,
    /// Fading rate
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Thermal noise power
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Acknowledgement power
    #[arg(long, default_value_t = 1.0)]
    pub ack_power: f64,
}

impl ModelArgs {
    fn lambda_value(&self) -> Result<f64> {
        self.lambda
            .trim()
            .parse()
            .with_context(|| format!("lambda: expected a number, got `{}`", self.lambda))
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.params_with(self.lambda_value()?)
    }

    fn params_with(&self, lambda: f64) -> Result<ModelParams> {
        let p = ModelParams {
            lambda,
            r: self.r,
            beta: self.beta,
            threshold: self.threshold,
            mu: self.mu,
            noise: self.noise,
            ack_power: self.ack_power,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    /// Window side L
    #[arg(long, default_value_t = 40.0)]
    pub window: f64,
    /// Node count N (default round(λL²))
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub realizations: usize,
    /// Side of the averaging window as a fraction of L
    #[arg(long, default_value_t = 0.5)]
    pub inner_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Poisson node counts instead of a fixed N
    #[arg(long)]
    pub poisson: bool,
    /// Residual tolerance of the MAP solver
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

impl SimArgs {
    pub fn config(&self, params: ModelParams, spec: StoppingSetSpec) -> Result<SimConfig> {
        let cfg = SimConfig {
            window_side: self.window,
            nodes: self.nodes.unwrap_or((params.lambda * self.window * self.window).round() as usize),
            spec,
            params,
            realizations: self.realizations,
            inner_fraction: self.inner_fraction,
            seed: self.seed,
            poisson: self.poisson,
            tol: self.tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Stopping set: empty, disk:R=…, nearest:k=…, nearestcap:k=…,R=…, full
    #[arg(long, default_value = "empty")]
    pub spec: String,
    /// Observed b-coefficients of a single view, comma separated
    #[arg(long)]
    pub b: Option<String>,
    /// Outer radius of the single view given by --b (default: full information)
    #[arg(long)]
    pub outer: Option<f64>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CcdfArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "disk:R=3")]
    pub spec: String,
    /// Number of ρ grid points in (0, 1)
    #[arg(long, default_value_t = analytic::DEFAULT_GRID_POINTS)]
    pub rho_grid: usize,
    /// Distance of an extra receiver from the typical transmitter
    #[arg(long)]
    pub extra_t: Option<f64>,
    /// Estimate by simulation even when an analytic law exists
    #[arg(long)]
    pub empirical: bool,
    /// Octave tolerance of the Fourier inversion
    #[arg(long, default_value_t = 1e-6)]
    pub tail_tol: f64,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct UtilityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "disk:R=3")]
    pub spec: String,
    #[arg(long, default_value_t = 64)]
    pub rho_grid: usize,
    /// Radial Gauss-Legendre panels inside the disk
    #[arg(long, default_value_t = 4)]
    pub radial_panels: usize,
    #[arg(long, default_value_t = analytic::UTILITY_FOURIER_TAIL_TOL)]
    pub tail_tol: f64,
    /// Largest acceptable discretisation error
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "full")]
    pub spec: String,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the empirical MAP law here
    #[arg(long)]
    pub ccdf_out: Option<PathBuf>,
    #[arg(long, default_value_t = analytic::DEFAULT_GRID_POINTS)]
    pub rho_grid: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Stopping sets for a density sweep, comma separated
    #[arg(long, default_value = "full,nearest:k=1,empty")]
    pub specs: String,
    /// Sweep the disk radius instead of the density
    #[arg(long)]
    pub radius: Option<String>,
    /// Sweep the neighbour count instead of the density
    #[arg(long)]
    pub k: Option<String>,
    /// aggregate, density, mean_log or all
    #[arg(long, default_value = "all")]
    pub metric: String,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Realizations behind each empirical law
    #[arg(long, default_value_t = 200)]
    pub realizations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses a grid: `a`, `a,b,c`, `a:b` (10 points) or `a:b:n`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    let num = |s: &str| -> Result<f64> { s.trim().parse().with_context(|| format!("bad number `{s}` in grid `{text}`")) };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let (lo, hi, n) = match parts.as_slice() {
            [a, b] => (num(a)?, num(b)?, 10),
            [a, b, n] => (
                num(a)?,
                num(b)?,
                n.trim().parse::<usize>().with_context(|| format!("bad point count in `{text}`"))?,
            ),
            _ => bail!("grid `{text}`: expected a:b or a:b:n"),
        };
        if n < 2 || !(hi > lo) {
            bail!("grid `{text}`: need hi > lo and at least 2 points");
        }
        return Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect());
    }
    text.split(',').map(num).collect()
}

/// Parses a comma-separated list of stopping sets; a piece without a kind
/// (the `R=5` of `nearestcap:k=2,R=5`) continues the previous one.
pub fn parse_specs(text: &str) -> Result<Vec<StoppingSetSpec>> {
    let mut pieces: Vec<String> = Vec::new();
    for piece in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let is_kind = piece.contains(':') || matches!(piece, "empty" | "full");
        match pieces.last_mut() {
            Some(last) if !is_kind => {
                last.push(',');
                last.push_str(piece);
            }
            _ => pieces.push(piece.to_string()),
        }
    }
    pieces.iter().map(|p| parse_spec(p)).collect()
}

fn parse_spec(text: &str) -> Result<StoppingSetSpec> {
    text.parse::<StoppingSetSpec>().with_context(|| format!("spec `{text}`"))
}

/// `path`, or `name` inside the default output directory.
pub fn output_path(path: Option<&Path>, name: &str) -> PathBuf {
    match path {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(name),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Parses arguments (including `--config`) and runs the command. Returns
/// whether every requested check passed; only `validate` can return false.
pub fn run<W: Write>(args: Vec<String>, stdout: &mut W) -> Result<bool> {
    let (config_path, args) = config::extract_config_path(&args)?;
    let args = match config_path {
        Some(path) => {
            let entries = config::load(Path::new(&path))?;
            let root = Cli::command();
            // file flags go right after the subcommand, before the user's own flags
            match args.iter().position(|a| root.find_subcommand(a).is_some()) {
                Some(at) => {
                    let extra = config::to_args(&entries, &root, &args[at])?;
                    let mut merged = args[..=at].to_vec();
                    merged.extend(extra);
                    merged.extend_from_slice(&args[at + 1..]);
                    merged
                }
                None => args,
            }
        }
        None => args,
    };
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Solve(a) => solve(a, stdout),
        Command::Ccdf(a) => ccdf(a, stdout),
        Command::Utility(a) => utility(a, stdout),
        Command::Simulate(a) => simulate(a, stdout),
        Command::Sweep(a) => sweep(a, stdout),
        Command::Validate(a) => validate(a, stdout),
    }
}

fn solve<W: Write>(a: SolveArgs, stdout: &mut W) -> Result<bool> {
    let params = a.model.params()?;
    let spec = parse_spec(&a.spec)?;
    let view = match (&a.b, spec) {
        (Some(list), _) => {
            let b = parse_grid(list).context("--b")?;
            Some(match a.outer {
                Some(radius) => LocalView::disk(b, radius),
                None => LocalView::full(b),
            })
        }
        (None, StoppingSetSpec::Empty) => Some(LocalView::empty()),
        _ => None,
    };
    if let Some(view) = view {
        let s = solver::solve_map(&view, &params, a.sim.tol).context("solving the MAP equation")?;
        writeln!(stdout, "psi,saturated,residual,iterations")?;
        writeln!(stdout, "{},{},{},{}", s.psi, s.saturated, s.residual, s.iterations)?;
        return Ok(true);
    }
    let cfg = a.sim.config(params, spec)?;
    let net = sim::sample_realization(&cfg, 0)?;
    let maps = sim::assign_maps(&net, &spec, &params, cfg.tol).context("assigning MAPs")?;
    let path = output_path(a.out.as_deref(), "solve.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["node", "x", "y", "map"])?;
    for (i, (x, p)) in net.transmitters.iter().zip(&maps.maps).enumerate() {
        w.write_record([i.to_string(), x.x.to_string(), x.y.to_string(), p.to_string()])?;
    }
    w.flush()?;
    writeln!(stdout, "wrote {} MAPs under {spec} to {}", maps.len(), path.display())?;
    Ok(true)
}

fn ccdf<W: Write>(a: CcdfArgs, stdout: &mut W) -> Result<bool> {
    let params = a.model.params()?;
    let spec = parse_spec(&a.spec)?;
    let grid = uniform_grid(a.rho_grid);
    let cfg = QuadConfig {
        fourier_tail_tol: a.tail_tol,
        ..QuadConfig::default()
    };
    let analytic_ok = !a.empirical
        && match spec {
            StoppingSetSpec::Empty | StoppingSetSpec::Disk(_) => true,
            StoppingSetSpec::NearestK(1) => a.extra_t.is_none(),
            _ => false,
        };
    let law = if analytic_ok {
        match a.extra_t {
            Some(t) => extra_receiver_law(t, &spec, &params, &grid, &cfg)?,
            None => analytic::analytic_distribution(&spec, &params, &grid, &cfg).context("analytic MAP law")?,
        }
    } else {
        let sim_cfg = a.sim.config(params, spec)?;
        match a.extra_t {
            Some(t) => sim::empirical_extra_receiver_cdf(&sim_cfg, t, &grid)?,
            None => sim::simulate_on_grid(&sim_cfg, &grid)?.map_ccdf,
        }
    };
    let path = output_path(a.out.as_deref(), "ccdf.csv");
    let mut w = create(&path)?;
    law.write_csv(&mut w)?;
    w.flush()?;
    let source = if analytic_ok { "analytic" } else { "empirical" };
    writeln!(
        stdout,
        "wrote {source} MAP law under {spec} ({} points) to {}",
        grid.len(),
        path.display()
    )?;
    Ok(true)
}

fn extra_receiver_law(t: f64, spec: &StoppingSetSpec, params: &ModelParams, grid: &[f64], cfg: &QuadConfig) -> Result<MapDistribution> {
    let points = grid
        .par_iter()
        .chain([1.0].par_iter())
        .map(|&rho| analytic::extra_receiver_ccdf(rho, t, spec, params, cfg))
        .collect::<spatial_aloha::Result<Vec<_>>>()
        .context("analytic extra-receiver law")?;
    let (atom, points) = points.split_last().expect("grid plus the atom");
    Ok(MapDistribution {
        grid: grid.to_vec(),
        ccdf: points.iter().map(|e| e.value).collect(),
        error: points.iter().map(|e| e.error).collect(),
        atom_at_one: atom.value,
        atom_error: atom.error,
        source: analytic::DistributionSource::Analytic,
    })
}

fn utility<W: Write>(a: UtilityArgs, stdout: &mut W) -> Result<bool> {
    let params = a.model.params()?;
    let spec = parse_spec(&a.spec)?;
    writeln!(stdout, "spec,source,theta,error")?;
    if matches!(spec, StoppingSetSpec::Empty | StoppingSetSpec::Disk(_)) {
        let cfg = QuadConfig {
            fourier_tail_tol: a.tail_tol,
            ..QuadConfig::default()
        };
        let resolution = analytic::UtilityConfig {
            rho_points: a.rho_grid,
            radial_panels: a.radial_panels,
            tolerance: a.tolerance,
        };
        let theta = analytic::mean_utility(&spec, &params, &cfg, &resolution).context("mean utility")?;
        writeln!(stdout, "{spec},analytic,{},{}", theta.value, theta.error)?;
    } else {
        let cfg = a.sim.config(params, spec)?;
        let report = sim::simulate_on_grid(&cfg, &checks::coarse_grid())?;
        let s = report.mean_log_throughput;
        writeln!(stdout, "{spec},empirical,{},{}", params.lambda * s.mean, params.lambda * s.stderr)?;
    }
    Ok(true)
}

fn write_report<W: Write>(
    w: &mut csv::Writer<W>,
    sweep: &str,
    grid: f64,
    spec: &StoppingSetSpec,
    report: &MetricsReport,
    metric: &str,
) -> Result<()> {
    for (name, stat) in report.statistics() {
        if metric == "all" || name.starts_with(metric) {
            w.write_record([
                sweep.to_string(),
                grid.to_string(),
                spec.to_string(),
                name.to_string(),
                stat.mean.to_string(),
                stat.stderr.to_string(),
                stat.n.to_string(),
            ])?;
        }
    }
    Ok(())
}

const METRIC_HEADER: [&str; 7] = ["sweep", "grid", "spec", "statistic", "value", "stderr", "n"];

fn simulate<W: Write>(a: SimulateArgs, stdout: &mut W) -> Result<bool> {
    let params = a.model.params()?;
    let spec = parse_spec(&a.spec)?;
    let cfg = a.sim.config(params, spec)?;
    let report = sim::simulate_on_grid(&cfg, &uniform_grid(a.rho_grid))?;
    let path = output_path(a.out.as_deref(), "simulate.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(METRIC_HEADER)?;
    write_report(&mut w, "none", params.lambda, &spec, &report, "all")?;
    w.flush()?;
    if let Some(p) = &a.ccdf_out {
        let mut out = create(p)?;
        report.map_ccdf.write_csv(&mut out)?;
        out.flush()?;
    }
    writeln!(
        stdout,
        "wrote metrics of {} realizations ({} with an empty inner window) to {}",
        cfg.realizations,
        report.flagged(),
        path.display()
    )?;
    Ok(true)
}

fn sweep<W: Write>(a: SweepArgs, stdout: &mut W) -> Result<bool> {
    if !matches!(a.metric.as_str(), "all" | "aggregate" | "density" | "mean_log") {
        bail!("metric `{}`: expected aggregate, density, mean_log or all", a.metric);
    }
    let integers = |text: &str| -> Result<Vec<usize>> {
        parse_grid(text)?
            .into_iter()
            .map(|x| {
                if x >= 1.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    bail!("k = {x} is not a positive integer")
                }
            })
            .collect()
    };
    let runs: Vec<(StoppingSetSpec, SweepAxis)> = match (&a.radius, &a.k) {
        (Some(_), Some(_)) => bail!("sweep either --radius or --k, not both"),
        (Some(r), None) => vec![(StoppingSetSpec::Disk(1.0), SweepAxis::Radius(parse_grid(r)?))],
        (None, Some(k)) => vec![(StoppingSetSpec::NearestK(1), SweepAxis::Neighbours(integers(k)?))],
        (None, None) => {
            let lambdas = parse_grid(&a.model.lambda)?;
            parse_specs(&a.specs)?
                .into_iter()
                .map(|s| (s, SweepAxis::Lambda(lambdas.clone())))
                .collect()
        }
    };
    let base = match &runs[0].1 {
        SweepAxis::Lambda(l) => a.model.params_with(l[0])?,
        _ => a.model.params()?,
    };
    let path = output_path(a.out.as_deref(), "sweep.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(METRIC_HEADER)?;
    let mut failures = 0;
    for (spec, axis) in &runs {
        let template = a.sim.config(base, *spec)?;
        for row in sim::run_sweep(&template, axis) {
            match &row.report {
                Ok(report) => write_report(&mut w, axis.name(), row.value, &row.spec, report, &a.metric)?,
                Err(e) => {
                    failures += 1;
                    eprintln!("{} = {} under {}: {e}", axis.name(), row.value, row.spec);
                    w.write_record([
                        axis.name(),
                        &row.value.to_string(),
                        &row.spec.to_string(),
                        "error",
                        "NaN",
                        "NaN",
                        "0",
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    writeln!(stdout, "wrote sweep to {} ({failures} failed grid points)", path.display())?;
    Ok(true)
}

/// The checks run by `validate`, sized to finish in about a minute.
pub fn validation_checks(params: &ModelParams, seed: u64, realizations: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if params.beta == 4.0 {
        out.push(checks::closed_form_consistency(params, &[0.02, 0.1, 0.25, 0.5, 1.0])?);
        out.push(checks::tail_quadrature_agreement(params, 10)?);
    }
    out.extend(checks::finite_window_optimality(params, 20, 50, seed)?);
    out.push(checks::threshold_bridge(params, 1000, seed)?);
    let sim_cfg = SimConfig {
        nodes: (params.lambda * 1600.0).round() as usize,
        params: *params,
        realizations,
        seed,
        ..SimConfig::default()
    };
    out.push(checks::disk_law_agreement(&sim_cfg, 3.0, &checks::coarse_grid())?);
    out.push(checks::nearest_law_agreement(&sim_cfg)?);
    out.push(checks::extra_receiver_ordering(&sim_cfg, 1.0, 10.0)?);
    out.push(checks::estimator_coverage(params, 2.0, 10_000, 1000, seed)?);
    Ok(out)
}

fn validate<W: Write>(a: ValidateArgs, stdout: &mut W) -> Result<bool> {
    let params = a.model.params()?;
    let results = validation_checks(&params, a.seed, a.realizations)?;
    let path = output_path(a.out.as_deref(), "validate.csv");
    let mut file = create(&path)?;
    checks::write_checks(&results, &mut file)?;
    file.flush()?;
    for c in &results {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        writeln!(
            stdout,
            "{verdict} {} = {} (tolerance {}) {}",
            c.name, c.value, c.tolerance, c.detail
        )?;
    }
    Ok(results.iter().all(|c| c.pass))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("1,2, 4").unwrap(), vec![1.0, 2.0, 4.0]);
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.02:1").unwrap().len(), 10);
        assert!(parse_grid("1:0").is_err());
        assert!(parse_grid("a").is_err());
    }

    #[test]
    fn spec_lists_keep_capped_arguments_together() {
        let specs = parse_specs("full,nearestcap:k=2,R=5, empty").unwrap();
        assert_eq!(
            specs,
            vec![
                StoppingSetSpec::FullPlane,
                StoppingSetSpec::NearestKCapped(2, 5.0),
                StoppingSetSpec::Empty
            ]
        );
        assert!(parse_specs("full,bogus").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
