//! Numerical and statistical checks behind `validate` and the acceptance
//! suite. Each returns one or more [`Check`] rows.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use spatial_aloha::analytic::{self, MapDistribution};
use spatial_aloha::model::{self, b_coeff};
use spatial_aloha::numerics::QuadConfig;
use spatial_aloha::sim::{self, SimConfig, Stat};
use spatial_aloha::solver::{self, DEFAULT_TOL};
use spatial_aloha::stopping::{local_view, LocalView};
use spatial_aloha::{ModelParams, Result, StoppingSetSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value < tolerance`.
    pub fn below(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, tolerance, value < tolerance)
    }

    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, tolerance, value <= tolerance)
    }

    /// Passes when `value >= tolerance`.
    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, tolerance, value >= tolerance)
    }

    fn new(name: &str, value: f64, tolerance: f64, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            pass,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// `check,value,tolerance,pass` CSV.
pub fn write_checks<W: Write>(checks: &[Check], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "value", "tolerance", "pass"])?;
    for c in checks {
        w.write_record([c.name.clone(), c.value.to_string(), c.tolerance.to_string(), c.pass.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `max |solve_map(∅) - closed form|` over the given densities (β = 4).
pub fn closed_form_consistency(params: &ModelParams, lambdas: &[f64]) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for &lambda in lambdas {
        let p = params.with_lambda(lambda);
        let solved = solver::solve_map(&LocalView::empty(), &p, DEFAULT_TOL)?.psi;
        worst = worst.max((solved - solver::closed_form_empty(&p)?).abs());
    }
    Ok(Check::below("closed_form_empty", worst, 1e-8))
}

/// Largest relative gap between the β = 4 closed form of the tail integral
/// and plain quadrature over an `n × n` grid of `(ψ, x)`.
pub fn tail_quadrature_agreement(params: &ModelParams, n: usize) -> Result<Check> {
    let cfg = QuadConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let psi = (i as f64 + 0.5) / n as f64;
        for j in 0..n {
            let x = 0.05 * 2f64.powf(9.0 * j as f64 / (n.max(2) - 1) as f64);
            let closed = solver::tail_integral(psi, x, params)?;
            let numeric = solver::tail_integral_numeric(psi, x, params, &cfg)?.value;
            worst = worst.max(((closed - numeric) / closed).abs());
        }
    }
    Ok(Check::below("tail_integral_quadrature", worst, 1e-8))
}

/// Finite networks of `2..=max_nodes` nodes at the baseline density.
fn finite_network(params: &ModelParams, max_nodes: usize, seed: u64, k: u64) -> Result<spatial_aloha::NetworkRealization> {
    let nodes = sim::realization_rng(seed ^ 0x5eed, k).random_range(2..=max_nodes);
    let cfg = SimConfig {
        window_side: (nodes as f64 / params.lambda).sqrt(),
        nodes,
        params: *params,
        realizations: 1,
        seed,
        ..SimConfig::default()
    };
    sim::sample_realization(&cfg, k)
}

/// Full-information MAPs on `realizations` random finite networks: the
/// largest residual of the MAP equation over non-saturated nodes, and the
/// largest gain of the PF objective from moving one MAP by `±1e-3`.
pub fn finite_window_optimality(params: &ModelParams, realizations: usize, max_nodes: usize, seed: u64) -> Result<[Check; 2]> {
    let per = (0..realizations as u64)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let net = finite_network(params, max_nodes, seed, k)?;
            let maps = solver::solve_finite_window(&net, params, DEFAULT_TOL)?;
            let n = net.len();
            let mut residual: f64 = 0.0;
            for i in 0..n {
                let p = maps.maps[i];
                if p >= 1.0 {
                    continue;
                }
                let mut sum = 0.0;
                for j in (0..n).filter(|&j| j != i) {
                    let b = b_coeff(net.transmitters[i], net.receivers[j], params)?;
                    sum += 1.0 / (1.0 + b - p);
                }
                residual = residual.max((1.0 / p - sum).abs());
            }
            let objective = |m: &spatial_aloha::MapAssignment| -> Result<f64> {
                let mut total = 0.0;
                for i in 0..n {
                    total += model::log_throughput(i, &net, m, params)?;
                }
                Ok(total)
            };
            let base = objective(&maps)?;
            let mut gain = f64::NEG_INFINITY;
            for i in 0..n {
                for delta in [-1e-3, 1e-3] {
                    let mut moved = maps.clone();
                    moved.maps[i] = (maps.maps[i] + delta).clamp(0.0, 1.0);
                    if moved.maps[i] == maps.maps[i] {
                        continue;
                    }
                    gain = gain.max(objective(&moved)? - base);
                }
            }
            Ok((residual, gain))
        })
        .collect::<Result<Vec<_>>>()?;
    let residual = per.iter().map(|r| r.0).fold(0.0, f64::max);
    let gain = per.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok([
        Check::below("finite_window_residual", residual, 1e-10),
        Check::at_most("finite_window_perturbation_gain", gain, 1e-9),
    ])
}

/// Stopping sets exercised by [`threshold_bridge`].
pub const BRIDGE_SPECS: [StoppingSetSpec; 7] = [
    StoppingSetSpec::Empty,
    StoppingSetSpec::Disk(2.0),
    StoppingSetSpec::Disk(5.0),
    StoppingSetSpec::NearestK(1),
    StoppingSetSpec::NearestK(3),
    StoppingSetSpec::NearestKCapped(2, 4.0),
    StoppingSetSpec::FullPlane,
];

/// Number of sampled nodes where `{ψ > ρ}` disagrees with
/// `Σ ρ/(b + 1 - ρ) + I(ρ, S) < 1`, outside a `1e-9` band around `ψ = ρ`.
pub fn threshold_bridge(params: &ModelParams, samples: usize, seed: u64) -> Result<Check> {
    let cfg = SimConfig {
        window_side: 20.0,
        nodes: 100,
        params: *params,
        realizations: 1,
        seed,
        ..SimConfig::default()
    };
    let outcomes = (0..samples as u64)
        .into_par_iter()
        .map(|s| -> Result<(bool, bool)> {
            let net = sim::sample_realization(&cfg, s / 10)?;
            let mut rng = sim::realization_rng(seed ^ 0xb41d6e, s);
            let i = rng.random_range(0..net.len());
            let rho: f64 = rng.random();
            let spec = BRIDGE_SPECS[s as usize % BRIDGE_SPECS.len()];
            let view = local_view(i, &net, &spec, params)?;
            let psi = solver::solve_map(&view, params, DEFAULT_TOL)?.psi;
            let shot: f64 = view.observed_b.iter().map(|&b| rho / (b + 1.0 - rho)).sum();
            let holds = shot + analytic::i_integral(rho, view.outer_radius, params)? < 1.0;
            let counted = (psi - rho).abs() >= 1e-9;
            Ok((counted, counted && (psi > rho) != holds))
        })
        .collect::<Result<Vec<_>>>()?;
    let counted = outcomes.iter().filter(|o| o.0).count();
    let mismatches = outcomes.iter().filter(|o| o.1).count();
    Ok(Check::at_most("threshold_bridge_mismatches", mismatches as f64, 0.0)
        .with_detail(format!("{counted} of {samples} nodes outside the band")))
}

fn sup_distance(a: &MapDistribution, ccdf: &[f64], atom: f64) -> f64 {
    let grid = a.ccdf.iter().zip(ccdf).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    grid.max((a.atom_at_one - atom).abs())
}

/// `ρ = 0.05, 0.10, …, 0.95`.
pub fn coarse_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Sup distance between the empirical MAP law of `Disk(radius)` and the
/// analytic one, over `grid` and the atom at 1.
pub fn disk_law_agreement(cfg: &SimConfig, radius: f64, grid: &[f64]) -> Result<Check> {
    let spec = StoppingSetSpec::Disk(radius);
    let cfg = SimConfig { spec, ..cfg.clone() };
    let empirical = sim::simulate_on_grid(&cfg, grid)?.map_ccdf;
    let law = analytic::analytic_distribution(&spec, &cfg.params, grid, &QuadConfig::default())?;
    let sup = sup_distance(&empirical, &law.ccdf, law.atom_at_one);
    Ok(Check::below("disk_law_sup_distance", sup, 0.02).with_detail(format!("R = {radius}, {} realizations", cfg.realizations)))
}

/// Sup distance between the empirical MAP law under the nearest-receiver set
/// and `exp(-λπξ(ρ)²)` on `ρ = 0.1, …, 0.9` and the atom.
pub fn nearest_law_agreement(cfg: &SimConfig) -> Result<Check> {
    let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let cfg = SimConfig {
        spec: StoppingSetSpec::NearestK(1),
        ..cfg.clone()
    };
    let empirical = sim::simulate_on_grid(&cfg, &grid)?.map_ccdf;
    let analytic = grid
        .iter()
        .map(|&r| analytic::map_ccdf_nearest(r, &cfg.params))
        .collect::<Result<Vec<_>>>()?;
    let atom = analytic::map_ccdf_nearest(1.0, &cfg.params)?;
    Ok(Check::below(
        "nearest_law_sup_distance",
        sup_distance(&empirical, &analytic, atom),
        0.02,
    ))
}

/// Largest standardized excess of the full-information CCDF with an extra
/// receiver at distance `near` over the one at distance `far`. The CDF at
/// `near` should dominate, so the excess stays below 2.
pub fn extra_receiver_ordering(cfg: &SimConfig, near: f64, far: f64) -> Result<Check> {
    let cfg = SimConfig {
        spec: StoppingSetSpec::FullPlane,
        ..cfg.clone()
    };
    let grid = coarse_grid();
    let a = sim::empirical_extra_receiver_cdf(&cfg, near, &grid)?;
    let b = sim::empirical_extra_receiver_cdf(&cfg, far, &grid)?;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..grid.len() {
        let diff = a.ccdf[k] - b.ccdf[k];
        let se = a.error[k].hypot(b.error[k]);
        let z = if se > 0.0 {
            diff / se
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(z);
    }
    Ok(Check::at_most("extra_receiver_ordering_z", worst, 2.0).with_detail(format!("t = {near} vs t = {far}")))
}

/// Radii `1, 2, 4, …`, continued past 16 until the unobserved tail
/// `2πλr²T R^(2-β)/(β-2)` drops below `1e-4`.
pub fn convergence_ladder(params: &ModelParams) -> Vec<f64> {
    let tail = |r: f64| {
        2.0 * std::f64::consts::PI * params.lambda * params.r.powi(2) * params.threshold * (r / params.r).powf(2.0 - params.beta)
            / (params.beta - 2.0)
    };
    let mut ladder = vec![1.0];
    while ladder.len() < 5 || tail(*ladder.last().unwrap()) >= 1e-4 {
        let next = 2.0 * ladder.last().unwrap();
        ladder.push(next);
    }
    ladder
}

/// Radius, max MAP gap to full information, utility estimate.
pub type LadderRow = (f64, f64, Stat);

/// Convergence of `B₀(R)` to full information on `cfg.realizations` fixed
/// networks: the max MAP gap is nonincreasing over `R = 1…16`, below `1e-3`
/// at the end of [`convergence_ladder`], and the utility estimates meet
/// within 2 standard errors there.
pub fn disk_convergence(cfg: &SimConfig) -> Result<(Vec<LadderRow>, Stat, [Check; 3])> {
    let ladder = convergence_ladder(&cfg.params);
    let nets = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|k| sim::sample_realization(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let run = |spec: StoppingSetSpec| -> Result<(Vec<Vec<f64>>, Stat)> {
        let out = nets
            .par_iter()
            .map(|net| -> Result<(Vec<f64>, Option<f64>)> {
                let maps = sim::assign_maps(net, &spec, &cfg.params, cfg.tol)?;
                let metrics = sim::compute_metrics(net, &maps, cfg)?;
                Ok((maps.maps, metrics.map(|m| cfg.params.lambda * m.mean_log_throughput)))
            })
            .collect::<Result<Vec<_>>>()?;
        let theta: Vec<f64> = out.iter().filter_map(|o| o.1).collect();
        Ok((out.into_iter().map(|o| o.0).collect(), Stat::from_samples(&theta)))
    };
    let (full, full_theta) = run(StoppingSetSpec::FullPlane)?;
    let mut rows = Vec::with_capacity(ladder.len());
    for &radius in &ladder {
        let (maps, theta) = run(StoppingSetSpec::Disk(radius))?;
        let gap = maps
            .iter()
            .zip(&full)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        rows.push((radius, gap, theta));
    }
    let rise = rows
        .iter()
        .take_while(|r| r.0 <= 16.0)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(f64::NEG_INFINITY, f64::max);
    let (last_r, last_gap, last_theta) = *rows.last().expect("ladder is never empty");
    let z = (last_theta.mean - full_theta.mean).abs() / last_theta.stderr.hypot(full_theta.stderr);
    let checks = [
        Check::at_most("disk_convergence_max_rise", rise, 0.0),
        Check::below("disk_convergence_final_gap", last_gap, 1e-3).with_detail(format!("R = {last_r}")),
        Check::at_most("disk_convergence_utility_z", z, 2.0),
    ];
    Ok((rows, full_theta, checks))
}

/// Mean aggregate throughput of the inner window per stopping set.
pub fn aggregate_throughput(cfg: &SimConfig, specs: &[StoppingSetSpec]) -> Result<Vec<Stat>> {
    specs
        .iter()
        .map(|&spec| {
            let cfg = SimConfig { spec, ..cfg.clone() };
            Ok(sim::simulate_on_grid(&cfg, &coarse_grid())?.aggregate_throughput)
        })
        .collect()
}

/// Aggregate throughput under full information, the nearest receiver and no
/// information at a low and a high density.
pub fn information_gains(low: &SimConfig, high: &SimConfig) -> Result<(Vec<Stat>, Vec<Stat>, [Check; 4])> {
    let specs = [StoppingSetSpec::FullPlane, StoppingSetSpec::NearestK(1), StoppingSetSpec::Empty];
    let at_low = aggregate_throughput(low, &specs)?;
    let at_high = aggregate_throughput(high, &specs)?;
    let (full, near, empty) = (at_low[0], at_low[1], at_low[2]);
    let z = |a: Stat, b: Stat| (a.mean - b.mean) / a.stderr.hypot(b.stderr);
    let fraction = (near.mean - empty.mean) / (full.mean - empty.mean);
    let gap_low = full.mean - empty.mean;
    let gap_high = at_high[0].mean - at_high[2].mean;
    let checks = [
        Check::at_least("nearest_gap_fraction", fraction, 0.5),
        Check::at_least("full_over_empty_z", z(full, empty), 2.0),
        Check::at_least("nearest_over_empty_z", z(near, empty), 2.0),
        Check::below("gain_shrinks_with_density", gap_high - gap_low, 0.0).with_detail(format!(
            "gap {gap_low} at λ = {} vs {gap_high} at λ = {}",
            low.params.lambda, high.params.lambda
        )),
    ];
    Ok((at_low, at_high, checks))
}

/// Fraction of `trials` path-loss estimates from `n` acknowledgements that
/// land within 5% of `d^β`.
pub fn estimator_coverage(params: &ModelParams, distance: f64, n: usize, trials: usize, seed: u64) -> Result<Check> {
    let target = distance.powf(params.beta);
    let hits = (0..trials as u64)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let mut rng = sim::realization_rng(seed ^ 0xac4, k);
            let estimate = sim::ack_pathloss_estimate(distance, n, params, &mut rng)?;
            Ok((estimate / target - 1.0).abs() < 0.05)
        })
        .collect::<Result<Vec<_>>>()?;
    let fraction = hits.iter().filter(|&&h| h).count() as f64 / trials as f64;
    Ok(Check::at_least("pathloss_estimator_coverage", fraction, 0.99))
}
