//! Monte Carlo engine: finite networks in a square window, per-node MAPs
//! under a stopping set, and edge-corrected metrics averaged over the
//! central sub-window.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;

use crate::analytic::{uniform_grid, DistributionSource, MapDistribution, DEFAULT_GRID_POINTS};
use crate::error::{Error, Result};
use crate::model::{self, MapAssignment, ModelParams, NetworkRealization, Point};
use crate::solver::{self, DEFAULT_TOL};
use crate::stopping::{local_view_at, StoppingSetSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Side `L` of the square window `[0, L]²`.
    pub window_side: f64,
    /// Node count `N`; the solver's density is `params.lambda`.
    pub nodes: usize,
    pub spec: StoppingSetSpec,
    pub params: ModelParams,
    pub realizations: usize,
    /// Side of the central averaging window as a fraction of `L`.
    pub inner_fraction: f64,
    pub seed: u64,
    /// Draw `N ~ Poisson(λL²)` per realization instead of a fixed count.
    pub poisson: bool,
    /// Residual tolerance of the MAP solver.
    pub tol: f64,
}

impl Default for SimConfig {
    /// L = 40, N = 400 (λ = 0.25), full information, 1000 realizations.
    fn default() -> Self {
        Self {
            window_side: 40.0,
            nodes: 400,
            spec: StoppingSetSpec::FullPlane,
            params: ModelParams::default(),
            realizations: 1000,
            inner_fraction: 0.5,
            seed: 1,
            poisson: false,
            tol: DEFAULT_TOL,
        }
    }
}

impl SimConfig {
    /// Sets the density and `N = round(λL²)` together.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.params = self.params.with_lambda(lambda);
        self.nodes = (lambda * self.window_side * self.window_side).round() as usize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.spec.validate()?;
        let fail = |m: String| Err(Error::InvalidSimConfig(m));
        if !(self.window_side.is_finite() && self.window_side > 0.0) {
            return fail(format!("window side {} must be positive", self.window_side));
        }
        if self.nodes < 2 {
            return fail(format!("need at least 2 nodes, got {}", self.nodes));
        }
        if !(self.inner_fraction > 0.0 && self.inner_fraction <= 1.0) {
            return fail(format!("inner fraction {} outside (0, 1]", self.inner_fraction));
        }
        if self.realizations == 0 {
            return fail("need at least one realization".into());
        }
        if !(self.tol > 0.0) {
            return fail(format!("solver tolerance {} must be positive", self.tol));
        }
        Ok(())
    }

    /// Inner window `[lo, hi]²`.
    pub fn inner_window(&self) -> (f64, f64) {
        let margin = 0.5 * self.window_side * (1.0 - self.inner_fraction);
        (margin, self.window_side - margin)
    }

    pub fn inner_area(&self) -> f64 {
        (self.window_side * self.inner_fraction).powi(2)
    }

    fn is_inner(&self, p: Point) -> bool {
        let (lo, hi) = self.inner_window();
        (lo..=hi).contains(&p.x) && (lo..=hi).contains(&p.y)
    }
}

/// RNG for one realization: stream `index` of the master seed.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `N` uniform transmitters in `[0, L]²` with uniformly oriented receivers.
pub fn sample_realization(cfg: &SimConfig, index: u64) -> Result<NetworkRealization> {
    cfg.validate()?;
    let mut rng = realization_rng(cfg.seed, index);
    let side = cfg.window_side;
    let n = if cfg.poisson {
        let mean = cfg.params.lambda * side * side;
        Poisson::new(mean)
            .map_err(|e| Error::InvalidSimConfig(format!("Poisson mean {mean}: {e}")))?
            .sample(&mut rng) as usize
    } else {
        cfg.nodes
    };
    let transmitters: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
        .collect();
    let angles = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
    NetworkRealization::new(side, transmitters, angles, cfg.params.r, index)
}

/// Per-node MAPs of a realization under `spec`.
pub fn assign_maps(realization: &NetworkRealization, spec: &StoppingSetSpec, params: &ModelParams, tol: f64) -> Result<MapAssignment> {
    solver::assign_with_spec(realization, spec, params, tol)
}

/// Metrics of one realization over its inner-window nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationMetrics {
    pub inner_nodes: usize,
    /// Mean of `log(p_i q_i)` over inner nodes.
    pub mean_log_throughput: f64,
    /// `Σ p_i q_i` over inner nodes.
    pub aggregate_throughput: f64,
    /// Aggregate divided by the inner area.
    pub density_throughput: f64,
    pub inner_maps: Vec<f64>,
}

/// Metrics of one realization, `None` when the inner window holds no node.
/// Every node interferes; only the averaging is restricted.
pub fn compute_metrics(realization: &NetworkRealization, maps: &MapAssignment, cfg: &SimConfig) -> Result<Option<RealizationMetrics>> {
    let mut inner_maps = Vec::new();
    let mut log_sum = 0.0;
    let mut aggregate = 0.0;
    for (i, &x) in realization.transmitters.iter().enumerate() {
        if !cfg.is_inner(x) {
            continue;
        }
        let p = maps.maps[i];
        let log_q = model::log_success_prob(i, realization, maps, &cfg.params)?;
        log_sum += p.ln() + log_q;
        aggregate += p * log_q.exp();
        inner_maps.push(p);
    }
    if inner_maps.is_empty() {
        return Ok(None);
    }
    let n = inner_maps.len();
    Ok(Some(RealizationMetrics {
        inner_nodes: n,
        mean_log_throughput: log_sum / n as f64,
        aggregate_throughput: aggregate,
        density_throughput: aggregate / cfg.inner_area(),
        inner_maps,
    }))
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mean_log_throughput: Stat,
    pub density_throughput: Stat,
    pub aggregate_throughput: Stat,
    /// Empirical law of the inner nodes' MAPs, pooled over realizations.
    pub map_ccdf: MapDistribution,
    /// `None` for realizations with an empty inner window.
    pub per_realization: Vec<Option<RealizationMetrics>>,
}

impl MetricsReport {
    /// Realizations left out of the averages.
    pub fn flagged(&self) -> usize {
        self.per_realization.iter().filter(|m| m.is_none()).count()
    }

    /// `(statistic, value)` pairs in a fixed order.
    pub fn statistics(&self) -> [(&'static str, Stat); 3] {
        [
            ("mean_log_throughput", self.mean_log_throughput),
            ("density_throughput", self.density_throughput),
            ("aggregate_throughput", self.aggregate_throughput),
        ]
    }
}

/// Empirical CCDF of `samples` on `grid`, standard errors from the binomial
/// variance. Samples equal to 1 form the atom.
pub fn empirical_distribution(samples: &[f64], grid: &[f64]) -> MapDistribution {
    let n = samples.len().max(1) as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let fraction_above = |rho: f64| {
        let at_most = sorted.partition_point(|&x| x <= rho);
        (sorted.len() - at_most) as f64 / n
    };
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    let ccdf: Vec<f64> = grid.iter().map(|&r| fraction_above(r)).collect();
    let atom = sorted.len().saturating_sub(sorted.partition_point(|&x| x < 1.0)) as f64 / n;
    MapDistribution {
        grid: grid.to_vec(),
        error: ccdf.iter().map(|&p| se(p)).collect(),
        ccdf,
        atom_at_one: atom,
        atom_error: se(atom),
        source: DistributionSource::Empirical,
    }
}

fn run_one(cfg: &SimConfig, index: u64) -> Result<Option<RealizationMetrics>> {
    let realization = sample_realization(cfg, index)?;
    let maps = assign_maps(&realization, &cfg.spec, &cfg.params, cfg.tol)?;
    compute_metrics(&realization, &maps, cfg)
}

/// Runs `cfg.realizations` independent realizations and aggregates them.
/// Results are collected in realization order, so the report depends only on
/// the configuration.
pub fn simulate(cfg: &SimConfig) -> Result<MetricsReport> {
    simulate_on_grid(cfg, &uniform_grid(DEFAULT_GRID_POINTS))
}

pub fn simulate_on_grid(cfg: &SimConfig, grid: &[f64]) -> Result<MetricsReport> {
    cfg.validate()?;
    let per_realization = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|k| run_one(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<&RealizationMetrics> = per_realization.iter().flatten().collect();
    let stat = |f: fn(&RealizationMetrics) -> f64| Stat::from_samples(&kept.iter().map(|m| f(m)).collect::<Vec<_>>());
    let pooled: Vec<f64> = kept.iter().flat_map(|m| m.inner_maps.iter().copied()).collect();
    Ok(MetricsReport {
        mean_log_throughput: stat(|m| m.mean_log_throughput),
        density_throughput: stat(|m| m.density_throughput),
        aggregate_throughput: stat(|m| m.aggregate_throughput),
        map_ccdf: empirical_distribution(&pooled, grid),
        per_realization,
    })
}

/// MAP of a tagged transmitter at the window centre whose stopping set sees
/// the realization's receivers plus one extra receiver at distance `t`
/// (`t = ∞` adds none).
pub fn tagged_map(cfg: &SimConfig, index: u64, t: f64) -> Result<f64> {
    let realization = sample_realization(cfg, index)?;
    let centre = Point::new(0.5 * cfg.window_side, 0.5 * cfg.window_side);
    // separate stream so the extra receiver does not disturb the network draw
    let mut rng = realization_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, index);
    let mut receivers = realization.receivers;
    if t.is_finite() {
        receivers.push(centre.offset(Point::polar(t, rng.random::<f64>() * TAU)));
    }
    let view = local_view_at(centre, receivers, &cfg.spec, &cfg.params)?;
    Ok(solver::solve_map(&view, &cfg.params, cfg.tol)?.psi)
}

/// Empirical law `f_t` of the tagged node's MAP with an extra receiver at
/// distance `t`, over `cfg.realizations` realizations.
pub fn empirical_extra_receiver_cdf(cfg: &SimConfig, t: f64, grid: &[f64]) -> Result<MapDistribution> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t",
            value: t,
            reason: "extra receiver distance must be positive",
        });
    }
    let samples = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|k| tagged_map(cfg, k, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(empirical_distribution(&samples, grid))
}

/// Path-loss estimate from `n` acknowledgements received at power
/// `P_a G d^β` with `G ~ Exp(1)`: the sample mean divided by `P_a`.
pub fn ack_pathloss_estimate<R: Rng + ?Sized>(distance: f64, n: usize, params: &ModelParams, rng: &mut R) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            value: 0.0,
            reason: "need at least one acknowledgement",
        });
    }
    let fading = Exp::new(1.0).expect("unit rate");
    let mut tracker = AckTracker::default();
    let gain = distance.powf(params.beta);
    for _ in 0..n {
        tracker.record(params.ack_power * fading.sample(rng) * gain);
    }
    Ok(tracker.average() / params.ack_power)
}

/// Running average of acknowledgement powers from one neighbour.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AckTracker {
    sum: f64,
    count: u64,
}

impl AckTracker {
    pub fn record(&mut self, power: f64) {
        self.sum += power;
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `NaN` before the first acknowledgement.
    pub fn average(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Parameter swept by [`run_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Density, with `N = round(λL²)`.
    Lambda(Vec<f64>),
    /// Disk radius, replacing the template's stopping set with `Disk(R)`.
    Radius(Vec<f64>),
    /// Neighbour count, replacing the stopping set with `NearestK(k)`.
    Neighbours(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Lambda(_) => "lambda",
            SweepAxis::Radius(_) => "R",
            SweepAxis::Neighbours(_) => "k",
        }
    }

    fn configs(&self, template: &SimConfig) -> Vec<(f64, SimConfig)> {
        match self {
            SweepAxis::Lambda(v) => v.iter().map(|&l| (l, template.clone().with_lambda(l))).collect(),
            SweepAxis::Radius(v) => v
                .iter()
                .map(|&r| {
                    let cfg = SimConfig {
                        spec: StoppingSetSpec::Disk(r),
                        ..template.clone()
                    };
                    (r, cfg)
                })
                .collect(),
            SweepAxis::Neighbours(v) => v
                .iter()
                .map(|&k| {
                    let cfg = SimConfig {
                        spec: StoppingSetSpec::NearestK(k),
                        ..template.clone()
                    };
                    (k as f64, cfg)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub spec: StoppingSetSpec,
    /// A failed grid point is kept with its error instead of aborting the sweep.
    pub report: Result<MetricsReport>,
}

pub fn run_sweep(template: &SimConfig, axis: &SweepAxis) -> Vec<SweepRow> {
    axis.configs(template)
        .into_iter()
        .map(|(value, cfg)| SweepRow {
            value,
            spec: cfg.spec,
            report: simulate(&cfg),
        })
        .collect()
}

/// Slot-level check of the success probabilities: in each of `slots` slots
/// every node transmits with its MAP and all links fade independently with
/// `Exp(μ)` gains. Returns, per node, the fraction of its transmissions that
/// reached SINR `T` (`NaN` if it never transmitted).
pub fn simulate_slots<R: Rng + ?Sized>(
    realization: &NetworkRealization,
    maps: &MapAssignment,
    params: &ModelParams,
    slots: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if maps.len() != realization.len() {
        return Err(Error::LengthMismatch {
            len: maps.len(),
            nodes: realization.len(),
        });
    }
    let n = realization.len();
    let fading = Exp::new(params.mu).map_err(|_| Error::InvalidParameter {
        name: "mu",
        value: params.mu,
        reason: "must be positive",
    })?;
    // path gains |X_j - y_i|^-β
    let gain: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| 1.0 / params.path_gain_inverse(realization.transmitters[j].dist2(realization.receivers[i])))
                .collect()
        })
        .collect();
    let mut attempts = vec![0u64; n];
    let mut successes = vec![0u64; n];
    let mut active = vec![false; n];
    for _ in 0..slots {
        for (a, &p) in active.iter_mut().zip(&maps.maps) {
            *a = rng.random::<f64>() < p;
        }
        for i in 0..n {
            if !active[i] {
                continue;
            }
            attempts[i] += 1;
            let signal = fading.sample(rng) * gain[i][i];
            let mut interference = params.noise;
            for j in 0..n {
                if j != i && active[j] {
                    interference += fading.sample(rng) * gain[i][j];
                }
            }
            if signal >= params.threshold * interference {
                successes[i] += 1;
            }
        }
    }
    Ok(successes
        .iter()
        .zip(&attempts)
        .map(|(&s, &a)| if a == 0 { f64::NAN } else { s as f64 / a as f64 })
        .collect())
}
