//! Law of the typical node's optimal MAP and the mean PF utility.
//!
//! The MAP exceeds `ρ` exactly when the shot noise
//! `J(ρ,S) = Σ_{y_j ∈ S} ρ / (|y_j|^β/(T r^β) + 1 - ρ)` stays below
//! `1 - I(ρ,S)`, where `I` is the mean contribution of the unobserved
//! receivers. For a deterministic disk `J` is a Poisson shot noise whose
//! transform is explicit, and the CCDF follows by Fourier inversion. For the
//! nearest-receiver set the event reduces to an empty ball.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, NumericsContext, Result};
use crate::model::ModelParams;
use crate::numerics::{self, Estimate, QuadConfig};
use crate::solver;
use crate::stopping::StoppingSetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionSource {
    Analytic,
    Empirical,
}

/// CCDF of the MAP on a grid in `(0, 1)` plus the atom at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MapDistribution {
    /// Ascending, inside `(0, 1)`.
    pub grid: Vec<f64>,
    /// `P(ψ > ρ)` per grid point.
    pub ccdf: Vec<f64>,
    /// Absolute error (analytic) or standard error (empirical) per grid point.
    pub error: Vec<f64>,
    /// `P(ψ = 1)`.
    pub atom_at_one: f64,
    pub atom_error: f64,
    pub source: DistributionSource,
}

/// `n` equally spaced points `k/(n+1)`, `k = 1..=n`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

/// Default number of grid points for distributions.
pub const DEFAULT_GRID_POINTS: usize = 512;

impl MapDistribution {
    /// Checks the CCDF invariants: values in `[0, 1]`, nonincreasing in `ρ`
    /// and never below the atom, each up to `slack`.
    pub fn check(&self, slack: f64) -> std::result::Result<(), String> {
        if self.grid.len() != self.ccdf.len() || self.grid.len() != self.error.len() {
            return Err("grid, ccdf and error lengths differ".into());
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) || self.grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err("grid must be strictly ascending inside (0, 1)".into());
        }
        if let Some(v) = self
            .ccdf
            .iter()
            .chain([&self.atom_at_one])
            .find(|&&v| !(-slack..=1.0 + slack).contains(&v))
        {
            return Err(format!("probability {v} outside [0, 1]"));
        }
        if let Some(w) = self.ccdf.windows(2).find(|w| w[1] > w[0] + slack) {
            return Err(format!("ccdf increases from {} to {}", w[0], w[1]));
        }
        if let Some(&last) = self.ccdf.last() {
            if last + slack < self.atom_at_one {
                return Err(format!("ccdf {last} below the atom {}", self.atom_at_one));
            }
        }
        Ok(())
    }

    /// Largest absolute difference over the grid and the atom.
    pub fn sup_distance(&self, other: &MapDistribution) -> f64 {
        assert_eq!(self.grid, other.grid, "distributions live on different grids");
        self.ccdf
            .iter()
            .zip(&other.ccdf)
            .map(|(a, b)| (a - b).abs())
            .fold((self.atom_at_one - other.atom_at_one).abs(), f64::max)
    }

    /// `E h(ψ)` by a Stieltjes sum with midpoint evaluation: the mass between
    /// consecutive grid points is placed at their midpoint, the mass below the
    /// first point at its half, the atom at 1. Returns the value and a bound
    /// on the discretisation error for monotone `h`.
    pub fn expect<H: Fn(f64) -> f64>(&self, h: H) -> Estimate {
        let mut knots = Vec::with_capacity(self.grid.len() + 2);
        knots.push((0.0, 1.0));
        knots.extend(self.grid.iter().copied().zip(self.ccdf.iter().copied()));
        knots.push((1.0, self.atom_at_one));
        let mut value = 0.0;
        let mut error = 0.0;
        for (k, w) in knots.windows(2).enumerate() {
            let ((lo, g_lo), (hi, g_hi)) = (w[0], w[1]);
            let mass = (g_lo - g_hi).max(0.0);
            if mass == 0.0 {
                continue;
            }
            let (a, b) = if k == 0 { (0.5 * hi, hi) } else { (lo, hi) };
            let mid = 0.5 * (lo + hi).max(a);
            let mid = if k == 0 { a } else { mid };
            value += mass * h(mid);
            let spread = (h(b) - h(a)).abs();
            error += mass * if spread.is_finite() { spread } else { h(mid).abs() };
        }
        if self.atom_at_one > 0.0 {
            value += self.atom_at_one * h(1.0);
        }
        Estimate { value, error }
    }

    /// Two-column `rho,ccdf` CSV; the final row at `rho = 1` carries the
    /// atom `P(ψ = 1)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "rho,ccdf")?;
        for (r, c) in self.grid.iter().zip(&self.ccdf) {
            writeln!(out, "{r},{c}")?;
        }
        writeln!(out, "1,{}", self.atom_at_one)
    }
}

/// `I(ρ, ℝ² \ B(x)) = ρ·C(ρ, x/r)`: mean shot noise from the unobserved
/// receivers beyond `outer_radius`.
pub fn i_integral(rho: f64, outer_radius: f64, params: &ModelParams) -> Result<f64> {
    if rho == 0.0 {
        return Ok(0.0);
    }
    if rho == 1.0 && outer_radius == 0.0 {
        return Err(Error::Divergent("I(1, S) with no observed region"));
    }
    Ok(rho * solver::tail_integral(rho, outer_radius / params.r, params)?)
}

/// Response of a receiver at squared distance `t` to a transmitter at the origin.
#[derive(Debug, Clone, Copy)]
struct Response {
    rho: f64,
    /// `T r^β`
    scale: f64,
    half_beta: f64,
}

impl Response {
    fn new(rho: f64, params: &ModelParams) -> Self {
        Self {
            rho,
            scale: params.loss_scale(),
            half_beta: 0.5 * params.beta,
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.rho * self.scale / (t.powf(self.half_beta) + (1.0 - self.rho) * self.scale)
    }

    /// Squared radius inside which a single receiver's response reaches `level`.
    fn radius2_above(&self, level: f64) -> f64 {
        let u = self.rho * self.scale / level - (1.0 - self.rho) * self.scale;
        if u <= 0.0 {
            0.0
        } else {
            u.powf(1.0 / self.half_beta)
        }
    }
}

/// `πλ ∫_lo^hi (1 - e^{-s h(t)}) dt`, the log-Laplace exponent of the shot
/// noise of receivers with squared distance in `[lo, hi]`.
fn annulus_exponent(s: Complex64, response: &Response, lo: f64, hi: f64, params: &ModelParams, cfg: &QuadConfig) -> Result<Complex64> {
    if hi <= lo || s == Complex64::new(0.0, 0.0) || response.rho == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let factor = PI * params.lambda;
    if s.im == 0.0 {
        let real = numerics::integrate(|t| -(-s.re * response.at(t)).exp_m1(), lo, hi, cfg).context("shot-noise transform")?;
        return Ok(Complex64::new(factor * real.value, 0.0));
    }
    if response.rho == 1.0 && lo == 0.0 {
        return Err(Error::Divergent(
            "oscillatory shot-noise transform at rho = 1 over a disk containing the origin",
        ));
    }
    // Panel edges at equal steps of h, so the phase s·h(t) turns by at most
    // two radians per panel, then split further so no panel spans more than
    // a factor of two in t.
    let (h_lo, h_hi) = (response.at(lo), response.at(hi));
    let steps = ((s.norm() * (h_lo - h_hi) / 2.0).ceil() as usize).saturating_add(4);
    let mut edges = vec![lo];
    for k in 1..steps {
        let level = h_lo - (h_lo - h_hi) * k as f64 / steps as f64;
        let t = response.radius2_above(level).clamp(lo, hi);
        edges.push(t.max(*edges.last().unwrap()));
    }
    edges.push(hi);
    let integrand = |t: f64| {
        let z = -s * response.at(t);
        // 1 - e^z, accurate for small |z|
        -(Complex64::new(z.re.exp_m1(), 0.0) * Complex64::new(z.im.cos(), z.im.sin()) + Complex64::new(z.im.cos() - 1.0, z.im.sin()))
    };
    let mut sum = Complex64::new(0.0, 0.0);
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        if a == 0.0 {
            sum += numerics::gauss_legendre_composite(integrand, a, b, 1);
            continue;
        }
        let pieces = ((b / a).log2().ceil() as usize).max(1);
        let ratio = (b / a).powf(1.0 / pieces as f64);
        let mut left = a;
        for i in 1..=pieces {
            let right = if i == pieces { b } else { left * ratio };
            sum += numerics::gauss_legendre_composite(integrand, left, right, 1);
            left = right;
        }
    }
    Ok(sum * factor)
}

/// Laplace transform `E e^{-sJ(ρ,S)}` of the shot noise for a deterministic
/// stopping set.
pub fn laplace_shotnoise(s: Complex64, rho: f64, spec: &StoppingSetSpec, params: &ModelParams) -> Result<Complex64> {
    let radius = match *spec {
        StoppingSetSpec::Empty => return Ok(Complex64::new(1.0, 0.0)),
        StoppingSetSpec::Disk(r) => r,
        _ => return Err(Error::NotDeterministic("shot-noise Laplace transform")),
    };
    let response = Response::new(rho, params);
    let exponent = annulus_exponent(s, &response, 0.0, radius * radius, params, &QuadConfig::default())?;
    Ok((-exponent).exp())
}

/// β = 4 form of the disk transform after the substitution
/// `v² = (1-ρ)T r⁴ / (t² + (1-ρ)T r⁴)`:
/// `exp(-πλ√((1-ρ)T) r² ∫_{v_R}^1 (1 - e^{-sρv²/(1-ρ)}) / (v²√(1-v²)) dv)`,
/// integrated in `θ = asin v` to remove the endpoint singularity.
pub fn laplace_shotnoise_beta4(s: f64, rho: f64, radius: f64, params: &ModelParams) -> Result<f64> {
    if params.beta != 4.0 {
        return Err(Error::RequiresBeta4 {
            what: "closed-form disk Laplace transform",
            beta: params.beta,
        });
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter {
            name: "rho",
            value: rho,
            reason: "must lie in [0, 1)",
        });
    }
    let c = (1.0 - rho) * params.threshold;
    let r2 = params.r * params.r;
    let v_r = c.sqrt() * r2 / (radius.powi(4) + c * r2 * r2).sqrt();
    let k = s * rho / (1.0 - rho);
    let integral = numerics::integrate(
        |theta: f64| {
            let v2 = theta.sin().powi(2);
            -(-k * v2).exp_m1() / v2
        },
        v_r.asin(),
        0.5 * PI,
        &QuadConfig::default(),
    )
    .context("beta-4 Laplace transform")?;
    Ok((-PI * params.lambda * c.sqrt() * r2 * integral.value).exp())
}

/// `P(J(ρ, B(R)) < threshold)` for the disk shot noise.
///
/// Any receiver whose own response exceeds the threshold decides the event,
/// so the disk splits into an inner ball that must be empty and an annulus
/// whose bounded shot noise is inverted from its transform. The annulus law
/// is `e^{-Λ}` at zero, `e^{-Λ}·πλ·|{h < c}|` from exactly one receiver, and
/// a remainder whose transform `e^{-Λ}(e^φ - 1 - φ)` decays like `1/w²`.
fn disk_shotnoise_cdf(rho: f64, radius: f64, threshold: f64, params: &ModelParams, cfg: &QuadConfig) -> Result<Estimate> {
    if threshold <= 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let response = Response::new(rho, params);
    let r2 = radius * radius;
    // Split where the response reaches twice the threshold rather than the
    // threshold itself: a density jump at exactly `threshold` would make the
    // inversion integrand decay like 1/w.
    let inner = response.radius2_above(2.0 * threshold).min(r2);
    let empty_inner = (-PI * params.lambda * inner).exp();
    if inner >= r2 || rho == 0.0 {
        return Ok(Estimate {
            value: empty_inner,
            error: 0.0,
        });
    }
    let mass = PI * params.lambda * (r2 - inner);
    let atom = (-mass).exp();
    let single = atom * PI * params.lambda * (r2 - response.radius2_above(threshold).max(inner)).max(0.0);
    let mut failure = None;
    let remainder = |w: f64| match annulus_exponent(Complex64::new(0.0, w), &response, inner, r2, params, cfg) {
        Ok(e) => {
            let phi = mass - e;
            (atom * (phi.exp() - 1.0 - phi)).re
        }
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let rest = numerics::sine_inversion(remainder, threshold, cfg).context("Fourier inversion of the MAP law");
    if let Some(e) = failure {
        return Err(e);
    }
    let rest = rest?;
    let value = (empty_inner * (atom + single + rest.value)).clamp(0.0, 1.0);
    Ok(Estimate {
        value,
        error: empty_inner * rest.error,
    })
}

fn radius_of(spec: &StoppingSetSpec, what: &'static str) -> Result<f64> {
    match *spec {
        StoppingSetSpec::Empty => Ok(0.0),
        StoppingSetSpec::Disk(r) => Ok(r),
        _ => Err(Error::NotDeterministic(what)),
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "rho",
            value: rho,
            reason: "must lie in (0, 1]",
        })
    }
}

/// `P(ψ > ρ)` with the shot-noise threshold lowered by `shift`.
fn deterministic_ccdf(rho: f64, radius: f64, shift: f64, params: &ModelParams, cfg: &QuadConfig) -> Result<Estimate> {
    check_rho(rho)?;
    let unobserved = if radius == 0.0 && rho == 1.0 {
        f64::INFINITY
    } else {
        i_integral(rho, radius, params)?
    };
    let threshold = 1.0 - unobserved - shift;
    if radius == 0.0 {
        let value = if threshold > 0.0 { 1.0 } else { 0.0 };
        return Ok(Estimate { value, error: 0.0 });
    }
    disk_shotnoise_cdf(rho, radius, threshold, params, cfg)
}

/// `P⁰(ψ > ρ)` for a deterministic stopping set (`ρ = 1` gives `P⁰(ψ = 1)`).
pub fn map_ccdf_deterministic(rho: f64, spec: &StoppingSetSpec, params: &ModelParams, cfg: &QuadConfig) -> Result<Estimate> {
    let radius = radius_of(spec, "analytic MAP distribution")?;
    deterministic_ccdf(rho, radius, 0.0, params, cfg)
}

/// `P⁰(ψ > ρ)` when an extra receiver sits at distance `t` from the typical
/// transmitter. Only a receiver inside the (deterministic) stopping set
/// changes the law: it adds `ρ/(t^β/(T r^β) + 1 - ρ)` to the shot noise.
pub fn extra_receiver_ccdf(rho: f64, t: f64, spec: &StoppingSetSpec, params: &ModelParams, cfg: &QuadConfig) -> Result<Estimate> {
    let radius = radius_of(spec, "analytic extra-receiver MAP distribution")?;
    check_rho(rho)?;
    let shift = if t <= radius { Response::new(rho, params).at(t * t) } else { 0.0 };
    deterministic_ccdf(rho, radius, shift, params, cfg)
}

/// Smallest distance to the nearest receiver at which the MAP exceeds `ρ`:
/// `ξ(ρ) = inf{x ≥ 0 : ρ/(x^β/(T r^β) + 1 - ρ) + I(ρ, B(x)) < 1}`.
pub fn xi_threshold(rho: f64, params: &ModelParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter {
            name: "rho",
            value: rho,
            reason: "must lie in [0, 1]",
        });
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let response = Response::new(rho, params);
    let pressure = |x: f64| -> Result<f64> {
        if x == 0.0 && rho == 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(response.at(x * x) + i_integral(rho, x, params)?)
    };
    if pressure(0.0)? < 1.0 {
        return Ok(0.0);
    }
    let mut hi = params.r;
    while pressure(hi)? >= 1.0 {
        hi *= 2.0;
        if hi > 1e12 * params.r {
            return Err(Error::Divergent("xi threshold search"));
        }
    }
    let mut failure = None;
    let root = numerics::bisect(
        |x| match pressure(x) {
            Ok(v) => v - 1.0,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        hi,
        1e-12 * hi,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    root.context("xi threshold")
}

/// `P⁰(ψ > ρ) = exp(-λπξ(ρ)²)` when only the nearest receiver is observed.
pub fn map_ccdf_nearest(rho: f64, params: &ModelParams) -> Result<f64> {
    check_rho(rho)?;
    let xi = xi_threshold(rho, params)?;
    Ok((-params.lambda * PI * xi * xi).exp())
}

/// Analytic MAP law on `grid` for the sets that have one: empty, fixed disk
/// and the nearest receiver.
pub fn analytic_distribution(spec: &StoppingSetSpec, params: &ModelParams, grid: &[f64], cfg: &QuadConfig) -> Result<MapDistribution> {
    let point = |rho: f64| -> Result<Estimate> {
        match spec {
            StoppingSetSpec::Empty | StoppingSetSpec::Disk(_) => map_ccdf_deterministic(rho, spec, params, cfg),
            StoppingSetSpec::NearestK(1) => map_ccdf_nearest(rho, params).map(|value| Estimate { value, error: 1e-12 }),
            _ => Err(Error::NotDeterministic("analytic MAP distribution")),
        }
    };
    let values = grid.par_iter().map(|&rho| point(rho)).collect::<Result<Vec<_>>>()?;
    let atom = point(1.0)?;
    Ok(MapDistribution {
        grid: grid.to_vec(),
        ccdf: values.iter().map(|e| e.value).collect(),
        error: values.iter().map(|e| e.error).collect(),
        atom_at_one: atom.value,
        atom_error: atom.error,
        source: DistributionSource::Analytic,
    })
}

/// Fourier octave tolerance that makes mean utility affordable: it needs
/// the extra-receiver law at every radial node, and 1e-4 moves Θ by far
/// less than the Stieltjes discretisation error.
pub const UTILITY_FOURIER_TAIL_TOL: f64 = 1e-4;

/// Resolution of the mean-utility evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityConfig {
    /// Points of the ρ grid carrying the MAP laws.
    pub rho_points: usize,
    /// Radial Gauss-Legendre panels (8 nodes each) for extra receivers inside the disk.
    pub radial_panels: usize,
    /// Largest acceptable Stieltjes discretisation error.
    pub tolerance: f64,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            rho_points: 64,
            radial_panels: 4,
            tolerance: 0.05,
        }
    }
}

/// `2π ∫_from^∞ s log(1 - u/(1 + (s/r)^β/T)) ds`: utility lost by receivers beyond `from`.
fn interference_cost(u: f64, from: f64, params: &ModelParams, cfg: &QuadConfig) -> Result<Estimate> {
    if u == 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let scale = params.loss_scale();
    numerics::integrate_semi_infinite(
        |s| {
            let b = params.path_gain_inverse(s * s) / scale;
            2.0 * PI * s * (-u / (1.0 + b)).ln_1p()
        },
        from,
        cfg,
    )
    .context("interference cost")
}

/// Mean optimised utility per unit area,
/// `Θ = λ E⁰ log ψ + λ² ∫ E log(1 - ψ_t/(1 + |t|^β/(T r^β))) dt`,
/// where `ψ_t` is the MAP with an extra receiver at `t`. The second factor
/// λ is the density of the receivers the typical transmitter interferes with.
/// Available for the deterministic sets; random sets are estimated by
/// simulation. Each radial node inverts a transform per grid point, so pass
/// a `cfg` with [`UTILITY_FOURIER_TAIL_TOL`] unless tighter inversion is
/// really needed.
pub fn mean_utility(spec: &StoppingSetSpec, params: &ModelParams, cfg: &QuadConfig, resolution: &UtilityConfig) -> Result<Estimate> {
    let radius = radius_of(spec, "analytic mean utility")?;
    let lambda = params.lambda;
    if radius == 0.0 {
        // every node uses the same MAP
        let psi = solver::solve_map(&crate::stopping::LocalView::empty(), params, solver::DEFAULT_TOL)?.psi;
        let cost = interference_cost(psi, 0.0, params, cfg)?;
        return Ok(Estimate {
            value: lambda * (psi.ln() + lambda * cost.value),
            error: lambda * lambda * cost.error,
        });
    }
    let grid = uniform_grid(resolution.rho_points);
    let law = analytic_distribution(spec, params, &grid, cfg)?;
    let own = law.expect(f64::ln);

    // receivers outside the disk leave the law unchanged
    let mut cells: Vec<f64> = Vec::with_capacity(grid.len() + 2);
    cells.push(0.5 * grid[0]);
    cells.extend(grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    cells.push(0.5 * (grid[grid.len() - 1] + 1.0));
    cells.push(1.0);
    let outer_costs = cells
        .par_iter()
        .map(|&u| interference_cost(u, radius, params, cfg).map(|e| (u, e.value)))
        .collect::<Result<Vec<_>>>()?;
    let outer = law.expect(|u| {
        let k = outer_costs.partition_point(|&(c, _)| c < u).min(outer_costs.len() - 1);
        let (c, v) = outer_costs[k];
        if (c - u).abs() < 1e-15 {
            v
        } else {
            interference_cost(u, radius, params, cfg).map(|e| e.value).unwrap_or(f64::NAN)
        }
    });

    // receivers inside the disk: Gauss-Legendre over the radius
    let panels = resolution.radial_panels.max(1);
    let h = radius / panels as f64;
    let mut nodes = Vec::with_capacity(8 * panels);
    for k in 0..panels {
        let center = h * (k as f64 + 0.5);
        for (&x, &w) in numerics::GL8_X.iter().zip(&numerics::GL8_W) {
            nodes.push((center - 0.5 * h * x, 0.5 * h * w));
            nodes.push((center + 0.5 * h * x, 0.5 * h * w));
        }
    }
    let scale = params.loss_scale();
    let inner_terms = nodes
        .par_iter()
        .map(|&(s, weight)| -> Result<(f64, f64)> {
            let mut ccdf = Vec::with_capacity(grid.len());
            let mut error = Vec::with_capacity(grid.len());
            for &rho in &grid {
                let e = extra_receiver_ccdf(rho, s, spec, params, cfg)?;
                ccdf.push(e.value);
                error.push(e.error);
            }
            let atom = extra_receiver_ccdf(1.0, s, spec, params, cfg)?;
            let shifted = MapDistribution {
                grid: grid.clone(),
                ccdf,
                error,
                atom_at_one: atom.value,
                atom_error: atom.error,
                source: DistributionSource::Analytic,
            };
            let b = params.path_gain_inverse(s * s) / scale;
            let e = shifted.expect(|u| (-u / (1.0 + b)).ln_1p());
            let jacobian = 2.0 * PI * s * weight;
            Ok((jacobian * e.value, jacobian * e.error))
        })
        .collect::<Result<Vec<_>>>()?;
    let inner_value: f64 = inner_terms.iter().map(|t| t.0).sum();
    let inner_error: f64 = inner_terms.iter().map(|t| t.1).sum();

    let error = lambda * (own.error + lambda * (outer.error + inner_error));
    if error > resolution.tolerance {
        return Err(Error::GridTooCoarse {
            error,
            tolerance: resolution.tolerance,
        });
    }
    Ok(Estimate {
        value: lambda * (own.value + lambda * (outer.value + inner_value)),
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn baseline() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn i_integral_examples() {
        let p = baseline();
        assert_eq!(i_integral(0.0, 0.0, &p).unwrap(), 0.0);
        assert!(i_integral(0.4, 1.0, &p.with_lambda(1e-12)).unwrap() < 1e-11);
        assert!(i_integral(1.0, 0.0, &p).is_err());
        // β = 4 closed form against direct quadrature of λ∫ ρ/(|y|⁴/T + 1 - ρ) dy
        let cfg = QuadConfig::default();
        for &(rho, x) in &[(0.3, 0.0), (0.7, 2.0), (0.95, 5.0)] {
            let brute = numerics::integrate_semi_infinite(|s| 2.0 * PI * s * rho / (s.powi(4) / 10.0 + 1.0 - rho), x, &cfg)
                .unwrap()
                .value
                * p.lambda;
            assert_relative_eq!(i_integral(rho, x, &p).unwrap(), brute, max_relative = 1e-8);
        }
    }

    #[test]
    fn laplace_trivial_cases() {
        let p = baseline();
        let disk = StoppingSetSpec::Disk(3.0);
        assert_eq!(
            laplace_shotnoise(Complex64::new(0.0, 0.0), 0.5, &disk, &p).unwrap(),
            Complex64::new(1.0, 0.0)
        );
        for w in [0.1, 1.0, 10.0] {
            let v = laplace_shotnoise(Complex64::new(0.0, w), 0.0, &disk, &p).unwrap();
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
        assert!(laplace_shotnoise(Complex64::new(1.0, 0.0), 0.5, &StoppingSetSpec::NearestK(1), &p).is_err());
    }

    #[test]
    fn laplace_modulus_bounded() {
        let p = baseline();
        let disk = StoppingSetSpec::Disk(3.0);
        for &rho in &[0.1, 0.5, 0.9] {
            for k in 0..40 {
                let w = 0.37 * k as f64 * (1.0 + k as f64);
                let v = laplace_shotnoise(Complex64::new(0.0, w), rho, &disk, &p).unwrap();
                assert!(v.norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn laplace_beta4_closed_form_agrees_with_radial_quadrature() {
        let p = baseline();
        let general = laplace_shotnoise(Complex64::new(1.0, 0.0), 0.5, &StoppingSetSpec::Disk(5.0), &p).unwrap();
        let closed = laplace_shotnoise_beta4(1.0, 0.5, 5.0, &p).unwrap();
        assert_eq!(general.im, 0.0);
        assert_relative_eq!(general.re, closed, max_relative = 1e-8);
        for &(s, rho, radius) in &[(0.3, 0.2, 1.0), (4.0, 0.8, 2.5), (20.0, 0.95, 8.0)] {
            let general = laplace_shotnoise(Complex64::new(s, 0.0), rho, &StoppingSetSpec::Disk(radius), &p).unwrap();
            let closed = laplace_shotnoise_beta4(s, rho, radius, &p).unwrap();
            assert_relative_eq!(general.re, closed, max_relative = 1e-8);
        }
    }

    #[test]
    fn oscillatory_transform_matches_adaptive_quadrature() {
        // composite Gauss-Legendre on the imaginary axis vs adaptive GK on real and imaginary parts
        let p = baseline();
        let cfg = QuadConfig::default();
        let response = Response::new(0.6, &p);
        for &w in &[0.5, 7.0, 60.0] {
            let fast = annulus_exponent(Complex64::new(0.0, w), &response, 0.3, 9.0, &p, &cfg).unwrap();
            let re = numerics::integrate(|t| 1.0 - (w * response.at(t)).cos(), 0.3, 9.0, &cfg)
                .unwrap()
                .value;
            let im = numerics::integrate(|t| (w * response.at(t)).sin(), 0.3, 9.0, &cfg).unwrap().value;
            assert_relative_eq!(fast.re, PI * p.lambda * re, max_relative = 1e-9);
            assert_relative_eq!(fast.im, PI * p.lambda * im, max_relative = 1e-9);
        }
    }

    #[test]
    fn empty_set_law_is_a_step_at_the_closed_form() {
        let p = baseline();
        let cfg = QuadConfig::default();
        let psi = solver::closed_form_empty(&p).unwrap();
        let at = |rho: f64| map_ccdf_deterministic(rho, &StoppingSetSpec::Empty, &p, &cfg).unwrap().value;
        assert_eq!(at(psi - 1e-6), 1.0);
        assert_eq!(at(psi + 1e-6), 0.0);
        assert_eq!(at(1.0), 0.0);
    }

    #[test]
    fn disk_law_near_zero_and_monotone() {
        let p = baseline();
        let cfg = QuadConfig::default();
        let disk = StoppingSetSpec::Disk(3.0);
        assert!(map_ccdf_deterministic(1e-4, &disk, &p, &cfg).unwrap().value > 1.0 - 1e-3);
        let grid = uniform_grid(15);
        let law = analytic_distribution(&disk, &p, &grid, &cfg).unwrap();
        law.check(1e-4).unwrap();
        assert!(law.atom_at_one > 0.0 && law.atom_at_one < 0.01);
    }

    #[test]
    fn disk_law_matches_direct_poisson_sampling() {
        // P(J < c) by Monte Carlo on the Poisson disk shot noise itself
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Poisson};
        let p = baseline();
        let cfg = QuadConfig::default();
        let radius = 3.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let poisson = Poisson::new(p.lambda * PI * radius * radius).unwrap();
        for &rho in &[0.2, 0.35, 0.5] {
            let response = Response::new(rho, &p);
            let threshold = 1.0 - i_integral(rho, radius, &p).unwrap();
            let trials = 200_000;
            let mut hits = 0;
            for _ in 0..trials {
                let n = poisson.sample(&mut rng) as usize;
                let j: f64 = (0..n).map(|_| response.at(rng.random::<f64>() * radius * radius)).sum();
                if j < threshold {
                    hits += 1;
                }
            }
            let mc = hits as f64 / trials as f64;
            let analytic = map_ccdf_deterministic(rho, &StoppingSetSpec::Disk(radius), &p, &cfg).unwrap().value;
            let se = (mc * (1.0 - mc) / trials as f64).sqrt();
            assert!((mc - analytic).abs() < 4.0 * se + 1e-4, "rho {rho}: mc {mc} analytic {analytic}");
        }
    }

    #[test]
    fn xi_examples() {
        let p = baseline();
        assert_eq!(xi_threshold(0.0, &p).unwrap(), 0.0);
        let grid = uniform_grid(40);
        let xs: Vec<f64> = grid.iter().map(|&r| xi_threshold(r, &p).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
        // ξ(1) against a brute-force scan with step 1e-4
        let pressure = |x: f64| 10.0 / x.powi(4) + i_integral(1.0, x, &p).unwrap();
        let mut x = 1e-4;
        while pressure(x) >= 1.0 {
            x += 1e-4;
        }
        let xi1 = xi_threshold(1.0, &p).unwrap();
        assert!(xi1 <= x && xi1 > x - 1e-4, "{xi1} vs scan {x}");
    }

    #[test]
    fn nearest_law_examples() {
        let p = baseline();
        // small enough rho has ξ = 0
        assert_eq!(map_ccdf_nearest(1e-3, &p).unwrap(), 1.0);
        assert!(map_ccdf_nearest(0.9, &p.with_lambda(1e-10)).unwrap() > 1.0 - 1e-6);
        let grid = uniform_grid(30);
        let law = analytic_distribution(&StoppingSetSpec::NearestK(1), &p, &grid, &QuadConfig::default()).unwrap();
        law.check(0.0).unwrap();
    }

    #[test]
    fn extra_receiver_examples() {
        let p = baseline();
        let cfg = QuadConfig::default();
        let disk = StoppingSetSpec::Disk(3.0);
        for &rho in &[0.1, 0.3, 0.6] {
            let plain = map_ccdf_deterministic(rho, &disk, &p, &cfg).unwrap().value;
            let outside = extra_receiver_ccdf(rho, 5.0, &disk, &p, &cfg).unwrap().value;
            assert_eq!(plain, outside);
            let inside = extra_receiver_ccdf(rho, 1.0, &disk, &p, &cfg).unwrap().value;
            assert!(inside <= plain + 1e-6);
        }
        // the shift tends to ρ/(1-ρ) as the receiver approaches
        let response = Response::new(0.4, &p);
        assert_relative_eq!(response.at(1e-12), 0.4 / 0.6, max_relative = 1e-12);
        assert!(extra_receiver_ccdf(0.3, 1.0, &StoppingSetSpec::FullPlane, &p, &cfg).is_err());
    }

    #[test]
    fn stieltjes_expectation_of_step_law() {
        let grid = uniform_grid(9);
        let law = MapDistribution {
            ccdf: grid.iter().map(|&r| if r < 0.45 { 1.0 } else { 0.0 }).collect(),
            error: vec![0.0; 9],
            grid,
            atom_at_one: 0.0,
            atom_error: 0.0,
            source: DistributionSource::Analytic,
        };
        // all mass between 0.4 and 0.5
        let e = law.expect(|u| u);
        assert_relative_eq!(e.value, 0.45, max_relative = 1e-12);
        assert!(e.error >= 0.0999);
        law.check(0.0).unwrap();
    }

    #[test]
    fn csv_layout() {
        let law = MapDistribution {
            grid: vec![0.25, 0.5, 0.75],
            ccdf: vec![0.9, 0.5, 0.2],
            error: vec![0.0; 3],
            atom_at_one: 0.1,
            atom_error: 0.0,
            source: DistributionSource::Analytic,
        };
        let mut out = Vec::new();
        law.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "rho,ccdf\n0.25,0.9\n0.5,0.5\n0.75,0.2\n1,0.1\n");
    }

    #[test]
    fn utility_is_quadratic_in_density_when_sparse() {
        // isolated nodes saturate, so Θ = λ(log 1 + λ · interference cost) ∝ λ²
        let cfg = QuadConfig::default();
        let coarse = UtilityConfig {
            rho_points: 16,
            radial_panels: 1,
            tolerance: 1.0,
        };
        for spec in [StoppingSetSpec::Empty, StoppingSetSpec::Disk(2.0)] {
            let at = |lambda: f64| mean_utility(&spec, &baseline().with_lambda(lambda), &cfg, &coarse).unwrap().value;
            let (one, two) = (at(1e-6), at(2e-6));
            assert!(one < 0.0 && one > -1e-4, "{spec}: {one}");
            assert_relative_eq!(two / one, 4.0, max_relative = 1e-3);
        }
    }

    #[test]
    fn utility_is_nonpositive() {
        let p = baseline();
        let cfg = QuadConfig {
            fourier_tail_tol: 1e-4,
            ..QuadConfig::default()
        };
        let coarse = UtilityConfig {
            rho_points: 12,
            radial_panels: 1,
            tolerance: 1.0,
        };
        let theta = mean_utility(&StoppingSetSpec::Disk(2.0), &p, &cfg, &coarse).unwrap();
        assert!(theta.value < 0.0);
        let theta = mean_utility(&StoppingSetSpec::Empty, &p, &cfg, &coarse).unwrap();
        assert!(theta.value < 0.0);
        assert!(mean_utility(&StoppingSetSpec::FullPlane, &p, &cfg, &coarse).is_err());
    }
}
