//! Browser bindings: the MAP law of the typical node, the MAP as a function
//! of the nearest receiver's distance, and a sampled network with its MAPs.

use spatial_aloha::analytic::{self, uniform_grid};
use spatial_aloha::numerics::QuadConfig;
use spatial_aloha::sim::{self, SimConfig};
use spatial_aloha::solver::DEFAULT_TOL;
use spatial_aloha::{solve_map, LocalView, ModelParams, StoppingSetSpec};
use wasm_bindgen::prelude::*;

fn params(lambda: f64, threshold: f64) -> Result<ModelParams, JsError> {
    let p = ModelParams {
        threshold,
        ..ModelParams::default().with_lambda(lambda)
    };
    p.validate()?;
    Ok(p)
}

/// `P(ψ > ρ)` on `points` equally spaced `ρ` in `(0, 1)`, followed by the atom
/// `P(ψ = 1)`. Specs without a closed-form law fall back to a small simulation.
#[wasm_bindgen]
pub fn map_ccdf(spec: &str, lambda: f64, threshold: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let spec: StoppingSetSpec = spec.parse()?;
    let p = params(lambda, threshold)?;
    let grid = uniform_grid(points.clamp(1, 200));
    let law = match analytic::analytic_distribution(&spec, &p, &grid, &QuadConfig::default()) {
        Ok(law) => law,
        Err(_) => {
            let cfg = SimConfig {
                window_side: 20.0,
                spec,
                params: p,
                realizations: 60,
                ..SimConfig::default()
            }
            .with_lambda(lambda);
            sim::simulate_on_grid(&cfg, &grid)?.map_ccdf
        }
    };
    let mut out = law.ccdf;
    out.push(law.atom_at_one);
    Ok(out)
}

/// MAP of a node that sees only its nearest receiver, at each of `points`
/// distances up to `max_distance`.
#[wasm_bindgen]
pub fn map_vs_nearest(lambda: f64, threshold: f64, max_distance: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let p = params(lambda, threshold)?;
    let n = points.clamp(2, 1000);
    (1..=n)
        .map(|k| {
            let d = max_distance * k as f64 / n as f64;
            let view = LocalView {
                observed_b: vec![p.b_from_dist2(d * d)],
                outer_radius: d,
            };
            Ok(solve_map(&view, &p, DEFAULT_TOL)?.psi)
        })
        .collect()
}

/// One network in a `side × side` window: five numbers per node,
/// transmitter `x, y`, receiver `x, y` and the node's MAP under `spec`.
#[wasm_bindgen]
pub fn sample_network(spec: &str, lambda: f64, threshold: f64, side: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let spec: StoppingSetSpec = spec.parse()?;
    let p = params(lambda, threshold)?;
    let cfg = SimConfig {
        window_side: side,
        spec,
        params: p,
        seed,
        ..SimConfig::default()
    }
    .with_lambda(lambda);
    cfg.validate()?;
    let net = sim::sample_realization(&cfg, 0)?;
    let maps = sim::assign_maps(&net, &spec, &p, cfg.tol)?;
    Ok(net
        .transmitters
        .iter()
        .zip(&net.receivers)
        .zip(&maps.maps)
        .flat_map(|((x, y), &psi)| [x.x, x.y, y.x, y.y, psi])
        .collect())
}
