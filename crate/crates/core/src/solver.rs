//! Proportionally fair MAP of a transmitter from its local view.
//!
//! The optimal MAP `ψ` solves `1/ψ = F(ψ)`, where `F` sums
//! `1/(1 + b - ψ)` over the observed receivers and adds the mean contribution
//! of the unobserved ones outside the view's outer radius. When
//! `F(1) <= 1` there is no interior root and the node transmits in every slot.

use std::cell::RefCell;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, NumericsContext, Result};
use crate::model::{MapAssignment, ModelParams, NetworkRealization};
use crate::numerics::{self, QuadConfig};
use crate::stopping::{local_view, LocalView, StoppingSetSpec};

/// Default absolute tolerance on the MAP equation residual.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Iteration cap of the bracketed root finder.
pub const MAX_ITERATIONS: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveResult {
    pub psi: f64,
    /// The threshold condition failed and the node always transmits.
    pub saturated: bool,
    /// `|1/ψ - F(ψ)|` at `psi`; zero when saturated.
    pub residual: f64,
    pub iterations: u32,
}

/// `2πλr² ∫_x^∞ s / (s^β/T + 1 - ψ) ds`, the mean contribution of receivers
/// beyond `x·r` to the MAP equation.
///
/// Closed form for β = 4, adaptive quadrature otherwise. `ψ = 1` with `x = 0`
/// diverges.
pub fn tail_integral(psi: f64, x: f64, params: &ModelParams) -> Result<f64> {
    tail_integral_with(psi, x, params, &QuadConfig::default()).map(|e| e.value)
}

pub fn tail_integral_with(psi: f64, x: f64, params: &ModelParams, cfg: &QuadConfig) -> Result<numerics::Estimate> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::InvalidParameter {
            name: "psi",
            value: psi,
            reason: "must lie in [0, 1]",
        });
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "x",
            value: x,
            reason: "must be nonnegative",
        });
    }
    let exact = |value| Ok(numerics::Estimate { value, error: 0.0 });
    if x.is_infinite() {
        return exact(0.0);
    }
    let scale = 2.0 * PI * params.lambda * params.r * params.r;
    let (beta, t) = (params.beta, params.threshold);
    let slack = 1.0 - psi;
    if slack == 0.0 {
        if x == 0.0 {
            return Err(Error::Divergent("tail integral at psi = 1 from the origin"));
        }
        return exact(scale * t * x.powf(2.0 - beta) / (beta - 2.0));
    }
    if beta == 4.0 {
        // π/2 - atan(x²/√(T(1-ψ))) written as atan2 to stay accurate as ψ → 1
        let root = (t * slack).sqrt();
        return exact(0.5 * scale * (t / slack).sqrt() * root.atan2(x * x));
    }
    tail_integral_numeric(psi, x, params, cfg)
}

/// [`tail_integral_with`] by semi-infinite quadrature for every β, bypassing
/// the β = 4 closed form. Requires `ψ < 1` or `x > 0`.
pub fn tail_integral_numeric(psi: f64, x: f64, params: &ModelParams, cfg: &QuadConfig) -> Result<numerics::Estimate> {
    let scale = 2.0 * PI * params.lambda * params.r * params.r;
    let (beta, t) = (params.beta, params.threshold);
    let slack = 1.0 - psi;
    numerics::integrate_semi_infinite(|s| s / (s.powf(beta) / t + slack), x, cfg)
        .map(|e| numerics::Estimate {
            value: scale * e.value,
            error: scale * e.error,
        })
        .context("tail integral")
}

/// Tail integral for a view's outer radius (zero for full information).
fn view_tail(psi: f64, view: &LocalView, params: &ModelParams) -> Result<f64> {
    if view.outer_radius.is_infinite() {
        Ok(0.0)
    } else {
        tail_integral(psi, view.outer_radius / params.r, params)
    }
}

/// Right-hand side `F(ψ)` of the MAP equation for a local view.
pub fn rhs(psi: f64, view: &LocalView, params: &ModelParams) -> Result<f64> {
    let sum: f64 = view.observed_b.iter().map(|&b| 1.0 / (1.0 + b - psi)).sum();
    Ok(sum + view_tail(psi, view, params)?)
}

/// `a = Σ 1/b + 2πλr²T x^(2-β)/(β-2)`, the value of `F` at `ψ = 1`. The MAP
/// saturates at 1 iff `a <= 1`.
pub fn threshold_a(view: &LocalView, params: &ModelParams) -> f64 {
    let sum: f64 = view.observed_b.iter().map(|&b| 1.0 / b).sum();
    let tail = if view.outer_radius == 0.0 {
        f64::INFINITY
    } else if view.outer_radius.is_infinite() {
        0.0
    } else {
        let x = view.outer_radius / params.r;
        2.0 * PI * params.lambda * params.r * params.r * params.threshold * x.powf(2.0 - params.beta) / (params.beta - 2.0)
    };
    sum + tail
}

/// Solves the MAP equation for one local view. `tol` bounds the residual
/// `|1/ψ - F(ψ)|`, which also bounds the error in `ψ` since the slope of
/// `1/ψ - F(ψ)` is below -1 on `(0, 1)`.
pub fn solve_map(view: &LocalView, params: &ModelParams, tol: f64) -> Result<SolveResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            value: tol,
            reason: "must be positive",
        });
    }
    let a = threshold_a(view, params);
    if a <= 1.0 {
        return Ok(SolveResult {
            psi: 1.0,
            saturated: true,
            residual: 0.0,
            iterations: 0,
        });
    }
    // h(ψ) = 1 - ψF(ψ) has the same root as 1/ψ - F(ψ) but stays bounded at 0.
    let failure = RefCell::new(None);
    let h = |psi: f64| match rhs(psi, view, params) {
        Ok(f) => 1.0 - psi * f,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let lo = f64::EPSILON;
    let h_lo = h(lo);
    let (hi, h_hi) = if a.is_finite() {
        (1.0, 1.0 - a)
    } else {
        // F(1) is infinite (no information at all): step in from 1 until h < 0
        let mut gap = 2f64.powi(-20);
        loop {
            let v = h(1.0 - gap);
            if v < 0.0 || gap < 1e-15 {
                break (1.0 - gap, v);
            }
            gap *= 1e-3;
        }
    };
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    if !(h_lo > 0.0 && h_hi < 0.0) {
        return Err(Error::Bracket {
            lo,
            hi,
            g_lo: h_lo / lo,
            g_hi: h_hi / hi,
        });
    }
    let h_at = |psi: f64| if psi == 1.0 && a.is_finite() { 1.0 - a } else { h(psi) };
    let root = numerics::illinois(h_at, lo, hi, MAX_ITERATIONS, |psi, hv| hv.abs() <= tol * psi).context("MAP equation")?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(SolveResult {
        psi: root.x,
        saturated: false,
        residual: root.fx.abs() / root.x,
        iterations: root.iterations,
    })
}

/// Closed-form MAP without topology information for β = 4:
/// `ψ = (√(1+4α²) - 1)/(2α²)` with `α = π²λr²√T/2`.
pub fn closed_form_empty(params: &ModelParams) -> Result<f64> {
    if params.beta != 4.0 {
        return Err(Error::RequiresBeta4 {
            what: "closed-form empty-set MAP",
            beta: params.beta,
        });
    }
    let alpha = PI * PI * params.lambda * params.r * params.r * params.threshold.sqrt() / 2.0;
    let a2 = alpha * alpha;
    // (√(1+4α²) - 1)/(2α²) = 2/(√(1+4α²) + 1), stable as α → 0
    Ok(2.0 / ((1.0 + 4.0 * a2).sqrt() + 1.0))
}

/// Optimal MAPs of every node of a finite network, each node seeing all
/// other receivers. Nodes are independent: `p_i` depends only on the
/// distances from `X_i` to the receivers `y_j`, `j != i`.
pub fn solve_finite_window(realization: &NetworkRealization, params: &ModelParams, tol: f64) -> Result<MapAssignment> {
    assign_with_spec(realization, &StoppingSetSpec::FullPlane, params, tol)
}

/// Per-node MAPs under a stopping set.
pub fn assign_with_spec(realization: &NetworkRealization, spec: &StoppingSetSpec, params: &ModelParams, tol: f64) -> Result<MapAssignment> {
    let maps = (0..realization.len())
        .into_par_iter()
        .map(|i| {
            let view = local_view(i, realization, spec, params)?;
            solve_map(&view, params, tol).map(|s| s.psi)
        })
        .collect::<Result<Vec<_>>>()?;
    MapAssignment::new(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn baseline() -> ModelParams {
        ModelParams::default()
    }

    /// Brute-force midpoint sum of the tail integrand on [x, upper] over
    /// geometrically spaced panels (x > 0).
    fn riemann_tail(psi: f64, x: f64, upper: f64, panels: usize, p: &ModelParams) -> f64 {
        let ratio = (upper / x).powf(1.0 / panels as f64);
        let mut acc = 0.0;
        let mut lo = x;
        for _ in 0..panels {
            let hi = lo * ratio;
            let s = 0.5 * (lo + hi);
            acc += s / (s.powf(p.beta) / p.threshold + 1.0 - psi) * (hi - lo);
            lo = hi;
        }
        2.0 * PI * p.lambda * p.r * p.r * acc
    }

    #[test]
    fn tail_examples() {
        let p = baseline();
        // α = π²λr²√T/2 ≈ 3.9012
        assert_relative_eq!(
            tail_integral(0.0, 0.0, &p).unwrap(),
            PI * PI * 0.25 * 10f64.sqrt() / 2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(tail_integral(0.0, 0.0, &p).unwrap(), 3.9013, epsilon = 1e-4);
        let sparse = p.with_lambda(1e-12);
        assert!(tail_integral(0.3, 0.0, &sparse).unwrap() < 1e-10);
        assert!(matches!(tail_integral(1.0, 0.0, &p), Err(Error::Divergent(_))));
        assert_eq!(tail_integral(0.5, f64::INFINITY, &p).unwrap(), 0.0);
    }

    #[test]
    fn tail_beta3_matches_riemann_sum() {
        let p = ModelParams { beta: 3.0, ..baseline() };
        let upper = 1e6;
        let brute = riemann_tail(0.5, 1.0, upper, 10_000_000, &p);
        // the brute-force sum stops at 1e6; add the exact power-law remainder beyond it
        let beyond = 2.0 * PI * p.lambda * p.threshold / upper;
        let quad = tail_integral(0.5, 1.0, &p).unwrap();
        assert_relative_eq!(quad, brute + beyond, max_relative = 1e-6);
    }

    #[test]
    fn tail_beta4_closed_form_matches_quadrature() {
        let p = baseline();
        let cfg = QuadConfig::default();
        for &psi in &[0.0, 0.3, 0.9, 0.999_999] {
            for &x in &[0.0, 0.5, 2.0, 7.0] {
                let closed = tail_integral(psi, x, &p).unwrap();
                let quad = numerics::integrate_semi_infinite(|s| s / (s.powi(4) / 10.0 + 1.0 - psi), x, &cfg)
                    .unwrap()
                    .value
                    * 2.0
                    * PI
                    * p.lambda;
                assert_relative_eq!(closed, quad, max_relative = 1e-9);
            }
        }
        // continuous at psi = 1 for x > 0
        assert_relative_eq!(
            tail_integral(1.0, 2.0, &p).unwrap(),
            tail_integral(1.0 - 1e-13, 2.0, &p).unwrap(),
            max_relative = 1e-6
        );
    }

    #[test]
    fn rhs_examples() {
        let p = baseline();
        let empty = LocalView::empty();
        assert_eq!(rhs(0.0, &empty, &p).unwrap(), tail_integral(0.0, 0.0, &p).unwrap());
        assert_relative_eq!(rhs(0.5, &LocalView::full(vec![1.0]), &p).unwrap(), 1.0 / 1.5, max_relative = 1e-15);
        let v = LocalView::full(vec![0.5, 1.6]);
        assert_relative_eq!(rhs(0.25, &v, &p).unwrap(), 1.0 / 1.25 + 1.0 / 2.35, max_relative = 1e-15);
        assert_relative_eq!(rhs(0.25, &v, &p).unwrap(), 1.2255, epsilon = 1e-4);
    }

    #[test]
    fn threshold_examples() {
        let p = baseline();
        assert!(threshold_a(&LocalView::empty(), &p).is_infinite());
        assert_relative_eq!(threshold_a(&LocalView::full(vec![0.5]), &p), 2.0);
        // disk R = 2r without observed receivers: πλr²T/4
        assert_relative_eq!(
            threshold_a(&LocalView::disk(vec![], 2.0), &p),
            PI * 0.25 * 10.0 / 4.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn solve_examples() {
        let p = baseline();
        let s = solve_map(&LocalView::full(vec![0.5]), &p, DEFAULT_TOL).unwrap();
        assert!(!s.saturated);
        assert!((s.psi - 0.75).abs() < 1e-12);
        assert!(s.residual <= DEFAULT_TOL);
        let s = solve_map(&LocalView::full(vec![0.5, 0.5]), &p, DEFAULT_TOL).unwrap();
        assert!((s.psi - 0.5).abs() < 1e-12);
        let s = solve_map(&LocalView::full(vec![2.0]), &p, DEFAULT_TOL).unwrap();
        assert!(s.saturated);
        assert_eq!(s.psi, 1.0);
        assert_eq!(s.residual, 0.0);
        // a = 1 exactly counts as saturated
        let s = solve_map(&LocalView::full(vec![1.0]), &p, DEFAULT_TOL).unwrap();
        assert!(s.saturated);
        let s = solve_map(&LocalView::empty(), &p, DEFAULT_TOL).unwrap();
        assert!((s.psi - closed_form_empty(&p).unwrap()).abs() < 1e-11);
        assert!((s.psi - 0.2256).abs() < 1e-4);
        assert!(solve_map(&LocalView::empty(), &p, 0.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let p = baseline();
        assert_relative_eq!(closed_form_empty(&p).unwrap(), 0.2256, epsilon = 1e-4);
        // α ≈ 15.605: (√(1 + 4·243.52) - 1)/(2·243.52) ≈ 0.06206
        assert_relative_eq!(closed_form_empty(&p.with_lambda(1.0)).unwrap(), 0.06206, epsilon = 1e-5);
        assert!(closed_form_empty(&p.with_lambda(1e-9)).unwrap() > 1.0 - 1e-12);
        assert!(closed_form_empty(&ModelParams { beta: 3.0, ..p }).is_err());
        // quadratic check: α²ψ² + ψ - 1 = 0
        let alpha = PI * PI * 0.25 * 10f64.sqrt() / 2.0;
        let psi = closed_form_empty(&p).unwrap();
        assert!((alpha * alpha * psi * psi + psi - 1.0).abs() < 1e-14);
    }

    #[test]
    fn closed_form_matches_solver_across_densities() {
        let tol = 1e-12;
        for k in 0..=49 {
            let lambda = 0.02 + (1.0 - 0.02) * k as f64 / 49.0;
            let p = baseline().with_lambda(lambda);
            let solved = solve_map(&LocalView::empty(), &p, tol).unwrap().psi;
            assert!((solved - closed_form_empty(&p).unwrap()).abs() <= 10.0 * tol, "lambda {lambda}");
        }
    }

    #[test]
    fn solver_for_beta3() {
        let p = ModelParams { beta: 3.0, ..baseline() };
        let view = LocalView::disk(vec![0.3, 1.1], 2.0);
        let s = solve_map(&view, &p, 1e-10).unwrap();
        let g = 1.0 / s.psi - rhs(s.psi, &view, &p).unwrap();
        assert!(g.abs() <= 1e-10);
    }

    fn line_network(positions: &[(f64, f64, f64)]) -> NetworkRealization {
        let (tx, angles): (Vec<_>, Vec<_>) = positions.iter().map(|&(x, y, a)| (Point::new(x, y), a)).unzip();
        NetworkRealization::new(10.0, tx, angles, 1.0, 0).unwrap()
    }

    #[test]
    fn finite_window_examples() {
        let p = baseline();
        let one = line_network(&[(1.0, 1.0, 0.0)]);
        assert_eq!(solve_finite_window(&one, &p, DEFAULT_TOL).unwrap().maps, vec![1.0]);

        // Two nodes facing each other: X1=(0,0)->y1=(1,0), X2=(d+1... choose so that
        // |X1 - y2| = |X2 - y1| = 0.5^(1/4) * 10^(1/4), i.e. b = 0.5 both ways.
        let d = (0.5f64 * 10.0).powf(0.25);
        let net = line_network(&[(0.0, 0.0, 0.0), (1.0 + d, 0.0, PI)]);
        // receiver 2 sits at (d, 0): |X1 - y2| = d
        let maps = solve_finite_window(&net, &p, DEFAULT_TOL).unwrap();
        for m in &maps.maps {
            assert!((m - 0.75).abs() < 1e-11, "{m}");
        }
    }

    #[test]
    fn finite_window_three_symmetric_nodes() {
        // Equilateral triangle of transmitters with receivers pointing to the centre
        // of the triangle, so every cross b is equal; scale T so that b = 0.5.
        let side = 6.0;
        let circum = side / 3f64.sqrt();
        let mut pts = Vec::new();
        for k in 0..3 {
            let ang = 2.0 * PI * k as f64 / 3.0;
            pts.push((circum * ang.cos(), circum * ang.sin(), ang + PI));
        }
        let net = line_network(&pts);
        let d = net.transmitters[0].dist(net.receivers[1]);
        let d2 = net.transmitters[0].dist(net.receivers[2]);
        assert_relative_eq!(d, d2, max_relative = 1e-12);
        let p = ModelParams {
            threshold: d.powi(4) / 0.5,
            ..baseline()
        };
        let maps = solve_finite_window(&net, &p, DEFAULT_TOL).unwrap();
        for m in &maps.maps {
            assert!((m - 0.5).abs() < 1e-11, "{m}");
        }
    }

    fn arb_view() -> impl Strategy<Value = LocalView> {
        (
            prop::collection::vec(0.01..50.0f64, 0..20),
            prop_oneof![Just(0.0), 0.2..10.0f64, Just(f64::INFINITY)],
        )
            .prop_map(|(b, r)| LocalView::disk(b, r))
    }

    proptest! {
        #[test]
        fn saturation_iff_threshold(view in arb_view(), lambda in 0.01..1.0f64) {
            let p = baseline().with_lambda(lambda);
            let s = solve_map(&view, &p, DEFAULT_TOL).unwrap();
            prop_assert_eq!(s.saturated, threshold_a(&view, &p) <= 1.0);
            if !s.saturated {
                prop_assert!(s.residual <= DEFAULT_TOL);
                prop_assert!(s.psi > 0.0 && s.psi < 1.0);
            }
        }

        #[test]
        fn root_is_bracketed(view in arb_view(), lambda in 0.01..1.0f64) {
            let p = baseline().with_lambda(lambda);
            prop_assume!(threshold_a(&view, &p) > 1.0);
            let g = |psi: f64| 1.0 / psi - rhs(psi, &view, &p).unwrap();
            prop_assert!(g(1e-9) > 0.0);
            prop_assert!(g(1.0 - 1e-9) < 0.0);
        }

        #[test]
        fn extra_receiver_never_raises_map(view in arb_view(), extra in 0.01..50.0f64) {
            let p = baseline();
            let before = solve_map(&view, &p, DEFAULT_TOL).unwrap().psi;
            let mut b = view.observed_b.clone();
            b.push(extra);
            let after = solve_map(&LocalView::disk(b, view.outer_radius), &p, DEFAULT_TOL).unwrap().psi;
            prop_assert!(after <= before + 1e-11);
        }

        #[test]
        fn map_grows_with_nearest_distance(r1 in 0.2..8.0f64, dr in 0.0..4.0f64, lambda in 0.02..1.0f64) {
            let p = baseline().with_lambda(lambda);
            let view = |r: f64| LocalView::disk(vec![p.b_from_dist2(r * r)], r);
            let a = solve_map(&view(r1), &p, DEFAULT_TOL).unwrap().psi;
            let b = solve_map(&view(r1 + dr), &p, DEFAULT_TOL).unwrap().psi;
            prop_assert!(b >= a - 1e-11);
        }
    }
}
