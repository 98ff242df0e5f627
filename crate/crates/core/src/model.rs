//! Bipole network model: geometry, path loss and the Rayleigh-fading success
//! probability of a transmission given the MAPs of all other nodes.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dist2(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn offset(self, by: Point) -> Point {
        Point::new(self.x + by.x, self.y + by.y)
    }
}

/// Physical and protocol constants of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Transmitter density, nodes per unit area.
    pub lambda: f64,
    /// Transmitter-receiver link length.
    pub r: f64,
    /// Path-loss exponent, `l(z) = z^-beta`.
    pub beta: f64,
    /// SINR threshold `T`.
    pub threshold: f64,
    /// Inverse mean of the exponential fading.
    pub mu: f64,
    /// Thermal noise power `W`.
    pub noise: f64,
    /// Acknowledgement transmit power `P_a`.
    pub ack_power: f64,
}

impl Default for ModelParams {
    /// λ = 0.25, r = 1, β = 4, T = 10, no noise.
    fn default() -> Self {
        Self {
            lambda: 0.25,
            r: 1.0,
            beta: 4.0,
            threshold: 10.0,
            mu: 1.0,
            noise: 0.0,
            ack_power: 1.0,
        }
    }
}

impl ModelParams {
    pub fn new(lambda: f64, r: f64, beta: f64, threshold: f64) -> Result<Self> {
        let params = Self {
            lambda,
            r,
            beta,
            threshold,
            ..Self::default()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, value: f64) -> Result<()> {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive and finite",
                })
            }
        }
        positive("lambda", self.lambda)?;
        positive("r", self.r)?;
        positive("T", self.threshold)?;
        positive("mu", self.mu)?;
        positive("P_a", self.ack_power)?;
        if !(self.beta.is_finite() && self.beta > 2.0) {
            return Err(Error::InvalidParameter {
                name: "beta",
                value: self.beta,
                reason: "must exceed 2",
            });
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "W",
                value: self.noise,
                reason: "must be nonnegative",
            });
        }
        Ok(())
    }

    /// `T r^β`, the path-loss scale of the b-coefficients.
    pub fn loss_scale(&self) -> f64 {
        self.threshold * self.r.powf(self.beta)
    }

    /// `|z|^β` from a squared distance, avoiding the square root for β = 4.
    pub fn path_gain_inverse(&self, dist2: f64) -> f64 {
        if self.beta == 4.0 {
            dist2 * dist2
        } else {
            dist2.powf(0.5 * self.beta)
        }
    }

    /// `b` for a squared transmitter-receiver distance.
    pub fn b_from_dist2(&self, dist2: f64) -> f64 {
        self.path_gain_inverse(dist2) / self.loss_scale()
    }

    /// `-μ T r^β W`, the log of the noise factor in the success probability.
    pub fn log_noise_factor(&self) -> f64 {
        -self.mu * self.loss_scale() * self.noise
    }
}

/// `b = |x - y|^β / (T r^β)` for transmitter `x` and receiver `y`.
pub fn b_coeff(x: Point, y: Point, params: &ModelParams) -> Result<f64> {
    let d2 = x.dist2(y);
    if d2 == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(params.b_from_dist2(d2))
}

/// One sampled network: transmitters in a square window and their receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRealization {
    pub window_side: f64,
    pub transmitters: Vec<Point>,
    pub receiver_angles: Vec<f64>,
    pub receivers: Vec<Point>,
    pub seed: u64,
}

impl NetworkRealization {
    pub fn new(window_side: f64, transmitters: Vec<Point>, receiver_angles: Vec<f64>, r: f64, seed: u64) -> Result<Self> {
        if transmitters.len() != receiver_angles.len() {
            return Err(Error::LengthMismatch {
                len: receiver_angles.len(),
                nodes: transmitters.len(),
            });
        }
        let receivers = transmitters
            .iter()
            .zip(&receiver_angles)
            .map(|(x, &a)| x.offset(Point::polar(r, a)))
            .collect();
        let receiver_angles = receiver_angles.into_iter().map(|a| a.rem_euclid(TAU)).collect();
        Ok(Self {
            window_side,
            transmitters,
            receiver_angles,
            receivers,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.transmitters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transmitters.is_empty()
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, len: self.len() })
        }
    }

    /// Moves every point by `by`. Receiver angles are unchanged.
    pub fn translated(&self, by: Point) -> Self {
        Self {
            transmitters: self.transmitters.iter().map(|p| p.offset(by)).collect(),
            receivers: self.receivers.iter().map(|p| p.offset(by)).collect(),
            ..self.clone()
        }
    }

    /// The realization without node `j`.
    pub fn without(&self, j: usize) -> Self {
        fn keep<T: Copy>(v: &[T], j: usize) -> Vec<T> {
            v.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, p)| *p).collect()
        }
        Self {
            window_side: self.window_side,
            transmitters: keep(&self.transmitters, j),
            receiver_angles: keep(&self.receiver_angles, j),
            receivers: keep(&self.receivers, j),
            seed: self.seed,
        }
    }
}

/// Medium-access probabilities, one per transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct MapAssignment {
    pub maps: Vec<f64>,
}

impl MapAssignment {
    pub fn new(maps: Vec<f64>) -> Result<Self> {
        if let Some(&p) = maps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter {
                name: "p",
                value: p,
                reason: "MAP must lie in [0, 1]",
            });
        }
        Ok(Self { maps })
    }

    pub fn constant(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

fn check_maps(realization: &NetworkRealization, maps: &MapAssignment) -> Result<()> {
    if maps.len() != realization.len() {
        return Err(Error::LengthMismatch {
            len: maps.len(),
            nodes: realization.len(),
        });
    }
    Ok(())
}

/// `log q_i`, accumulated as a sum of `log1p` terms.
pub fn log_success_prob(i: usize, realization: &NetworkRealization, maps: &MapAssignment, params: &ModelParams) -> Result<f64> {
    realization.check_index(i)?;
    check_maps(realization, maps)?;
    let yi = realization.receivers[i];
    let mut log_q = params.log_noise_factor();
    for (j, (&xj, &pj)) in realization.transmitters.iter().zip(&maps.maps).enumerate() {
        if j == i || pj == 0.0 {
            continue;
        }
        let b = b_coeff(xj, yi, params)?;
        log_q += (-pj / (1.0 + b)).ln_1p();
    }
    Ok(log_q)
}

/// Conditional success probability `q_i` of node `i` given the geometry and all MAPs.
pub fn success_prob(i: usize, realization: &NetworkRealization, maps: &MapAssignment, params: &ModelParams) -> Result<f64> {
    log_success_prob(i, realization, maps, params).map(f64::exp)
}

/// `log(p_i q_i)`; `-∞` when `p_i = 0`.
pub fn log_throughput(i: usize, realization: &NetworkRealization, maps: &MapAssignment, params: &ModelParams) -> Result<f64> {
    let log_q = log_success_prob(i, realization, maps, params)?;
    Ok(maps.maps[i].ln() + log_q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(t: f64) -> ModelParams {
        ModelParams::new(0.25, 1.0, 4.0, t).unwrap()
    }

    /// Two nodes on the x axis with receivers pointing at +x, the second transmitter
    /// placed `gap` beyond the first receiver.
    fn pair(gap: f64) -> NetworkRealization {
        NetworkRealization::new(10.0, vec![Point::new(0.0, 0.0), Point::new(1.0 + gap, 0.0)], vec![0.0, 0.0], 1.0, 0).unwrap()
    }

    #[test]
    fn b_coeff_examples() {
        let p = params(10.0);
        assert_relative_eq!(b_coeff(Point::ORIGIN, Point::new(1.0, 0.0), &p).unwrap(), 0.1);
        assert_relative_eq!(b_coeff(Point::ORIGIN, Point::new(0.0, 2.0), &p).unwrap(), 1.6);
        for t in [0.5, 3.0, 10.0] {
            // distance equal to r
            let p = params(t);
            assert_relative_eq!(
                b_coeff(Point::ORIGIN, Point::polar(1.0, 0.7), &p).unwrap(),
                1.0 / t,
                max_relative = 1e-14
            );
        }
        assert_eq!(b_coeff(Point::ORIGIN, Point::ORIGIN, &p), Err(Error::CoincidentPoints));
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.25, 1.0, 2.0, 10.0).is_err());
        assert!(ModelParams::new(0.0, 1.0, 4.0, 10.0).is_err());
        assert!(ModelParams::new(0.25, -1.0, 4.0, 10.0).is_err());
        let noisy = ModelParams {
            noise: -1.0,
            ..ModelParams::default()
        };
        assert!(noisy.validate().is_err());
        assert!(ModelParams::default().validate().is_ok());
    }

    #[test]
    fn isolated_node_always_succeeds() {
        let net = NetworkRealization::new(10.0, vec![Point::new(5.0, 5.0)], vec![1.0], 1.0, 0).unwrap();
        let maps = MapAssignment::constant(1, 1.0).unwrap();
        assert_eq!(success_prob(0, &net, &maps, &params(10.0)).unwrap(), 1.0);
        assert_eq!(log_throughput(0, &net, &maps, &params(10.0)).unwrap(), 0.0);
    }

    #[test]
    fn two_node_success_probabilities() {
        // |X_2 - y_1| = 1 and T = 1 gives b_21 = 1
        let net = pair(1.0);
        let p = params(1.0);
        let maps = MapAssignment::new(vec![0.3, 1.0]).unwrap();
        assert_relative_eq!(success_prob(0, &net, &maps, &p).unwrap(), 0.5, max_relative = 1e-14);
        // b_21 = 0.5 with |X_2 - y_1| = 1 and T = 2
        let p = params(2.0);
        let maps = MapAssignment::new(vec![0.3, 0.75]).unwrap();
        assert_relative_eq!(success_prob(0, &net, &maps, &p).unwrap(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn log_throughput_examples() {
        let net = pair(1.0);
        let p = params(2.0);
        let maps = MapAssignment::new(vec![0.5, 0.75]).unwrap();
        assert_relative_eq!(log_throughput(0, &net, &maps, &p).unwrap(), 0.25f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(log_throughput(0, &net, &maps, &p).unwrap(), -1.3863, epsilon = 1e-4);
        let maps = MapAssignment::new(vec![0.0, 0.75]).unwrap();
        assert_eq!(log_throughput(0, &net, &maps, &p).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn noise_lowers_success() {
        let net = pair(1.0);
        let maps = MapAssignment::new(vec![0.5, 0.5]).unwrap();
        let quiet = params(1.0);
        let noisy = ModelParams { noise: 0.1, ..quiet };
        let q0 = success_prob(0, &net, &maps, &quiet).unwrap();
        let q1 = success_prob(0, &net, &maps, &noisy).unwrap();
        assert_relative_eq!(q1, q0 * (-0.1f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn index_and_length_errors() {
        let net = pair(1.0);
        let maps = MapAssignment::constant(2, 0.5).unwrap();
        assert!(matches!(
            success_prob(2, &net, &maps, &params(1.0)),
            Err(Error::IndexOutOfRange { .. })
        ));
        let short = MapAssignment::constant(1, 0.5).unwrap();
        assert!(matches!(
            success_prob(0, &net, &short, &params(1.0)),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(MapAssignment::new(vec![1.5]).is_err());
    }

    fn arb_network() -> impl Strategy<Value = NetworkRealization> {
        prop::collection::vec((0.0..20.0f64, 0.0..20.0f64, 0.0..TAU), 2..12).prop_map(|pts| {
            let (tx, angles): (Vec<_>, Vec<_>) = pts.into_iter().map(|(x, y, a)| (Point::new(x, y), a)).unzip();
            NetworkRealization::new(20.0, tx, angles, 1.0, 0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn success_nonincreasing_in_other_maps(net in arb_network(), p in 0.0..1.0f64, dp in 0.0..0.5f64, j in 1usize..12) {
            let params = params(10.0);
            let n = net.len();
            let j = j % n;
            prop_assume!(j != 0);
            let base = MapAssignment::constant(n, p).unwrap();
            let mut bumped = base.clone();
            bumped.maps[j] = (p + dp).min(1.0);
            let q0 = success_prob(0, &net, &base, &params).unwrap();
            let q1 = success_prob(0, &net, &bumped, &params).unwrap();
            prop_assert!(q1 <= q0 + 1e-15);
        }

        #[test]
        fn success_nonincreasing_in_common_map(net in arb_network(), p in 0.0..1.0f64, dp in 0.0..0.5f64) {
            let params = params(10.0);
            let n = net.len();
            let q0 = success_prob(0, &net, &MapAssignment::constant(n, p).unwrap(), &params).unwrap();
            let q1 = success_prob(0, &net, &MapAssignment::constant(n, (p + dp).min(1.0)).unwrap(), &params).unwrap();
            prop_assert!(q1 <= q0 + 1e-15);
        }

        #[test]
        fn success_translation_invariant(net in arb_network(), dx in -50.0..50.0f64, dy in -50.0..50.0f64, p in 0.0..1.0f64) {
            let params = params(10.0);
            let maps = MapAssignment::constant(net.len(), p).unwrap();
            let moved = net.translated(Point::new(dx, dy));
            let q0 = success_prob(0, &net, &maps, &params).unwrap();
            let q1 = success_prob(0, &moved, &maps, &params).unwrap();
            prop_assert!((q0 - q1).abs() <= 1e-9 * q0.max(1e-300));
        }

        #[test]
        fn removing_a_node_never_hurts(net in arb_network(), p in 0.0..1.0f64, j in 1usize..12) {
            let params = params(10.0);
            let n = net.len();
            let j = j % n;
            prop_assume!(j != 0);
            let q0 = success_prob(0, &net, &MapAssignment::constant(n, p).unwrap(), &params).unwrap();
            let smaller = net.without(j);
            let q1 = success_prob(0, &smaller, &MapAssignment::constant(n - 1, p).unwrap(), &params).unwrap();
            prop_assert!(q1 >= q0 - 1e-15);
        }
    }
}
