//! Stopping-set information structures and the local view a transmitter
//! extracts from them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelParams, NetworkRealization, Point};

/// The region, centred on a transmitter, inside which it knows receiver positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingSetSpec {
    /// No topology information.
    Empty,
    /// Fixed disk of radius `R`.
    Disk(f64),
    /// Disk reaching the k-th closest receiver.
    NearestK(usize),
    /// Intersection of the k-nearest disk with a fixed disk of radius `R`.
    NearestKCapped(usize, f64),
    /// Every receiver in the network.
    FullPlane,
}

impl StoppingSetSpec {
    pub fn validate(&self) -> Result<()> {
        let radius_ok = |r: f64| r.is_finite() && r > 0.0;
        match *self {
            Self::Disk(r) | Self::NearestKCapped(_, r) if !radius_ok(r) => {
                Err(Error::InvalidSpec(format!("radius must be positive and finite, got {r}")))
            }
            Self::NearestK(0) | Self::NearestKCapped(0, _) => Err(Error::InvalidSpec("k must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Deterministic sets do not depend on the point pattern.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::Empty | Self::Disk(_))
    }
}

impl fmt::Display for StoppingSetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "empty"),
            Self::Disk(r) => write!(f, "disk:R={r}"),
            Self::NearestK(k) => write!(f, "nearest:k={k}"),
            Self::NearestKCapped(k, r) => write!(f, "nearestcap:k={k},R={r}"),
            Self::FullPlane => write!(f, "full"),
        }
    }
}

impl FromStr for StoppingSetSpec {
    type Err = Error;

    /// Parses `empty`, `disk:R=<val>`, `nearest:k=<int>`, `nearestcap:k=<int>,R=<val>` or `full`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| Error::InvalidSpec(format!("{why} in {s:?}"));
        let (kind, args) = match s.split_once(':') {
            Some((kind, args)) => (kind, Some(args)),
            None => (s, None),
        };
        let mut radius = None;
        let mut k = None;
        for part in args.unwrap_or("").split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key.trim() {
                "R" => {
                    let v: f64 = value.trim().parse().map_err(|_| bad("R is not a number"))?;
                    radius = Some(v);
                }
                "k" => {
                    let v: usize = value.trim().parse().map_err(|_| bad("k is not a nonnegative integer"))?;
                    k = Some(v);
                }
                other => return Err(bad(&format!("unknown argument {other:?}"))),
            }
        }
        let spec = match (kind.trim(), k, radius) {
            ("empty", None, None) => Self::Empty,
            ("full", None, None) => Self::FullPlane,
            ("disk", None, Some(r)) => Self::Disk(r),
            ("nearest", Some(k), None) => Self::NearestK(k),
            ("nearestcap", Some(k), Some(r)) => Self::NearestKCapped(k, r),
            ("empty" | "full" | "disk" | "nearest" | "nearestcap", _, _) => return Err(bad("wrong arguments")),
            _ => return Err(bad("unknown stopping set")),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// What one transmitter knows: b-coefficients of the receivers inside its
/// stopping set and the radius beyond which receivers are only known in mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    /// Ascending.
    pub observed_b: Vec<f64>,
    /// The unobserved region is the complement of the centred ball with this
    /// radius; `0` for no information, `∞` for full information.
    pub outer_radius: f64,
}

impl LocalView {
    pub fn empty() -> Self {
        Self {
            observed_b: Vec::new(),
            outer_radius: 0.0,
        }
    }

    pub fn full(mut observed_b: Vec<f64>) -> Self {
        observed_b.sort_by(f64::total_cmp);
        Self {
            observed_b,
            outer_radius: f64::INFINITY,
        }
    }

    pub fn disk(mut observed_b: Vec<f64>, radius: f64) -> Self {
        observed_b.sort_by(f64::total_cmp);
        Self {
            observed_b,
            outer_radius: radius,
        }
    }
}

/// Squared distances from `origin` to `receivers`, sorted by (distance, index).
/// The `keep` smallest values of `d2`, sorted ascending.
fn smallest_sorted(mut d2: Vec<f64>, keep: usize) -> Vec<f64> {
    if keep < d2.len() {
        if keep == 0 {
            return Vec::new();
        }
        d2.select_nth_unstable_by(keep - 1, f64::total_cmp);
        d2.truncate(keep);
    }
    d2.sort_unstable_by(f64::total_cmp);
    d2
}

fn other_receivers(realization: &NetworkRealization, i: usize) -> impl Iterator<Item = Point> + '_ {
    realization
        .receivers
        .iter()
        .enumerate()
        .filter(move |&(j, _)| j != i)
        .map(|(_, &y)| y)
}

/// Distance from transmitter `i` to its k-th closest receiver, its own excluded.
pub fn kth_nearest_receiver_distance(i: usize, realization: &NetworkRealization, k: usize) -> Result<f64> {
    realization.check_index(i)?;
    if k == 0 {
        return Err(Error::InvalidSpec("k must be at least 1".into()));
    }
    let origin = realization.transmitters[i];
    let mut d2: Vec<f64> = other_receivers(realization, i).map(|y| origin.dist2(y)).collect();
    if d2.len() < k {
        return Err(Error::NotEnoughReceivers {
            index: i,
            k,
            available: d2.len(),
        });
    }
    let (_, kth, _) = d2.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(kth.sqrt())
}

/// Local view of a transmitter at `origin` given the receivers it could
/// possibly observe (its own receiver must already be excluded).
pub fn local_view_at<I>(origin: Point, receivers: I, spec: &StoppingSetSpec, params: &ModelParams) -> Result<LocalView>
where
    I: IntoIterator<Item = Point>,
{
    spec.validate()?;
    if let StoppingSetSpec::Empty = spec {
        return Ok(LocalView::empty());
    }
    let mut d2: Vec<f64> = receivers.into_iter().map(|y| origin.dist2(y)).collect();
    if d2.contains(&0.0) {
        return Err(Error::CoincidentPoints);
    }
    let to_b = |d: &[f64]| d.iter().map(|&x| params.b_from_dist2(x)).collect::<Vec<_>>();
    let view = match *spec {
        StoppingSetSpec::Empty => unreachable!(),
        StoppingSetSpec::FullPlane => LocalView {
            observed_b: to_b(&smallest_sorted(d2, usize::MAX)),
            outer_radius: f64::INFINITY,
        },
        StoppingSetSpec::Disk(radius) => {
            d2.retain(|&x| x <= radius * radius);
            LocalView {
                observed_b: to_b(&smallest_sorted(d2, usize::MAX)),
                outer_radius: radius,
            }
        }
        StoppingSetSpec::NearestK(k) => {
            if d2.len() < k {
                return Err(Error::NotEnoughReceivers {
                    index: usize::MAX,
                    k,
                    available: d2.len(),
                });
            }
            let near = smallest_sorted(d2, k);
            LocalView {
                observed_b: to_b(&near),
                outer_radius: near[k - 1].sqrt(),
            }
        }
        StoppingSetSpec::NearestKCapped(k, radius) => {
            let r_k = if d2.len() < k {
                f64::INFINITY
            } else {
                smallest_sorted(d2.clone(), k)[k - 1].sqrt()
            };
            d2.retain(|&x| x <= radius * radius);
            let near = smallest_sorted(d2, k);
            LocalView {
                observed_b: to_b(&near),
                outer_radius: r_k.min(radius),
            }
        }
    };
    Ok(view)
}

/// Local view of transmitter `i`: the receivers `y_j`, `j != i`, inside its stopping set.
pub fn local_view(i: usize, realization: &NetworkRealization, spec: &StoppingSetSpec, params: &ModelParams) -> Result<LocalView> {
    realization.check_index(i)?;
    local_view_at(realization.transmitters[i], other_receivers(realization, i), spec, params).map_err(|e| match e {
        Error::NotEnoughReceivers { k, available, .. } => Error::NotEnoughReceivers { index: i, k, available },
        other => other,
    })
}
