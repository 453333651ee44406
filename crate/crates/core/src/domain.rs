//! The open set `D` on which a homotopy is posed.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::ProblemError;
use crate::Vector;

pub type ContainsFn = Arc<dyn Fn(&Vector) -> bool + Send + Sync>;
pub type DistanceFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// Membership and boundary distance for an open subset of `ℝⁿ`.
#[derive(Clone)]
pub enum DomainSpec {
    /// `D = ℝⁿ`; the boundary is empty and every distance to it is `+∞`.
    WholeSpace,
    OpenBall {
        center: Vector,
        radius: f64,
    },
    OpenBox {
        lo: Vector,
        hi: Vector,
    },
    /// User-described set. `boundary_distance` may be a lower bound on the
    /// true distance, which only makes boundary detection more eager.
    Custom {
        contains: ContainsFn,
        boundary_distance: DistanceFn,
    },
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WholeSpace => write!(f, "WholeSpace"),
            Self::OpenBall { center, radius } => f
                .debug_struct("OpenBall")
                .field("center", &center.as_slice())
                .field("radius", radius)
                .finish(),
            Self::OpenBox { lo, hi } => f
                .debug_struct("OpenBox")
                .field("lo", &lo.as_slice())
                .field("hi", &hi.as_slice())
                .finish(),
            Self::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl DomainSpec {
    pub fn ball(center: Vector, radius: f64) -> Self {
        Self::OpenBall { center, radius }
    }

    pub fn open_box(lo: Vector, hi: Vector) -> Self {
        Self::OpenBox { lo, hi }
    }

    pub fn custom(
        contains: impl Fn(&Vector) -> bool + Send + Sync + 'static,
        boundary_distance: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            contains: Arc::new(contains),
            boundary_distance: Arc::new(boundary_distance),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::WholeSpace => "whole-space",
            Self::OpenBall { .. } => "open-ball",
            Self::OpenBox { .. } => "open-box",
            Self::Custom { .. } => "custom",
        }
    }

    /// Checks the geometric parameters against the ambient dimension `n`.
    pub fn check(&self, n: usize) -> Result<(), ProblemError> {
        match self {
            Self::WholeSpace | Self::Custom { .. } => Ok(()),
            Self::OpenBall { center, radius } => {
                if center.len() != n {
                    return Err(ProblemError::Dimension(format!(
                        "ball center has length {}, expected {n}",
                        center.len()
                    )));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(ProblemError::DomainViolation(format!(
                        "ball radius must be positive and finite, got {radius}"
                    )));
                }
                Ok(())
            }
            Self::OpenBox { lo, hi } => {
                if lo.len() != n || hi.len() != n {
                    return Err(ProblemError::Dimension(format!(
                        "box corners have lengths {} and {}, expected {n}",
                        lo.len(),
                        hi.len()
                    )));
                }
                if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
                    return Err(ProblemError::DomainViolation(
                        "box requires lo < hi in every coordinate".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Self::WholeSpace => true,
            Self::OpenBall { center, radius } => (x - center).norm() < *radius,
            Self::OpenBox { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| l < v && v < h),
            Self::Custom { contains, .. } => contains(x),
        }
    }

    /// Euclidean distance from `x` to `∂D`, for points on either side.
    pub fn boundary_distance(&self, x: &Vector) -> f64 {
        match self {
            Self::WholeSpace => f64::INFINITY,
            Self::OpenBall { center, radius } => ((x - center).norm() - radius).abs(),
            Self::OpenBox { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .all(|(v, (l, h))| l <= v && v <= h);
                if inside {
                    x.iter()
                        .zip(lo.iter().zip(hi.iter()))
                        .map(|(v, (l, h))| (v - l).min(h - v))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    x.iter()
                        .zip(lo.iter().zip(hi.iter()))
                        .map(|(v, (l, h))| {
                            let gap = (l - v).max(v - h).max(0.0);
                            gap * gap
                        })
                        .sum::<f64>()
                        .sqrt()
                }
            }
            Self::Custom {
                boundary_distance, ..
            } => boundary_distance(x),
        }
    }

    /// Boundary distance with the sign of membership: positive inside,
    /// negative (or zero) outside.
    pub fn signed_distance(&self, x: &Vector) -> f64 {
        let d = self.boundary_distance(x);
        if self.contains(x) {
            d
        } else {
            -d
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Self::OpenBall { .. } | Self::OpenBox { .. })
    }
}

/// Uniform samples on `∂D` for ball and box domains.
///
/// Box faces are chosen with probability proportional to their area. Returns
/// `None` for domains without a canonical boundary measure.
pub fn sample_boundary(domain: &DomainSpec, count: usize, seed: u64) -> Option<Vec<Vector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match domain {
        DomainSpec::OpenBall { center, radius } => {
            let n = center.len();
            Some(
                (0..count)
                    .map(|_| center + unit_direction(n, &mut rng) * *radius)
                    .collect(),
            )
        }
        DomainSpec::OpenBox { lo, hi } => {
            let n = lo.len();
            let extent: Vec<f64> = (0..n).map(|i| hi[i] - lo[i]).collect();
            let face_area: Vec<f64> = (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| extent[j])
                        .product::<f64>()
                })
                .collect();
            let total: f64 = face_area.iter().sum::<f64>() * 2.0;
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let mut pick = rng.random::<f64>() * total;
                let mut axis = n - 1;
                let mut upper = false;
                'select: for (i, area) in face_area.iter().enumerate() {
                    for side in [false, true] {
                        if pick < *area {
                            axis = i;
                            upper = side;
                            break 'select;
                        }
                        pick -= area;
                    }
                }
                let mut x = Vector::from_fn(n, |j, _| lo[j] + rng.random::<f64>() * extent[j]);
                x[axis] = if upper { hi[axis] } else { lo[axis] };
                out.push(x);
            }
            Some(out)
        }
        DomainSpec::WholeSpace | DomainSpec::Custom { .. } => None,
    }
}

/// Uniform direction on the unit sphere from normalized standard-normal draws.
pub(crate) fn unit_direction(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn whole_space_has_no_boundary() {
        let d = DomainSpec::WholeSpace;
        assert!(d.contains(&v(&[1e9, -3.0])));
        assert_eq!(d.boundary_distance(&v(&[0.0])), f64::INFINITY);
    }

    #[test]
    fn ball_distance_is_exact_on_both_sides() {
        let d = DomainSpec::ball(v(&[1.0, 0.0]), 2.0);
        assert!((d.boundary_distance(&v(&[1.0, 0.5])) - 1.5).abs() < 1e-15);
        assert!((d.boundary_distance(&v(&[4.0, 0.0])) - 1.0).abs() < 1e-15);
        assert_eq!(d.boundary_distance(&v(&[3.0, 0.0])), 0.0);
        assert!(!d.contains(&v(&[3.0, 0.0])));
        assert!(d.contains(&v(&[2.9, 0.0])));
    }

    #[test]
    fn box_distance_inside_and_outside() {
        let d = DomainSpec::open_box(v(&[0.0, 0.0]), v(&[2.0, 1.0]));
        assert!((d.boundary_distance(&v(&[1.0, 0.4])) - 0.4).abs() < 1e-15);
        assert!((d.boundary_distance(&v(&[3.0, 2.0])) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.boundary_distance(&v(&[2.0, 0.5])), 0.0);
        assert!(!d.contains(&v(&[2.0, 0.5])));
    }

    #[test]
    fn check_rejects_bad_geometry() {
        assert!(DomainSpec::ball(v(&[0.0]), 0.0).check(1).is_err());
        assert!(DomainSpec::ball(v(&[0.0]), 1.0).check(2).is_err());
        assert!(DomainSpec::open_box(v(&[1.0]), v(&[1.0])).check(1).is_err());
    }

    #[test]
    fn boundary_samples_lie_on_the_boundary() {
        let ball = DomainSpec::ball(v(&[0.5, -0.5, 0.0]), 1.5);
        for x in sample_boundary(&ball, 50, 3).unwrap() {
            assert!(ball.boundary_distance(&x) < 1e-12);
        }
        let bx = DomainSpec::open_box(v(&[-1.0, 0.0]), v(&[1.0, 3.0]));
        for x in sample_boundary(&bx, 50, 3).unwrap() {
            assert!(bx.boundary_distance(&x) < 1e-12);
        }
        assert!(sample_boundary(&DomainSpec::WholeSpace, 5, 0).is_none());
    }

    #[test]
    fn membership_implies_positive_distance() {
        let domains = [
            DomainSpec::ball(v(&[0.0, 0.0]), 1.0),
            DomainSpec::open_box(v(&[-1.0, -1.0]), v(&[1.0, 0.5])),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in &domains {
            for _ in 0..500 {
                let x = Vector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
                if d.contains(&x) {
                    assert!(d.boundary_distance(&x) > 0.0);
                }
            }
        }
    }
}
