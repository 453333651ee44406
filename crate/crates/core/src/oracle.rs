//! Independent checks: finite differences, a grid-scan zero finder for small
//! dimensions, and sampling probes for the continuation hypotheses.
//!
//! None of these certify anything. Every report carries
//! `sampled_not_proven = true` and the seed it was drawn with.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::domain::{unit_direction, DomainSpec};
use crate::error::{FlowError, OracleError};
use crate::flow::tangent_field;
use crate::problem::HomotopyProblem;
use crate::right_inverse::RightInverse;
use crate::{Matrix, Vector};

pub const DEFAULT_SEED: u64 = 0;

/// Half-width of the sampling cube used when the domain gives no bounds.
pub const UNBOUNDED_SAMPLING_HALF_WIDTH: f64 = 2.0;

/// Central-difference Jacobian without finiteness checks. The divisor is the
/// realized step `(x_j + h) − (x_j − h)` rather than `2h`.
pub(crate) fn fd_jacobian_raw(f: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    let mut rows = 0;
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let width = xp[j] - xm[j];
        let col = (f(&xp) - f(&xm)) / width;
        rows = col.len();
        columns.push(col);
    }
    Matrix::from_fn(rows, n, |i, j| columns[j][i])
}

/// `∂F/∂t` by finite differences, kept inside `[0, 1]`: central in the
/// interior, second-order one-sided near either end.
pub(crate) fn fd_time_derivative_raw(
    f: impl Fn(f64, &Vector) -> Vector,
    t: f64,
    x: &Vector,
    h: f64,
) -> Vector {
    if t - h >= 0.0 && t + h <= 1.0 {
        (f(t + h, x) - f(t - h, x)) / (2.0 * h)
    } else if t + 2.0 * h <= 1.0 {
        (f(t + h, x) * 4.0 - f(t, x) * 3.0 - f(t + 2.0 * h, x)) / (2.0 * h)
    } else {
        (f(t, x) * 3.0 - f(t - h, x) * 4.0 + f(t - 2.0 * h, x)) / (2.0 * h)
    }
}

/// `‖analytic − reference‖_F / (1 + ‖analytic‖_F)`; infinite on shape mismatch.
pub fn relative_matrix_error(analytic: &Matrix, reference: &Matrix) -> f64 {
    if analytic.shape() != reference.shape() {
        return f64::INFINITY;
    }
    let err = (analytic - reference).norm() / (1.0 + analytic.norm());
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

/// Central-difference Jacobian with entry `(i, j) = (f_i(x + h·e_j) − f_i(x − h·e_j)) / 2h`.
pub fn fd_jacobian(
    f: impl Fn(&Vector) -> Vector,
    x: &Vector,
    h: f64,
) -> Result<Matrix, OracleError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(OracleError::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let j = fd_jacobian_raw(f, x, h);
    if j.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite(x.as_slice().to_vec()));
    }
    Ok(j)
}

const BRUTE_FORCE_ACCEPT: f64 = 1e-8;
const MAX_GRID_POINTS: usize = 4_000_000;

/// All zeros of `g` in the closed box `[lo, hi]` found by a grid scan.
///
/// Seeds are sign-change cells (1-D, refined by bisection) and grid-local
/// minima of `‖g‖` (any dimension, refined by damped Newton with a
/// finite-difference Jacobian). Points closer than `resolution` are merged.
/// The output is sorted lexicographically.
pub fn brute_force_zero(
    g: impl Fn(&Vector) -> Vector,
    lo: &Vector,
    hi: &Vector,
    resolution: f64,
) -> Result<Vec<Vector>, OracleError> {
    let n = lo.len();
    if n > 3 {
        return Err(OracleError::DimensionTooLarge(n));
    }
    if n == 0 || hi.len() != n {
        return Err(OracleError::InvalidArgument(
            "box corners must share a positive dimension".into(),
        ));
    }
    if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
        return Err(OracleError::InvalidArgument("box requires lo < hi".into()));
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(OracleError::InvalidArgument(format!(
            "resolution must be positive, got {resolution}"
        )));
    }

    let counts: Vec<usize> = (0..n)
        .map(|i| ((hi[i] - lo[i]) / resolution).ceil() as usize + 1)
        .collect();
    let total = counts.iter().try_fold(1usize, |acc, c| acc.checked_mul(*c));
    match total {
        Some(t) if t <= MAX_GRID_POINTS => {}
        _ => {
            return Err(OracleError::InvalidArgument(
                "grid too fine for the box".into(),
            ))
        }
    }
    let total = total.unwrap_or(0);
    let point = |idx: &[usize]| {
        Vector::from_fn(n, |i, _| {
            let k = counts[i] - 1;
            if idx[i] == k {
                hi[i]
            } else {
                lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / k as f64
            }
        })
    };
    let unflatten = |mut flat: usize| {
        let mut idx = [0usize; 3];
        for i in 0..n {
            idx[i] = flat % counts[i];
            flat /= counts[i];
        }
        idx
    };
    let flatten = |idx: &[usize]| {
        let mut flat = 0;
        for i in (0..n).rev() {
            flat = flat * counts[i] + idx[i];
        }
        flat
    };

    let mut values = Vec::with_capacity(total);
    let mut norms = Vec::with_capacity(total);
    let mut outputs = None;
    for flat in 0..total {
        let x = point(&unflatten(flat));
        let gx = g(&x);
        match outputs {
            None => {
                if gx.len() > n {
                    return Err(OracleError::Overdetermined {
                        inputs: n,
                        outputs: gx.len(),
                    });
                }
                outputs = Some(gx.len());
            }
            Some(m) if m != gx.len() => {
                return Err(OracleError::InvalidArgument(
                    "map output length varies".into(),
                ))
            }
            _ => {}
        }
        let norm = gx.norm();
        norms.push(if norm.is_nan() { f64::INFINITY } else { norm });
        values.push(gx);
    }
    let scalar = n == 1 && outputs == Some(1);

    let mut found: Vec<(Vector, f64)> = Vec::new();
    let in_box = |x: &Vector| {
        x.iter()
            .zip(lo.iter().zip(hi.iter()))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    };

    if scalar {
        for i in 0..total - 1 {
            let (ga, gb) = (values[i][0], values[i + 1][0]);
            if ga == 0.0 {
                found.push((point(&[i]), 0.0));
            } else if ga.is_finite() && gb.is_finite() && ga * gb < 0.0 {
                let (mut a, mut b) = (point(&[i])[0], point(&[i + 1])[0]);
                let mut ga = ga;
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    let gm = g(&Vector::from_element(1, mid))[0];
                    if gm == 0.0 {
                        a = mid;
                        b = mid;
                        break;
                    }
                    if (gm < 0.0) == (ga < 0.0) {
                        a = mid;
                        ga = gm;
                    } else {
                        b = mid;
                    }
                }
                let root = Vector::from_element(1, 0.5 * (a + b));
                let r = g(&root).norm();
                if r <= BRUTE_FORCE_ACCEPT {
                    found.push((root, r));
                }
            }
        }
        if values[total - 1][0] == 0.0 {
            found.push((point(&[total - 1]), 0.0));
        }
    }

    // grid-local minima of ‖g‖ seed Newton polishing
    let offsets: Vec<[isize; 3]> = {
        let mut v = Vec::new();
        let r = |i: usize| if i < n { -1..=1 } else { 0..=0 };
        for a in r(0) {
            for b in r(1) {
                for c in r(2) {
                    if (a, b, c) != (0, 0, 0) {
                        v.push([a, b, c]);
                    }
                }
            }
        }
        v
    };
    for flat in 0..total {
        let here = norms[flat];
        if !here.is_finite() {
            continue;
        }
        let idx = unflatten(flat);
        let is_min = offsets.iter().all(|off| {
            let mut nb = [0usize; 3];
            for i in 0..n {
                let j = idx[i] as isize + off[i];
                if j < 0 || j >= counts[i] as isize {
                    return true;
                }
                nb[i] = j as usize;
            }
            here <= norms[flatten(&nb[..n])]
        });
        if !is_min {
            continue;
        }
        if let Some((x, r)) = polish(&g, point(&idx[..n]), resolution) {
            if in_box(&x) {
                found.push((x, r));
            }
        }
    }

    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut merged: Vec<Vector> = Vec::new();
    for (x, _) in found {
        if merged.iter().all(|m| (m - &x).norm() > resolution) {
            merged.push(x);
        }
    }
    merged.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(merged)
}

/// Damped Newton with the minimum-norm right inverse of a finite-difference
/// Jacobian. Returns the point if `‖g‖ ≤ 1e-8`.
fn polish(g: &impl Fn(&Vector) -> Vector, mut x: Vector, resolution: f64) -> Option<(Vector, f64)> {
    let start = x.clone();
    let mut gx = g(&x);
    let mut r = gx.norm();
    for _ in 0..200 {
        if !r.is_finite() || r <= 1e-15 {
            break;
        }
        let h = 1e-7 * (1.0 + x.norm());
        let j = fd_jacobian_raw(g, &x, h);
        let Ok(s) = RightInverse::factor(&j, 1e14) else {
            break;
        };
        let Ok(dx) = s.apply(&gx) else { break };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda >= 1.0 / 1024.0 {
            let cand = &x - &dx * lambda;
            let gc = g(&cand);
            let rc = gc.norm();
            if rc < r {
                x = cand;
                gx = gc;
                r = rc;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved || dx.norm() * lambda <= 1e-16 * (1.0 + x.norm()) {
            break;
        }
        // a seed far from any zero should not wander across the box
        if (&x - &start).norm() > 10.0 * resolution * (start.len() as f64).sqrt() + 1.0 {
            return None;
        }
    }
    (r <= BRUTE_FORCE_ACCEPT).then_some((x, r))
}

/// The times at which coercivity is probed.
pub const COERCIVITY_TIMES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    /// `minima[i][k]`: smallest sampled `‖F(times[i], x)‖` over `‖x‖ = radii[k]`.
    pub minima: Vec<Vec<f64>>,
    pub pass: bool,
    pub seed: u64,
    pub sampled_not_proven: bool,
}

/// Samples `‖F(t, ·)‖` on origin-centered spheres of the given radii.
///
/// The same unit directions are reused on every shell. A time slice passes
/// when its minima never decrease after the first shell and the outermost
/// minimum exceeds twice the innermost one; the probe passes when every slice
/// does.
pub fn probe_coercivity(
    p: &HomotopyProblem,
    radii: &[f64],
    samples_per_shell: usize,
    seed: u64,
) -> CoercivityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<Vector> = (0..samples_per_shell.max(1))
        .map(|_| unit_direction(p.dim_x(), &mut rng))
        .collect();
    let increasing = radii.len() >= 2 && radii.windows(2).all(|w| w[0] < w[1]);
    let mut minima = Vec::with_capacity(COERCIVITY_TIMES.len());
    let mut pass = increasing;
    for &t in &COERCIVITY_TIMES {
        let row: Vec<f64> = radii
            .iter()
            .map(|&r| {
                directions
                    .iter()
                    .filter_map(|d| p.eval_f(t, &(d * r)).ok().map(|v| v.norm()))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        if increasing {
            let monotone = row.windows(2).skip(1).all(|w| w[1] >= w[0]);
            let grows = row[row.len() - 1] > 2.0 * row[0];
            pass &= monotone && grows;
        }
        minima.push(row);
    }
    CoercivityReport {
        times: COERCIVITY_TIMES.to_vec(),
        radii: radii.to_vec(),
        minima,
        pass,
        seed,
        sampled_not_proven: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub k_hat: f64,
    pub evaluated: usize,
    pub singular_samples: usize,
    pub seed: u64,
    pub sampled_not_proven: bool,
}

/// `max ‖a(t,x)‖ / (‖x‖ + 1)` over an explicit sample set.
pub fn growth_constant_over(
    p: &HomotopyProblem,
    points: &[(f64, Vector)],
    cfg: &SolverConfig,
    seed: u64,
) -> GrowthReport {
    let mut k_hat: f64 = 0.0;
    let mut evaluated = 0;
    let mut singular_samples = 0;
    for (t, x) in points {
        match tangent_field(p, *t, x, cfg) {
            Ok(a) => {
                evaluated += 1;
                k_hat = k_hat.max(a.norm() / (x.norm() + 1.0));
            }
            Err(FlowError::SingularJacobian { .. }) => singular_samples += 1,
            Err(_) => {}
        }
    }
    GrowthReport {
        k_hat,
        evaluated,
        singular_samples,
        seed,
        sampled_not_proven: true,
    }
}

/// Linear-growth constant of the tangent field over a bounded region.
///
/// The sample set always contains the region point nearest the origin (at
/// `t = 0` and `t = 1`) and the region center, then `samples` uniform draws.
pub fn estimate_growth_constant(
    p: &HomotopyProblem,
    region: &DomainSpec,
    samples: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<GrowthReport, OracleError> {
    if !region.is_bounded() {
        return Err(OracleError::InvalidArgument(
            "growth estimation needs a ball or box region".into(),
        ));
    }
    region
        .check(p.dim_x())
        .map_err(|e| OracleError::InvalidArgument(e.to_string()))?;
    let n = p.dim_x();
    let (nearest, center) = match region {
        DomainSpec::OpenBall { center, radius } => {
            let c = center.norm();
            let nearest = if c <= *radius {
                Vector::zeros(n)
            } else {
                center - center * (*radius / c)
            };
            (nearest, center.clone())
        }
        DomainSpec::OpenBox { lo, hi } => (
            Vector::from_fn(n, |i, _| 0f64.clamp(lo[i], hi[i])),
            (lo + hi) * 0.5,
        ),
        _ => unreachable!("bounded regions are balls or boxes"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![(0.0, nearest.clone()), (1.0, nearest), (0.5, center)];
    for _ in 0..samples {
        let t = rng.random::<f64>();
        points.push((t, sample_in_region(region, n, &mut rng)));
    }
    Ok(growth_constant_over(p, &points, cfg, seed))
}

fn sample_in_region(region: &DomainSpec, n: usize, rng: &mut ChaCha8Rng) -> Vector {
    match region {
        DomainSpec::OpenBall { center, radius } => {
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
            center + unit_direction(n, rng) * r
        }
        DomainSpec::OpenBox { lo, hi } => {
            Vector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>())
        }
        DomainSpec::WholeSpace => Vector::from_fn(n, |_, _| {
            rng.random_range(-UNBOUNDED_SAMPLING_HALF_WIDTH..UNBOUNDED_SAMPLING_HALF_WIDTH)
        }),
        DomainSpec::Custom { contains, .. } => {
            let mut last = Vector::zeros(n);
            for _ in 0..100 {
                last = Vector::from_fn(n, |_, _| {
                    rng.random_range(-UNBOUNDED_SAMPLING_HALF_WIDTH..UNBOUNDED_SAMPLING_HALF_WIDTH)
                });
                if contains(&last) {
                    break;
                }
            }
            last
        }
    }
}

/// Largest relative disagreement between the problem's `F_x`, `F_t` and
/// central differences at seeded samples `(t, x)` with `x` in the domain (or
/// in a cube around the origin when the domain is unbounded).
pub fn compare_jacobian(p: &HomotopyProblem, samples: usize, fd_step: f64) -> f64 {
    compare_jacobian_seeded(p, samples, fd_step, DEFAULT_SEED)
}

pub fn compare_jacobian_seeded(
    p: &HomotopyProblem,
    samples: usize,
    fd_step: f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.dim_x();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let t = rng.random::<f64>();
        let x = sample_in_region(p.domain(), n, &mut rng);
        let h = fd_step * (1.0 + x.norm());
        let (fx, ft) = match (p.eval_fx(t, &x), p.eval_ft(t, &x)) {
            (Ok(fx), Ok(ft)) => (fx, ft),
            _ => return f64::INFINITY,
        };
        let fd_x = fd_jacobian_raw(
            |y| {
                p.eval_f(t, y)
                    .unwrap_or_else(|_| Vector::from_element(p.dim_y(), f64::NAN))
            },
            &x,
            h,
        );
        let fd_t = fd_time_derivative_raw(
            |s, y| {
                p.eval_f(s, y)
                    .unwrap_or_else(|_| Vector::from_element(p.dim_y(), f64::NAN))
            },
            t,
            &x,
            fd_step,
        );
        let ex = relative_matrix_error(&fx, &fd_x);
        let et = (&ft - &fd_t).norm() / (1.0 + ft.norm());
        let et = if et.is_nan() { f64::INFINITY } else { et };
        worst = worst.max(ex).max(et);
    }
    worst
}
