//! Compiled-in corpus of problems for the command-line driver and the
//! regression suites.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::ProblemError;
use crate::problem::{
    make_fixed_point_homotopy, make_inverse_homotopy, FixedPointProblem, HomotopyProblem,
    InverseFunctionProblem, Jacobian,
};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    FixedPoint,
    Inverse,
    RawHomotopy,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FixedPoint => "fixed-point",
            Self::Inverse => "inverse",
            Self::RawHomotopy => "raw-homotopy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedOutcome {
    InteriorZero,
    BoundaryApproach,
    Singular,
    Divergence,
}

impl fmt::Display for ExpectedOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::InteriorZero => "interior_zero",
            Self::BoundaryApproach => "boundary_approach",
            Self::Singular => "singular",
            Self::Divergence => "divergence",
        })
    }
}

/// What a registry builder produces.
#[derive(Clone)]
pub enum ProblemSpec {
    FixedPoint(FixedPointProblem),
    Inverse(InverseFunctionProblem),
    Raw {
        problem: HomotopyProblem,
        x0: Vector,
    },
}

impl ProblemSpec {
    /// The homotopy actually integrated and its start point.
    pub fn homotopy(&self) -> Result<(HomotopyProblem, Vector), ProblemError> {
        match self {
            Self::FixedPoint(fp) => Ok((make_fixed_point_homotopy(fp)?, Vector::zeros(fp.dim))),
            Self::Inverse(ip) => Ok((make_inverse_homotopy(ip)?, Vector::zeros(ip.dim))),
            Self::Raw { problem, x0 } => Ok((problem.clone(), x0.clone())),
        }
    }
}

#[derive(Clone, Copy)]
pub struct ProblemRegistryEntry {
    pub name: &'static str,
    pub kind: ProblemKind,
    pub build: fn() -> ProblemSpec,
    pub expected_outcome: Option<ExpectedOutcome>,
    pub description: &'static str,
}

impl fmt::Debug for ProblemRegistryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemRegistryEntry")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("expected_outcome", &self.expected_outcome)
            .finish()
    }
}

/// Entries kept sorted by name; names are unique.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<ProblemRegistryEntry>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_entries(mut entries: Vec<ProblemRegistryEntry>) -> Self {
        entries.sort_by_key(|e| e.name);
        entries.dedup_by_key(|e| e.name);
        Self { entries }
    }

    pub fn entries(&self) -> &[ProblemRegistryEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ProblemRegistryEntry> {
        self.entries
            .binary_search_by(|e| e.name.cmp(name))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn scalar_jacobian(df: fn(f64) -> f64) -> Jacobian {
    Jacobian::analytic(move |x| Matrix::from_element(1, 1, df(x[0])))
}

fn cos_fixed_point() -> ProblemSpec {
    ProblemSpec::FixedPoint(FixedPointProblem::new(
        1,
        |x| x.map(f64::cos),
        scalar_jacobian(|s| -s.sin()),
        DomainSpec::WholeSpace,
    ))
}

fn escape_unit_ball() -> ProblemSpec {
    ProblemSpec::FixedPoint(FixedPointProblem::new(
        1,
        |x| x.map(|s| s + 0.5),
        scalar_jacobian(|_| 1.0),
        DomainSpec::ball(v(&[0.0]), 1.0),
    ))
}

fn cubic_inverse() -> ProblemSpec {
    ProblemSpec::Inverse(InverseFunctionProblem::new(
        1,
        |x| x.map(|s| s * s * s + s),
        scalar_jacobian(|s| 3.0 * s * s + 1.0),
        v(&[2.0]),
    ))
}

fn linear_inverse_2d() -> ProblemSpec {
    ProblemSpec::Inverse(InverseFunctionProblem::new(
        2,
        |x| v(&[2.0 * x[0], 4.0 * x[1]]),
        Jacobian::analytic(|_| Matrix::from_diagonal(&v(&[2.0, 4.0]))),
        v(&[2.0, 8.0]),
    ))
}

fn double_root_stress() -> ProblemSpec {
    // x = x² + ¼ has the double root ½, where F_x = 1 − 2t·x vanishes at t = 1
    ProblemSpec::FixedPoint(FixedPointProblem::new(
        1,
        |x| x.map(|s| s * s + 0.25),
        scalar_jacobian(|s| 2.0 * s),
        DomainSpec::WholeSpace,
    ))
}

fn bad_jacobian() -> ProblemSpec {
    // F_x is deliberately twice the true derivative of x − t·cos x
    let problem = HomotopyProblem::new(
        1,
        1,
        |t, x| x.map(|s| s - t * s.cos()),
        |_, x| x.map(|s| -s.cos()),
        |t, x| Matrix::from_element(1, 1, 2.0 * (1.0 + t * x[0].sin())),
        DomainSpec::WholeSpace,
    )
    .expect("static problem");
    ProblemSpec::Raw {
        problem,
        x0: v(&[0.0]),
    }
}

fn constant_fixed_point_2d() -> ProblemSpec {
    ProblemSpec::FixedPoint(FixedPointProblem::new(
        2,
        |_| v(&[0.3, -0.2]),
        Jacobian::FiniteDifference { step: 1e-6 },
        DomainSpec::ball(Vector::zeros(2), 1.0),
    ))
}

fn contraction_3d() -> ProblemSpec {
    ProblemSpec::FixedPoint(FixedPointProblem::new(
        3,
        |x| {
            v(&[
                0.5 * x[1].cos() + 0.1,
                0.5 * x[2].sin(),
                0.5 * x[0].cos() - 0.1,
            ])
        },
        Jacobian::analytic(|x| {
            Matrix::from_row_slice(
                3,
                3,
                &[
                    0.0,
                    -0.5 * x[1].sin(),
                    0.0,
                    0.0,
                    0.0,
                    0.5 * x[2].cos(),
                    -0.5 * x[0].sin(),
                    0.0,
                    0.0,
                ],
            )
        }),
        DomainSpec::open_box(Vector::from_element(3, -2.0), Vector::from_element(3, 2.0)),
    ))
}

fn sphere_growth() -> ProblemSpec {
    // one equation in two unknowns: ‖x‖² = (1 + t)²; the minimum-norm
    // tangent is radial, so the path is x(t) = (1 + t, 0)
    let problem = HomotopyProblem::new(
        2,
        1,
        |t, x: &Vector| v(&[x.norm_squared() - (1.0 + t).powi(2)]),
        |t, _| v(&[-2.0 * (1.0 + t)]),
        |_, x| Matrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
        DomainSpec::WholeSpace,
    )
    .expect("static problem");
    ProblemSpec::Raw {
        problem,
        x0: v(&[1.0, 0.0]),
    }
}

fn superlinear_blowup() -> ProblemSpec {
    // F = 2 − 2/√x − 4t: a = 4·x^{3/2} grows faster than linearly and the
    // exact path x(t) = (1 − 2t)⁻² blows up at t = ½
    let problem = HomotopyProblem::new(
        1,
        1,
        |t, x| x.map(|s| 2.0 - 2.0 / s.sqrt() - 4.0 * t),
        |_, _| v(&[-4.0]),
        |_, x| Matrix::from_element(1, 1, x[0].powf(-1.5)),
        DomainSpec::custom(|x| x[0] > 0.25, |x| (x[0] - 0.25).abs()),
    )
    .expect("static problem");
    ProblemSpec::Raw {
        problem,
        x0: v(&[1.0]),
    }
}

impl Registry {
    /// The built-in corpus.
    pub fn builtin() -> Self {
        use ExpectedOutcome::*;
        use ProblemKind::*;
        let entry = |name, kind, build, expected_outcome, description| ProblemRegistryEntry {
            name,
            kind,
            build,
            expected_outcome,
            description,
        };
        Self::from_entries(vec![
            entry(
                "bad-jacobian",
                RawHomotopy,
                bad_jacobian as fn() -> ProblemSpec,
                None,
                "x − t·cos x with F_x doubled (negative test)",
            ),
            entry(
                "constant-fixed-point-2d",
                FixedPoint,
                constant_fixed_point_2d,
                Some(InteriorZero),
                "f ≡ (0.3, −0.2) on the unit disc, finite-difference derivative",
            ),
            entry(
                "contraction-3d",
                FixedPoint,
                contraction_3d,
                Some(InteriorZero),
                "trigonometric contraction on (−2, 2)³",
            ),
            entry(
                "cos-fixed-point",
                FixedPoint,
                cos_fixed_point,
                Some(InteriorZero),
                "f(x) = cos x on ℝ",
            ),
            entry(
                "cubic-inverse",
                Inverse,
                cubic_inverse,
                Some(InteriorZero),
                "ψ(2) for f(x) = x³ + x",
            ),
            entry(
                "double-root-stress",
                FixedPoint,
                double_root_stress,
                Some(InteriorZero),
                "f(x) = x² + ¼ on ℝ, singular at the end point",
            ),
            entry(
                "escape-unit-ball",
                FixedPoint,
                escape_unit_ball,
                Some(BoundaryApproach),
                "f(x) = x + ½ on (−1, 1)",
            ),
            entry(
                "linear-inverse-2d",
                Inverse,
                linear_inverse_2d,
                Some(InteriorZero),
                "ψ((2, 8)) for f(x) = diag(2, 4)·x",
            ),
            entry(
                "sphere-growth",
                RawHomotopy,
                sphere_growth,
                Some(InteriorZero),
                "‖x‖² − (1 + t)² from (1, 0), rectangular F_x",
            ),
            entry(
                "superlinear-blowup",
                RawHomotopy,
                superlinear_blowup,
                Some(Divergence),
                "2 − 2/√x − 4t from x = 1, finite-time blow-up",
            ),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SolverConfig;
    use crate::problem::{validate_problem, ViolationKind};

    #[test]
    fn names_are_sorted_and_unique() {
        let r = Registry::builtin();
        let names = r.names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(names, sorted);
        for required in [
            "cos-fixed-point",
            "escape-unit-ball",
            "cubic-inverse",
            "linear-inverse-2d",
            "double-root-stress",
            "bad-jacobian",
        ] {
            assert!(r.get(required).is_some(), "{required}");
        }
        assert!(r.get("no-such-problem").is_none());
    }

    #[test]
    fn every_entry_validates_except_the_negative_one() {
        let cfg = SolverConfig::default();
        for e in Registry::builtin().entries() {
            let (p, x0) = (e.build)().homotopy().unwrap();
            let report = validate_problem(&p, &x0, &cfg);
            if e.name == "bad-jacobian" {
                assert!(report.has(ViolationKind::DerivativeMismatch));
                assert_eq!(report.violations.len(), 1);
            } else {
                assert!(report.is_clean(), "{}: {report:?}", e.name);
            }
        }
    }

    #[test]
    fn builders_are_pure() {
        for e in Registry::builtin().entries() {
            let (p, _) = (e.build)().homotopy().unwrap();
            let (q, _) = (e.build)().homotopy().unwrap();
            for i in 0..5 {
                let t = i as f64 / 4.0;
                let x = Vector::from_fn(p.dim_x(), |j, _| 0.3 + 0.2 * j as f64 + 0.1 * i as f64);
                assert_eq!(p.eval_f(t, &x).unwrap(), q.eval_f(t, &x).unwrap());
                assert_eq!(p.eval_fx(t, &x).unwrap(), q.eval_fx(t, &x).unwrap());
            }
        }
    }
}
