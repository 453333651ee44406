//! Minimum-norm right inverse of a full-row-rank Jacobian.
//!
//! For `J ∈ ℝ^{m×n}` with `m ≤ n` and rank `m`, the Moore–Penrose inverse
//! `S = Jᵀ(JJᵀ)⁻¹` satisfies `J·S = I`, and `S·v` is the solution of `J·w = v`
//! orthogonal to `ker J`. It is applied through a thin SVD, never by forming
//! `JJᵀ`.

use nalgebra::linalg::SVD;

use crate::error::RightInverseError;
use crate::{Matrix, Vector};

/// Ratio of largest to smallest singular value; `∞` when rank deficient.
pub fn condition_estimate(j: &Matrix) -> f64 {
    if j.is_empty() {
        return f64::INFINITY;
    }
    let sv = j.clone().svd(false, false).singular_values;
    condition_from_singular_values(sv.as_slice())
}

fn condition_from_singular_values(sv: &[f64]) -> f64 {
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        return f64::INFINITY;
    }
    (max / min).max(1.0)
}

/// A factored Jacobian that can apply its minimum-norm right inverse.
#[derive(Debug, Clone)]
pub struct RightInverse {
    jacobian: Matrix,
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl RightInverse {
    /// Factors `j`, failing when its condition estimate exceeds
    /// `condition_max`.
    pub fn factor(j: &Matrix, condition_max: f64) -> Result<Self, RightInverseError> {
        let (rows, cols) = j.shape();
        if rows > cols {
            return Err(RightInverseError::Overdetermined { rows, cols });
        }
        if rows == 0 {
            return Err(RightInverseError::SingularJacobian {
                condition: f64::INFINITY,
            });
        }
        let svd = j.clone().svd(true, true);
        let condition = condition_from_singular_values(svd.singular_values.as_slice());
        if !(condition <= condition_max) {
            return Err(RightInverseError::SingularJacobian { condition });
        }
        Ok(Self {
            jacobian: j.clone(),
            svd,
            condition,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn apply_once(&self, v: &Vector) -> Vector {
        let u = self.svd.u.as_ref().expect("left singular vectors computed");
        let v_t = self
            .svd
            .v_t
            .as_ref()
            .expect("right singular vectors computed");
        let mut coeffs = u.tr_mul(v);
        for (c, s) in coeffs.iter_mut().zip(self.svd.singular_values.iter()) {
            *c /= s;
        }
        v_t.tr_mul(&coeffs)
    }

    /// `S·v`, with one step of iterative refinement on the residual.
    pub fn apply(&self, v: &Vector) -> Result<Vector, RightInverseError> {
        let (rows, cols) = self.jacobian.shape();
        if v.len() != rows {
            return Err(RightInverseError::Shape {
                rows,
                cols,
                len: v.len(),
            });
        }
        let mut w = self.apply_once(v);
        let r = v - &self.jacobian * &w;
        w += self.apply_once(&r);
        Ok(w)
    }
}

/// Minimum-norm solution `w` of `J·w = v`.
pub fn right_inverse_apply(
    j: &Matrix,
    v: &Vector,
    condition_max: f64,
) -> Result<Vector, RightInverseError> {
    if v.len() != j.nrows() {
        return Err(RightInverseError::Shape {
            rows: j.nrows(),
            cols: j.ncols(),
            len: v.len(),
        });
    }
    RightInverse::factor(j, condition_max)?.apply(v)
}
