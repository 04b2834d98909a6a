//! Regularized conditional mean embedding weights and RKHS evaluations.
//!
//! `ridge_weights` solves (K + lambda I) Gamma = k_vec by Cholesky with
//! jitter escalation. The fit pipeline obtains its CME weights through
//! [`cme_weights`], which applies the regularizer as n * lambda_reg — the
//! empirical-CME convention. The Bellman-side operator listings write the
//! ridge system without the factor n, but the reported lambda_reg values
//! (5e-4 and smaller) are only stable under the n-scaled convention, so
//! that is the one the pipeline uses throughout.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{KedrlError, Result};
use crate::kernel::{self, GramMatrix, MaternParams};

/// Ridge solution Gamma for one query, with the settings that produced it.
#[derive(Debug, Clone)]
pub struct RidgeWeights {
    pub gamma: DVector<f64>,
    pub lambda_reg: f64,
    pub query: Vec<f64>,
}

/// Reusable SPD factorization of (K + lambda I); one factorization serves
/// any number of right-hand sides.
pub struct RidgeFactor {
    chol: Cholesky<f64, nalgebra::Dyn>,
    pub lambda_reg: f64,
    n: usize,
}

impl RidgeFactor {
    /// Factor K + lambda I, escalating diagonal jitter up to three times if
    /// the factorization fails.
    pub fn new(gram: &GramMatrix, lambda_reg: f64) -> Result<Self> {
        if lambda_reg <= 0.0 || !lambda_reg.is_finite() {
            return Err(KedrlError::invalid(format!("lambda_reg must be positive, got {lambda_reg}")));
        }
        let n = gram.n();
        let mut reg = gram.entries.clone();
        for i in 0..n {
            reg[(i, i)] += lambda_reg;
        }
        let trace_avg = gram.entries.trace() / n.max(1) as f64;
        let mut jitter = 10.0 * f64::EPSILON * trace_avg;
        let mut attempt = reg.clone();
        for tries in 0..=3 {
            if let Some(chol) = Cholesky::new(attempt.clone()) {
                return Ok(RidgeFactor { chol, lambda_reg, n });
            }
            if tries == 3 {
                break;
            }
            for i in 0..n {
                attempt[(i, i)] = reg[(i, i)] + jitter;
            }
            jitter *= 10.0;
        }
        Err(KedrlError::numerical(format!(
            "ridge factorization failed after jitter escalation (n = {n}, lambda = {lambda_reg}, trace/n = {trace_avg:.3e})"
        )))
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.n {
            return Err(KedrlError::invalid(format!("rhs length {} vs system size {}", rhs.len(), self.n)));
        }
        Ok(self.chol.solve(rhs))
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.n {
            return Err(KedrlError::invalid(format!("rhs rows {} vs system size {}", rhs.nrows(), self.n)));
        }
        Ok(self.chol.solve(rhs))
    }
}

/// Solve (K + lambda I) Gamma = k_vec.
pub fn ridge_weights(gram: &GramMatrix, k_vec: &[f64], lambda_reg: f64, query: &[f64]) -> Result<RidgeWeights> {
    if k_vec.len() != gram.n() {
        return Err(KedrlError::invalid(format!(
            "kernel vector length {} vs gram size {}",
            k_vec.len(),
            gram.n()
        )));
    }
    let factor = RidgeFactor::new(gram, lambda_reg)?;
    let rhs = DVector::from_column_slice(k_vec);
    let gamma = factor.solve(&rhs)?;
    // residual check against the regularized system
    let mut reg = gram.entries.clone();
    for i in 0..gram.n() {
        reg[(i, i)] += lambda_reg;
    }
    let resid = (&reg * &gamma - &rhs).norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    if resid > 1e-8 * scale {
        return Err(KedrlError::numerical(format!(
            "ridge solve residual {resid:.3e} exceeds 1e-8 * ||rhs|| = {:.3e}",
            1e-8 * scale
        )));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(KedrlError::numerical("ridge solve produced non-finite weights"));
    }
    Ok(RidgeWeights { gamma, lambda_reg, query: query.to_vec() })
}

/// CME weights with the empirical convention: (K + n lambda_reg I) Gamma = k_vec.
pub fn cme_weights(gram: &GramMatrix, k_vec: &[f64], lambda_reg: f64, query: &[f64]) -> Result<RidgeWeights> {
    let n = gram.n().max(1) as f64;
    let mut w = ridge_weights(gram, k_vec, n * lambda_reg, query)?;
    w.lambda_reg = lambda_reg;
    Ok(w)
}

/// Evaluate the embedding sum_j Gamma_j k_Z(outputs_j, z) at each query point.
pub fn embed_eval(
    weights: &RidgeWeights,
    outputs: &DMatrix<f64>,
    query_points: &DMatrix<f64>,
    k_z: &MaternParams,
) -> Result<Vec<f64>> {
    if outputs.nrows() != weights.gamma.len() {
        return Err(KedrlError::invalid(format!(
            "outputs rows {} vs weight length {}",
            outputs.nrows(),
            weights.gamma.len()
        )));
    }
    let k = kernel::gram_cross(query_points, outputs, k_z)?;
    Ok((k * &weights.gamma).iter().copied().collect())
}

/// Squared MMD between two atom-weight vectors under the grid Gram:
/// (w_p - w_q)' K_Z (w_p - w_q), clamped at zero within -1e-12.
pub fn mmd_sq(omega_p: &[f64], omega_q: &[f64], k_grid: &GramMatrix) -> Result<f64> {
    let m = k_grid.n();
    if omega_p.len() != m || omega_q.len() != m {
        return Err(KedrlError::invalid(format!(
            "weight lengths {} / {} vs grid size {m}",
            omega_p.len(),
            omega_q.len()
        )));
    }
    let diff = DVector::from_iterator(m, omega_p.iter().zip(omega_q).map(|(a, b)| a - b));
    let val = (&diff.transpose() * &k_grid.entries * &diff)[(0, 0)];
    if val < -1e-12 {
        return Err(KedrlError::numerical(format!(
            "mmd_sq is {val:.3e} < -1e-12; grid Gram is not PSD"
        )));
    }
    Ok(val.max(0.0))
}
