//! uLSIF estimation of the importance ratio eta(s,a) = pi(a|s) / beta(a|s)
//! in the Matérn RKHS.
//!
//! V = K_bb K_bb' / n_beta and v = K_bp 1 / n_pi; alpha solves
//! (V + lambda I) alpha = v by Cholesky. Evaluations are clipped at zero
//! since the unconstrained least-squares fit can go negative.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cme::RidgeFactor;
use crate::error::{KedrlError, Result};
use crate::kernel::{self, GramMatrix, MaternParams};

/// Fitted ratio model: eta(x) = max(0, sum_j alpha_j k(center_j, x)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioModel {
    pub alpha: Vec<f64>,
    #[serde(with = "crate::bellman::serde_matrix")]
    pub centers: DMatrix<f64>,
    pub params: MaternParams,
    pub lambda_ulsif: f64,
}

/// Fit uLSIF from behavior samples (centers) and target samples.
pub fn fit_ulsif(
    x_beta: &DMatrix<f64>,
    x_pi: &DMatrix<f64>,
    params: &MaternParams,
    lambda_ulsif: f64,
) -> Result<RatioModel> {
    if x_beta.nrows() == 0 || x_pi.nrows() == 0 {
        return Err(KedrlError::invalid("fit_ulsif: empty sample set"));
    }
    if x_beta.ncols() != x_pi.ncols() {
        return Err(KedrlError::invalid(format!(
            "fit_ulsif: dimension mismatch {} vs {}",
            x_beta.ncols(),
            x_pi.ncols()
        )));
    }
    if lambda_ulsif <= 0.0 {
        return Err(KedrlError::invalid(format!("lambda_ulsif must be positive, got {lambda_ulsif}")));
    }
    let n_b = x_beta.nrows();
    let n_p = x_pi.nrows();
    let k_bb = kernel::gram(x_beta, params)?;
    let k_bp = kernel::gram_cross(x_beta, x_pi, params)?;
    let v_mat = (&k_bb.entries * k_bb.entries.transpose()) / n_b as f64;
    let v_vec = (&k_bp * DVector::from_element(n_p, 1.0)) / n_p as f64;
    let factor = RidgeFactor::new(&GramMatrix { entries: v_mat.clone(), params: *params }, lambda_ulsif)?;
    let alpha = factor.solve(&v_vec)?;
    let mut reg = v_mat;
    for i in 0..n_b {
        reg[(i, i)] += lambda_ulsif;
    }
    let resid = (&reg * &alpha - &v_vec).norm();
    if resid > 1e-8 * v_vec.norm().max(f64::MIN_POSITIVE) {
        return Err(KedrlError::numerical(format!("ulsif solve residual {resid:.3e} too large")));
    }
    Ok(RatioModel {
        alpha: alpha.iter().copied().collect(),
        centers: x_beta.clone(),
        params: *params,
        lambda_ulsif,
    })
}

/// Clipped ratio estimate at one query point.
pub fn eval_ratio(model: &RatioModel, query: &[f64]) -> Result<f64> {
    if query.len() != model.centers.ncols() {
        return Err(KedrlError::invalid(format!(
            "eval_ratio: query dim {} vs centers dim {}",
            query.len(),
            model.centers.ncols()
        )));
    }
    let kv = kernel::kernel_vector(&model.centers, query, &model.params)?;
    let raw: f64 = kv.iter().zip(&model.alpha).map(|(k, a)| k * a).sum();
    Ok(raw.max(0.0))
}

/// Unclipped ratio values at every row of `queries`; the Bellman weight
/// assembly consumes these directly.
pub fn eval_ratio_raw_many(model: &RatioModel, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = kernel::gram_cross(queries, &model.centers, &model.params)?;
    let alpha = DVector::from_column_slice(&model.alpha);
    Ok((k * alpha).iter().copied().collect())
}

impl RatioModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("ratio model serializes");
        std::fs::write(path, body).map_err(|e| KedrlError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KedrlError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))
    }
}
