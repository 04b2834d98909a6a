//! Held-out empirical risk, embedding-accuracy metrics against a
//! Monte-Carlo reference, replicate aggregation, and the exact discrete
//! distance helpers used for verification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman::EmbeddingModel;
use crate::error::{KedrlError, Result};
use crate::kernel::{self, MaternParams};

/// Metrics for one fitted model against one reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointReport {
    pub bias: f64,
    pub rmse: f64,
    pub mae: f64,
    pub residuals: Vec<f64>,
    pub heldout_risk: Option<f64>,
    pub recovered_mass: Option<f64>,
}

/// Aggregate over replicates: per-metric mean and standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OPEReport {
    pub replicates: usize,
    pub bias_mean: f64,
    pub bias_sd: f64,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub mae_mean: f64,
    pub mae_sd: f64,
    pub heldout_risk_mean: Option<f64>,
    pub heldout_risk_sd: Option<f64>,
    pub per_replicate: Vec<PointReport>,
    /// configuration echo for exact reruns
    pub config: serde_json::Value,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate per-replicate reports; the aggregates equal direct
/// recomputation from the stored per-replicate values.
pub fn aggregate(per_replicate: Vec<PointReport>, config: serde_json::Value) -> Result<OPEReport> {
    if per_replicate.is_empty() {
        return Err(KedrlError::invalid("aggregate: no replicates"));
    }
    let grab = |f: fn(&PointReport) -> f64| -> Vec<f64> { per_replicate.iter().map(f).collect() };
    let (bias_mean, bias_sd) = mean_sd(&grab(|r| r.bias));
    let (rmse_mean, rmse_sd) = mean_sd(&grab(|r| r.rmse));
    let (mae_mean, mae_sd) = mean_sd(&grab(|r| r.mae));
    let risks: Vec<f64> = per_replicate.iter().filter_map(|r| r.heldout_risk).collect();
    let (risk_mean, risk_sd) = if risks.len() == per_replicate.len() {
        let (m, s) = mean_sd(&risks);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(OPEReport {
        replicates: per_replicate.len(),
        bias_mean,
        bias_sd,
        rmse_mean,
        rmse_sd,
        mae_mean,
        mae_sd,
        heldout_risk_mean: risk_mean,
        heldout_risk_sd: risk_sd,
        per_replicate,
        config,
    })
}

/// Regular evaluation grid over the reference-sample bounding box expanded
/// by 10%, `points_per_dim` per coordinate.
pub fn eval_grid(reference: &DMatrix<f64>, points_per_dim: usize) -> Result<DMatrix<f64>> {
    let d = reference.ncols();
    if reference.nrows() == 0 || d == 0 {
        return Err(KedrlError::invalid("eval_grid: empty reference"));
    }
    if points_per_dim < 2 {
        return Err(KedrlError::invalid("eval_grid: need at least 2 points per dimension"));
    }
    let total = points_per_dim.pow(d as u32);
    if total > 2_000_000 {
        return Err(KedrlError::invalid(format!(
            "eval_grid: {points_per_dim}^{d} points is too many; lower points_per_dim"
        )));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..reference.nrows() {
        for c in 0..d {
            lo[c] = lo[c].min(reference[(i, c)]);
            hi[c] = hi[c].max(reference[(i, c)]);
        }
    }
    for c in 0..d {
        let pad = 0.1 * (hi[c] - lo[c]);
        lo[c] -= pad;
        hi[c] += pad;
    }
    let mut out = DMatrix::zeros(total, d);
    for idx in 0..total {
        let mut rem = idx;
        for c in (0..d).rev() {
            let k = rem % points_per_dim;
            rem /= points_per_dim;
            out[(idx, c)] = lo[c] + (hi[c] - lo[c]) * k as f64 / (points_per_dim - 1) as f64;
        }
    }
    Ok(out)
}

/// Reference embedding values (1/N) sum_i k_Z(sample_i, z) at each point.
pub fn reference_embedding(samples: &DMatrix<f64>, points: &DMatrix<f64>, k_z: &MaternParams) -> Result<Vec<f64>> {
    let k = kernel::gram_cross(points, samples, k_z)?;
    let n = samples.nrows() as f64;
    Ok((0..points.nrows()).map(|i| k.row(i).sum() / n).collect())
}

/// Residuals of the fitted embedding against precomputed reference values.
pub fn embedding_error_with_reference(
    model: &EmbeddingModel,
    omega_v: &[f64],
    eval_points: &DMatrix<f64>,
    reference_values: &[f64],
) -> Result<PointReport> {
    if eval_points.nrows() == 0 {
        return Err(KedrlError::invalid("embedding_error: empty evaluation grid"));
    }
    if reference_values.len() != eval_points.nrows() {
        return Err(KedrlError::invalid("embedding_error: reference length mismatch"));
    }
    let fitted = model.embedding_values(omega_v, eval_points)?;
    let residuals: Vec<f64> = fitted.iter().zip(reference_values).map(|(a, b)| a - b).collect();
    let n = residuals.len() as f64;
    let bias = residuals.iter().sum::<f64>() / n;
    let rmse = (residuals.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mae = residuals.iter().map(|e| e.abs()).sum::<f64>() / n;
    Ok(PointReport { bias, rmse, mae, residuals, heldout_risk: None, recovered_mass: None })
}

/// Bias / RMSE / MAE of the fitted embedding at `query` against the
/// Monte-Carlo sample reference, over `eval_points`.
pub fn embedding_error(
    model: &EmbeddingModel,
    mc_samples: &DMatrix<f64>,
    eval_points: &DMatrix<f64>,
    query: &[f64],
) -> Result<PointReport> {
    let omega = model.omega(query)?;
    let reference = reference_embedding(mc_samples, eval_points, &model.k_z_params)?;
    embedding_error_with_reference(model, &omega, eval_points, &reference)
}

/// Held-out empirical risk of the model on (input, realized-return) pairs:
/// mean of k(z_j, z_j) - 2 w_j' k_Z(grid, z_j) + w_j' K_Z w_j with
/// w_j = B' ktilde(x_j).
pub fn heldout_risk(model: &EmbeddingModel, inputs: &DMatrix<f64>, returns: &DMatrix<f64>) -> Result<f64> {
    let m_pts = inputs.nrows();
    if m_pts == 0 {
        return Err(KedrlError::invalid("heldout_risk: empty test set"));
    }
    if returns.nrows() != m_pts {
        return Err(KedrlError::invalid("heldout_risk: inputs and returns must align"));
    }
    let kq = kernel::gram_cross(inputs, &model.training_inputs, &model.k_x_params)?; // M x n
    let w = kq * &model.coefficients; // M x m
    let kv = kernel::gram_cross(returns, &model.grid_atoms, &model.k_z_params)?; // M x m
    let k_z = kernel::gram(&model.grid_atoms, &model.k_z_params)?;
    let self_k = model.k_z_params.variance;
    let mut acc = 0.0;
    for j in 0..m_pts {
        let wj = w.row(j).transpose();
        let cross: f64 = kv.row(j).iter().zip(wj.iter()).map(|(a, b)| a * b).sum();
        let quad = (wj.transpose() * &k_z.entries * &wj)[(0, 0)];
        let point = self_k - 2.0 * cross + quad;
        // squared RKHS distance; tiny negatives are rounding, larger ones
        // signal a broken grid Gram
        if point < -1e-12 * self_k.max(1.0) {
            return Err(KedrlError::numerical(format!(
                "heldout_risk: negative squared distance {point:.3e} at test point {j}"
            )));
        }
        acc += point.max(0.0);
    }
    Ok(acc / m_pts as f64)
}

/// Exact 1-D Wasserstein-1 between empirical distributions by the sorted
/// quantile formula; unequal lengths are compared on a common mid-quantile
/// grid of the larger size.
pub fn w1_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(KedrlError::invalid("w1_1d: empty input"));
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if a.len() == b.len() {
        let n = a.len() as f64;
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }
    let n = a.len().max(b.len());
    let quantile = |s: &[f64], u: f64| -> f64 {
        let idx = (u * s.len() as f64 - 0.5).clamp(0.0, (s.len() - 1) as f64);
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let frac = idx - lo as f64;
        s[lo] * (1.0 - frac) + s[hi] * frac
    };
    let mut acc = 0.0;
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        acc += (quantile(&a, u) - quantile(&b, u)).abs();
    }
    Ok(acc / n as f64)
}

/// Exact biased two-sample MMD (not squared) by double sums.
pub fn mmd_biased(a: &DMatrix<f64>, b: &DMatrix<f64>, params: &MaternParams) -> Result<f64> {
    let kaa = kernel::gram(a, params)?.entries.sum() / (a.nrows() * a.nrows()) as f64;
    let kbb = kernel::gram(b, params)?.entries.sum() / (b.nrows() * b.nrows()) as f64;
    let kab = kernel::gram_cross(a, b, params)?.sum() / (a.nrows() * b.nrows()) as f64;
    Ok((kaa + kbb - 2.0 * kab).max(0.0).sqrt())
}

/// Exact MMD between weighted discrete distributions on given atom sets.
pub fn mmd_discrete(
    atoms_a: &DMatrix<f64>,
    weights_a: &[f64],
    atoms_b: &DMatrix<f64>,
    weights_b: &[f64],
    params: &MaternParams,
) -> Result<f64> {
    if atoms_a.nrows() != weights_a.len() || atoms_b.nrows() != weights_b.len() {
        return Err(KedrlError::invalid("mmd_discrete: atom/weight length mismatch"));
    }
    let wa = DVector::from_column_slice(weights_a);
    let wb = DVector::from_column_slice(weights_b);
    let kaa = kernel::gram(atoms_a, params)?.entries;
    let kbb = kernel::gram(atoms_b, params)?.entries;
    let kab = kernel::gram_cross(atoms_a, atoms_b, params)?;
    let val = (wa.transpose() * kaa * &wa)[(0, 0)] + (wb.transpose() * kbb * &wb)[(0, 0)]
        - 2.0 * (wa.transpose() * kab * &wb)[(0, 0)];
    Ok(val.max(0.0).sqrt())
}
