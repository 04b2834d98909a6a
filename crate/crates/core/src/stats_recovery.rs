//! Distributional statistics from a fitted embedding via RKHS test
//! functions: E[g(Z)] is read off as sum_i omega_i g(z_i).
//!
//! Raw moments and hard indicators are not representable in the Matérn
//! RKHS and are rejected by name; the Tikhonov proxy offers a regularized
//! substitute for such functionals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cme::RidgeFactor;
use crate::error::{KedrlError, Result};
use crate::kernel::{self, GramMatrix, MaternParams};
use crate::return_grid::ReturnGrid;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// RKHS-representable test functions for statistic recovery.
///
/// Multivariate thresholds apply per coordinate and multiply
/// (product-of-coordinates surrogate).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// g(z) = k_Z(z, center)
    KernelDensity { center: Vec<f64>, params: MaternParams },
    /// g(z) = prod_c Phi((t_c - z_c) / h)
    SmoothCdf { threshold: Vec<f64>, bandwidth: f64 },
    /// g(z) = prod_c sigma((t_c - z_c) / h)
    TailSigmoid { threshold: Vec<f64>, bandwidth: f64 },
    /// g(z) = tanh(a' z)
    TanhUtility { direction: Vec<f64> },
    /// g(z) = sigma(a' z)
    SigmoidUtility { direction: Vec<f64> },
    /// g(z) = z_c^order exp(-alpha z_c^2), order in {1, 2}
    SmoothedMoment { coordinate: usize, order: u8, alpha: f64 },
    /// g(z) = 1 (recovered total mass)
    Mass,
}

impl TestFunction {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_dim = |v: &Vec<f64>, name: &str| {
            if v.len() != dim {
                Err(KedrlError::invalid(format!("{name} must have length {dim}, got {}", v.len())))
            } else {
                Ok(())
            }
        };
        match self {
            TestFunction::KernelDensity { center, params } => {
                params.validate()?;
                check_dim(center, "kernel_density center")
            }
            TestFunction::SmoothCdf { threshold, bandwidth } | TestFunction::TailSigmoid { threshold, bandwidth } => {
                if !(bandwidth > &0.0) {
                    return Err(KedrlError::invalid("bandwidth must be positive"));
                }
                check_dim(threshold, "threshold")
            }
            TestFunction::TanhUtility { direction } | TestFunction::SigmoidUtility { direction } => {
                check_dim(direction, "direction")
            }
            TestFunction::SmoothedMoment { coordinate, order, alpha } => {
                if *coordinate >= dim {
                    return Err(KedrlError::invalid(format!("coordinate {coordinate} out of range for dim {dim}")));
                }
                if !(1..=2).contains(order) {
                    return Err(KedrlError::invalid("smoothed moment order must be 1 or 2"));
                }
                if !(alpha > &0.0) {
                    return Err(KedrlError::invalid("smoothed moment alpha must be positive"));
                }
                Ok(())
            }
            TestFunction::Mass => Ok(()),
        }
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        match self {
            TestFunction::KernelDensity { center, params } => {
                let d: f64 = z.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                kernel::matern_eval(d, params).unwrap_or(f64::NAN)
            }
            TestFunction::SmoothCdf { threshold, bandwidth } => z
                .iter()
                .zip(threshold)
                .map(|(zc, tc)| normal_cdf((tc - zc) / bandwidth))
                .product(),
            TestFunction::TailSigmoid { threshold, bandwidth } => z
                .iter()
                .zip(threshold)
                .map(|(zc, tc)| sigmoid((tc - zc) / bandwidth))
                .product(),
            TestFunction::TanhUtility { direction } => {
                z.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>().tanh()
            }
            TestFunction::SigmoidUtility { direction } => sigmoid(z.iter().zip(direction).map(|(a, b)| a * b).sum()),
            TestFunction::SmoothedMoment { coordinate, order, alpha } => {
                let v = z[*coordinate];
                let damp = (-alpha * v * v).exp();
                if *order == 1 {
                    v * damp
                } else {
                    v * v * damp
                }
            }
            TestFunction::Mass => 1.0,
        }
    }

    /// Functionals outside the RKHS are rejected by name so callers get the
    /// reason rather than a silent bad estimate.
    pub fn reject_unsupported(kind: &str) -> Option<KedrlError> {
        const OUTSIDE: &[&str] = &["raw_moment", "indicator", "exact_cdf", "absolute_value", "truncated"];
        if OUTSIDE.contains(&kind) {
            Some(KedrlError::invalid(format!(
                "statistic {kind:?} is not representable in the Matérn RKHS \
                 (unsmoothed moments, indicators and truncations are excluded); \
                 use a smoothed variant or the Tikhonov proxy"
            )))
        } else {
            None
        }
    }
}

/// E[g(Z)] ~ sum_i omega_i g(z_i) for an arbitrary evaluator.
pub fn recover_fn(omega_v: &[f64], grid: &ReturnGrid, g: impl Fn(&[f64]) -> f64) -> Result<f64> {
    if omega_v.len() != grid.m() {
        return Err(KedrlError::invalid(format!(
            "recover: omega length {} vs atom count {}",
            omega_v.len(),
            grid.m()
        )));
    }
    let mut acc = 0.0;
    for i in 0..grid.m() {
        acc += omega_v[i] * g(&grid.atom(i));
    }
    Ok(acc)
}

/// E[g(Z)] for a named test function.
pub fn recover(omega_v: &[f64], grid: &ReturnGrid, g: &TestFunction) -> Result<f64> {
    g.validate(grid.dim())?;
    recover_fn(omega_v, grid, |z| g.evaluate(z))
}

/// Smooth CDF curve along one coordinate: raw values and the
/// isotonized-and-clipped curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdfCurve {
    pub thresholds: Vec<f64>,
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
}

/// Evaluate the smoothed CDF surrogate of coordinate `coordinate` at each
/// threshold; `clipped` is monotone nondecreasing inside [0, 1].
pub fn smooth_cdf_curve(
    omega_v: &[f64],
    grid: &ReturnGrid,
    coordinate: usize,
    thresholds: &[f64],
    bandwidth: f64,
) -> Result<CdfCurve> {
    if coordinate >= grid.dim() {
        return Err(KedrlError::invalid(format!(
            "smooth_cdf_curve: coordinate {coordinate} out of range for dim {}",
            grid.dim()
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(KedrlError::invalid("smooth_cdf_curve: bandwidth must be positive"));
    }
    let mut raw = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let v = recover_fn(omega_v, grid, |z| normal_cdf((t - z[coordinate]) / bandwidth))?;
        raw.push(v);
    }
    let mut clipped = Vec::with_capacity(raw.len());
    let mut running = 0.0f64;
    for &v in &raw {
        running = running.max(v).clamp(0.0, 1.0);
        clipped.push(running);
    }
    Ok(CdfCurve { thresholds: thresholds.to_vec(), raw, clipped })
}

/// Default CDF bandwidth: 0.25 times the grid's coordinate range.
pub fn default_bandwidth(grid: &ReturnGrid, coordinate: usize) -> f64 {
    let col = grid.atoms.column(coordinate);
    let lo = col.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    (0.25 * (hi - lo)).max(1e-12)
}

/// Tikhonov proxy for a functional given by its values at the atoms:
/// c = (K_Z + m lambda_t I)^{-1} g, with proxy expectation c' K_Z omega.
pub fn tikhonov_proxy(g_values: &[f64], k_z: &GramMatrix, lambda_t: f64) -> Result<DVector<f64>> {
    if !(lambda_t > 0.0) {
        return Err(KedrlError::invalid("tikhonov_proxy: lambda_t must be positive"));
    }
    let m = k_z.n();
    if g_values.len() != m {
        return Err(KedrlError::invalid(format!(
            "tikhonov_proxy: {} values vs {m} atoms",
            g_values.len()
        )));
    }
    let factor = RidgeFactor::new(k_z, m as f64 * lambda_t)?;
    factor.solve(&DVector::from_column_slice(g_values))
}

/// Proxy expectation c' K_Z omega for coefficients from [`tikhonov_proxy`].
pub fn tikhonov_expectation(coeffs: &DVector<f64>, k_z: &GramMatrix, omega_v: &[f64]) -> Result<f64> {
    if coeffs.len() != k_z.n() || omega_v.len() != k_z.n() {
        return Err(KedrlError::invalid("tikhonov_expectation: shape mismatch"));
    }
    let w = DVector::from_column_slice(omega_v);
    Ok((coeffs.transpose() * &k_z.entries * w)[(0, 0)])
}

/// Smoothed CVaR-type spectral risk along one coordinate:
/// integral over u in (0,1) of weight(u) * E[Phi((q_u - Z_c)/h)] du,
/// taken with a 64-point uniform quadrature and q_u from the clipped
/// smoothed CDF curve itself.
pub fn smoothed_cvar(
    omega_v: &[f64],
    grid: &ReturnGrid,
    coordinate: usize,
    weight: impl Fn(f64) -> f64,
    bandwidth: f64,
) -> Result<f64> {
    let col = grid.atoms.column(coordinate);
    let lo = col.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 4.0 * bandwidth;
    let hi = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + 4.0 * bandwidth;
    let n_t = 257;
    let ts: Vec<f64> = (0..n_t).map(|i| lo + (hi - lo) * i as f64 / (n_t - 1) as f64).collect();
    let curve = smooth_cdf_curve(omega_v, grid, coordinate, &ts, bandwidth)?;
    let quantile = |u: f64| -> f64 {
        match curve.clipped.iter().position(|&v| v >= u) {
            Some(i) => curve.thresholds[i],
            None => hi,
        }
    };
    let n_q = 64;
    let mut acc = 0.0;
    for k in 0..n_q {
        let u = (k as f64 + 0.5) / n_q as f64;
        let qu = quantile(u);
        let term = recover_fn(omega_v, grid, |z| normal_cdf((qu - z[coordinate]) / bandwidth))?;
        acc += weight(u) * term;
    }
    Ok(acc / n_q as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn grid_1d(atoms: &[f64]) -> ReturnGrid {
        ReturnGrid {
            atoms: DMatrix::from_fn(atoms.len(), 1, |i, _| atoms[i]),
            k_clusters: atoms.len(),
            expansion_factor: 1.0,
            source_count: atoms.len(),
        }
    }

    #[test]
    fn mass_and_cdf_examples() {
        let grid = grid_1d(&[0.0, 1.0, 2.0, 3.0]);
        let uniform = vec![0.25; 4];
        assert!((recover(&uniform, &grid, &TestFunction::Mass).unwrap() - 1.0).abs() < 1e-15);
        // one-hot weights: smooth cdf equals Phi((t - z_j)/h)
        let onehot = vec![0.0, 1.0, 0.0, 0.0];
        let g = TestFunction::SmoothCdf { threshold: vec![1.5], bandwidth: 0.5 };
        let v = recover(&onehot, &grid, &g).unwrap();
        assert!((v - normal_cdf(1.0)).abs() < 1e-14);
        // single atom at 0, t = 0: one half
        let g0 = grid_1d(&[0.0]);
        let v = recover(&[1.0], &g0, &TestFunction::SmoothCdf { threshold: vec![0.0], bandwidth: 1.0 }).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn curve_limits_and_monotone_clip() {
        let grid = grid_1d(&[-1.0, 0.0, 1.0]);
        let w = [0.5, 0.3, 0.2];
        let c = smooth_cdf_curve(&w, &grid, 0, &[-50.0, -0.5, 0.5, 50.0], 0.5).unwrap();
        assert!(c.raw[0].abs() < 1e-12);
        assert!((c.raw[3] - 1.0).abs() < 1e-12); // mass = 1 here
        for pair in c.clipped.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!(c.clipped.iter().all(|v| (0.0..=1.0).contains(v)));
        // negative weights can push raw outside [0,1]; clipped must not follow
        let w = [1.4, -0.6, 0.2];
        let c = smooth_cdf_curve(&w, &grid, 0, &[-0.9, -0.2, 0.3, 50.0], 0.3).unwrap();
        for pair in c.clipped.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!(c.clipped.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn linearity_in_omega_and_g() {
        let grid = grid_1d(&[0.0, 0.7, 1.3]);
        let g1 = TestFunction::TanhUtility { direction: vec![1.0] };
        let g2 = TestFunction::SigmoidUtility { direction: vec![-0.5] };
        let w1 = [0.2, 0.5, 0.3];
        let w2 = [0.1, -0.4, 0.6];
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let lhs = recover(&sum, &grid, &g1).unwrap();
        let rhs = recover(&w1, &grid, &g1).unwrap() + recover(&w2, &grid, &g1).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
        let combo = recover_fn(&w1, &grid, |z| g1.evaluate(z) + 2.0 * g2.evaluate(z)).unwrap();
        let separate = recover(&w1, &grid, &g1).unwrap() + 2.0 * recover(&w1, &grid, &g2).unwrap();
        assert!((combo - separate).abs() < 1e-14);
    }

    #[test]
    fn tikhonov_examples() {
        let grid = grid_1d(&[0.0, 0.5, 1.1]);
        let params = MaternParams::new(2.5, 1.0, 1.0).unwrap();
        let kz = kernel::gram(&grid.atoms, &params).unwrap();
        // zero functional -> zero coefficients
        let c = tikhonov_proxy(&[0.0; 3], &kz, 1e-2).unwrap();
        assert!(c.iter().all(|v| *v == 0.0));
        // dense-solve oracle
        let gvals = [0.3, -0.1, 0.8];
        let lam = 5e-2;
        let c = tikhonov_proxy(&gvals, &kz, lam).unwrap();
        let mut reg = kz.entries.clone();
        for i in 0..3 {
            reg[(i, i)] += 3.0 * lam;
        }
        let oracle = reg.lu().solve(&DVector::from_column_slice(&gvals)).unwrap();
        for i in 0..3 {
            assert!((c[i] - oracle[i]).abs() < 1e-10);
        }
        // over-regularization drives coefficients to zero, norm non-increasing
        let mut prev = f64::INFINITY;
        for lam in [1e-3, 1e-1, 10.0, 1e4] {
            let c = tikhonov_proxy(&gvals, &kz, lam).unwrap();
            let nrm = c.norm();
            assert!(nrm <= prev + 1e-12);
            prev = nrm;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn unsupported_kinds_are_rejected() {
        assert!(TestFunction::reject_unsupported("raw_moment").is_some());
        assert!(TestFunction::reject_unsupported("indicator").is_some());
        assert!(TestFunction::reject_unsupported("smooth_cdf").is_none());
        let msg = TestFunction::reject_unsupported("raw_moment").unwrap().to_string();
        assert!(msg.contains("not representable"));
    }

    #[test]
    fn smoothed_cvar_runs() {
        let grid = grid_1d(&[-1.0, -0.2, 0.5, 1.4]);
        let w = [0.25; 4];
        // uniform spectral weight recovers roughly the mean smoothed CDF level
        let v = smoothed_cvar(&w, &grid, 0, |_| 1.0, 0.3).unwrap();
        assert!(v.is_finite() && v > 0.0 && v < 1.0);
    }
}
