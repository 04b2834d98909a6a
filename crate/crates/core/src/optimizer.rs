//! Minimize the penalized Bellman MMD objective over the coefficient
//! matrix B with adaptive-moment steps and decoupled weight decay.
//!
//! loss(B) = gamma_k^2(B' k, B' Phi) + lambda_fp ||B' (k - Phi)||^2
//!         + lambda_mass (1' B' k - 1)^2
//!
//! The gradient is analytic; the acceptance suite cross-checks it against
//! central finite differences entrywise.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bellman::gamma_sq;
use crate::error::{KedrlError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub weight_decay: f64,
    pub lambda_fp: f64,
    pub lambda_mass: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 2000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            weight_decay: 1e-4,
            lambda_fp: 100.0,
            lambda_mass: 10.0,
            tol: 0.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(KedrlError::invalid("optimizer steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(KedrlError::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(KedrlError::invalid(format!("{name} must be in (0,1)")));
            }
        }
        if !(self.epsilon_adam > 0.0) {
            return Err(KedrlError::invalid("epsilon_adam must be positive"));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_fp", self.lambda_fp),
            ("lambda_mass", self.lambda_mass),
            ("tol", self.tol),
        ] {
            if !(v >= 0.0) {
                return Err(KedrlError::invalid(format!("{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Per-step objective diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub objective: f64,
    pub gamma_sq: f64,
    pub fp_residual: f64,
    pub mass_residual: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
}

impl OptimizationTrace {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
        w.write_record(["step", "objective", "gamma_sq", "fp_residual", "mass_residual", "grad_norm"])
            .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        for (i, r) in self.records.iter().enumerate() {
            w.write_record([
                i.to_string(),
                format!("{:.17e}", r.objective),
                format!("{:.17e}", r.gamma_sq),
                format!("{:.17e}", r.fp_residual),
                format!("{:.17e}", r.mass_residual),
                format!("{:.17e}", r.grad_norm),
            ])
            .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        }
        w.flush().map_err(|e| KedrlError::io(path.display().to_string(), e))?;
        Ok(())
    }
}

/// Operator bundle the loss acts on.
pub struct LossInputs<'a> {
    pub k_vec: &'a [f64],
    pub phi: &'a [f64],
    pub k_z: &'a DMatrix<f64>,
    pub h: &'a DMatrix<f64>,
    pub g: &'a DMatrix<f64>,
}

fn shapes_ok(b: &DMatrix<f64>, inp: &LossInputs) -> Result<()> {
    let (n, m) = b.shape();
    if inp.k_vec.len() != n || inp.phi.len() != n {
        return Err(KedrlError::invalid(format!(
            "loss: B is {n}x{m} but k_vec/phi have lengths {}/{}",
            inp.k_vec.len(),
            inp.phi.len()
        )));
    }
    for (name, mat) in [("k_z", inp.k_z), ("h", inp.h), ("g", inp.g)] {
        if mat.nrows() != m || mat.ncols() != m {
            return Err(KedrlError::invalid(format!("loss: {name} must be {m}x{m}")));
        }
    }
    Ok(())
}

/// Objective value and its pieces: (loss, gamma_sq, fp, mass residual).
pub fn loss_parts(b: &DMatrix<f64>, inp: &LossInputs, cfg: &OptimizerConfig) -> Result<(f64, f64, f64, f64)> {
    shapes_ok(b, inp)?;
    let w = b.transpose() * DVector::from_column_slice(inp.k_vec);
    let wp = b.transpose() * DVector::from_column_slice(inp.phi);
    let gsq = gamma_sq(w.as_slice(), wp.as_slice(), inp.k_z, inp.h, inp.g)?;
    let fp = (&w - &wp).norm_squared();
    let mass = w.sum() - 1.0;
    Ok((gsq + cfg.lambda_fp * fp + cfg.lambda_mass * mass * mass, gsq, fp, mass))
}

pub fn loss(b: &DMatrix<f64>, inp: &LossInputs, cfg: &OptimizerConfig) -> Result<f64> {
    Ok(loss_parts(b, inp, cfg)?.0)
}

/// Analytic gradient dloss/dB.
pub fn loss_gradient(b: &DMatrix<f64>, inp: &LossInputs, cfg: &OptimizerConfig) -> Result<DMatrix<f64>> {
    shapes_ok(b, inp)?;
    let k = DVector::from_column_slice(inp.k_vec);
    let phi = DVector::from_column_slice(inp.phi);
    let w = b.transpose() * &k;
    let wp = b.transpose() * &phi;
    // d(w' K_Z w) = 2 k (K_Z w)'
    let mut grad = 2.0 * &k * (inp.k_z * &w).transpose();
    // d(-2 w' H wp) = -2 [k (H wp)' + phi (H' w)']
    grad -= 2.0 * (&k * (inp.h * &wp).transpose() + &phi * (inp.h.transpose() * &w).transpose());
    // d(wp' G wp) = 2 phi (G wp)'
    grad += 2.0 * &phi * (inp.g * &wp).transpose();
    // fixed-point penalty: u u' B with u = k - phi
    let u = &k - &phi;
    grad += 2.0 * cfg.lambda_fp * &u * (u.transpose() * b);
    // mass anchor
    let mass = w.sum() - 1.0;
    grad += 2.0 * cfg.lambda_mass * mass * &k * nalgebra::RowDVector::from_element(b.ncols(), 1.0);
    Ok(grad)
}

/// Uniform(-1/sqrt(nm), 1/sqrt(nm)) initialization under the config seed.
pub fn init_coefficients(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / ((n * m) as f64).sqrt();
    DMatrix::from_fn(n, m, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

/// Adam with bias correction plus decoupled weight decay; stops at `steps`
/// or when the gradient norm drops below `tol`. Aborts on non-finite values.
pub fn optimize(
    b_init: &DMatrix<f64>,
    inp: &LossInputs,
    cfg: &OptimizerConfig,
) -> Result<(DMatrix<f64>, OptimizationTrace)> {
    cfg.validate()?;
    shapes_ok(b_init, inp)?;
    let (n, m) = b_init.shape();
    let mut b = b_init.clone();
    let mut mom: DMatrix<f64> = DMatrix::zeros(n, m);
    let mut vel: DMatrix<f64> = DMatrix::zeros(n, m);
    let mut trace = OptimizationTrace::default();
    for t in 1..=cfg.steps {
        let grad = loss_gradient(&b, inp, cfg)?;
        let (obj, gsq, fp, mass) = loss_parts(&b, inp, cfg)?;
        let gnorm = grad.norm();
        if !obj.is_finite() || !gnorm.is_finite() {
            let tail: Vec<String> = trace
                .records
                .iter()
                .rev()
                .take(3)
                .map(|r| format!("(obj {:.3e}, grad {:.3e})", r.objective, r.grad_norm))
                .collect();
            return Err(KedrlError::numerical(format!(
                "optimization diverged at step {t}: objective {obj}, grad norm {gnorm}; trailing trace: {}",
                tail.join(" <- ")
            )));
        }
        trace.records.push(TraceRecord {
            objective: obj,
            gamma_sq: gsq,
            fp_residual: fp,
            mass_residual: mass,
            grad_norm: gnorm,
        });
        if cfg.tol > 0.0 && gnorm < cfg.tol {
            break;
        }
        mom = &mom * cfg.beta1 + &grad * (1.0 - cfg.beta1);
        vel.zip_apply(&grad, |v, g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for i in 0..n {
            for j in 0..m {
                let mh = mom[(i, j)] / bc1;
                let vh = vel[(i, j)] / bc2;
                b[(i, j)] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon_adam);
            }
        }
        // decoupled shrinkage
        b *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    }
    Ok((b, trace))
}
