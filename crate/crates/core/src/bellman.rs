//! Matrix objects of the Bellman MMD objective: H(s,a), G(s,a), Phi(s,a),
//! the atom-weight maps omega and omega^pi, and the squared discrepancy
//! gamma_k^2.
//!
//! Assembly costs are exact, with no approximation: H is O(m^2 n) kernel
//! evaluations and G is O(m^2 n^2 / 2), parallelized over atom pairs. The
//! per-atom shifted reward clouds (gamma z_i + r_l) are precomputed once,
//! which is the only memory beyond the outputs.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cme::RidgeWeights;
use crate::error::{KedrlError, Result};
use crate::kernel::{self, matern_eval_unchecked, GramMatrix, MaternParams};
use crate::return_grid::ReturnGrid;

/// Serialize a DMatrix as {rows, cols, row-major data}.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Flat {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        Flat { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let f = Flat::deserialize(d)?;
        if f.data.len() != f.rows * f.cols {
            return Err(serde::de::Error::custom("matrix payload size mismatch"));
        }
        Ok(DMatrix::from_fn(f.rows, f.cols, |i, j| f.data[i * f.cols + j]))
    }
}

/// The fitted embedding: mu_hat(s,a) = sum_i (B' ktilde(s,a))_i k_Z(z_i, .).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingModel {
    #[serde(with = "serde_matrix")]
    pub coefficients: DMatrix<f64>, // n x m
    #[serde(with = "serde_matrix")]
    pub grid_atoms: DMatrix<f64>, // m x d
    pub grid_k_clusters: usize,
    pub grid_expansion_factor: f64,
    pub grid_source_count: usize,
    pub k_z_params: MaternParams,
    pub k_x_params: MaternParams,
    pub lambda_reg: f64,
    pub gamma_discount: f64,
    #[serde(with = "serde_matrix")]
    pub training_inputs: DMatrix<f64>, // n x (p+q)
}

impl EmbeddingModel {
    pub fn n(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn m(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn grid(&self) -> ReturnGrid {
        ReturnGrid {
            atoms: self.grid_atoms.clone(),
            k_clusters: self.grid_k_clusters,
            expansion_factor: self.grid_expansion_factor,
            source_count: self.grid_source_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.iter().any(|v| !v.is_finite()) {
            return Err(KedrlError::numerical("embedding model has non-finite coefficients"));
        }
        if self.coefficients.ncols() != self.grid_atoms.nrows() {
            return Err(KedrlError::invalid("coefficient columns must match grid atom count"));
        }
        if self.coefficients.nrows() != self.training_inputs.nrows() {
            return Err(KedrlError::invalid("coefficient rows must match training input count"));
        }
        self.k_z_params.validate()?;
        self.k_x_params.validate()?;
        Ok(())
    }

    /// Atom weights at a query: omega(s,a) = B' ktilde_X(s,a).
    pub fn omega(&self, query: &[f64]) -> Result<Vec<f64>> {
        let kv = kernel::kernel_vector(&self.training_inputs, query, &self.k_x_params)?;
        Ok(weights_times_vector(&self.coefficients, &kv))
    }

    /// Evaluate the fitted embedding at return-space points.
    pub fn embedding_values(&self, omega_v: &[f64], points: &DMatrix<f64>) -> Result<Vec<f64>> {
        if omega_v.len() != self.m() {
            return Err(KedrlError::invalid("omega length must match atom count"));
        }
        let k = kernel::gram_cross(points, &self.grid_atoms, &self.k_z_params)?;
        let w = DVector::from_column_slice(omega_v);
        Ok((k * w).iter().copied().collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path, body).map_err(|e| KedrlError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KedrlError::io(path.display().to_string(), e))?;
        let model: EmbeddingModel =
            serde_json::from_str(&text).map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

/// B' v for an n-vector v.
pub(crate) fn weights_times_vector(b: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let vv = DVector::from_column_slice(v);
    (b.transpose() * vv).iter().copied().collect()
}

/// Operators assembled at one evaluation pair.
#[derive(Debug, Clone)]
pub struct BellmanOperators {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub gamma_vec: RidgeWeights,
    pub query: Vec<f64>,
}

fn reward_rows(rewards: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..rewards.nrows()).map(|i| rewards.row(i).iter().copied().collect()).collect()
}

/// H[i][j] = sum_l Gamma_l k_Z(r_l, z_i - gamma z_j).
pub fn compute_h(
    gamma_vec: &RidgeWeights,
    grid: &ReturnGrid,
    rewards: &DMatrix<f64>,
    discount: f64,
    k_z: &MaternParams,
) -> Result<DMatrix<f64>> {
    let n = rewards.nrows();
    if gamma_vec.gamma.len() != n {
        return Err(KedrlError::invalid("compute_h: weight length must match reward count"));
    }
    if grid.dim() != rewards.ncols() {
        return Err(KedrlError::invalid("compute_h: grid and reward dimensions differ"));
    }
    let m = grid.m();
    let d = grid.dim();
    let r = reward_rows(rewards);
    let g = &gamma_vec.gamma;
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; m];
            let zi = grid.atom(i);
            for (j, slot) in row.iter_mut().enumerate() {
                let mut target = vec![0.0; d];
                for c in 0..d {
                    target[c] = zi[c] - discount * grid.atoms[(j, c)];
                }
                let mut acc = 0.0;
                for (l, rl) in r.iter().enumerate() {
                    let mut s = 0.0;
                    for c in 0..d {
                        let t = rl[c] - target[c];
                        s += t * t;
                    }
                    acc += g[l] * matern_eval_unchecked(s.sqrt(), k_z);
                }
                *slot = acc;
            }
            row
        })
        .collect();
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// G[i][j] = sum_{l,l'} Gamma_l Gamma_l' k_Z(gamma z_i + r_l, gamma z_j + r_l');
/// symmetric by construction (upper triangle computed once and mirrored).
pub fn compute_g(
    gamma_vec: &RidgeWeights,
    grid: &ReturnGrid,
    rewards: &DMatrix<f64>,
    discount: f64,
    k_z: &MaternParams,
) -> Result<DMatrix<f64>> {
    let n = rewards.nrows();
    if gamma_vec.gamma.len() != n {
        return Err(KedrlError::invalid("compute_g: weight length must match reward count"));
    }
    if grid.dim() != rewards.ncols() {
        return Err(KedrlError::invalid("compute_g: grid and reward dimensions differ"));
    }
    let m = grid.m();
    let d = grid.dim();
    let g = &gamma_vec.gamma;
    // shifted clouds: row-major flat n x d per atom
    let shifted: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let zi = grid.atom(i);
            let mut out = vec![0.0; n * d];
            for l in 0..n {
                for c in 0..d {
                    out[l * d + c] = discount * zi[c] + rewards[(l, c)];
                }
            }
            out
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let a = &shifted[i];
            let b = &shifted[j];
            let mut acc = 0.0;
            for l in 0..n {
                let al = &a[l * d..(l + 1) * d];
                let mut inner = 0.0;
                for lp in 0..n {
                    let blp = &b[lp * d..(lp + 1) * d];
                    let mut s = 0.0;
                    for c in 0..d {
                        let t = al[c] - blp[c];
                        s += t * t;
                    }
                    inner += g[lp] * matern_eval_unchecked(s.sqrt(), k_z);
                }
                acc += g[l] * inner;
            }
            acc
        })
        .collect();
    let mut out = DMatrix::zeros(m, m);
    for (&(i, j), &v) in pairs.iter().zip(&vals) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// Phi = K diag(Gamma) K alpha over the next-pair Gram.
pub fn compute_phi(gram_next: &GramMatrix, gamma_vec: &RidgeWeights, alpha: &[f64]) -> Result<DVector<f64>> {
    let n = gram_next.n();
    if gamma_vec.gamma.len() != n || alpha.len() != n {
        return Err(KedrlError::invalid(format!(
            "compute_phi: sizes gram {n}, gamma {}, alpha {}",
            gamma_vec.gamma.len(),
            alpha.len()
        )));
    }
    let ka = &gram_next.entries * DVector::from_column_slice(alpha);
    let scaled = DVector::from_fn(n, |i, _| gamma_vec.gamma[i] * ka[i]);
    Ok(&gram_next.entries * scaled)
}

/// gamma_k^2 = w' K_Z w - 2 w' H w_pi + w_pi' G w_pi.
pub fn gamma_sq(
    omega_v: &[f64],
    omega_pi_v: &[f64],
    k_z: &DMatrix<f64>,
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<f64> {
    let m = k_z.nrows();
    if omega_v.len() != m || omega_pi_v.len() != m || h.nrows() != m || h.ncols() != m || g.nrows() != m || g.ncols() != m {
        return Err(KedrlError::invalid("gamma_sq: inconsistent shapes"));
    }
    let w = DVector::from_column_slice(omega_v);
    let wp = DVector::from_column_slice(omega_pi_v);
    let quad = |mat: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * mat * b)[(0, 0)];
    Ok(quad(k_z, &w, &w) - 2.0 * quad(h, &w, &wp) + quad(g, &wp, &wp))
}

/// Evaluate the Bellman-target embedding
/// mu_T(z) = sum_i omega_pi_i sum_l Gamma_l k_Z(gamma z_i + r_l, z)
/// at the given return-space test points.
pub fn target_embedding_eval(
    model: &EmbeddingModel,
    operators: &BellmanOperators,
    rewards: &DMatrix<f64>,
    test_points: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    model.validate()?;
    let omega_pi = weights_times_vector(&model.coefficients, operators.phi.as_slice());
    let m = model.m();
    let n = rewards.nrows();
    let d = model.grid_atoms.ncols();
    if operators.gamma_vec.gamma.len() != n {
        return Err(KedrlError::invalid("target_embedding_eval: gamma length must match rewards"));
    }
    let gam = model.gamma_discount;
    let mut out = vec![0.0; test_points.nrows()];
    for (t, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..m {
            let mut inner = 0.0;
            for l in 0..n {
                let mut s = 0.0;
                for c in 0..d {
                    let v = gam * model.grid_atoms[(i, c)] + rewards[(l, c)] - test_points[(t, c)];
                    s += v * v;
                }
                inner += operators.gamma_vec.gamma[l] * matern_eval_unchecked(s.sqrt(), &model.k_z_params);
            }
            acc += omega_pi[i] * inner;
        }
        *slot = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cme::ridge_weights;
    use crate::kernel::gram;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn kz() -> MaternParams {
        MaternParams::new(1.5, 1.0, 1.0).unwrap()
    }

    fn rand_mat(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn grid_of(atoms: DMatrix<f64>) -> ReturnGrid {
        ReturnGrid { atoms, k_clusters: 0, expansion_factor: 1.0, source_count: 0 }
    }

    fn rand_weights(n: usize, seed: u64) -> RidgeWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RidgeWeights {
            gamma: DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5),
            lambda_reg: 1e-3,
            query: vec![],
        }
    }

    #[test]
    fn h_zero_weights_and_zero_discount() {
        let grid = grid_of(rand_mat(3, 2, 1));
        let rewards = rand_mat(4, 2, 2);
        let mut w = rand_weights(4, 3);
        w.gamma.fill(0.0);
        let h = compute_h(&w, &grid, &rewards, 0.9, &kz()).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));

        // n=1, Gamma=[1], discount 0: H[i][j] = k(r_1, z_i), constant over j
        let rewards = rand_mat(1, 2, 4);
        let mut w = rand_weights(1, 5);
        w.gamma[0] = 1.0;
        let h = compute_h(&w, &grid, &rewards, 0.0, &kz()).unwrap();
        for i in 0..3 {
            let mut s: f64 = 0.0;
            for c in 0..2 {
                s += (rewards[(0, c)] - grid.atoms[(i, c)]).powi(2);
            }
            let want = crate::kernel::matern_eval(s.sqrt(), &kz()).unwrap();
            for j in 0..3 {
                assert!((h[(i, j)] - want).abs() < 1e-14);
                assert!((h[(i, j)] - h[(i, 0)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn h_and_g_match_loop_oracles() {
        let grid = grid_of(rand_mat(2, 3, 10));
        let rewards = rand_mat(3, 3, 11);
        let w = rand_weights(3, 12);
        let disc = 0.7;
        let h = compute_h(&w, &grid, &rewards, disc, &kz()).unwrap();
        let g = compute_g(&w, &grid, &rewards, disc, &kz()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut hw = 0.0;
                let mut gw = 0.0;
                for l in 0..3 {
                    let mut s: f64 = 0.0;
                    for c in 0..3 {
                        s += (rewards[(l, c)] - (grid.atoms[(i, c)] - disc * grid.atoms[(j, c)])).powi(2);
                    }
                    hw += w.gamma[l] * crate::kernel::matern_eval(s.sqrt(), &kz()).unwrap();
                    for lp in 0..3 {
                        let mut s2: f64 = 0.0;
                        for c in 0..3 {
                            let a = disc * grid.atoms[(i, c)] + rewards[(l, c)];
                            let b = disc * grid.atoms[(j, c)] + rewards[(lp, c)];
                            s2 += (a - b) * (a - b);
                        }
                        gw += w.gamma[l] * w.gamma[lp] * crate::kernel::matern_eval(s2.sqrt(), &kz()).unwrap();
                    }
                }
                assert!((h[(i, j)] - hw).abs() < 1e-12);
                assert!((g[(i, j)] - gw).abs() < 1e-12);
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn g_is_psd_for_signed_weights() {
        let grid = grid_of(rand_mat(5, 2, 20));
        let rewards = rand_mat(6, 2, 21);
        let w = rand_weights(6, 22);
        let g = compute_g(&w, &grid, &rewards, 0.9, &kz()).unwrap();
        let min_eig = g.symmetric_eigen().eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(min_eig >= -1e-8 * 5.0, "min eig {min_eig}");
    }

    #[test]
    fn phi_identities() {
        let n = 4;
        let pts = rand_mat(n, 2, 30);
        let gm = gram(&pts, &kz()).unwrap();
        let w = rand_weights(n, 31);
        // alpha = 0 -> phi = 0
        let phi = compute_phi(&gm, &w, &[0.0; 4]).unwrap();
        assert!(phi.iter().all(|v| *v == 0.0));
        // identity gram, unit gamma: phi = alpha
        let id = GramMatrix { entries: DMatrix::identity(n, n), params: kz() };
        let mut w1 = rand_weights(n, 32);
        w1.gamma.fill(1.0);
        let alpha = [0.3, -0.2, 0.5, 0.9];
        let phi = compute_phi(&id, &w1, &alpha).unwrap();
        for i in 0..n {
            assert!((phi[i] - alpha[i]).abs() < 1e-14);
        }
        // loop oracle
        let alpha = [0.4, 0.1, -0.7, 0.2];
        let phi = compute_phi(&gm, &w, &alpha).unwrap();
        for i in 0..n {
            let mut want = 0.0;
            for j in 0..n {
                let mut kja = 0.0;
                for q in 0..n {
                    kja += gm.entries[(j, q)] * alpha[q];
                }
                want += gm.entries[(i, j)] * w.gamma[j] * kja;
            }
            assert!((phi[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_sq_identities() {
        let m = 3;
        let kzm = gram(&rand_mat(m, 2, 40), &kz()).unwrap().entries;
        let z = vec![0.0; m];
        assert_eq!(gamma_sq(&z, &z, &kzm, &kzm, &kzm).unwrap(), 0.0);
        // H = K_Z = G and w = w_pi -> 0
        let w = vec![0.3, -0.1, 0.5];
        let v = gamma_sq(&w, &w, &kzm, &kzm, &kzm).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn gamma_sq_from_shared_weights_is_a_squared_norm() {
        // with K_Z, H, G all assembled from one Gamma and one reward set,
        // gamma_sq is an exact squared RKHS norm, so never below -1e-10
        for seed in 0..30u64 {
            let m = 2 + (seed % 4) as usize;
            let n = 3 + (seed % 5) as usize;
            let atoms = rand_mat(m, 2, 70_000 + seed);
            let grid = grid_of(atoms.clone());
            let rewards = rand_mat(n, 2, 71_000 + seed);
            let gv = rand_weights(n, 72_000 + seed);
            let disc = 0.2 + 0.7 * ((seed as f64 * 0.37).sin().abs());
            let kzm = gram(&atoms, &kz()).unwrap().entries;
            let h = compute_h(&gv, &grid, &rewards, disc, &kz()).unwrap();
            let g = compute_g(&gv, &grid, &rewards, disc, &kz()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(73_000 + seed);
            let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let wp: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let v = gamma_sq(&w, &wp, &kzm, &h, &g).unwrap();
            assert!(v >= -1e-10, "seed {seed}: gamma_sq = {v}");
        }
    }

    #[test]
    fn model_round_trip_and_omega() {
        let n = 5;
        let m = 3;
        let model = EmbeddingModel {
            coefficients: rand_mat(n, m, 50),
            grid_atoms: rand_mat(m, 2, 51),
            grid_k_clusters: m,
            grid_expansion_factor: 1.0,
            grid_source_count: 10,
            k_z_params: kz(),
            k_x_params: kz(),
            lambda_reg: 1e-3,
            gamma_discount: 0.9,
            training_inputs: rand_mat(n, 3, 52),
        };
        let dir = std::env::temp_dir().join(format!("kedrl_model_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save(&path).unwrap();
        let back = EmbeddingModel::load(&path).unwrap();
        assert_eq!(back.coefficients, model.coefficients);
        assert_eq!(back.grid_atoms, model.grid_atoms);
        std::fs::remove_dir_all(&dir).ok();

        // omega matches direct multiply
        let q = [0.1, -0.2, 0.3];
        let w = model.omega(&q).unwrap();
        let kv = kernel::kernel_vector(&model.training_inputs, &q, &model.k_x_params).unwrap();
        for i in 0..m {
            let mut want = 0.0;
            for l in 0..n {
                want += model.coefficients[(l, i)] * kv[l];
            }
            assert!((w[i] - want).abs() < 1e-13);
        }
        // zero coefficients -> zero weights
        let mut zero = model.clone();
        zero.coefficients.fill(0.0);
        assert!(zero.omega(&q).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn target_embedding_matches_loop() {
        let n = 3;
        let m = 2;
        let model = EmbeddingModel {
            coefficients: rand_mat(n, m, 60),
            grid_atoms: rand_mat(m, 2, 61),
            grid_k_clusters: m,
            grid_expansion_factor: 1.0,
            grid_source_count: 5,
            k_z_params: kz(),
            k_x_params: kz(),
            lambda_reg: 1e-3,
            gamma_discount: 0.8,
            training_inputs: rand_mat(n, 3, 62),
        };
        let rewards = rand_mat(n, 2, 63);
        let gamma_vec = rand_weights(n, 64);
        let ops = BellmanOperators {
            h: DMatrix::zeros(m, m),
            g: DMatrix::zeros(m, m),
            phi: DVector::from_column_slice(&[0.2, -0.4, 0.6]),
            gamma_vec: gamma_vec.clone(),
            query: vec![],
        };
        let pts = rand_mat(4, 2, 65);
        let got = target_embedding_eval(&model, &ops, &rewards, &pts).unwrap();
        let wpi = weights_times_vector(&model.coefficients, ops.phi.as_slice());
        for (t, gv) in got.iter().enumerate() {
            let mut want = 0.0;
            for i in 0..m {
                for l in 0..n {
                    let mut s: f64 = 0.0;
                    for c in 0..2 {
                        s += (0.8 * model.grid_atoms[(i, c)] + rewards[(l, c)] - pts[(t, c)]).powi(2);
                    }
                    want += wpi[i] * gamma_vec.gamma[l] * crate::kernel::matern_eval(s.sqrt(), &kz()).unwrap();
                }
            }
            assert!((gv - want).abs() < 1e-12);
        }
        // zero omega_pi -> zero function
        let mut zero_model = model.clone();
        zero_model.coefficients.fill(0.0);
        let z = target_embedding_eval(&zero_model, &ops, &rewards, &pts).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weight_reuse_across_outputs() {
        // one Gamma paired with two output sets: weights stay bit-identical
        let pts = rand_mat(6, 3, 70);
        let gm = gram(&pts, &kz()).unwrap();
        let kv: Vec<f64> = (0..6).map(|i| 0.05 * i as f64 + 0.1).collect();
        let w1 = ridge_weights(&gm, &kv, 1e-3, &[0.0; 3]).unwrap();
        let returns = rand_mat(6, 2, 71);
        let rewards = rand_mat(6, 2, 72);
        let grid = grid_of(rand_mat(3, 2, 73));
        let _ = compute_h(&w1, &grid, &returns, 0.9, &kz()).unwrap();
        let _ = compute_h(&w1, &grid, &rewards, 0.9, &kz()).unwrap();
        let w2 = ridge_weights(&gm, &kv, 1e-3, &[0.0; 3]).unwrap();
        assert_eq!(w1.gamma.as_slice(), w2.gamma.as_slice());
    }
}
