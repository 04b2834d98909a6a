//! Matérn kernel evaluation, Gram-matrix assembly, and the analytic
//! Lipschitz constant of the RKHS embedding map.
//!
//! Half-integer smoothness (nu = 1/2, 3/2, 5/2, ...) uses the exact
//! polynomial-times-exponential closed forms; any other nu > 0 goes through
//! a modified Bessel K_nu routine (series below argument 2, continued
//! fraction above). Distances below 1e-12 are treated as zero so Gram
//! diagonals are exactly the variance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KedrlError, Result};

mod bessel;

/// Matérn kernel parameters: smoothness, length scale, variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: f64,
    pub length_scale: f64,
    pub variance: f64,
}

impl MaternParams {
    pub fn new(nu: f64, length_scale: f64, variance: f64) -> Result<Self> {
        let p = MaternParams { nu, length_scale, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nu", self.nu), ("length_scale", self.length_scale), ("variance", self.variance)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(KedrlError::invalid(format!("matern {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Half-integer smoothness values have exact closed forms.
    fn half_integer_p(&self) -> Option<usize> {
        let two_nu = 2.0 * self.nu;
        let r = two_nu.round();
        if (two_nu - r).abs() < 1e-12 && (r as i64) % 2 == 1 {
            Some(((r as i64 - 1) / 2) as usize)
        } else {
            None
        }
    }
}

/// Kernel value at a given Euclidean distance.
///
/// k(d) = sigma^2 * 2^(1-nu)/Gamma(nu) * u^nu * K_nu(u) with u = sqrt(2 nu) d / l,
/// and k(0) = sigma^2 exactly.
pub fn matern_eval(distance: f64, params: &MaternParams) -> Result<f64> {
    if !distance.is_finite() || distance < 0.0 {
        return Err(KedrlError::invalid(format!("matern distance must be finite and nonnegative, got {distance}")));
    }
    params.validate()?;
    Ok(matern_eval_unchecked(distance, params))
}

/// Same as [`matern_eval`] minus the argument checks; used in Gram loops.
#[inline]
pub(crate) fn matern_eval_unchecked(distance: f64, params: &MaternParams) -> f64 {
    if distance <= 1e-12 {
        return params.variance;
    }
    let u = (2.0 * params.nu).sqrt() * distance / params.length_scale;
    if let Some(p) = params.half_integer_p() {
        return params.variance * half_integer_profile(u, p);
    }
    // tiny-u guard: u^nu K_nu(u) -> Gamma(nu) 2^(nu-1); relative error O(u^min(2,2nu))
    if u < 1e-8 {
        return params.variance;
    }
    let nu = params.nu;
    let prefactor = 2.0f64.powf(1.0 - nu) / libm::tgamma(nu);
    params.variance * prefactor * u.powf(nu) * bessel::bessel_k(nu, u)
}

/// exp(-u) * p!/(2p)! * sum_{i=0}^{p} (p+i)!/(i!(p-i)!) (2u)^(p-i)
///
/// Evaluated in ascending powers of 2u; the normalized coefficients obey
/// c_0 = 1, c_{j+1} = c_j (p-j) / ((2p-j)(j+1)), so no factorial overflow.
fn half_integer_profile(u: f64, p: usize) -> f64 {
    let two_u = 2.0 * u;
    let mut c = 1.0;
    let mut pow = 1.0;
    let mut sum = 1.0;
    for j in 0..p {
        c *= (p - j) as f64 / ((2 * p - j) as f64 * (j + 1) as f64);
        pow *= two_u;
        sum += c * pow;
    }
    (-u).exp() * sum
}

/// RKHS distance between kernel sections, ||k(z,.) - k(z',.)||_H at
/// distance d: sqrt(2 (sigma^2 - k(d))).
///
/// For half-integer nu and small scaled distance the difference is formed
/// by a product series instead of direct subtraction, which would lose
/// most significant digits there (sigma^2 - k(d) = O(d^2)).
pub fn rkhs_embedding_distance(distance: f64, params: &MaternParams) -> Result<f64> {
    if !distance.is_finite() || distance < 0.0 {
        return Err(KedrlError::invalid(format!("distance must be finite and nonnegative, got {distance}")));
    }
    params.validate()?;
    if distance <= 1e-12 {
        return Ok(0.0);
    }
    let u = (2.0 * params.nu).sqrt() * distance / params.length_scale;
    if let Some(p) = params.half_integer_p() {
        if u < 1e-3 {
            let gap = one_minus_profile_series(u, p);
            return Ok((2.0 * params.variance * gap.max(0.0)).sqrt());
        }
    }
    let k = matern_eval_unchecked(distance, params);
    Ok((2.0 * (params.variance - k)).max(0.0).sqrt())
}

/// Series for 1 - exp(-u) * profile_p(2u), accurate for small u.
///
/// With profile coefficients p_j (so profile = sum p_j u^j) the product with
/// exp(-u) has coefficients g_k = sum_j p_j (-1)^(k-j) / (k-j)!; g_0 = 1 and
/// g_1 = 0, so the gap is -(g_2 u^2 + ... + g_6 u^6) up to O(u^7).
fn one_minus_profile_series(u: f64, p: usize) -> f64 {
    let mut pj = [0.0f64; 7];
    pj[0] = 1.0;
    let mut c = 1.0;
    for j in 0..p.min(6) {
        c *= (p - j) as f64 / ((2 * p - j) as f64 * (j + 1) as f64);
        pj[j + 1] = c * 2.0f64.powi(j as i32 + 1);
    }
    const INV_FACT: [f64; 7] = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0, 1.0 / 720.0];
    let mut gap = 0.0;
    let mut upow = u * u;
    for k in 2..=6usize {
        let mut g = 0.0;
        for j in 0..=k.min(p.min(6)) {
            let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
            g += pj[j] * sign * INV_FACT[k - j];
        }
        gap -= g * upow;
        upow *= u;
    }
    gap
}

/// Lipschitz constant of z -> k(z, .) in the RKHS: (sigma/l) sqrt(nu/(nu-1)).
pub fn lipschitz_constant(params: &MaternParams) -> Result<f64> {
    params.validate()?;
    if params.nu <= 1.0 {
        return Err(KedrlError::Domain(format!(
            "embedding Lipschitz constant requires nu > 1, got nu = {}",
            params.nu
        )));
    }
    Ok(params.variance.sqrt() / params.length_scale * (params.nu / (params.nu - 1.0)).sqrt())
}

/// Symmetric Gram matrix with entries and parameters kept together.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub params: MaternParams,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Smallest eigenvalue via symmetric eigendecomposition.
    pub fn min_eigenvalue(&self) -> f64 {
        self.entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

#[inline]
fn row_dist(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let d = points.ncols();
    let mut s = 0.0;
    for c in 0..d {
        let t = points[(i, c)] - points[(j, c)];
        s += t * t;
    }
    s.sqrt()
}

#[inline]
fn cross_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let d = a.ncols();
    let mut s = 0.0;
    for c in 0..d {
        let t = a[(i, c)] - b[(j, c)];
        s += t * t;
    }
    s.sqrt()
}

/// Gram matrix of one point set (rows are points). Exactly symmetric by
/// construction: the upper triangle is computed once and mirrored.
pub fn gram(points: &DMatrix<f64>, params: &MaternParams) -> Result<GramMatrix> {
    params.validate()?;
    if points.iter().any(|v| !v.is_finite()) {
        return Err(KedrlError::invalid("gram: non-finite coordinate in point set"));
    }
    let n = points.nrows();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n - i];
            for j in i..n {
                row[j - i] = matern_eval_unchecked(row_dist(points, i, j), params);
            }
            row
        })
        .collect_into_vec(&mut rows);
    let mut entries = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix { entries, params: *params })
}

/// Rectangular kernel matrix K[i][j] = k(||a_i - b_j||).
pub fn gram_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, params: &MaternParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    if a.ncols() != b.ncols() {
        return Err(KedrlError::invalid(format!(
            "gram_cross: dimension mismatch {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (na, nb) = (a.nrows(), b.nrows());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(na);
    (0..na)
        .into_par_iter()
        .map(|i| (0..nb).map(|j| matern_eval_unchecked(cross_dist(a, i, b, j), params)).collect())
        .collect_into_vec(&mut rows);
    let mut out = DMatrix::zeros(na, nb);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Kernel column vector (k(p_1, q), ..., k(p_n, q)).
pub fn kernel_vector(points: &DMatrix<f64>, query: &[f64], params: &MaternParams) -> Result<Vec<f64>> {
    params.validate()?;
    if points.nrows() > 0 && points.ncols() != query.len() {
        return Err(KedrlError::invalid(format!(
            "kernel_vector: point dim {} vs query dim {}",
            points.ncols(),
            query.len()
        )));
    }
    Ok((0..points.nrows())
        .map(|i| {
            let mut s = 0.0;
            for c in 0..query.len() {
                let t = points[(i, c)] - query[c];
                s += t * t;
            }
            matern_eval_unchecked(s.sqrt(), params)
        })
        .collect())
}
