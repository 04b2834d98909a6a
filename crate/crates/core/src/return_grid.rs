//! Support-grid construction for discounted returns: k-means centroids,
//! convex-hull vertices, and homothetic tail expansion of the hull away
//! from the centroid mean.

use std::path::Path;

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{KedrlError, Result};

/// The m-atom dictionary supporting the finite embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnGrid {
    pub atoms: DMatrix<f64>, // m x d
    pub k_clusters: usize,
    pub expansion_factor: f64,
    pub source_count: usize,
}

impl ReturnGrid {
    pub fn m(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, i: usize) -> Vec<f64> {
        self.atoms.row(i).iter().copied().collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
        for i in 0..self.m() {
            let rec: Vec<String> = self.atoms.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            w.write_record(&rec)
                .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        }
        w.flush().map_err(|e| KedrlError::io(path.display().to_string(), e))?;
        Ok(())
    }
}

/// Lloyd's algorithm with k-means++ seeding; deterministic under `seed`.
/// Stops when the relative WCSS improvement falls below 1e-8 or after
/// `max_iter` sweeps. Empty clusters are reseeded at the point farthest
/// from their stale centroid.
pub fn kmeans(samples: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<DMatrix<f64>> {
    let n = samples.nrows();
    let d = samples.ncols();
    if k == 0 || k > n {
        return Err(KedrlError::invalid(format!("kmeans needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |row: usize, c: &DMatrix<f64>, ci: usize| -> f64 {
        let mut s = 0.0;
        for col in 0..d {
            let t = samples[(row, col)] - c[(ci, col)];
            s += t * t;
        }
        s
    };
    // k-means++ seeding
    let mut centroids = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&samples.row(first));
    let mut min_d2 = vec![f64::INFINITY; n];
    for j in 1..k {
        for r in 0..n {
            min_d2[r] = min_d2[r].min(dist2(r, &centroids, j - 1));
        }
        let total: f64 = min_d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (r, w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = r;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(j).copy_from(&samples.row(pick));
    }
    // Lloyd iterations
    let mut assign = vec![0usize; n];
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iter {
        for r in 0..n {
            let mut best = (0usize, f64::INFINITY);
            for c in 0..k {
                let v = dist2(r, &centroids, c);
                if v < best.1 {
                    best = (c, v);
                }
            }
            assign[r] = best.0;
        }
        let mut counts = vec![0usize; k];
        let mut sums: DMatrix<f64> = DMatrix::zeros(k, d);
        for r in 0..n {
            counts[assign[r]] += 1;
            for col in 0..d {
                sums[(assign[r], col)] += samples[(r, col)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).max_by(|&a, &b| {
                    dist2(a, &centroids, c).partial_cmp(&dist2(b, &centroids, c)).unwrap()
                });
                centroids.row_mut(c).copy_from(&samples.row(far.unwrap()));
            } else {
                for col in 0..d {
                    centroids[(c, col)] = sums[(c, col)] / counts[c] as f64;
                }
            }
        }
        let mut wcss = 0.0;
        for r in 0..n {
            wcss += dist2(r, &centroids, assign[r]);
        }
        if prev_wcss.is_finite() && prev_wcss - wcss < 1e-8 * prev_wcss.max(1e-300) {
            break;
        }
        prev_wcss = wcss;
    }
    Ok(centroids)
}

/// Extremal vertices of the point set, as row indices into `points`.
///
/// Exact for d in {1, 2, 3}; rank-deficient sets fall back to extreme
/// points along principal axes, and d > 3 to per-coordinate extremes.
pub fn convex_hull(points: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = points.nrows();
    let d = points.ncols();
    if n == 0 || d == 0 {
        return Err(KedrlError::invalid("convex_hull: empty input"));
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    match d {
        1 => {
            let mut lo = 0;
            let mut hi = 0;
            for i in 1..n {
                if points[(i, 0)] < points[(lo, 0)] {
                    lo = i;
                }
                if points[(i, 0)] > points[(hi, 0)] {
                    hi = i;
                }
            }
            let mut v = vec![lo];
            if hi != lo {
                v.push(hi);
            }
            Ok(v)
        }
        2 => match quickhull_2d(points) {
            Some(v) => Ok(v),
            None => Ok(principal_axis_extremes(points)),
        },
        3 => match quickhull_3d(points) {
            Some(v) => Ok(v),
            None => Ok(principal_axis_extremes(points)),
        },
        _ => Ok(coordinate_extremes(points)),
    }
}

fn coordinate_extremes(points: &DMatrix<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    for c in 0..points.ncols() {
        let mut lo = 0;
        let mut hi = 0;
        for i in 1..points.nrows() {
            if points[(i, c)] < points[(lo, c)] {
                lo = i;
            }
            if points[(i, c)] > points[(hi, c)] {
                hi = i;
            }
        }
        for v in [lo, hi] {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

fn principal_axis_extremes(points: &DMatrix<f64>) -> Vec<usize> {
    let n = points.nrows();
    let d = points.ncols();
    let mean: Vec<f64> = (0..d).map(|c| points.column(c).sum() / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (points[(i, a)] - mean[a]) * (points[(i, b)] - mean[b]);
            }
        }
    }
    cov /= n.max(1) as f64;
    let eig = cov.symmetric_eigen();
    let mut out = Vec::new();
    for axis in 0..d {
        if eig.eigenvalues[axis] <= 1e-18 {
            continue;
        }
        let dir = eig.eigenvectors.column(axis);
        let score = |i: usize| -> f64 { (0..d).map(|c| (points[(i, c)] - mean[c]) * dir[c]).sum() };
        let mut lo = 0;
        let mut hi = 0;
        for i in 1..n {
            if score(i) < score(lo) {
                lo = i;
            }
            if score(i) > score(hi) {
                hi = i;
            }
        }
        for v in [lo, hi] {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    if out.is_empty() {
        out.push(0);
    }
    out
}

fn scale_of(points: &DMatrix<f64>) -> f64 {
    let mut s = 0.0f64;
    for v in points.iter() {
        s = s.max(v.abs());
    }
    s.max(1.0)
}

fn quickhull_2d(points: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = points.nrows();
    let eps = 1e-12 * scale_of(points);
    let px = |i: usize| points[(i, 0)];
    let py = |i: usize| points[(i, 1)];
    let mut a = 0;
    let mut b = 0;
    for i in 1..n {
        if (px(i), py(i)) < (px(a), py(a)) {
            a = i;
        }
        if (px(i), py(i)) > (px(b), py(b)) {
            b = i;
        }
    }
    if a == b {
        return Some(vec![a]);
    }
    // signed area of triangle (a, b, p): > 0 when p is left of a -> b
    let cross = |a: usize, b: usize, p: usize| -> f64 {
        (px(b) - px(a)) * (py(p) - py(a)) - (py(b) - py(a)) * (px(p) - px(a))
    };
    let mut hull = Vec::new();
    fn expand(
        a: usize,
        b: usize,
        candidates: &[usize],
        cross: &dyn Fn(usize, usize, usize) -> f64,
        eps: f64,
        hull: &mut Vec<usize>,
    ) {
        let mut far = None;
        let mut far_d = eps;
        for &p in candidates {
            let c = cross(a, b, p);
            if c > far_d {
                far_d = c;
                far = Some(p);
            }
        }
        match far {
            None => hull.push(a),
            Some(f) => {
                let left: Vec<usize> = candidates.iter().copied().filter(|&p| cross(a, f, p) > eps).collect();
                let right: Vec<usize> = candidates.iter().copied().filter(|&p| cross(f, b, p) > eps).collect();
                expand(a, f, &left, cross, eps, hull);
                expand(f, b, &right, cross, eps, hull);
            }
        }
    }
    let upper: Vec<usize> = (0..n).filter(|&p| cross(a, b, p) > eps).collect();
    let lower: Vec<usize> = (0..n).filter(|&p| cross(b, a, p) > eps).collect();
    if upper.is_empty() && lower.is_empty() {
        // collinear set
        return None;
    }
    expand(a, b, &upper, &cross, eps, &mut hull);
    expand(b, a, &lower, &cross, eps, &mut hull);
    hull.dedup();
    Some(hull)
}

fn quickhull_3d(points: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = points.nrows();
    if n < 4 {
        return None;
    }
    let eps = 1e-9 * scale_of(points);
    let p = |i: usize| [points[(i, 0)], points[(i, 1)], points[(i, 2)]];
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let norm = |a: [f64; 3]| dot(a, a).sqrt();

    // initial simplex: spread apart in x, then farthest from the line, then the plane
    let mut i0 = 0;
    let mut i1 = 0;
    for i in 1..n {
        if points[(i, 0)] < points[(i0, 0)] {
            i0 = i;
        }
        if points[(i, 0)] > points[(i1, 0)] {
            i1 = i;
        }
    }
    if i0 == i1 || norm(sub(p(i1), p(i0))) < eps {
        return None;
    }
    let axis = sub(p(i1), p(i0));
    let mut i2 = usize::MAX;
    let mut best = eps;
    for i in 0..n {
        let v = cross(axis, sub(p(i), p(i0)));
        let dist = norm(v) / norm(axis);
        if dist > best {
            best = dist;
            i2 = i;
        }
    }
    if i2 == usize::MAX {
        return None;
    }
    let normal0 = cross(sub(p(i1), p(i0)), sub(p(i2), p(i0)));
    let mut i3 = usize::MAX;
    let mut best = eps * norm(normal0).max(1e-300);
    for i in 0..n {
        let dist = dot(normal0, sub(p(i), p(i0))).abs();
        if dist > best {
            best = dist;
            i3 = i;
        }
    }
    if i3 == usize::MAX {
        return None;
    }
    let interior = [
        (p(i0)[0] + p(i1)[0] + p(i2)[0] + p(i3)[0]) / 4.0,
        (p(i0)[1] + p(i1)[1] + p(i2)[1] + p(i3)[1]) / 4.0,
        (p(i0)[2] + p(i1)[2] + p(i2)[2] + p(i3)[2]) / 4.0,
    ];

    #[derive(Clone)]
    struct Face {
        v: [usize; 3],
        normal: [f64; 3],
        offset: f64, // plane: dot(normal, x) = offset
    }
    let mk_face = |a: usize, b: usize, c: usize| -> Face {
        let mut nl = cross(sub(p(b), p(a)), sub(p(c), p(a)));
        let mut vv = [a, b, c];
        if dot(nl, sub(interior, p(a))) > 0.0 {
            vv = [a, c, b];
            nl = cross(sub(p(c), p(a)), sub(p(b), p(a)));
        }
        let off = dot(nl, p(vv[0]));
        Face { v: vv, normal: nl, offset: off }
    };
    let signed = |f: &Face, i: usize| (dot(f.normal, p(i)) - f.offset) / norm(f.normal).max(1e-300);

    let mut faces = vec![mk_face(i0, i1, i2), mk_face(i0, i1, i3), mk_face(i0, i2, i3), mk_face(i1, i2, i3)];
    let mut pending: Vec<usize> = (0..n).filter(|i| ![i0, i1, i2, i3].contains(i)).collect();

    loop {
        // farthest outside point over all faces
        let mut far: Option<(usize, f64)> = None;
        for &q in &pending {
            let mut best_d = eps;
            for f in &faces {
                let d = signed(f, q);
                if d > best_d {
                    best_d = d;
                }
            }
            if best_d > eps && far.is_none_or(|(_, fd)| best_d > fd) {
                far = Some((q, best_d));
            }
        }
        let Some((q, _)) = far else { break };
        pending.retain(|&x| x != q);
        let visible: Vec<usize> = (0..faces.len()).filter(|&fi| signed(&faces[fi], q) > eps).collect();
        if visible.is_empty() {
            continue;
        }
        // horizon: undirected edges of visible faces that appear exactly once
        let mut edge_count: std::collections::HashMap<(usize, usize), usize> = std::collections::HashMap::new();
        for &fi in &visible {
            let v = faces[fi].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        let horizon: Vec<(usize, usize)> = edge_count.into_iter().filter(|(_, c)| *c == 1).map(|(e, _)| e).collect();
        let visible_set: std::collections::HashSet<usize> = visible.iter().copied().collect();
        let mut next: Vec<Face> = faces
            .iter()
            .enumerate()
            .filter(|(fi, _)| !visible_set.contains(fi))
            .map(|(_, f)| f.clone())
            .collect();
        for (a, b) in horizon {
            next.push(mk_face(a, b, q));
        }
        faces = next;
    }
    let mut verts: Vec<usize> = faces.iter().flat_map(|f| f.v).collect();
    verts.sort_unstable();
    verts.dedup();
    Some(verts)
}

/// Build the atom grid: k-means centroids plus hull vertices expanded away
/// from the centroid mean by `expansion_factor`, deduplicated at 1e-12.
pub fn build_grid(samples: &DMatrix<f64>, k: usize, expansion_factor: f64, seed: u64) -> Result<ReturnGrid> {
    if !(expansion_factor.is_finite() && expansion_factor >= 1.0) {
        return Err(KedrlError::invalid(format!("expansion_factor must be >= 1, got {expansion_factor}")));
    }
    let centroids = kmeans(samples, k, seed, 100)?;
    let d = centroids.ncols();
    let kk = centroids.nrows();
    let mean: Vec<f64> = (0..d).map(|c| centroids.column(c).sum() / kk as f64).collect();
    let hull = convex_hull(&centroids)?;
    let mut rows: Vec<Vec<f64>> = (0..kk).map(|i| centroids.row(i).iter().copied().collect()).collect();
    for &h in &hull {
        let expanded: Vec<f64> = (0..d)
            .map(|c| mean[c] + expansion_factor * (centroids[(h, c)] - mean[c]))
            .collect();
        rows.push(expanded);
    }
    // dedup within 1e-12 euclidean distance, keeping first occurrences
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let dup = kept.iter().any(|k| {
            k.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= 1e-12
        });
        if !dup {
            kept.push(r);
        }
    }
    let m = kept.len();
    let atoms = DMatrix::from_fn(m, d, |i, j| kept[i][j]);
    Ok(ReturnGrid { atoms, k_clusters: k, expansion_factor, source_count: samples.nrows() })
}
