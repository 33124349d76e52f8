//! Convex hulls, minimum-norm points of polytopes and Carathéodory
//! decompositions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{dist, dot, PointSet};
use crate::error::{Error, Result};

/// Minimum-norm point of conv(points) as a convex combination of an affinely
/// independent subset.
#[derive(Debug, Clone)]
pub struct MinNormPoint {
    pub point: Vec<f64>,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MinNormPoint {
    pub fn norm(&self) -> f64 {
        dot(&self.point, &self.point).sqrt()
    }
}

fn combine(points: &[&[f64]], support: &[usize], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for (&i, &w) in support.iter().zip(weights) {
        for (xi, pi) in x.iter_mut().zip(points[i]) {
            *xi += w * pi;
        }
    }
    x
}

/// Weights summing to one that minimize |sum a_i q_i| over the affine hull.
fn affine_minimizer(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.len();
    let mut mat = DMatrix::<f64>::zeros(m + 1, m + 1);
    for a in 0..m {
        for b in a..m {
            let g = dot(&points[a], &points[b]);
            mat[(a, b)] = g;
            mat[(b, a)] = g;
        }
        mat[(a, m)] = 1.0;
        mat[(m, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m + 1);
    rhs[m] = 1.0;
    let sol = match mat.clone().lu().solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => {
            let svd = mat.svd(true, true);
            let smax = svd.singular_values.max();
            svd.solve(&rhs, smax * 1e-13).expect("singular vectors requested")
        }
    };
    sol.iter().take(m).copied().collect()
}

/// Minimum-norm point of a polytope described by a linear minimization
/// oracle, as a convex combination of oracle atoms.
#[derive(Debug, Clone)]
pub struct OracleMinNorm<T> {
    pub point: Vec<f64>,
    pub atoms: Vec<T>,
    pub atom_points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Wolfe's minimum-norm-point algorithm. `oracle(x)` returns an atom of the
/// polytope minimizing <x, v>.
pub fn wolfe<T, F>(start: (T, Vec<f64>), mut oracle: F, max_major: usize) -> OracleMinNorm<T>
where
    T: Clone + PartialEq,
    F: FnMut(&[f64]) -> (T, Vec<f64>),
{
    let dim = start.1.len();
    let mut scale = dot(&start.1, &start.1).max(f64::MIN_POSITIVE);
    let mut atoms = vec![start.0];
    let mut pts = vec![start.1.clone()];
    let mut weights = vec![1.0];
    let mut x = start.1;

    for _ in 0..max_major {
        let xx = dot(&x, &x);
        if xx <= 1e-30 * scale {
            break;
        }
        let (id, v) = oracle(&x);
        scale = scale.max(dot(&v, &v));
        if xx - dot(&x, &v) <= 1e-12 * scale || atoms.contains(&id) {
            break;
        }
        atoms.push(id);
        pts.push(v);
        weights.push(0.0);

        for _ in 0..=pts.len() + dim {
            let alpha = affine_minimizer(&pts);
            if alpha.iter().all(|&a| a > 1e-15) {
                weights = alpha;
                break;
            }
            let mut theta = f64::INFINITY;
            let mut drop = None;
            for (i, (&w, &a)) in weights.iter().zip(&alpha).enumerate() {
                if a <= 1e-15 {
                    let t = if w - a > 0.0 { w / (w - a) } else { 0.0 };
                    if t < theta {
                        theta = t;
                        drop = Some(i);
                    }
                }
            }
            let theta = theta.clamp(0.0, 1.0);
            for (w, a) in weights.iter_mut().zip(&alpha) {
                *w = theta * a + (1.0 - theta) * *w;
            }
            if let Some(d) = drop {
                weights[d] = 0.0;
            }
            let mut i = 0;
            while i < weights.len() {
                if weights[i] <= 1e-15 {
                    weights.remove(i);
                    atoms.remove(i);
                    pts.remove(i);
                } else {
                    i += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            if pts.len() <= 1 {
                break;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        x = vec![0.0; dim];
        for (p, w) in pts.iter().zip(&weights) {
            for (xi, pi) in x.iter_mut().zip(p) {
                *xi += w * pi;
            }
        }
    }
    OracleMinNorm { point: x, atoms, atom_points: pts, weights }
}

/// Minimum-norm point of conv(points).
pub fn min_norm_point(points: &[&[f64]]) -> Result<MinNormPoint> {
    let first = points.first().ok_or(Error::EmptySet)?;
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points of mixed dimension".into()));
    }
    let start = (0..points.len())
        .min_by(|&a, &b| dot(points[a], points[a]).partial_cmp(&dot(points[b], points[b])).expect("finite"))
        .expect("nonempty");
    let oracle = |x: &[f64]| {
        let j = (0..points.len())
            .min_by(|&a, &b| dot(x, points[a]).partial_cmp(&dot(x, points[b])).expect("finite"))
            .expect("nonempty");
        (j, points[j].to_vec())
    };
    let r = wolfe((start, points[start].to_vec()), oracle, 50 * (points.len() + dim + 1));
    Ok(MinNormPoint { point: r.point, support: r.atoms, weights: r.weights })
}

/// Convex weights over at most dim+1 points of a set.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// |sum w_i s_i - x|
    pub residual: f64,
}

const HULL_TOL: f64 = 1e-9;

/// Drops points from an affinely dependent support until at most dim+1 remain.
fn reduce_support(pts: &[&[f64]], idx: &mut Vec<usize>, w: &mut Vec<f64>, dim: usize) {
    while idx.len() > dim + 1 {
        let m = idx.len();
        let mut a = DMatrix::<f64>::zeros(dim + 1, m);
        for (c, &i) in idx.iter().enumerate() {
            for r in 0..dim {
                a[(r, c)] = pts[i][r];
            }
            a[(dim, c)] = 1.0;
        }
        let eig = SymmetricEigen::new(a.transpose() * &a);
        let k = eig.eigenvalues.imin();
        let mut mu: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if mu.iter().all(|v| *v <= 0.0) {
            mu.iter_mut().for_each(|v| *v = -*v);
        }
        let (drop, t) = mu
            .iter()
            .zip(w.iter())
            .enumerate()
            .filter(|(_, (m, _))| **m > 0.0)
            .map(|(i, (m, wi))| (i, wi / m))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .expect("null vector has a positive entry");
        for (wi, m) in w.iter_mut().zip(&mu) {
            *wi -= t * m;
        }
        idx.remove(drop);
        w.remove(drop);
        w.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// Convex weights over at most dim+1 points of `s` whose combination is the
/// point of conv(s) nearest to `x`. `residual` is the distance to `x`.
pub fn caratheodory_nearest(x: &[f64], s: &PointSet) -> Result<Decomposition> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    if x.len() != s.dim() {
        return Err(Error::DimensionMismatch { expected: s.dim(), found: x.len() });
    }
    let dim = s.dim();
    let shifted: Vec<Vec<f64>> = s.iter().map(|p| p.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
    let refs: Vec<&[f64]> = shifted.iter().map(|v| v.as_slice()).collect();
    let mnp = min_norm_point(&refs)?;
    let mut idx = mnp.support;
    let mut w: Vec<f64> = mnp.weights.iter().map(|v| v.max(0.0)).collect();
    let pts: Vec<&[f64]> = s.iter().collect();
    reduce_support(&pts, &mut idx, &mut w, dim);
    let mut pairs: Vec<(usize, f64)> = idx.into_iter().zip(w).filter(|(_, w)| *w > 0.0).collect();
    pairs.sort_by_key(|p| p.0);
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let indices: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
    let recon = combine(&pts, &indices, &weights, dim);
    let residual = dist(&recon, x);
    Ok(Decomposition { indices, weights, residual })
}

/// Writes `x` as a convex combination of at most dim+1 points of `s`.
pub fn caratheodory_decompose(x: &[f64], s: &PointSet) -> Result<Decomposition> {
    let d = caratheodory_nearest(x, s)?;
    if d.residual > HULL_TOL {
        return Err(Error::OutsideHull { distance: d.residual });
    }
    Ok(d)
}

pub(super) fn cross(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns strict vertices counter-clockwise.
pub(super) fn hull_2d(s: &PointSet) -> Vec<Vec<f64>> {
    let mut pts = s.sorted();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Vec<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<Vec<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Extreme points of conv(s).
///
/// Dimensions 1 and 2 are exact. In higher dimension a point is kept when its
/// distance to the hull of the remaining points exceeds 1e-10.
pub fn convex_hull(s: &PointSet) -> Result<PointSet> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    let dim = s.dim();
    let verts: Vec<Vec<f64>> = match dim {
        1 => {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in s.iter() {
                lo = lo.min(p[0]);
                hi = hi.max(p[0]);
            }
            if lo == hi {
                vec![vec![lo]]
            } else {
                vec![vec![lo], vec![hi]]
            }
        }
        2 => hull_2d(s),
        _ => {
            let pts: Vec<&[f64]> = s.iter().collect();
            if pts.len() == 1 {
                vec![pts[0].to_vec()]
            } else {
                let mut out = Vec::new();
                for (i, p) in pts.iter().enumerate() {
                    let others: Vec<Vec<f64>> = pts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, q)| q.iter().zip(p.iter()).map(|(a, b)| a - b).collect())
                        .collect();
                    let refs: Vec<&[f64]> = others.iter().map(|v| v.as_slice()).collect();
                    if min_norm_point(&refs)?.norm() > 1e-10 {
                        out.push(p.to_vec());
                    }
                }
                out
            }
        }
    };
    PointSet::with_tol(dim, verts, s.dedup_tol())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_1d() {
        let s = PointSet::new(1, vec![vec![0.0], vec![1.0], vec![0.5]]).unwrap();
        assert_eq!(convex_hull(&s).unwrap().sorted(), vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn hull_square_with_center() {
        let s = PointSet::new(
            2,
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.5, 0.0]],
        )
        .unwrap();
        let h = convex_hull(&s).unwrap();
        assert_eq!(h.sorted(), vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn hull_3d_cube() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(vec![(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        pts.push(vec![0.5, 0.5, 0.5]);
        pts.push(vec![0.5, 0.5, 0.0]);
        let h = convex_hull(&PointSet::new(3, pts).unwrap()).unwrap();
        assert_eq!(h.len(), 8);
    }

    #[test]
    fn caratheodory_vertex_and_midpoint() {
        let s = PointSet::new(2, vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let d = caratheodory_decompose(&[2.0, 0.0], &s).unwrap();
        assert_eq!(d.indices, vec![1]);
        assert_eq!(d.weights, vec![1.0]);

        let s = PointSet::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let d = caratheodory_decompose(&[0.5], &s).unwrap();
        assert_eq!(d.indices, vec![0, 1]);
        assert!((d.weights[0] - 0.5).abs() < 1e-15 && (d.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn caratheodory_outside_reports_distance() {
        let s = PointSet::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
        match caratheodory_decompose(&[3.0], &s) {
            Err(Error::OutsideHull { distance }) => assert!((distance - 2.0).abs() < 1e-12),
            other => panic!("expected outside-hull error, got {other:?}"),
        }
    }

    #[test]
    fn min_norm_of_segment() {
        let a = [1.0, -1.0];
        let b = [1.0, 1.0];
        let m = min_norm_point(&[&a, &b]).unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-14 && m.point[1].abs() < 1e-14);
    }
}
