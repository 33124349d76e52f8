//! Finite point-set calculus: upper limits of set sequences, Hausdorff
//! distances, convex hulls, Carathéodory decompositions, Aumann integrals and
//! ranges of vector measures.

mod hull;
mod measure;

pub use hull::{
    caratheodory_decompose, caratheodory_nearest, convex_hull, min_norm_point, wolfe, Decomposition, MinNormPoint, OracleMinNorm,
};
pub use measure::{
    aumann_integral, lyapunov_range, solid_hull_gap, CellMultifunction, LyapunovRange, Sampling, MAX_EXACT_CELLS,
    VectorMeasure,
};

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_DEDUP_TOL: f64 = 1e-9;

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A finite set of points in R^dim with no two points closer than `dedup_tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    points: Vec<f64>,
    dedup_tol: f64,
    approximate: bool,
}

impl PointSet {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tol(dim, points, DEFAULT_DEDUP_TOL)
    }

    pub fn with_tol(dim: usize, points: Vec<Vec<f64>>, dedup_tol: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat, dedup_tol)
    }

    /// Builds a set from row-major coordinates, dropping near-duplicates in order.
    pub fn from_flat(dim: usize, flat: Vec<f64>, dedup_tol: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("point dimension must be positive".into()));
        }
        if flat.is_empty() {
            return Err(Error::EmptySet);
        }
        if flat.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, found: flat.len() % dim });
        }
        if !(dedup_tol >= 0.0) {
            return Err(Error::InvalidInput(format!("dedup tolerance must be >= 0, got {dedup_tol}")));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("point coordinates must be finite".into()));
        }
        let mut dd = Deduper::new(dim, dedup_tol);
        for p in flat.chunks(dim) {
            dd.insert(p);
        }
        Ok(Self { dim, points: dd.into_points(), dedup_tol, approximate: false })
    }

    pub fn singleton(point: &[f64]) -> Self {
        Self { dim: point.len(), points: point.to_vec(), dedup_tol: DEFAULT_DEDUP_TOL, approximate: false }
    }

    /// A set explicitly tagged empty.
    pub fn empty(dim: usize) -> Self {
        Self { dim, points: Vec::new(), dedup_tol: DEFAULT_DEDUP_TOL, approximate: false }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dedup_tol(&self) -> f64 {
        self.dedup_tol
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub(crate) fn mark_approximate(mut self) -> Self {
        self.approximate = true;
        self
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.dim)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Distance from `x` to the nearest point of the set.
    pub fn dist_to(&self, x: &[f64]) -> f64 {
        self.iter().map(|p| dist(p, x)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains_within(&self, x: &[f64], tol: f64) -> bool {
        self.dist_to(x) <= tol
    }

    /// Points sorted lexicographically, for order-free comparisons.
    pub fn sorted(&self) -> Vec<Vec<f64>> {
        let mut v = self.to_vecs();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        v
    }

    /// One point per row, coordinates in columns `x0..x{dim-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Order-preserving near-duplicate filter backed by a hash grid over at most
/// three leading coordinates.
pub(crate) struct Deduper {
    dim: usize,
    tol: f64,
    key_dims: usize,
    grid: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<f64>,
}

impl Deduper {
    pub(crate) fn new(dim: usize, tol: f64) -> Self {
        Self { dim, tol, key_dims: dim.min(3), grid: HashMap::new(), points: Vec::new() }
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        if self.tol > 0.0 {
            p[..self.key_dims].iter().map(|v| (v / self.tol).floor() as i64).collect()
        } else {
            p[..self.key_dims].iter().map(|v| v.to_bits() as i64).collect()
        }
    }

    fn find(&self, p: &[f64]) -> Option<usize> {
        let key = self.key(p);
        let reach: i64 = if self.tol > 0.0 { 1 } else { 0 };
        let mut offset = vec![-reach; self.key_dims];
        loop {
            let probe: Vec<i64> = key.iter().zip(&offset).map(|(k, o)| k + o).collect();
            if let Some(ids) = self.grid.get(&probe) {
                for &i in ids {
                    let q = &self.points[i * self.dim..(i + 1) * self.dim];
                    if dist(p, q) <= self.tol {
                        return Some(i);
                    }
                }
            }
            let mut d = 0;
            loop {
                if d == self.key_dims {
                    return None;
                }
                if offset[d] < reach {
                    offset[d] += 1;
                    break;
                }
                offset[d] = -reach;
                d += 1;
            }
        }
    }

    /// Returns the index of the stored point matching `p`, inserting if new.
    pub(crate) fn insert(&mut self, p: &[f64]) -> usize {
        if let Some(i) = self.find(p) {
            return i;
        }
        let i = self.points.len() / self.dim;
        let key = self.key(p);
        self.points.extend_from_slice(p);
        self.grid.entry(key).or_default().push(i);
        i
    }

    pub(crate) fn into_points(self) -> Vec<f64> {
        self.points
    }
}

fn check_sequence(seq: &[PointSet], window: usize, tol: f64) -> Result<usize> {
    if seq.is_empty() {
        return Err(Error::InvalidInput("upper limit of an empty sequence".into()));
    }
    if window < 2 || seq.len() < window {
        return Err(Error::InvalidInput(format!(
            "need sequence length >= window >= 2, got length {} and window {window}",
            seq.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let dim = seq[0].dim();
    for s in seq {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
        }
    }
    Ok(dim)
}

/// Length of the sub-windows in which a recurrent point must reappear.
pub fn recurrence_span(window: usize) -> usize {
    window.div_ceil(2)
}

/// Trailing-window upper limit under an arbitrary (pseudo)metric.
///
/// A point of the tail union survives when every run of
/// `recurrence_span(window)` consecutive tail sets holds a point within `tol`.
/// Survivors are grouped by greedy leader clustering with radius `tol`; each
/// group is represented by the member closest to the group mean.
fn upper_limit_with<F>(seq: &[PointSet], window: usize, tol: f64, metric: F) -> Result<PointSet>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let dim = check_sequence(seq, window, tol)?;
    let tail = &seq[seq.len() - window..];
    let span = recurrence_span(window);
    let dedup_tol = tail[0].dedup_tol();

    // The tail union is clustered at the fixed dedup resolution, never at
    // `tol`, so a larger `tol` can only keep more of the same points.
    let mut union = Deduper::new(dim, dedup_tol);
    for s in tail {
        for p in s.iter() {
            union.insert(p);
        }
    }
    let candidates = union.into_points();

    let mut survivors = Vec::new();
    for x in candidates.chunks(dim) {
        let mut run = 0;
        let mut ok = true;
        for s in tail {
            if s.iter().any(|p| metric(p, x) <= tol) {
                run = 0;
            } else {
                run += 1;
                if run >= span {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            survivors.extend_from_slice(x);
        }
    }
    if survivors.is_empty() {
        return Ok(PointSet::empty(dim));
    }
    PointSet::from_flat(dim, survivors, dedup_tol)
}

/// Numerical Kuratowski upper limit over the trailing `window` sets.
pub fn upper_limit(seq: &[PointSet], window: usize, tol: f64) -> Result<PointSet> {
    upper_limit_with(seq, window, tol, dist)
}

/// Orthonormal basis of the row space of a set of test functionals.
#[derive(Debug, Clone)]
pub struct TestPanel {
    rows: Vec<Vec<f64>>,
    basis: Vec<Vec<f64>>,
    dim: usize,
}

impl TestPanel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or_else(|| {
            Error::InvalidInput("test panel needs at least one functional".into())
        })?;
        if dim == 0 {
            return Err(Error::InvalidInput("test functionals must have positive dimension".into()));
        }
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let a = DMatrix::from_row_slice(rows.len(), dim, &flat);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let smax = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
        let cutoff = smax * 1e-10 * (dim.max(rows.len()) as f64);
        let basis = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > cutoff && **s > 0.0)
            .map(|(i, _)| v_t.row(i).iter().copied().collect())
            .collect();
        Ok(Self { rows, basis, dim })
    }

    /// The first `m` coordinate functionals of R^dim.
    pub fn coordinates(dim: usize, m: usize) -> Result<Self> {
        if m == 0 || m > dim {
            return Err(Error::InvalidInput(format!("cannot test {m} of {dim} coordinates")));
        }
        let rows = (0..m)
            .map(|i| {
                let mut r = vec![0.0; dim];
                r[i] = 1.0;
                r
            })
            .collect();
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank() == self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// max_j |<a_j, x - y>|
    pub fn seminorm_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|a| a.iter().zip(x.iter().zip(y)).map(|(ai, (xi, yi))| ai * (xi - yi)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Orthogonal projection onto the span of the functionals. Identity at full rank.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        if self.is_full_rank() {
            return x.to_vec();
        }
        let mut out = vec![0.0; self.dim];
        for b in &self.basis {
            let c = dot(b, x);
            for (o, bi) in out.iter_mut().zip(b) {
                *o += c * bi;
            }
        }
        out
    }
}

/// Upper limit with distances seen only through `panel`.
///
/// At full rank this is the norm upper limit. Otherwise the panel must be
/// accepted explicitly via `allow_rank_deficient`, and each representative is
/// replaced by its projection onto the tested subspace, which is the part of a
/// point that the functionals can distinguish.
pub fn weak_upper_limit_proxy(
    seq: &[PointSet],
    panel: &TestPanel,
    window: usize,
    tol: f64,
    allow_rank_deficient: bool,
) -> Result<PointSet> {
    let dim = check_sequence(seq, window, tol)?;
    if panel.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: panel.dim() });
    }
    if panel.is_full_rank() {
        return upper_limit(seq, window, tol);
    }
    if !allow_rank_deficient {
        return Err(Error::RankDeficient { rank: panel.rank(), dim });
    }
    let raw = upper_limit_with(seq, window, tol, |a, b| panel.seminorm_dist(a, b))?;
    if raw.is_empty() {
        return Ok(raw);
    }
    let flat: Vec<f64> = raw.iter().flat_map(|p| panel.project(p)).collect();
    PointSet::from_flat(dim, flat, raw.dedup_tol())
}

fn check_pair(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

/// max over x in a of dist(x, b).
pub fn inclusion_gap(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_pair(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(a.iter().map(|x| b.dist_to(x)).fold(0.0, f64::max))
}

pub fn hausdorff_distance(a: &PointSet, b: &PointSet) -> Result<f64> {
    Ok(inclusion_gap(a, b)?.max(inclusion_gap(b, a)?))
}
