//! Aumann integrals of cell multifunctions and ranges of vector measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade::{DelaunayTriangulation, Point2, Triangulation};

use super::hull::{convex_hull, cross, hull_2d};
use super::{dist, dot, Deduper, PointSet, DEFAULT_DEDUP_TOL};
use crate::agent_space::AgentSpace;
use crate::error::{Error, Result};

/// Opt-in random sampling for enumerations that exceed their budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub samples: usize,
    pub seed: u64,
}

/// A set-valued map constant on each cell.
#[derive(Debug, Clone)]
pub struct CellMultifunction {
    dim: usize,
    values: Vec<PointSet>,
}

impl CellMultifunction {
    pub fn new(values: Vec<PointSet>) -> Result<Self> {
        let dim = values.first().map(|v| v.dim()).ok_or_else(|| {
            Error::InvalidInput("multifunction needs at least one cell".into())
        })?;
        for v in &values {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.dim() });
            }
            if v.is_empty() {
                return Err(Error::EmptySet);
            }
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[PointSet] {
        &self.values
    }

    /// The same map with each value replaced by its extreme points.
    pub fn hull_vertices(&self) -> Result<Self> {
        let values = self.values.iter().map(convex_hull).collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: self.dim, values })
    }
}

/// Set of integrals of selectors: the Minkowski sum of the mass-scaled values.
///
/// Exact when the number of selectors is at most `budget`; otherwise
/// `sampling` must be given, and the result is tagged approximate.
pub fn aumann_integral(
    g: &CellMultifunction,
    space: &AgentSpace,
    budget: usize,
    sampling: Option<Sampling>,
) -> Result<PointSet> {
    if g.values.len() != space.len() {
        return Err(Error::DimensionMismatch { expected: space.len(), found: g.values.len() });
    }
    let dim = g.dim;
    let required: f64 = g.values.iter().map(|v| v.len() as f64).product();
    if required <= budget as f64 {
        let mut acc = vec![0.0; dim];
        for (v, cell) in g.values.iter().zip(space.cells()) {
            let mut next = Deduper::new(dim, DEFAULT_DEDUP_TOL);
            let mut buf = vec![0.0; dim];
            for a in acc.chunks(dim) {
                for p in v.iter() {
                    for k in 0..dim {
                        buf[k] = a[k] + cell.mass * p[k];
                    }
                    next.insert(&buf);
                }
            }
            acc = next.into_points();
        }
        return PointSet::from_flat(dim, acc, DEFAULT_DEDUP_TOL);
    }
    let Some(sampling) = sampling else {
        return Err(Error::BudgetExceeded { required, budget });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut out = Deduper::new(dim, DEFAULT_DEDUP_TOL);
    for _ in 0..sampling.samples.max(1) {
        let mut sum = vec![0.0; dim];
        for (v, cell) in g.values.iter().zip(space.cells()) {
            let p = v.point(rng.gen_range(0..v.len()));
            for k in 0..dim {
                sum[k] += cell.mass * p[k];
            }
        }
        out.insert(&sum);
    }
    Ok(PointSet::from_flat(dim, out.into_points(), DEFAULT_DEDUP_TOL)?.mark_approximate())
}

/// A vector measure given by its value on each cell.
#[derive(Debug, Clone)]
pub struct VectorMeasure {
    dim: usize,
    density: Vec<Vec<f64>>,
}

impl VectorMeasure {
    pub fn new(density: Vec<Vec<f64>>) -> Result<Self> {
        let dim = density.first().map(|d| d.len()).ok_or_else(|| {
            Error::InvalidInput("vector measure needs at least one cell".into())
        })?;
        if dim == 0 {
            return Err(Error::InvalidInput("vector measure dimension must be positive".into()));
        }
        for d in &density {
            if d.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d.len() });
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("vector measure values must be finite".into()));
            }
        }
        Ok(Self { dim, density })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.density.len()
    }

    pub fn cell_values(&self) -> &[Vec<f64>] {
        &self.density
    }

    /// Splits every cell into `factor` cells carrying equal shares.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidInput(format!("refinement factor must be >= 2, got {factor}")));
        }
        let mut density = Vec::with_capacity(self.density.len() * factor);
        for d in &self.density {
            let child: Vec<f64> = d.iter().map(|v| v / factor as f64).collect();
            for _ in 0..factor {
                density.push(child.clone());
            }
        }
        Ok(Self { dim: self.dim, density })
    }
}

pub const MAX_EXACT_CELLS: usize = 20;

#[derive(Debug, Clone)]
pub struct LyapunovRange {
    pub range: PointSet,
    /// Largest distance from a point of conv(range) to the range.
    pub convexity_gap: f64,
    pub approximate: bool,
}

/// All subset sums of the cell values, and how far their hull sticks out.
pub fn lyapunov_range(m: &VectorMeasure, sampling: Option<Sampling>) -> Result<LyapunovRange> {
    let n = m.n_cells();
    let dim = m.dim;
    let (range, approximate) = if n <= MAX_EXACT_CELLS {
        let mut sums = vec![0.0; dim];
        for d in &m.density {
            let len = sums.len();
            sums.reserve(len);
            for i in 0..len / dim {
                for k in 0..dim {
                    let v = sums[i * dim + k] + d[k];
                    sums.push(v);
                }
            }
        }
        (PointSet::from_flat(dim, sums, DEFAULT_DEDUP_TOL)?, false)
    } else {
        let Some(sampling) = sampling else {
            return Err(Error::BudgetExceeded { required: 2f64.powi(n as i32), budget: 1 << MAX_EXACT_CELLS });
        };
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut out = Deduper::new(dim, DEFAULT_DEDUP_TOL);
        out.insert(&vec![0.0; dim]);
        let mut full = vec![0.0; dim];
        for d in &m.density {
            for k in 0..dim {
                full[k] += d[k];
            }
        }
        out.insert(&full);
        for _ in 0..sampling.samples {
            let mut s = vec![0.0; dim];
            for d in &m.density {
                if rng.gen_bool(0.5) {
                    for k in 0..dim {
                        s[k] += d[k];
                    }
                }
            }
            out.insert(&s);
        }
        (PointSet::from_flat(dim, out.into_points(), DEFAULT_DEDUP_TOL)?.mark_approximate(), true)
    };
    let (convexity_gap, gap_approx) = solid_hull_gap(&range)?;
    let range = if gap_approx && !range.is_approximate() { range.mark_approximate() } else { range };
    Ok(LyapunovRange { range, convexity_gap, approximate: approximate || gap_approx })
}

fn gap_1d(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    xs.windows(2).map(|w| 0.5 * (w[1] - w[0])).fold(0.0, f64::max)
}

/// Largest distance from the segment a-b to the sites, by walking the
/// sequence of nearest sites along the segment.
fn segment_gap(a: &[f64], b: &[f64], sites: &[[f64; 2]]) -> f64 {
    let e = [b[0] - a[0], b[1] - a[1]];
    let at = |t: f64| [a[0] + t * e[0], a[1] + t * e[1]];
    let sq = |p: [f64; 2], q: &[f64; 2]| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
    let mut cur = (0..sites.len())
        .min_by(|&i, &j| sq(at(0.0), &sites[i]).partial_cmp(&sq(at(0.0), &sites[j])).expect("finite"))
        .expect("nonempty sites");
    let mut t = 0.0;
    let mut best = sq(at(0.0), &sites[cur]).sqrt();
    for _ in 0..4 * sites.len() + 4 {
        let p = at(t);
        let base = sq(p, &sites[cur]);
        let mut next: Option<(usize, f64, f64)> = None;
        for (j, s) in sites.iter().enumerate() {
            if j == cur {
                continue;
            }
            let c = sq(p, s) - base;
            let d = 2.0 * (e[0] * (sites[cur][0] - s[0]) + e[1] * (sites[cur][1] - s[1]));
            if d >= 0.0 {
                continue;
            }
            let tj = t + (-c / d).max(0.0);
            let better = match next {
                None => true,
                Some((_, tb, db)) => tj < tb || (tj == tb && d < db),
            };
            if better {
                next = Some((j, tj, d));
            }
        }
        match next {
            Some((j, tj, _)) if tj < 1.0 => {
                let q = at(tj);
                best = best.max(sq(q, &sites[cur]).min(sq(q, &sites[j])).sqrt());
                cur = j;
                t = tj;
            }
            _ => {
                best = best.max(sq(at(1.0), &sites[cur]).sqrt());
                break;
            }
        }
    }
    best
}

fn gap_2d(s: &PointSet) -> Result<f64> {
    let hull = hull_2d(s);
    if hull.len() == 1 {
        return Ok(0.0);
    }
    if hull.len() == 2 {
        let (o, dir) = (&hull[0], [hull[1][0] - hull[0][0], hull[1][1] - hull[0][1]]);
        let len = dot(&dir, &dir).sqrt();
        let offsets: Vec<f64> = s.iter().map(|p| ((p[0] - o[0]) * dir[0] + (p[1] - o[1]) * dir[1]) / len).collect();
        return Ok(gap_1d(offsets));
    }
    let sites: Vec<[f64; 2]> = s.iter().map(|p| [p[0], p[1]]).collect();
    let pts: Vec<Point2<f64>> = sites.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::bulk_load_stable(pts)
        .map_err(|e| Error::InvalidInput(format!("triangulation failed: {e:?}")))?;
    let scale = hull.iter().map(|v| v[0].abs().max(v[1].abs())).fold(1.0, f64::max);
    let inside = |c: &[f64]| {
        (0..hull.len()).all(|i| cross(&hull[i], &hull[(i + 1) % hull.len()], c) >= -1e-12 * scale * scale)
    };
    let mut best = 0.0f64;
    for face in tri.inner_faces() {
        let c = face.circumcenter();
        let c = [c.x, c.y];
        if !c.iter().all(|v| v.is_finite()) || !inside(&c) {
            continue;
        }
        let v = face.positions()[0];
        best = best.max(dist(&c, &[v.x, v.y]));
    }
    for i in 0..hull.len() {
        best = best.max(segment_gap(&hull[i], &hull[(i + 1) % hull.len()], &sites));
    }
    Ok(best)
}

const SAMPLED_GAP_POINTS: usize = 4000;

/// sup over y in conv(s) of dist(y, s). Exact in dimensions 1 and 2; higher
/// dimensions use a seeded sample of the hull and report `true`.
pub fn solid_hull_gap(s: &PointSet) -> Result<(f64, bool)> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    match s.dim() {
        1 => Ok((gap_1d(s.iter().map(|p| p[0]).collect()), false)),
        2 => Ok((gap_2d(s)?, false)),
        dim => {
            let verts = convex_hull(s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut best = 0.0f64;
            for _ in 0..SAMPLED_GAP_POINTS {
                let w: Vec<f64> = (0..verts.len()).map(|_| -rng.gen::<f64>().ln()).collect();
                let total: f64 = w.iter().sum();
                let mut y = vec![0.0; dim];
                for (wi, v) in w.iter().zip(verts.iter()) {
                    for k in 0..dim {
                        y[k] += wi / total * v[k];
                    }
                }
                best = best.max(s.dist_to(&y));
            }
            Ok((best, true))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_space::build_uniform;

    #[test]
    fn aumann_singletons() {
        let space = build_uniform(3, 1.5).unwrap();
        let g = CellMultifunction::new(vec![
            PointSet::singleton(&[1.0, 0.0]),
            PointSet::singleton(&[0.0, 2.0]),
            PointSet::singleton(&[3.0, 3.0]),
        ])
        .unwrap();
        let s = aumann_integral(&g, &space, 100, None).unwrap();
        assert_eq!(s.len(), 1);
        assert!(dist(s.point(0), &[2.0, 2.5]) < 1e-14);
    }

    #[test]
    fn aumann_two_cells() {
        let space = build_uniform(2, 1.0).unwrap();
        let v = PointSet::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let g = CellMultifunction::new(vec![v.clone(), v]).unwrap();
        let s = aumann_integral(&g, &space, 4, None).unwrap();
        assert_eq!(s.sorted(), vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert!(matches!(aumann_integral(&g, &space, 3, None), Err(Error::BudgetExceeded { .. })));
        let sampled = aumann_integral(&g, &space, 3, Some(Sampling { samples: 200, seed: 7 })).unwrap();
        assert!(sampled.is_approximate());
        assert_eq!(sampled.len(), 3);
    }

    #[test]
    fn lyapunov_single_cell() {
        let m = VectorMeasure::new(vec![vec![1.0, 0.0]]).unwrap();
        let r = lyapunov_range(&m, None).unwrap();
        assert_eq!(r.range.sorted(), vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!((r.convexity_gap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_equal_cells() {
        for n in 1..=10 {
            let m = VectorMeasure::new(vec![vec![1.0 / n as f64, 0.0]; n]).unwrap();
            let r = lyapunov_range(&m, None).unwrap();
            assert!(r.convexity_gap <= 0.5 / n as f64 + 1e-15);
            assert!(r.range.contains_within(&[0.0, 0.0], 0.0));
        }
    }

    #[test]
    fn lyapunov_triangle_gap() {
        // Range of two cells (1,0), (0,1): the unit square corners.
        let m = VectorMeasure::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = lyapunov_range(&m, None).unwrap();
        assert_eq!(r.range.len(), 4);
        assert!((r.convexity_gap - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_too_many_cells() {
        let m = VectorMeasure::new(vec![vec![0.1]; 21]).unwrap();
        assert!(lyapunov_range(&m, None).is_err());
        let r = lyapunov_range(&m, Some(Sampling { samples: 500, seed: 1 })).unwrap();
        assert!(r.approximate && r.range.is_approximate());
    }

    #[test]
    fn segment_gap_two_sites() {
        let sites = [[0.0, 0.0], [1.0, 0.0]];
        assert!((segment_gap(&[0.0, 0.0], &[1.0, 0.0], &sites) - 0.5).abs() < 1e-15);
    }
}
