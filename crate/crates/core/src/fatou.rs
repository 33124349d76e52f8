//! Fatou machinery for sequences of cell functions: Cesàro weak limits,
//! pointwise cluster sets, selections built by Carathéodory splitting, the
//! inclusion check, the approximate-selection epsilon and the sliding-bump
//! family.

use serde::Serialize;

use crate::agent_space::{integrate, AgentSpace, Cell, CellFunction};
use crate::error::{Error, Result};
use crate::set_analysis::{
    aumann_integral, caratheodory_nearest, dist, dot, inclusion_gap, norm, upper_limit, weak_upper_limit_proxy,
    wolfe, CellMultifunction, PointSet, TestPanel,
};

#[derive(Debug, Clone)]
pub struct FunctionSequence {
    space: AgentSpace,
    dim: usize,
    terms: Vec<CellFunction>,
    uniform_bound: f64,
}

impl FunctionSequence {
    pub fn new(space: AgentSpace, terms: Vec<CellFunction>, uniform_bound: f64) -> Result<Self> {
        let dim = terms
            .first()
            .map(|t| t.dim())
            .ok_or_else(|| Error::InvalidInput("function sequence needs at least one term".into()))?;
        if !(uniform_bound > 0.0) {
            return Err(Error::InvalidInput(format!("uniform bound must be positive, got {uniform_bound}")));
        }
        for (n, t) in terms.iter().enumerate() {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: t.dim() });
            }
            if t.n_cells() != space.len() {
                return Err(Error::DimensionMismatch { expected: space.len(), found: t.n_cells() });
            }
            if t.max_abs() > uniform_bound {
                return Err(Error::InvalidInput(format!(
                    "term {n} exceeds the uniform bound {uniform_bound}"
                )));
            }
        }
        Ok(Self { space, dim, terms, uniform_bound })
    }

    pub fn space(&self) -> &AgentSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[CellFunction] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn uniform_bound(&self) -> f64 {
        self.uniform_bound
    }

    pub fn integrals(&self) -> Result<Vec<Vec<f64>>> {
        self.terms.iter().map(|t| integrate(t, &self.space)).collect()
    }

    /// The values of one cell along the sequence, as singleton sets.
    pub fn trajectory(&self, cell: usize) -> Result<Vec<PointSet>> {
        if cell >= self.space.len() {
            return Err(Error::InvalidInput(format!("cell {cell} out of range")));
        }
        Ok(self.terms.iter().map(|t| PointSet::singleton(t.value(cell))).collect())
    }

    /// The same sequence on a refined space, each child copying its parent.
    pub fn lift(&self, refined: &AgentSpace, parents: &[usize]) -> Result<Self> {
        let terms = self.terms.iter().map(|t| t.lift(parents)).collect();
        Self::new(refined.clone(), terms, self.uniform_bound)
    }
}

#[derive(Debug, Clone)]
pub struct WeakLimit {
    pub limit: CellFunction,
    pub converged: bool,
    /// Largest per-cell distance between the last two window averages.
    pub max_change: f64,
}

fn window_average(terms: &[CellFunction]) -> CellFunction {
    let first = &terms[0];
    let mut acc = vec![0.0; first.as_slice().len()];
    for t in terms {
        for (a, v) in acc.iter_mut().zip(t.as_slice()) {
            *a += v;
        }
    }
    let n = terms.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    CellFunction::new(first.dim(), acc).expect("shape taken from an existing term")
}

/// Per-cell Cesàro average of the last `window` terms, compared against the
/// average of the `window` terms before it.
pub fn weak_limit(seq: &FunctionSequence, window: usize, tol: f64) -> Result<WeakLimit> {
    if window < 1 || seq.len() < 2 * window {
        return Err(Error::InvalidInput(format!(
            "weak limit needs at least {} terms, got {}",
            2 * window,
            seq.len()
        )));
    }
    let n = seq.len();
    let last = window_average(&seq.terms[n - window..]);
    let prev = window_average(&seq.terms[n - 2 * window..n - window]);
    let max_change = (0..last.n_cells()).map(|c| dist(last.value(c), prev.value(c))).fold(0.0, f64::max);
    Ok(WeakLimit { limit: last, converged: max_change <= tol, max_change })
}

/// Upper limit of one cell's trajectory.
pub fn cluster_points(seq: &FunctionSequence, cell: usize, window: usize, tol: f64) -> Result<PointSet> {
    upper_limit(&seq.trajectory(cell)?, window, tol)
}

/// Cluster points seen through a panel of test functionals; representatives
/// are projected onto the tested subspace.
pub fn cluster_points_proxy(
    seq: &FunctionSequence,
    cell: usize,
    panel: &TestPanel,
    window: usize,
    tol: f64,
) -> Result<PointSet> {
    weak_upper_limit_proxy(&seq.trajectory(cell)?, panel, window, tol, true)
}

fn cluster_sets(seq: &FunctionSequence, window: usize, tol: f64, panel: Option<&TestPanel>) -> Result<Vec<PointSet>> {
    (0..seq.space.len())
        .map(|c| match panel {
            Some(p) => cluster_points_proxy(seq, c, p, window, tol),
            None => cluster_points(seq, c, window, tol),
        })
        .collect()
}

/// Outcome of a Fatou selection.
#[derive(Debug, Clone, Serialize)]
pub struct FatouReport {
    /// Cesàro limit of the integrals over the trailing window.
    pub limit_integral: Vec<f64>,
    pub selection: CellFunction,
    pub selection_space: AgentSpace,
    /// Original cell of each selection subcell.
    pub parents: Vec<usize>,
    pub pointwise_gap: f64,
    pub integral_gap: f64,
    pub epsilon_needed: f64,
    pub dim: usize,
    pub cells: usize,
    pub window: usize,
    pub tol: f64,
}

impl FatouReport {
    pub const CSV_HEADER: &'static str = "dim,cells,window,tol,pointwise_gap,integral_gap,epsilon_needed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?}",
            self.dim, self.cells, self.window, self.tol, self.pointwise_gap, self.integral_gap, self.epsilon_needed
        )
    }

    pub fn selection_integral(&self) -> Vec<f64> {
        integrate(&self.selection, &self.selection_space).expect("selection lives on its own space")
    }
}

fn cesaro_integral(seq: &FunctionSequence, window: usize) -> Result<Vec<f64>> {
    let ints = seq.integrals()?;
    let tail = &ints[ints.len() - window..];
    let mut acc = vec![0.0; seq.dim];
    for v in tail {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= window as f64);
    Ok(acc)
}

/// Exact Fatou selection: every selection value is a cluster point of its
/// cell and the selection integrates to the Cesàro limit of the integrals.
pub fn fatou_select(seq: &FunctionSequence, window: usize, tol: f64) -> Result<FatouReport> {
    fatou_select_with(seq, window, tol, None)
}

/// Fatou selection with cluster sets taken through `panel` when given. The
/// weak limit is then projected onto the tested subspace before splitting.
pub fn fatou_select_with(
    seq: &FunctionSequence,
    window: usize,
    tol: f64,
    panel: Option<&TestPanel>,
) -> Result<FatouReport> {
    let wl = weak_limit(seq, window, tol)?;
    if !wl.converged {
        return Err(Error::NotConverged(format!(
            "window averages still move by {:e} > {tol:e}",
            wl.max_change
        )));
    }
    let clusters = cluster_sets(seq, window, tol, panel)?;
    let dim = seq.dim;

    let mut cells = Vec::new();
    let mut values = Vec::new();
    let mut parents = Vec::new();
    let mut pointwise_gap = 0.0f64;
    for (c, (cell, s)) in seq.space.cells().iter().zip(&clusters).enumerate() {
        if s.is_empty() {
            return Err(Error::HullFailure { cell: c, distance: f64::INFINITY });
        }
        let f0 = wl.limit.value(c);
        let target = match panel {
            Some(p) => p.project(f0),
            None => f0.to_vec(),
        };
        if s.len() == 1 {
            let gap = dist(&target, s.point(0));
            if gap > tol {
                return Err(Error::HullFailure { cell: c, distance: gap });
            }
            pointwise_gap = pointwise_gap.max(gap);
            cells.push(Cell { id: cells.len() as u64, mass: cell.mass });
            values.extend_from_slice(&target);
            parents.push(c);
            continue;
        }
        let dec = caratheodory_nearest(&target, s)?;
        if dec.residual > tol {
            return Err(Error::HullFailure { cell: c, distance: dec.residual });
        }
        for (&i, &w) in dec.indices.iter().zip(&dec.weights) {
            cells.push(Cell { id: cells.len() as u64, mass: w * cell.mass });
            values.extend_from_slice(s.point(i));
            parents.push(c);
        }
    }
    let selection_space = AgentSpace::new(cells, seq.space.total_mass())?;
    let selection = CellFunction::new(dim, values)?;
    let limit_integral = cesaro_integral(seq, window)?;
    let sel_int = integrate(&selection, &selection_space)?;
    let integral_gap = dist(&sel_int, &limit_integral);
    let epsilon_needed = epsilon_from_clusters(seq, &clusters, window, tol)?;
    Ok(FatouReport {
        limit_integral,
        selection,
        selection_space,
        parents,
        pointwise_gap,
        integral_gap,
        epsilon_needed,
        dim,
        cells: seq.space.len(),
        window,
        tol,
    })
}

/// gap between the upper limit of the integrals and the Aumann integral of
/// the cellwise cluster sets.
pub fn check_fatou_inclusion(seq: &FunctionSequence, window: usize, tol: f64, budget: usize) -> Result<f64> {
    let ints: Vec<PointSet> = seq.integrals()?.iter().map(|v| PointSet::singleton(v)).collect();
    let ls = upper_limit(&ints, window, tol)?;
    if ls.is_empty() {
        return Err(Error::NotConverged("integrals have no recurrent points in the window".into()));
    }
    let clusters = cluster_sets(seq, window, tol, None)?;
    let g = CellMultifunction::new(clusters)?;
    let aumann = aumann_integral(&g, &seq.space, budget, None)?;
    inclusion_gap(&ls, &aumann)
}

/// Smallest distance from the upper limit of the integrals to an integral of
/// a selection of the convexified cluster sets, which cell splitting realizes.
fn epsilon_from_clusters(seq: &FunctionSequence, clusters: &[PointSet], window: usize, tol: f64) -> Result<f64> {
    let ints: Vec<PointSet> = seq.integrals()?.iter().map(|v| PointSet::singleton(v)).collect();
    let ls = upper_limit(&ints, window, tol)?;
    if ls.is_empty() {
        return Err(Error::NotConverged("integrals have no recurrent points in the window".into()));
    }
    let masses = seq.space.masses();
    let dim = seq.dim;
    let mut best = f64::INFINITY;
    for y in ls.iter() {
        let vertex = |x: &[f64]| {
            let mut choice = Vec::with_capacity(clusters.len());
            let mut v: Vec<f64> = y.iter().map(|t| -t).collect();
            for (s, m) in clusters.iter().zip(&masses) {
                let j = (0..s.len())
                    .min_by(|&a, &b| dot(x, s.point(a)).partial_cmp(&dot(x, s.point(b))).expect("finite"))
                    .expect("nonempty cluster set");
                choice.push(j);
                for k in 0..dim {
                    v[k] += m * s.point(j)[k];
                }
            }
            (choice, v)
        };
        let start = vertex(&vec![0.0; dim]);
        let steps = 50 * (dim + clusters.iter().map(|s| s.len()).sum::<usize>() + 1);
        let r = wolfe(start, vertex, steps);
        best = best.min(norm(&r.point));
    }
    Ok(best)
}

/// Minimum over split selections of the distance between the selection
/// integral and the upper limit of the integrals.
pub fn approx_fatou_epsilon(
    seq: &FunctionSequence,
    window: usize,
    tol: f64,
    panel: Option<&TestPanel>,
) -> Result<f64> {
    let clusters = cluster_sets(seq, window, tol, panel)?;
    epsilon_from_clusters(seq, &clusters, window, tol)
}

/// f_n(cell) = scale * e_{(n + id(cell)) mod d}.
pub fn sliding_bump_sequence(space: &AgentSpace, d: usize, scale: f64, n_terms: usize) -> Result<FunctionSequence> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("bump dimension must be >= 2, got {d}")));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidInput(format!("bump scale must be positive, got {scale}")));
    }
    let terms = (0..n_terms)
        .map(|n| {
            let mut values = vec![0.0; space.len() * d];
            for (c, cell) in space.cells().iter().enumerate() {
                let j = ((n as u64 + cell.id) % d as u64) as usize;
                values[c * d + j] = scale;
            }
            CellFunction::new(d, values).expect("dimension is positive")
        })
        .collect();
    FunctionSequence::new(space.clone(), terms, scale)
}
