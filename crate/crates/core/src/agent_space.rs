//! Finite agent spaces: cell partitions with positive masses, refinement and
//! integration of cell functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u64,
    pub mass: f64,
}

/// A finite partition of the agent set. Cells are kept in a fixed order, which
/// also fixes the summation order of every integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAgentSpace")]
pub struct AgentSpace {
    cells: Vec<Cell>,
    total_mass: f64,
}

#[derive(Deserialize)]
struct RawAgentSpace {
    cells: Vec<Cell>,
    total_mass: f64,
}

impl TryFrom<RawAgentSpace> for AgentSpace {
    type Error = Error;
    fn try_from(raw: RawAgentSpace) -> Result<Self> {
        AgentSpace::new(raw.cells, raw.total_mass)
    }
}

impl AgentSpace {
    pub fn new(cells: Vec<Cell>, total_mass: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput("agent space needs at least one cell".into()));
        }
        if !(total_mass.is_finite() && total_mass > 0.0) {
            return Err(Error::InvalidInput(format!("total mass must be positive, got {total_mass}")));
        }
        let mut ids = std::collections::HashSet::with_capacity(cells.len());
        for c in &cells {
            if !(c.mass.is_finite() && c.mass > 0.0) {
                return Err(Error::InvalidInput(format!("cell {} has nonpositive mass {}", c.id, c.mass)));
            }
            if !ids.insert(c.id) {
                return Err(Error::InvalidInput(format!("duplicate cell id {}", c.id)));
            }
        }
        let sum: f64 = cells.iter().map(|c| c.mass).sum();
        if (sum - total_mass).abs() > MASS_REL_TOL * total_mass {
            return Err(Error::InvalidInput(format!(
                "cell masses sum to {sum}, expected total {total_mass}"
            )));
        }
        Ok(Self { cells, total_mass })
    }

    /// Builds a space from masses alone, numbering cells 0..n.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let cells = masses
            .iter()
            .enumerate()
            .map(|(i, &mass)| Cell { id: i as u64, mass })
            .collect();
        let total = masses.iter().sum();
        Self::new(cells, total)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn masses(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.mass).collect()
    }

    pub fn mass(&self, cell: usize) -> f64 {
        self.cells[cell].mass
    }
}

pub fn build_uniform(n_cells: usize, total_mass: f64) -> Result<AgentSpace> {
    if n_cells == 0 {
        return Err(Error::InvalidInput("n_cells must be at least 1".into()));
    }
    if !(total_mass.is_finite() && total_mass > 0.0) {
        return Err(Error::InvalidInput(format!("total mass must be positive, got {total_mass}")));
    }
    let mass = total_mass / n_cells as f64;
    let cells = (0..n_cells).map(|i| Cell { id: i as u64, mass }).collect();
    Ok(AgentSpace { cells, total_mass })
}

/// Result of splitting every cell of a space into equal-mass children.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub space: AgentSpace,
    /// `parents[j]` is the index of the parent cell of child `j`.
    pub parents: Vec<usize>,
}

pub fn refine(space: &AgentSpace, factor: usize) -> Result<Refinement> {
    if factor < 2 {
        return Err(Error::InvalidInput(format!("refinement factor must be >= 2, got {factor}")));
    }
    let mut cells = Vec::with_capacity(space.len() * factor);
    let mut parents = Vec::with_capacity(space.len() * factor);
    for (p, c) in space.cells.iter().enumerate() {
        let child = c.mass / factor as f64;
        for _ in 0..factor {
            cells.push(Cell { id: cells.len() as u64, mass: child });
            parents.push(p);
        }
    }
    Ok(Refinement { space: AgentSpace { cells, total_mass: space.total_mass }, parents })
}

/// Level sequence obtained by repeatedly refining a base space.
#[derive(Debug, Clone)]
pub struct RefinementSchedule {
    pub base: AgentSpace,
    pub levels: usize,
    pub split_factor: usize,
}

impl RefinementSchedule {
    pub fn new(base: AgentSpace, levels: usize, split_factor: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidInput("schedule needs at least one level".into()));
        }
        if split_factor < 2 {
            return Err(Error::InvalidInput(format!("split factor must be >= 2, got {split_factor}")));
        }
        Ok(Self { base, levels, split_factor })
    }

    /// The space at `level`; level 0 is the base.
    pub fn space(&self, level: usize) -> Result<AgentSpace> {
        if level > self.levels {
            return Err(Error::InvalidInput(format!("level {level} beyond schedule ({})", self.levels)));
        }
        let mut s = self.base.clone();
        for _ in 0..level {
            s = refine(&s, self.split_factor)?.space;
        }
        Ok(s)
    }
}

/// A vector-valued function constant on each cell, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    dim: usize,
    values: Vec<f64>,
}

impl CellFunction {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("cell function dim must be positive".into()));
        }
        if values.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, found: values.len() % dim });
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn constant(n_cells: usize, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(n_cells * value.len());
        for _ in 0..n_cells {
            values.extend_from_slice(value);
        }
        Self { dim: value.len(), values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn value(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn value_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.values[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Copies parent values down to the children of a refinement.
    pub fn lift(&self, parents: &[usize]) -> Self {
        let mut values = Vec::with_capacity(parents.len() * self.dim);
        for &p in parents {
            values.extend_from_slice(self.value(p));
        }
        Self { dim: self.dim, values }
    }

    pub fn linear_combination(&self, alpha: f64, other: &CellFunction, beta: f64) -> Result<Self> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), found: other.values.len() });
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(Self { dim: self.dim, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sum over cells of mass times value, in cell order.
pub fn integrate(f: &CellFunction, space: &AgentSpace) -> Result<Vec<f64>> {
    if f.n_cells() != space.len() {
        return Err(Error::DimensionMismatch { expected: space.len(), found: f.n_cells() });
    }
    let mut acc = vec![0.0; f.dim];
    for (c, row) in space.cells.iter().zip(f.rows()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += c.mass * v;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        let s = build_uniform(1, 1.0).unwrap();
        assert_eq!(s.masses(), vec![1.0]);
        let s = build_uniform(4, 1.0).unwrap();
        assert_eq!(s.masses(), vec![0.25; 4]);
        let s = build_uniform(3, 0.6).unwrap();
        for m in s.masses() {
            assert!((m - 0.2).abs() < 1e-15);
        }
        assert_eq!(s.total_mass(), 0.6);
        assert!(build_uniform(0, 1.0).is_err());
        assert!(build_uniform(2, 0.0).is_err());
        assert!(build_uniform(2, -1.0).is_err());
    }

    #[test]
    fn refine_examples() {
        let r = refine(&build_uniform(2, 1.0).unwrap(), 2).unwrap();
        assert_eq!(r.space.masses(), vec![0.25; 4]);
        assert_eq!(r.parents, vec![0, 0, 1, 1]);
        let r = refine(&build_uniform(1, 1.0).unwrap(), 3).unwrap();
        assert_eq!(r.space.masses(), vec![1.0 / 3.0; 3]);
        assert!(refine(&build_uniform(1, 1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn schedule_sizes() {
        let sched = RefinementSchedule::new(build_uniform(3, 1.0).unwrap(), 3, 2).unwrap();
        for l in 0..=3 {
            assert_eq!(sched.space(l).unwrap().len(), 3 * 2usize.pow(l as u32));
        }
        assert!(sched.space(4).is_err());
    }

    #[test]
    fn rejects_bad_cells() {
        let dup = vec![Cell { id: 1, mass: 0.5 }, Cell { id: 1, mass: 0.5 }];
        assert!(AgentSpace::new(dup, 1.0).is_err());
        let neg = vec![Cell { id: 0, mass: -0.5 }, Cell { id: 1, mass: 1.5 }];
        assert!(AgentSpace::new(neg, 1.0).is_err());
        let off = vec![Cell { id: 0, mass: 0.5 }];
        assert!(AgentSpace::new(off, 1.0).is_err());
    }

    #[test]
    fn integrate_examples() {
        let s = build_uniform(5, 2.0).unwrap();
        let f = CellFunction::constant(5, &[1.5, -1.0]);
        let v = integrate(&f, &s).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-14 && (v[1] + 2.0).abs() < 1e-14);

        let s = build_uniform(2, 1.0).unwrap();
        let f = CellFunction::from_rows(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(integrate(&f, &s).unwrap(), vec![0.5, 0.5]);

        let wrong = CellFunction::constant(3, &[1.0]);
        assert!(integrate(&wrong, &s).is_err());
    }
}
