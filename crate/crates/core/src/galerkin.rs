//! Nested finite-dimensional approximation schemes.
//!
//! The dyadic scheme works on [0,1) with the uniform reference measure: level
//! n has 2^n equal bins and P_n is block averaging from the top level. Vectors
//! are densities sampled per top-level bin, so pairings weight each top bin by
//! its width. The coordinate scheme keeps the first d_n coordinates of R^K.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DYADIC_LEVEL: usize = 12;

/// Scheme description as it appears in scenario configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeDescriptor {
    Dyadic { n_max: usize },
    Coordinate { dims: Vec<usize> },
}

impl SchemeDescriptor {
    pub fn build(&self) -> Result<GalerkinScheme> {
        match self {
            SchemeDescriptor::Dyadic { n_max } => dyadic_scheme(*n_max),
            SchemeDescriptor::Coordinate { dims } => coordinate_scheme(dims.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Dyadic { n_max: usize },
    Coordinate { dims: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinScheme {
    kind: Kind,
}

pub fn dyadic_scheme(n_max: usize) -> Result<GalerkinScheme> {
    if !(1..=MAX_DYADIC_LEVEL).contains(&n_max) {
        return Err(Error::InvalidInput(format!("dyadic n_max must be in 1..={MAX_DYADIC_LEVEL}, got {n_max}")));
    }
    Ok(GalerkinScheme { kind: Kind::Dyadic { n_max } })
}

/// Level n keeps the first `dims[n-1]` coordinates; the top dimension is the last entry.
pub fn coordinate_scheme(dims: Vec<usize>) -> Result<GalerkinScheme> {
    if dims.is_empty() || dims[0] == 0 || dims.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("coordinate dims must be positive and strictly increasing".into()));
    }
    Ok(GalerkinScheme { kind: Kind::Coordinate { dims } })
}

impl GalerkinScheme {
    pub fn descriptor(&self) -> SchemeDescriptor {
        match &self.kind {
            Kind::Dyadic { n_max } => SchemeDescriptor::Dyadic { n_max: *n_max },
            Kind::Coordinate { dims } => SchemeDescriptor::Coordinate { dims: dims.clone() },
        }
    }

    pub fn is_dyadic(&self) -> bool {
        matches!(self.kind, Kind::Dyadic { .. })
    }

    /// Highest level index.
    pub fn n_max(&self) -> usize {
        match &self.kind {
            Kind::Dyadic { n_max } => *n_max,
            Kind::Coordinate { dims } => dims.len(),
        }
    }

    /// Dimension of the top-level space.
    pub fn top_dim(&self) -> usize {
        self.dim(self.n_max()).expect("top level exists")
    }

    pub fn dim(&self, n: usize) -> Result<usize> {
        self.check_level(n)?;
        Ok(match &self.kind {
            Kind::Dyadic { .. } => 1 << n,
            Kind::Coordinate { dims } => dims[n - 1],
        })
    }

    fn check_level(&self, n: usize) -> Result<()> {
        let lo = if self.is_dyadic() { 0 } else { 1 };
        if n < lo || n > self.n_max() {
            return Err(Error::InvalidInput(format!("level {n} outside {lo}..={}", self.n_max())));
        }
        Ok(())
    }

    fn check_top(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.top_dim() {
            return Err(Error::DimensionMismatch { expected: self.top_dim(), found: x.len() });
        }
        Ok(())
    }

    /// Reference-measure weight of each top-level coordinate.
    pub fn weights(&self) -> Vec<f64> {
        let d = self.top_dim();
        match &self.kind {
            Kind::Dyadic { .. } => vec![1.0 / d as f64; d],
            Kind::Coordinate { .. } => vec![1.0; d],
        }
    }

    /// Weights of the level-n coordinates (bin widths for dyadic).
    pub fn level_weights(&self, n: usize) -> Result<Vec<f64>> {
        let d = self.dim(n)?;
        Ok(match &self.kind {
            Kind::Dyadic { .. } => vec![1.0 / d as f64; d],
            Kind::Coordinate { .. } => vec![1.0; d],
        })
    }

    /// Pairing of two top-level vectors against the reference measure.
    pub fn pair(&self, a: &[f64], x: &[f64]) -> Result<f64> {
        self.check_top(a)?;
        self.check_top(x)?;
        Ok(self.weights().iter().zip(a).zip(x).map(|((w, a), x)| w * a * x).sum())
    }

    /// Level-n coordinates of a top-level vector.
    pub fn restrict(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_top(x)?;
        let d = self.dim(n)?;
        Ok(match &self.kind {
            Kind::Dyadic { .. } => {
                // Pairwise averaging one level at a time keeps constants exact.
                let mut y = x.to_vec();
                while y.len() > d {
                    y = y.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect();
                }
                y
            }
            Kind::Coordinate { .. } => x[..d].to_vec(),
        })
    }

    /// Top-level vector of level-n coordinates: constant extension for
    /// dyadic, zero padding for coordinate schemes.
    pub fn embed(&self, y: &[f64], n: usize) -> Result<Vec<f64>> {
        let d = self.dim(n)?;
        if y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: y.len() });
        }
        let top = self.top_dim();
        Ok(match &self.kind {
            Kind::Dyadic { .. } => {
                let block = top / d;
                y.iter().flat_map(|v| std::iter::repeat(*v).take(block)).collect()
            }
            Kind::Coordinate { .. } => {
                let mut out = vec![0.0; top];
                out[..d].copy_from_slice(y);
                out
            }
        })
    }

    /// P_n x, re-embedded at the top level.
    pub fn project(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        let y = self.restrict(x, n)?;
        self.embed(&y, n)
    }

    /// Q_n applied to a top-level price density.
    pub fn adjoint_project(&self, p: &[f64], n: usize) -> Result<Vec<f64>> {
        // Both schemes are self-adjoint for their reference weights.
        self.project(p, n)
    }

    /// Largest normalized pairing error max_j |<a_j, P_n x - x>| / (1 + |a_j|_1).
    pub fn weak_convergence_gap(&self, x: &[f64], tests: &[Vec<f64>], n: usize) -> Result<f64> {
        let px = self.project(x, n)?;
        let diff: Vec<f64> = px.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut gap: f64 = 0.0;
        for a in tests {
            let l1 = self.pair(&a.iter().map(|v| v.abs()).collect::<Vec<_>>(), &vec![1.0; a.len()])?;
            gap = gap.max(self.pair(a, &diff)?.abs() / (1.0 + l1));
        }
        Ok(gap)
    }

    /// (n, gap) CSV for the levels in `levels`.
    pub fn gap_trace_csv(&self, x: &[f64], tests: &[Vec<f64>], levels: &[usize]) -> Result<String> {
        let mut out = String::from("n,gap\n");
        for &n in levels {
            out.push_str(&format!("{n},{:e}\n", self.weak_convergence_gap(x, tests, n)?));
        }
        Ok(out)
    }
}

/// Top-level density of the indicator of [lo, hi): each bin gets its covered fraction.
pub fn interval_density(scheme: &GalerkinScheme, lo: f64, hi: f64) -> Vec<f64> {
    let d = scheme.top_dim();
    let h = 1.0 / d as f64;
    (0..d)
        .map(|i| {
            let a = i as f64 * h;
            let b = a + h;
            ((hi.min(b) - lo.max(a)).max(0.0)) / h
        })
        .collect()
}

/// Top-level samples of g at bin midpoints.
pub fn sample_midpoints(scheme: &GalerkinScheme, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let d = scheme.top_dim();
    (0..d).map(|i| g((i as f64 + 0.5) / d as f64)).collect()
}
