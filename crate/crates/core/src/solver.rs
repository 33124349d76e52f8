//! Walrasian equilibrium computation: projected tatonnement, n-bounded
//! truncated equilibria, the truncation limit and residual verification.

use serde::{Deserialize, Serialize};

use crate::agent_space::{AgentSpace, CellFunction};
use crate::economy::{
    demand, selected_allocation, utility, DemandOutcome, Economy, PriceNorm, PriceVector, Selector,
};
use crate::error::{Error, Result};
use crate::fatou::{fatou_select, FatouReport, FunctionSequence};
use crate::set_analysis::{dist, dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub step: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    /// Step multiplier applied once per halving.
    pub damping: f64,
    pub price_floor: f64,
    pub norm: PriceNorm,
    pub selector: Selector,
    /// Excess supply of a good priced at the floor counts as disposed.
    pub free_disposal: bool,
    /// Tolerance used when verifying a computed equilibrium.
    pub verify_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            step: 0.5,
            max_iters: 20_000,
            residual_tol: 1e-11,
            damping: 0.5,
            price_floor: 1e-8,
            norm: PriceNorm::UnitSum,
            selector: Selector::LexSmallest,
            free_disposal: false,
            verify_tol: 1e-8,
        }
    }
}

impl SolverParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.step > 0.0) || !(self.residual_tol > 0.0) || !(self.verify_tol > 0.0) {
            return Err(Error::InvalidInput("step and tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
        }
        if !(self.price_floor >= 0.0) {
            return Err(Error::InvalidInput("price floor must be nonnegative".into()));
        }
        let limit = match self.norm {
            PriceNorm::UnitSum => 1.0 / k as f64,
            PriceNorm::Euclidean => 1.0 / (k as f64).sqrt(),
        };
        if self.price_floor >= limit {
            return Err(Error::InvalidInput(format!("price floor {} is not below {limit}", self.price_floor)));
        }
        Ok(())
    }
}

/// An allocation on the economy's cells or on a split of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Allocation {
    pub space: AgentSpace,
    pub values: CellFunction,
    /// Economy cell that each allocation cell belongs to.
    pub parents: Vec<usize>,
}

impl Allocation {
    pub fn on_cells(econ: &Economy, values: CellFunction) -> Result<Self> {
        if values.n_cells() != econ.space.len() || values.dim() != econ.k {
            return Err(Error::DimensionMismatch { expected: econ.space.len(), found: values.n_cells() });
        }
        Ok(Self { space: econ.space.clone(), values, parents: (0..econ.space.len()).collect() })
    }

    pub fn from_fatou(report: &FatouReport) -> Self {
        Self {
            space: report.selection_space.clone(),
            values: report.selection.clone(),
            parents: report.parents.clone(),
        }
    }

    pub fn integral(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.dim()];
        for (c, row) in self.space.cells().iter().zip(self.values.rows()) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += c.mass * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub clearing_residual: f64,
    /// Largest budget overspend, max(0, <p,f> - <p,w>).
    pub budget_residual_max: f64,
    /// Largest |<p,f> - <p,w>| over cells.
    pub budget_equality_max: f64,
    pub optimality_gap_max: f64,
    /// Largest shortfall of f below w on satiated cells.
    pub satiation_violation_max: f64,
    pub free_disposal: bool,
}

impl Verification {
    pub fn worst(&self) -> f64 {
        self.clearing_residual
            .max(self.budget_residual_max)
            .max(self.optimality_gap_max)
            .max(self.satiation_violation_max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub price: PriceVector,
    pub allocation: Allocation,
    pub clearing_residual: f64,
    pub budget_residual_max: f64,
    pub optimality_gap_max: f64,
    pub free_disposal: bool,
    pub iterations: usize,
    pub converged: bool,
    /// Some coordinate sits at the price floor.
    pub floor_binding: bool,
    /// Truncation level, for n-bounded solves.
    pub truncation: Option<usize>,
    /// Some cell's selected bundle touches its cap.
    pub caps_binding: bool,
    pub verification: Verification,
    /// (iteration, residual) pairs at accepted steps.
    pub trace: Vec<(usize, f64)>,
}

impl EquilibriumResult {
    pub const CSV_HEADER: &'static str =
        "truncation,iterations,converged,clearing_residual,budget_residual_max,optimality_gap_max,caps_binding";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{}",
            self.truncation.map_or(String::new(), |n| n.to_string()),
            self.iterations,
            self.converged,
            self.clearing_residual,
            self.budget_residual_max,
            self.optimality_gap_max,
            self.caps_binding
        )
    }
}

fn normalize(values: &[f64], norm: PriceNorm) -> Result<PriceVector> {
    PriceVector::new(values.to_vec(), norm)
}

/// Normalizes with every coordinate at least `floor`; floored coordinates sit
/// exactly at the floor and the free ones absorb the normalization.
fn floor_and_normalize(p: &[f64], floors: &[f64], norm: PriceNorm) -> Result<Vec<f64>> {
    let clipped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let mut q = normalize(&clipped, norm)?.values().to_vec();
    let mut pinned = vec![false; q.len()];
    for _ in 0..=q.len() {
        let mut changed = false;
        for ((v, pin), f) in q.iter_mut().zip(pinned.iter_mut()).zip(floors) {
            if !*pin && *v < *f {
                *pin = true;
                changed = true;
            }
        }
        let pinned_sum: f64 = floors.iter().zip(&pinned).filter(|(_, b)| **b).map(|(f, _)| *f).sum();
        let pinned_sq: f64 = floors.iter().zip(&pinned).filter(|(_, b)| **b).map(|(f, _)| f * f).sum();
        let (free_now, target) = match norm {
            PriceNorm::UnitSum => {
                let s: f64 = q.iter().zip(&pinned).filter(|(_, b)| !**b).map(|(v, _)| *v).sum();
                (s, 1.0 - pinned_sum)
            }
            PriceNorm::Euclidean => {
                let s: f64 = q.iter().zip(&pinned).filter(|(_, b)| !**b).map(|(v, _)| v * v).sum::<f64>().sqrt();
                (s, (1.0 - pinned_sq).max(0.0).sqrt())
            }
        };
        if !(free_now > 0.0) {
            return Err(Error::InvalidInput("every price coordinate is at the floor".into()));
        }
        let scale = target / free_now;
        for ((v, pin), f) in q.iter_mut().zip(&pinned).zip(floors) {
            *v = if *pin { *f } else { *v * scale };
        }
        if !changed && q.iter().zip(floors).all(|(v, f)| v >= f) {
            break;
        }
    }
    Ok(q)
}

fn residual_norm(z: &[f64], p: &[f64], floors: &[f64], free_disposal: bool) -> f64 {
    if !free_disposal {
        return norm(z);
    }
    z.iter()
        .zip(p)
        .zip(floors)
        .map(|((&zj, &pj), &f)| if pj <= f * (1.0 + 1e-9) { zj.max(0.0) } else { zj })
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Per-good price floors. Under free disposal a good no agent values may
/// fall to a zero price; every other good keeps the configured floor.
fn price_floors(econ: &Economy, params: &SolverParams) -> Vec<f64> {
    (0..econ.k)
        .map(|j| {
            let valued = econ.profiles.iter().any(|p| p.preference.values_good(j));
            if params.free_disposal && !valued {
                0.0
            } else {
                params.price_floor
            }
        })
        .collect()
}

/// Damped projected tatonnement with step halving on residual increase.
///
/// The update uses excess demand relative to aggregate supply so that the
/// step is unit-free; convergence is judged on the raw excess demand.
pub fn tatonnement(econ: &Economy, p0: &PriceVector, params: &SolverParams) -> Result<EquilibriumResult> {
    params.validate(econ.k)?;
    if p0.dim() != econ.k {
        return Err(Error::DimensionMismatch { expected: econ.k, found: p0.dim() });
    }
    let supply = econ.aggregate_endowment();
    let floors = price_floors(econ, params);
    let mut p = floor_and_normalize(p0.values(), &floors, params.norm)?;
    let mut z = crate::economy::excess_demand(econ, &p, params.selector)?;
    let mut r = residual_norm(&z, &p, &floors, params.free_disposal);
    let mut step = params.step;
    let mut iterations = 0;
    let mut trace = vec![(0, r)];
    while r > params.residual_tol && iterations < params.max_iters {
        iterations += 1;
        let cand: Vec<f64> = p.iter().zip(&z).zip(&supply).map(|((pj, zj), sj)| pj + step * zj / sj).collect();
        let cand = floor_and_normalize(&cand, &floors, params.norm)?;
        let zc = crate::economy::excess_demand(econ, &cand, params.selector)?;
        let rc = residual_norm(&zc, &cand, &floors, params.free_disposal);
        if rc < r {
            p = cand;
            z = zc;
            r = rc;
            trace.push((iterations, r));
            step = (step * 1.2).min(params.step);
        } else {
            step *= params.damping;
            if step < 1e-14 {
                break;
            }
        }
    }
    let converged = r <= params.residual_tol;
    finish(econ, p, params, iterations, converged, None, trace)
}

fn finish(
    econ: &Economy,
    p: Vec<f64>,
    params: &SolverParams,
    iterations: usize,
    converged: bool,
    truncation: Option<usize>,
    trace: Vec<(usize, f64)>,
) -> Result<EquilibriumResult> {
    let values = selected_allocation(econ, &p, params.selector)?;
    let caps_binding = match &econ.caps {
        Some(caps) => values
            .rows()
            .zip(caps)
            .any(|(x, c)| x.iter().zip(c).any(|(xi, ci)| (ci - xi).abs() <= 1e-12 * ci.max(1.0))),
        None => false,
    };
    let allocation = Allocation::on_cells(econ, values)?;
    let v = verify_equilibrium(econ, &p, &allocation, params.free_disposal)?;
    let floors = price_floors(econ, params);
    let floor_binding = p.iter().zip(&floors).any(|(v, f)| *f > 0.0 && *v <= f * (1.0 + 1e-9));
    Ok(EquilibriumResult {
        price: normalize(&p, params.norm)?,
        allocation,
        clearing_residual: v.clearing_residual,
        budget_residual_max: v.budget_residual_max,
        optimality_gap_max: v.optimality_gap_max,
        free_disposal: params.free_disposal,
        iterations,
        converged,
        floor_binding,
        truncation,
        caps_binding,
        verification: v,
        trace,
    })
}

/// Per-cell cap n(1 + sum of endowment) in every good, intersected with
/// any cap the economy already has.
pub fn truncation_caps(econ: &Economy, n: usize) -> Vec<Vec<f64>> {
    econ.profiles
        .iter()
        .enumerate()
        .map(|(c, prof)| {
            let level = n as f64 * (1.0 + prof.endowment.iter().sum::<f64>());
            (0..econ.k).map(|j| econ.cap(c).map_or(level, |cap| cap[j].min(level))).collect()
        })
        .collect()
}

pub fn truncated_equilibrium(
    econ: &Economy,
    n: usize,
    p0: &PriceVector,
    params: &SolverParams,
) -> Result<EquilibriumResult> {
    if n == 0 {
        return Err(Error::InvalidInput("truncation level must be at least 1".into()));
    }
    let capped = econ.with_caps(Some(truncation_caps(econ, n)))?;
    let mut res = tatonnement(&capped, p0, params)?;
    res.truncation = Some(n);
    Ok(res)
}

#[derive(Debug, Clone, Serialize)]
pub struct SchmeidlerResult {
    pub levels: Vec<EquilibriumResult>,
    /// Largest pairwise price distance inside the trailing window.
    pub cauchy_spread: f64,
    pub fatou: FatouReport,
    /// Limit price with the split allocation verified against the economy.
    pub limit: EquilibriumResult,
    /// Largest |<p,f(t)> - <p,w(t)>| over the split cells.
    pub budget_equality_max: f64,
}

/// Trailing-window price spread; errors when the prices are not Cauchy.
pub fn price_cauchy_tail(prices: &[Vec<f64>], window: usize, tol: f64) -> Result<f64> {
    if window == 0 || prices.len() < window {
        return Err(Error::InvalidInput(format!("need at least {window} price levels, have {}", prices.len())));
    }
    let tail = &prices[prices.len() - window..];
    let mut spread: f64 = 0.0;
    for (i, a) in tail.iter().enumerate() {
        for b in &tail[i + 1..] {
            spread = spread.max(dist(a, b));
        }
    }
    if spread > tol {
        return Err(Error::NotConverged(format!("price spread {spread:e} over the last {window} levels exceeds {tol:e}")));
    }
    Ok(spread)
}

/// Solves the n-bounded economies along `schedule`, takes the price limit
/// over the trailing window and a Fatou selection of the allocations, then
/// verifies the limit pair against the untruncated economy.
pub fn schmeidler_limit(
    econ: &Economy,
    schedule: &[usize],
    params: &SolverParams,
    window: usize,
    tol: f64,
) -> Result<SchmeidlerResult> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("schedule must be nonempty and strictly increasing".into()));
    }
    let mut p0 = PriceVector::new(vec![1.0; econ.k], params.norm)?;
    let mut levels = Vec::with_capacity(schedule.len());
    for &n in schedule {
        let res = truncated_equilibrium(econ, n, &p0, params)?;
        if !res.converged {
            return Err(Error::NotConverged(format!("truncated solve at n = {n} did not converge")));
        }
        p0 = res.price.clone();
        levels.push(res);
    }
    let prices: Vec<Vec<f64>> = levels.iter().map(|r| r.price.values().to_vec()).collect();
    let cauchy_spread = price_cauchy_tail(&prices, window, tol)?;
    let p = prices.last().expect("nonempty").clone();

    let terms: Vec<CellFunction> = levels.iter().map(|r| r.allocation.values.clone()).collect();
    let bound = terms.iter().map(|t| t.max_abs()).fold(0.0, f64::max);
    let seq = FunctionSequence::new(econ.space.clone(), terms, bound)?;
    let fatou = fatou_select(&seq, window.min(schedule.len() / 2).max(1), tol)?;
    let allocation = Allocation::from_fatou(&fatou);
    let v = verify_equilibrium(econ, &p, &allocation, params.free_disposal)?;
    let converged = v.worst() <= params.verify_tol.max(tol);
    let last = levels.last().expect("nonempty");
    let limit = EquilibriumResult {
        price: normalize(&p, params.norm)?,
        allocation,
        clearing_residual: v.clearing_residual,
        budget_residual_max: v.budget_residual_max,
        optimality_gap_max: v.optimality_gap_max,
        free_disposal: params.free_disposal,
        iterations: levels.iter().map(|r| r.iterations).sum(),
        converged,
        floor_binding: last.floor_binding,
        truncation: None,
        caps_binding: false,
        verification: v.clone(),
        trace: Vec::new(),
    };
    Ok(SchmeidlerResult { levels, cauchy_spread, fatou, limit, budget_equality_max: v.budget_equality_max })
}

/// Clearing, budget, optimality and satiation residuals of (p, allocation).
pub fn verify_equilibrium(econ: &Economy, p: &[f64], alloc: &Allocation, free_disposal: bool) -> Result<Verification> {
    if p.len() != econ.k || alloc.values.dim() != econ.k {
        return Err(Error::DimensionMismatch { expected: econ.k, found: p.len() });
    }
    if alloc.parents.len() != alloc.space.len() || alloc.values.n_cells() != alloc.space.len() {
        return Err(Error::DimensionMismatch { expected: alloc.space.len(), found: alloc.parents.len() });
    }
    if let Some(&bad) = alloc.parents.iter().find(|&&c| c >= econ.space.len()) {
        return Err(Error::InvalidInput(format!("allocation cell maps to missing economy cell {bad}")));
    }
    let mut z = alloc.integral();
    for (a, w) in z.iter_mut().zip(econ.aggregate_endowment()) {
        *a -= w;
    }
    let clearing_residual = if free_disposal { z.iter().map(|v| v.max(0.0)).sum() } else { norm(&z) };

    // A degenerate demand means utility is unbounded on the budget set, so
    // no allocation is optimal there.
    let ds = econ
        .profiles
        .iter()
        .enumerate()
        .map(|(c, prof)| demand(prof, p, econ.cap(c)).map(|o| o.bundles()))
        .collect::<Result<Vec<_>>>()?;
    let mut budget_residual_max: f64 = 0.0;
    let mut budget_equality_max: f64 = 0.0;
    let mut optimality_gap_max: f64 = 0.0;
    let mut satiation_violation_max: f64 = 0.0;
    for (row, &parent) in alloc.values.rows().zip(&alloc.parents) {
        let prof = &econ.profiles[parent];
        let spend = dot(p, row) - dot(p, &prof.endowment);
        budget_residual_max = budget_residual_max.max(spend.max(0.0));
        budget_equality_max = budget_equality_max.max(spend.abs());
        let Some(d) = &ds[parent] else {
            optimality_gap_max = f64::INFINITY;
            continue;
        };
        if d.satiated {
            for (x, w) in row.iter().zip(&prof.endowment) {
                satiation_violation_max = satiation_violation_max.max(w - x);
            }
            continue;
        }
        let clipped: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
        let u_f = match utility(&prof.preference, &clipped) {
            Ok(u) => u,
            Err(_) => f64::NEG_INFINITY,
        };
        let u_best = utility(&prof.preference, d.select(Selector::LexSmallest))?;
        optimality_gap_max = optimality_gap_max.max((u_best - u_f).max(0.0));
    }
    Ok(Verification {
        clearing_residual,
        budget_residual_max,
        budget_equality_max,
        optimality_gap_max,
        satiation_violation_max,
        free_disposal,
    })
}

/// Whether every cell has a well-defined demand at `p`.
pub fn demand_defined(econ: &Economy, p: &[f64]) -> Result<bool> {
    for (c, prof) in econ.profiles.iter().enumerate() {
        if matches!(demand(prof, p, econ.cap(c))?, DemandOutcome::Degenerate) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_space::build_uniform;
    use crate::economy::{AgentProfile, Preference};

    fn cd(w: &[f64], endow: &[f64]) -> AgentProfile {
        AgentProfile::new(Preference::CobbDouglas { weights: w.to_vec() }, endow.to_vec()).unwrap()
    }

    fn symmetric() -> Economy {
        Economy::new(
            build_uniform(2, 1.0).unwrap(),
            vec![cd(&[0.5, 0.5], &[1.0, 0.0]), cd(&[0.5, 0.5], &[0.0, 1.0])],
            None,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_two_good() {
        let econ = symmetric();
        let p0 = PriceVector::new(vec![0.8, 0.2], PriceNorm::UnitSum).unwrap();
        let r = tatonnement(&econ, &p0, &SolverParams::default()).unwrap();
        assert!(r.converged);
        assert!((r.price.values()[0] - 0.5).abs() < 1e-9);
        assert!(r.verification.worst() <= 1e-8);
        assert!(!r.floor_binding);
    }

    #[test]
    fn single_agent_autarky() {
        let econ = Economy::new(build_uniform(1, 1.0).unwrap(), vec![cd(&[0.3, 0.7], &[1.0, 2.0])], None).unwrap();
        let p0 = PriceVector::new(vec![0.3, 0.7], PriceNorm::UnitSum).unwrap();
        let r = tatonnement(&econ, &p0, &SolverParams::default()).unwrap();
        assert!(r.converged);
        assert!(r.clearing_residual <= 1e-10);
        assert!(r.budget_residual_max <= 1e-12);
    }

    #[test]
    fn perturbed_allocation_clearing() {
        let econ = symmetric();
        let p = [0.5, 0.5];
        let mut f = selected_allocation(&econ, &p, Selector::LexSmallest).unwrap();
        f.value_mut(0)[0] += 0.1;
        let alloc = Allocation::on_cells(&econ, f).unwrap();
        let v = verify_equilibrium(&econ, &p, &alloc, false).unwrap();
        assert!((v.clearing_residual - 0.5 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn truncation_limit_symmetric() {
        let econ = symmetric();
        let r = schmeidler_limit(&econ, &[1, 2, 4, 8], &SolverParams::default(), 2, 1e-6).unwrap();
        assert!((r.limit.price.values()[0] - 0.5).abs() < 1e-6);
        assert!(r.budget_equality_max <= 1e-8);
        assert!(r.limit.converged);
    }

    #[test]
    fn cauchy_tail_rejects_drift() {
        let prices = vec![vec![0.5, 0.5], vec![0.4, 0.6], vec![0.3, 0.7]];
        assert!(price_cauchy_tail(&prices, 2, 1e-6).is_err());
        let prices = vec![vec![0.5, 0.5], vec![0.3, 0.7], vec![0.3, 0.7]];
        assert_eq!(price_cauchy_tail(&prices, 2, 1e-6).unwrap(), 0.0);
    }
}
