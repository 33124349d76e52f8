//! Function-space economies solved level by level along an approximation
//! scheme, with limit verification and a price-concentration diagnostic.
//!
//! Level-n commodity coordinates are bin amounts (density times bin weight),
//! so plain dot products of prices and bundles equal the reference pairing
//! when prices are read as densities.

use serde::{Deserialize, Serialize};

use crate::agent_space::{AgentSpace, CellFunction};
use crate::economy::{AgentProfile, Economy, Preference, PriceNorm, PriceVector, Selector};
use crate::error::{Error, Result};
use crate::fatou::{fatou_select, FatouReport, FunctionSequence};
use crate::galerkin::{interval_density, GalerkinScheme, SchemeDescriptor};
use crate::solver::{tatonnement, verify_equilibrium, Allocation, EquilibriumResult, SolverParams, Verification};

pub const DEFAULT_GROWTH_THRESHOLD: f64 = 0.5;
const LIFT_REL_TOL: f64 = 1e-9;

/// A density on the commodity domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    Constant { value: f64 },
    /// Equal-width steps over [0,1), or raw coordinates for coordinate schemes.
    Steps { values: Vec<f64> },
    Interval { lo: f64, hi: f64, value: f64 },
    /// 2^n on the last level-n bin [1 - 2^-n, 1): a different functional at every level.
    TailBin,
}

impl DensitySpec {
    pub fn is_level_dependent(&self) -> bool {
        matches!(self, DensitySpec::TailBin)
    }

    /// Top-level vector of the density as seen from level `n`.
    pub fn top(&self, scheme: &GalerkinScheme, n: usize) -> Result<Vec<f64>> {
        let top = scheme.top_dim();
        Ok(match self {
            DensitySpec::Constant { value } => vec![*value; top],
            DensitySpec::Steps { values } => {
                if values.is_empty() || top % values.len() != 0 {
                    return Err(Error::InvalidInput(format!(
                        "{} steps do not divide the top dimension {top}",
                        values.len()
                    )));
                }
                if !scheme.is_dyadic() && values.len() != top {
                    return Err(Error::DimensionMismatch { expected: top, found: values.len() });
                }
                let block = top / values.len();
                values.iter().flat_map(|v| std::iter::repeat(*v).take(block)).collect()
            }
            DensitySpec::Interval { lo, hi, value } => {
                if !scheme.is_dyadic() {
                    return Err(Error::InvalidInput("interval densities need a dyadic scheme".into()));
                }
                interval_density(scheme, *lo, *hi).into_iter().map(|v| v * value).collect()
            }
            DensitySpec::TailBin => {
                if !scheme.is_dyadic() {
                    return Err(Error::InvalidInput("tail-bin densities need a dyadic scheme".into()));
                }
                let bins = scheme.dim(n)?;
                let block = top / bins;
                let mut v = vec![0.0; top];
                for x in &mut v[top - block..] {
                    *x = bins as f64;
                }
                v
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTypeSpec {
    pub moments: Vec<DensitySpec>,
    /// Cobb-Douglas or CES over the moments.
    pub inner: Preference,
    pub endowment: DensitySpec,
    /// Declared bundle z(t) for the interiority margin; zero when absent.
    #[serde(default)]
    pub reserve: Option<DensitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpaceEconomySpec {
    pub space: AgentSpace,
    pub scheme: SchemeDescriptor,
    /// One type per agent cell.
    pub types: Vec<AgentTypeSpec>,
    pub margin: f64,
    #[serde(default)]
    pub cap: Option<DensitySpec>,
}

impl FunctionSpaceEconomySpec {
    pub fn validate(&self) -> Result<GalerkinScheme> {
        let scheme = self.scheme.build()?;
        if self.types.len() != self.space.len() {
            return Err(Error::DimensionMismatch { expected: self.space.len(), found: self.types.len() });
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidInput("interiority margin must be positive".into()));
        }
        let top_level = scheme.n_max();
        for (i, t) in self.types.iter().enumerate() {
            if t.moments.is_empty() {
                return Err(Error::InvalidInput(format!("type {i} has no moments")));
            }
            for m in &t.moments {
                if m.top(&scheme, top_level)?.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidInput(format!("type {i} has a negative moment density")));
                }
            }
            let w = t.endowment.top(&scheme, top_level)?;
            let z = match &t.reserve {
                Some(r) => r.top(&scheme, top_level)?,
                None => vec![0.0; w.len()],
            };
            if z.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidInput(format!("type {i} declares a negative reserve bundle")));
            }
            let slack = w.iter().zip(&z).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
            if slack < self.margin {
                return Err(Error::InvalidInput(format!(
                    "type {i}: endowment exceeds the reserve by {slack}, below the margin {}",
                    self.margin
                )));
            }
        }
        Ok(scheme)
    }

    /// Smallest bin of w_n - z_n over types at level `n`.
    pub fn level_margin(&self, scheme: &GalerkinScheme, n: usize) -> Result<f64> {
        let mut m = f64::INFINITY;
        for t in &self.types {
            let w = scheme.restrict(&t.endowment.top(scheme, n)?, n)?;
            let z = match &t.reserve {
                Some(r) => scheme.restrict(&r.top(scheme, n)?, n)?,
                None => vec![0.0; w.len()],
            };
            m = w.iter().zip(&z).map(|(a, b)| a - b).fold(m, f64::min);
        }
        Ok(m)
    }

    /// Top-level densities of every moment functional, as seen from level `n`.
    pub fn moment_densities(&self, scheme: &GalerkinScheme, n: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for t in &self.types {
            for m in &t.moments {
                out.push(m.top(scheme, n)?);
            }
        }
        Ok(out)
    }
}

/// The level-n economy: bin-averaged moments, projected endowments and caps.
pub fn build_truncated_economy(spec: &FunctionSpaceEconomySpec, scheme: &GalerkinScheme, n: usize) -> Result<Economy> {
    let w = scheme.level_weights(n)?;
    let amounts = |d: &DensitySpec| -> Result<Vec<f64>> {
        let r = scheme.restrict(&d.top(scheme, n)?, n)?;
        Ok(r.iter().zip(&w).map(|(v, wj)| v * wj).collect())
    };
    let mut profiles = Vec::with_capacity(spec.types.len());
    for t in &spec.types {
        let moments =
            t.moments.iter().map(|m| scheme.restrict(&m.top(scheme, n)?, n)).collect::<Result<Vec<_>>>()?;
        let pref = Preference::LinearMoments { moments, inner: Box::new(t.inner.clone()) };
        profiles.push(AgentProfile::new(pref, amounts(&t.endowment)?)?);
    }
    let caps = match &spec.cap {
        Some(c) => Some(vec![amounts(c)?; spec.types.len()]),
        None => None,
    };
    Economy::new(spec.space.clone(), profiles, caps)
}

/// Unit L2 norm against the level weights.
fn normalize_density(p: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = p.iter().zip(w).map(|(v, wj)| v * v * wj).sum::<f64>().sqrt();
    if !(s > 0.0) {
        return Err(Error::InvalidInput("price density is zero".into()));
    }
    Ok(p.iter().map(|v| v / s).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelResult {
    pub level: usize,
    pub dim: usize,
    pub equilibrium: EquilibriumResult,
    /// Level-n price density with unit L2 norm.
    pub price_density: Vec<f64>,
    /// Same price embedded at the top level.
    pub price_top: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationSource {
    Fatou,
    LastLevel,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineResult {
    pub levels: Vec<LevelResult>,
    /// Panel distance between consecutive level prices.
    pub price_trace: Vec<f64>,
    pub cauchy_spread: Option<f64>,
    pub limit_price: Vec<f64>,
    /// Top-level allocation in amounts.
    pub limit_allocation: Allocation,
    pub allocation_source: AllocationSource,
    pub fatou: Option<FatouReport>,
    pub verification: Option<Verification>,
    pub yh: Option<YHDiagnostic>,
    /// Budget and clearing residuals re-checked at the countably additive price.
    pub ca_verification: Option<Verification>,
    pub converged: bool,
    pub failures: Vec<String>,
}

impl PipelineResult {
    pub const LEVEL_CSV_HEADER: &'static str =
        "level,dim,iterations,converged,clearing_residual,budget_residual_max,optimality_gap_max,price_step";

    pub fn levels_csv(&self) -> String {
        let mut out = format!("{}\n", Self::LEVEL_CSV_HEADER);
        for (i, l) in self.levels.iter().enumerate() {
            let step = if i == 0 { String::new() } else { format!("{:e}", self.price_trace[i - 1]) };
            let e = &l.equilibrium;
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{}\n",
                l.level, l.dim, e.iterations, e.converged, e.clearing_residual, e.budget_residual_max, e.optimality_gap_max, step
            ));
        }
        out
    }

    /// Top-level limit price density, one row per coordinate.
    pub fn price_csv(&self) -> String {
        let mut out = String::from("coordinate,price_density\n");
        for (j, p) in self.limit_price.iter().enumerate() {
            out.push_str(&format!("{j},{p:?}\n"));
        }
        out
    }
}

/// Fixed panel for price comparison: the moment densities plus level-3
/// indicators (unit coordinates for coordinate schemes).
pub fn price_panel(spec: &FunctionSpaceEconomySpec, scheme: &GalerkinScheme, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut panel = spec.moment_densities(scheme, n)?;
    let top = scheme.top_dim();
    if scheme.is_dyadic() {
        for i in 0..8 {
            panel.push(interval_density(scheme, i as f64 / 8.0, (i + 1) as f64 / 8.0));
        }
    } else {
        for i in 0..top.min(8) {
            let mut e = vec![0.0; top];
            e[i] = 1.0;
            panel.push(e);
        }
    }
    Ok(panel)
}

fn panel_distance(scheme: &GalerkinScheme, panel: &[Vec<f64>], p: &[f64], q: &[f64]) -> Result<f64> {
    let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
    let mut m: f64 = 0.0;
    for a in panel {
        m = m.max(scheme.pair(a, &d)?.abs());
    }
    Ok(m)
}

/// Solves one level, warm-started from a top-level price density.
fn solve_level(
    spec: &FunctionSpaceEconomySpec,
    scheme: &GalerkinScheme,
    n: usize,
    warm: Option<&[f64]>,
    params: &SolverParams,
) -> Result<LevelResult> {
    let econ = build_truncated_economy(spec, scheme, n)?;
    let w = scheme.level_weights(n)?;
    let p0 = match warm {
        Some(top) => scheme.restrict(top, n)?,
        None => vec![1.0; w.len()],
    };
    let eq = tatonnement(&econ, &PriceVector::new(p0, params.norm)?, params)?;
    let price_density = normalize_density(eq.price.values(), &w)?;
    let price_top = scheme.embed(&price_density, n)?;
    Ok(LevelResult { level: n, dim: w.len(), equilibrium: eq, price_density, price_top })
}

/// Level allocation as top-level densities, one row per agent cell.
fn top_densities(scheme: &GalerkinScheme, l: &LevelResult) -> Result<CellFunction> {
    let w = scheme.level_weights(l.level)?;
    let mut rows = Vec::new();
    for row in l.equilibrium.allocation.values.rows() {
        let dens: Vec<f64> = row.iter().zip(&w).map(|(x, wj)| x / wj).collect();
        rows.push(scheme.embed(&dens, l.level)?);
    }
    CellFunction::from_rows(scheme.top_dim(), &rows)
}

fn to_amounts(scheme: &GalerkinScheme, dens: &CellFunction) -> Result<CellFunction> {
    let w = scheme.weights();
    let rows: Vec<Vec<f64>> = dens.rows().map(|r| r.iter().zip(&w).map(|(v, wj)| v * wj).collect()).collect();
    CellFunction::from_rows(scheme.top_dim(), &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub solver: SolverParams,
    pub window: usize,
    pub tol: f64,
    pub growth_threshold: f64,
    pub run_yh: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            solver: SolverParams {
                selector: Selector::Balanced,
                free_disposal: true,
                norm: PriceNorm::UnitSum,
                ..SolverParams::default()
            },
            window: 2,
            tol: 1e-6,
            growth_threshold: DEFAULT_GROWTH_THRESHOLD,
            run_yh: true,
        }
    }
}

/// Shared level loop for both scheme kinds.
fn run_pipeline(spec: &FunctionSpaceEconomySpec, schedule: &[usize], params: &PipelineParams) -> Result<PipelineResult> {
    let scheme = spec.validate()?;
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("schedule must be nonempty and strictly increasing".into()));
    }
    if let Some(&bad) = schedule.iter().find(|&&n| n > scheme.n_max()) {
        return Err(Error::InvalidInput(format!("schedule level {bad} exceeds the scheme's top level {}", scheme.n_max())));
    }
    let mut failures = Vec::new();
    let mut levels: Vec<LevelResult> = Vec::new();
    for &n in schedule {
        let warm = levels.last().map(|l| l.price_top.clone());
        let l = solve_level(spec, &scheme, n, warm.as_deref(), &params.solver)?;
        if !l.equilibrium.converged {
            failures.push(format!("level {n}: tatonnement stopped at residual {:e}", l.equilibrium.clearing_residual));
        }
        levels.push(l);
    }

    let top_level = scheme.n_max();
    let panel = price_panel(spec, &scheme, top_level)?;
    let mut price_trace = Vec::new();
    for w in levels.windows(2) {
        price_trace.push(panel_distance(&scheme, &panel, &w[0].price_top, &w[1].price_top)?);
    }
    let window = params.window.max(2).min(levels.len());
    let tail = &levels[levels.len() - window..];
    let mut spread: f64 = 0.0;
    for (i, a) in tail.iter().enumerate() {
        for b in &tail[i + 1..] {
            spread = spread.max(panel_distance(&scheme, &panel, &a.price_top, &b.price_top)?);
        }
    }
    let cauchy_spread = if levels.len() >= 2 && spread <= params.tol {
        Some(spread)
    } else {
        failures.push(format!("prices are not Cauchy: spread {spread:e} over the last {window} levels"));
        None
    };

    let last = levels.last().expect("nonempty");
    let limit_price = last.price_top.clone();
    let terms = levels.iter().map(|l| top_densities(&scheme, l)).collect::<Result<Vec<_>>>()?;
    let bound = terms.iter().map(|t| t.max_abs()).fold(0.0, f64::max);
    let seq = FunctionSequence::new(spec.space.clone(), terms.clone(), bound)?;
    let fatou_window = params.window.clamp(2, (levels.len() / 2).max(2));
    // Too short a schedule for a recurrence window: keep the last level.
    let selected = (levels.len() >= 2 * fatou_window).then(|| fatou_select(&seq, fatou_window, params.tol));
    let (fatou, allocation, source) = match selected {
        Some(Ok(rep)) => {
            let values = to_amounts(&scheme, &rep.selection)?;
            let alloc = Allocation { space: rep.selection_space.clone(), values, parents: rep.parents.clone() };
            (Some(rep), alloc, AllocationSource::Fatou)
        }
        other => {
            if let Some(Err(e)) = other {
                failures.push(format!("allocation limit: {e}"));
            }
            let values = to_amounts(&scheme, terms.last().expect("nonempty"))?;
            let alloc = Allocation { space: spec.space.clone(), values, parents: (0..spec.space.len()).collect() };
            (None, alloc, AllocationSource::LastLevel)
        }
    };

    let top_econ = build_truncated_economy(spec, &scheme, top_level)?;
    let verification = if cauchy_spread.is_some() {
        let v = verify_equilibrium(&top_econ, &limit_price, &allocation, true)?;
        let budget_eq = v.budget_equality_max;
        if v.worst().max(budget_eq) > params.tol {
            failures.push(format!(
                "limit verification: clearing {:e}, budget {:e}, optimality {:e}",
                v.clearing_residual, budget_eq, v.optimality_gap_max
            ));
        }
        Some(v)
    } else {
        None
    };

    let (yh, ca_verification) = if params.run_yh && scheme.is_dyadic() && levels.len() >= 3 {
        let dens: Vec<Vec<f64>> = levels.iter().map(|l| l.price_density.clone()).collect();
        let yh = yh_diagnostic(&dens, params.growth_threshold)?;
        let ca = match &yh.ca_price {
            Some(ca) => {
                let ca_top = scheme.embed(ca, last.level)?;
                Some(verify_equilibrium(&top_econ, &ca_top, &allocation, true)?)
            }
            None => None,
        };
        (Some(yh), ca)
    } else {
        (None, None)
    };

    let converged = failures.is_empty();
    Ok(PipelineResult {
        levels,
        price_trace,
        cauchy_spread,
        limit_price,
        limit_allocation: allocation,
        allocation_source: source,
        fatou,
        verification,
        yh,
        ca_verification,
        converged,
        failures,
    })
}

/// Coordinate-truncation pipeline.
pub fn run_we1(spec: &FunctionSpaceEconomySpec, schedule: &[usize], params: &PipelineParams) -> Result<PipelineResult> {
    if spec.scheme.build()?.is_dyadic() {
        return Err(Error::InvalidInput("run_we1 expects a coordinate scheme".into()));
    }
    let p = PipelineParams { run_yh: false, ..params.clone() };
    run_pipeline(spec, schedule, &p)
}

/// Dyadic pipeline with the price-concentration diagnostic.
pub fn run_we2(spec: &FunctionSpaceEconomySpec, schedule: &[usize], params: &PipelineParams) -> Result<PipelineResult> {
    if !spec.scheme.build()?.is_dyadic() {
        return Err(Error::InvalidInput("run_we2 expects a dyadic scheme".into()));
    }
    run_pipeline(spec, schedule, params)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YHDiagnostic {
    pub bins: Vec<usize>,
    pub max_bin_price_mass: Vec<f64>,
    /// Share of price mass in the two heaviest bins.
    pub concentration_index: Vec<f64>,
    /// Index relative to its uniform-price value min(1, 2/bins).
    pub lift: Vec<f64>,
    pub pfa_flag: bool,
    /// Final-level bins removed to form `ca_price`.
    pub flagged_bins: Vec<usize>,
    /// Final-level price density without the flagged bins, unit L2 norm.
    pub ca_price: Option<Vec<f64>>,
}

impl YHDiagnostic {
    pub const CSV_HEADER: &'static str = "level,bins,max_bin_mass,concentration_index,lift";

    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for i in 0..self.bins.len() {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                i, self.bins[i], self.max_bin_price_mass[i], self.concentration_index[i], self.lift[i]
            ));
        }
        out
    }
}

/// Price-mass concentration across refinement levels.
///
/// Each entry is a price density on equal-width bins of [0,1). The flag is
/// raised when the two-bin concentration, measured against its value for a
/// uniform price, strictly grows at every level and the final index exceeds
/// `growth_threshold`.
pub fn yh_diagnostic(densities: &[Vec<f64>], growth_threshold: f64) -> Result<YHDiagnostic> {
    if densities.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 levels, have {}", densities.len())));
    }
    let mut bins = Vec::new();
    let mut max_mass = Vec::new();
    let mut index = Vec::new();
    let mut lift = Vec::new();
    let mut final_shares = Vec::new();
    for p in densities {
        if p.is_empty() || p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput("price densities must be nonnegative and nonempty".into()));
        }
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("price density is zero".into()));
        }
        let shares: Vec<f64> = p.iter().map(|v| v / total).collect();
        let mut sorted = shares.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let top2 = (sorted[0] + sorted.get(1).copied().unwrap_or(0.0)).min(1.0);
        let baseline = (2.0 / p.len() as f64).min(1.0);
        bins.push(p.len());
        max_mass.push(sorted[0]);
        index.push(top2);
        lift.push(top2 / baseline);
        final_shares = shares;
    }
    let growing = lift.windows(2).all(|w| w[1] > w[0] * (1.0 + LIFT_REL_TOL));
    let pfa_flag = growing && *index.last().expect("nonempty") > growth_threshold;
    let (flagged_bins, ca_price) = if pfa_flag {
        let mut order: Vec<usize> = (0..final_shares.len()).collect();
        order.sort_by(|&a, &b| final_shares[b].partial_cmp(&final_shares[a]).expect("finite").then(a.cmp(&b)));
        let flagged: Vec<usize> =
            order.into_iter().take(2).filter(|&j| final_shares[j] >= growth_threshold / 2.0).collect();
        let last = densities.last().expect("nonempty");
        let mut ca = last.clone();
        for &j in &flagged {
            ca[j] = 0.0;
        }
        let w = vec![1.0 / ca.len() as f64; ca.len()];
        let ca = normalize_density(&ca, &w).ok();
        (flagged, ca)
    } else {
        (Vec::new(), None)
    };
    Ok(YHDiagnostic { bins, max_bin_price_mass: max_mass, concentration_index: index, lift, pfa_flag, flagged_bins, ca_price })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_space::build_uniform;

    #[test]
    fn yh_constant_prices() {
        let d: Vec<Vec<f64>> = (1..=5).map(|n| vec![1.0; 1 << n]).collect();
        let yh = yh_diagnostic(&d, 0.5).unwrap();
        for (i, ix) in yh.concentration_index.iter().enumerate() {
            let n = i + 1;
            assert!((ix - (2.0f64 / (1 << n) as f64).min(1.0)).abs() < 1e-15);
        }
        assert!(!yh.pfa_flag);
        assert!(yh_diagnostic(&d[..2], 0.5).is_err());
    }

    #[test]
    fn yh_finest_bin_half_mass() {
        let d: Vec<Vec<f64>> = (1..=5)
            .map(|n| {
                let b = 1usize << n;
                let mut v = vec![0.5 / (b - 1) as f64; b];
                v[b - 1] = 0.5;
                v
            })
            .collect();
        let yh = yh_diagnostic(&d, 0.5).unwrap();
        assert!(yh.concentration_index.iter().all(|&i| i >= 0.5));
        assert!(yh.pfa_flag);
        assert_eq!(yh.flagged_bins, vec![31]);
        let ca = yh.ca_price.clone().unwrap();
        assert_eq!(ca[31], 0.0);
        assert!(ca.iter().all(|v| *v >= 0.0) && ca.iter().any(|v| *v > 0.0));
        let again = yh_diagnostic(&[ca.clone(), ca.clone(), ca], 0.5).unwrap();
        assert!(!again.pfa_flag);
    }

    fn cd(w: &[f64]) -> Preference {
        Preference::CobbDouglas { weights: w.to_vec() }
    }

    fn half(lo: f64) -> DensitySpec {
        DensitySpec::Interval { lo, hi: lo + 0.5, value: 1.0 }
    }

    fn two_type(n_max: usize) -> FunctionSpaceEconomySpec {
        FunctionSpaceEconomySpec {
            space: build_uniform(2, 1.0).unwrap(),
            scheme: SchemeDescriptor::Dyadic { n_max },
            types: vec![
                AgentTypeSpec {
                    moments: vec![half(0.0), half(0.5)],
                    inner: cd(&[0.7, 0.3]),
                    endowment: DensitySpec::Steps { values: vec![2.0, 0.5] },
                    reserve: None,
                },
                AgentTypeSpec {
                    moments: vec![half(0.0), half(0.5)],
                    inner: cd(&[0.2, 0.8]),
                    endowment: DensitySpec::Steps { values: vec![0.5, 2.0] },
                    reserve: None,
                },
            ],
            margin: 0.1,
            cap: None,
        }
    }

    #[test]
    fn truncation_keeps_constants_and_margin() {
        let spec = two_type(4);
        let scheme = spec.validate().unwrap();
        for n in 1..=4 {
            assert!(spec.level_margin(&scheme, n).unwrap() >= 0.1);
        }
        let econ = build_truncated_economy(&spec, &scheme, 4).unwrap();
        assert_eq!(econ.k, 16);
        assert!((econ.profiles[0].endowment[0] - 2.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn we2_matches_two_good_oracle() {
        // Two goods (the halves): p_L S_L = sum over types of w_L * income.
        let spec = two_type(4);
        let res = run_we2(&spec, &[1, 2, 3, 4], &PipelineParams::default()).unwrap();
        assert!(res.converged, "{:?}", res.failures);
        // Aggregate supplies per half: 0.5*(2+0.5)*0.5 = 0.625 each.
        // p_L*0.625 = 0.5*0.7*I_A + 0.5*0.2*I_B with I_A = (2pL + 0.5pR)/2, I_B = (0.5pL + 2pR)/2.
        let a = nalgebra::Matrix2::<f64>::new(
            0.625 - 0.5 * 0.7 * 1.0 - 0.5 * 0.2 * 0.25,
            -(0.5 * 0.7 * 0.25 + 0.5 * 0.2 * 1.0),
            1.0,
            1.0,
        );
        let sol = a.lu().solve(&nalgebra::Vector2::new(0.0, 1.0)).unwrap();
        let norm = (0.5 * sol[0] * sol[0] + 0.5 * sol[1] * sol[1]).sqrt();
        let p = res.limit_price.clone();
        assert!((p[0] - sol[0] / norm).abs() < 1e-6, "{} vs {}", p[0], sol[0] / norm);
        assert!((p[15] - sol[1] / norm).abs() < 1e-6);
        let yh = res.yh.unwrap();
        assert!(!yh.pfa_flag);
    }
}

#[cfg(test)]
mod adversarial_tests {
    use super::*;
    use crate::agent_space::build_uniform;

    pub(crate) fn tail_spec(n_max: usize) -> FunctionSpaceEconomySpec {
        let t = |lo: f64, hi: f64| AgentTypeSpec {
            moments: vec![DensitySpec::TailBin, DensitySpec::Interval { lo, hi, value: 1.0 }],
            inner: Preference::CobbDouglas { weights: vec![0.6, 0.4] },
            endowment: DensitySpec::Constant { value: 1.0 },
            reserve: None,
        };
        FunctionSpaceEconomySpec {
            space: build_uniform(2, 1.0).unwrap(),
            scheme: SchemeDescriptor::Dyadic { n_max },
            types: vec![t(0.0, 0.5), t(0.5, 0.75)],
            margin: 0.5,
            cap: None,
        }
    }

    #[test]
    fn tail_valuation_is_flagged() {
        let spec = tail_spec(6);
        let res = run_we2(&spec, &[2, 3, 4, 5, 6], &PipelineParams::default()).unwrap();
        assert!(res.levels.iter().all(|l| l.equilibrium.converged));
        let yh = res.yh.clone().unwrap();
        // Both types spend 0.6 of equal incomes on the tail bin and 0.4 on
        // their interval, so the heaviest pair is the tail plus one bin of
        // the shorter interval: 0.6 + 0.2 / 2^(n-2).
        for (n, idx) in (2..=6).zip(&yh.concentration_index) {
            let expect = 0.6 + 0.8 / (1u64 << n) as f64;
            assert!((idx - expect).abs() < 1e-8, "level {n}: {idx} vs {expect}");
        }
        assert!(yh.pfa_flag);
        assert_eq!(yh.flagged_bins, vec![63]);
        let ca = yh.ca_price.clone().unwrap();
        assert!(ca.iter().all(|v| *v >= 0.0) && ca.iter().sum::<f64>() > 0.0);
        assert_eq!(ca[63], 0.0);
        assert!(res.ca_verification.unwrap().budget_residual_max <= 1e-6);
    }
}
