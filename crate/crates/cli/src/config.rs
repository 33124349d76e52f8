//! Scenario configuration, schema version 1.
//!
//! A scenario is one TOML document with a top-level `kind`, an optional
//! `seed` and the block named after the kind. The `solve` and `schmeidler`
//! kinds also read the `[[economies]]` array.

use serde::{Deserialize, Serialize};

use fatou_core::agent_space::{build_uniform, AgentSpace};
use fatou_core::economy::{AgentProfile, Economy, Preference};
use fatou_core::galerkin::SchemeDescriptor;
use fatou_core::pipeline::{AgentTypeSpec, DensitySpec, FunctionSpaceEconomySpec, PipelineParams};
use fatou_core::solver::SolverParams;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    FatouSweep,
    FatouExact,
    LyapunovSweep,
    Solve,
    Schmeidler,
    GalerkinIdentities,
    We1,
    We2,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::FatouSweep => "fatou_sweep",
            Kind::FatouExact => "fatou_exact",
            Kind::LyapunovSweep => "lyapunov_sweep",
            Kind::Solve => "solve",
            Kind::Schmeidler => "schmeidler",
            Kind::GalerkinIdentities => "galerkin_identities",
            Kind::We1 => "we1",
            Kind::We2 => "we2",
        }
    }

    /// Kinds that draw random instances and therefore need a seed.
    pub fn randomized(self) -> bool {
        matches!(self, Kind::FatouExact | Kind::LyapunovSweep | Kind::GalerkinIdentities)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub kind: Kind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub lyapunov_sweep: Option<LyapunovSweep>,
    #[serde(default)]
    pub fatou_exact: Option<FatouExact>,
    #[serde(default)]
    pub fatou_sweep: Option<FatouSweep>,
    #[serde(default)]
    pub galerkin_identities: Option<GalerkinIdentities>,
    #[serde(default)]
    pub solve: Option<SolveBlock>,
    #[serde(default)]
    pub schmeidler: Option<SchmeidlerBlock>,
    #[serde(default)]
    pub economies: Vec<EconomyBlock>,
    #[serde(default)]
    pub we1: Option<PipelineBlock>,
    #[serde(default)]
    pub we2: Option<PipelineBlock>,
}

/// Random step densities on [0,1), integrated over N equal cells. Every N
/// must be a multiple of `pieces` so that each cell sees one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSweep {
    pub n_values: Vec<usize>,
    pub instances: usize,
    pub dim: usize,
    pub pieces: usize,
    pub require_monotone: bool,
    /// Pass iff gap(last N) <= max_ratio * gap(first N) on every instance.
    pub max_ratio: f64,
}

impl Default for LyapunovSweep {
    fn default() -> Self {
        Self { n_values: vec![4, 6, 8, 10, 12], instances: 20, dim: 2, pieces: 2, require_monotone: true, max_ratio: 0.35 }
    }
}

/// Random bounded sequences with eventually periodic tails.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FatouExact {
    pub instances: usize,
    pub dims: Vec<usize>,
    pub min_cells: usize,
    pub max_cells: usize,
    pub terms: usize,
    pub max_transient: usize,
    pub max_period: usize,
    pub window: usize,
    pub tol: f64,
    pub aumann_budget: usize,
}

impl Default for FatouExact {
    fn default() -> Self {
        Self {
            instances: 50,
            dims: vec![1, 2, 3],
            min_cells: 4,
            max_cells: 8,
            terms: 200,
            max_transient: 40,
            max_period: 4,
            window: 60,
            tol: 1e-6,
            aumann_budget: 1 << 17,
        }
    }
}

/// Sliding bumps seen through a low-rank coordinate panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FatouSweep {
    pub d_values: Vec<usize>,
    pub cells: usize,
    pub terms: usize,
    pub window: usize,
    pub tol: f64,
    pub proxy_rank: usize,
    /// Bump height, the same at every d.
    pub scale: f64,
    pub min_final_epsilon: f64,
    pub full_rank_max: f64,
}

impl Default for FatouSweep {
    fn default() -> Self {
        Self {
            d_values: vec![4, 8, 16, 32],
            cells: 4,
            terms: 256,
            window: 64,
            tol: 1e-6,
            proxy_rank: 3,
            scale: 1.0,
            min_final_epsilon: 0.1,
            full_rank_max: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GalerkinIdentities {
    pub n_max: usize,
    pub vectors: usize,
    pub tol: f64,
    pub gap_levels: Vec<usize>,
    /// Indicator test functions, one [lo, hi) interval each.
    pub test_intervals: Vec<[f64; 2]>,
}

impl Default for GalerkinIdentities {
    fn default() -> Self {
        Self {
            n_max: 10,
            vectors: 100,
            tol: 1e-12,
            gap_levels: (2..=8).collect(),
            test_intervals: vec![[0.0, 1.0 / 3.0], [0.25, 0.6]],
        }
    }
}

/// Agent space given either by explicit masses or as `cells` equal cells.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsBlock {
    #[serde(default)]
    pub masses: Option<Vec<f64>>,
    #[serde(default)]
    pub cells: Option<usize>,
    #[serde(default)]
    pub total_mass: Option<f64>,
}

impl AgentsBlock {
    pub fn check(&self, path: &str) -> Result<(), CliError> {
        match (&self.masses, self.cells) {
            (Some(_), Some(_)) => Err(CliError::invalid(path, "give either masses or cells, not both")),
            (None, None) => Err(CliError::invalid(path, "needs masses or cells")),
            (Some(m), None) => {
                if self.total_mass.is_some() {
                    return Err(CliError::invalid(path, "total_mass is implied by masses"));
                }
                if m.is_empty() {
                    return Err(CliError::invalid(&format!("{path}.masses"), "is empty"));
                }
                for (i, v) in m.iter().enumerate() {
                    if !(v.is_finite() && *v > 0.0) {
                        return Err(CliError::invalid(&format!("{path}.masses[{i}]"), &format!("mass must be positive, got {v}")));
                    }
                }
                Ok(())
            }
            (None, Some(n)) => {
                if n == 0 {
                    return Err(CliError::invalid(&format!("{path}.cells"), "must be positive"));
                }
                let t = self.total_mass.unwrap_or(1.0);
                if !(t.is_finite() && t > 0.0) {
                    return Err(CliError::invalid(&format!("{path}.total_mass"), &format!("must be positive, got {t}")));
                }
                Ok(())
            }
        }
    }

    pub fn build(&self) -> fatou_core::Result<AgentSpace> {
        match (&self.masses, self.cells) {
            (Some(m), _) => AgentSpace::from_masses(m),
            (None, Some(n)) => build_uniform(n, self.total_mass.unwrap_or(1.0)),
            (None, None) => Err(fatou_core::Error::InvalidInput("agent space needs masses or cells".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.masses.as_ref().map_or(self.cells.unwrap_or(0), |m| m.len())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBlock {
    pub mass: f64,
    pub preference: Preference,
    pub endowment: Vec<f64>,
}

/// A finite economy, one profile per cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyBlock {
    pub name: String,
    pub cells: Vec<CellBlock>,
    /// Known equilibrium price, normalized like the solver output.
    #[serde(default)]
    pub oracle_price: Option<Vec<f64>>,
    #[serde(default)]
    pub p0: Option<Vec<f64>>,
}

impl EconomyBlock {
    pub fn build(&self) -> fatou_core::Result<Economy> {
        let masses: Vec<f64> = self.cells.iter().map(|c| c.mass).collect();
        let space = AgentSpace::from_masses(&masses)?;
        let profiles = self
            .cells
            .iter()
            .map(|c| AgentProfile::new(c.preference.clone(), c.endowment.clone()))
            .collect::<fatou_core::Result<Vec<_>>>()?;
        Economy::new(space, profiles, None)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveBlock {
    pub params: SolverParams,
    pub price_rel_tol: f64,
    pub residual_tol: f64,
}

impl Default for SolveBlock {
    fn default() -> Self {
        Self { params: SolverParams::default(), price_rel_tol: 1e-6, residual_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchmeidlerBlock {
    pub params: SolverParams,
    pub schedule: Vec<usize>,
    pub window: usize,
    pub tol: f64,
    /// Limit price vs the direct solve.
    pub price_tol: f64,
    pub budget_tol: f64,
}

impl Default for SchmeidlerBlock {
    fn default() -> Self {
        Self { params: SolverParams::default(), schedule: vec![1, 2, 4, 8], window: 2, tol: 1e-6, price_tol: 1e-6, budget_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineThresholds {
    pub require_converged: bool,
    pub residual_tol: f64,
    /// Largest change of the top-level price density between consecutive levels.
    pub consistency_tol: Option<f64>,
    pub expect_pfa: Option<bool>,
    pub ca_budget_tol: f64,
}

impl Default for PipelineThresholds {
    fn default() -> Self {
        Self { require_converged: true, residual_tol: 1e-6, consistency_tol: None, expect_pfa: None, ca_budget_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineBlock {
    pub agents: AgentsBlock,
    pub scheme: SchemeDescriptor,
    pub schedule: Vec<usize>,
    pub margin: f64,
    #[serde(default)]
    pub cap: Option<DensitySpec>,
    pub types: Vec<AgentTypeSpec>,
    #[serde(default)]
    pub params: PipelineParams,
    #[serde(default)]
    pub thresholds: PipelineThresholds,
}

impl PipelineBlock {
    pub fn spec(&self) -> fatou_core::Result<FunctionSpaceEconomySpec> {
        Ok(FunctionSpaceEconomySpec {
            space: self.agents.build()?,
            scheme: self.scheme.clone(),
            types: self.types.clone(),
            margin: self.margin,
            cap: self.cap.clone(),
        })
    }
}

impl ScenarioConfig {
    /// Parses TOML; syntax and type errors carry the line and column.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    /// Schema and invariant checks that do not run any numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::invalid(
                "schema_version",
                &format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.kind.randomized() && self.seed.is_none() {
            return Err(CliError::MissingSeed(self.kind.name()));
        }
        let missing = || CliError::MissingBlock(self.kind.name());
        match self.kind {
            Kind::LyapunovSweep => {
                let b = self.lyapunov_sweep.as_ref().ok_or_else(missing)?;
                positive_increasing("lyapunov_sweep.n_values", &b.n_values)?;
                if b.n_values.len() < 2 {
                    return Err(CliError::invalid("lyapunov_sweep.n_values", "needs at least two sizes"));
                }
                if *b.n_values.last().expect("nonempty") > fatou_core::set_analysis::MAX_EXACT_CELLS {
                    return Err(CliError::invalid(
                        "lyapunov_sweep.n_values",
                        &format!("exact ranges need at most {} cells", fatou_core::set_analysis::MAX_EXACT_CELLS),
                    ));
                }
                nonzero("lyapunov_sweep.instances", b.instances)?;
                nonzero("lyapunov_sweep.dim", b.dim)?;
                nonzero("lyapunov_sweep.pieces", b.pieces)?;
                if b.n_values.iter().any(|n| n % b.pieces != 0) {
                    return Err(CliError::invalid("lyapunov_sweep.n_values", "every size must be a multiple of pieces"));
                }
                positive("lyapunov_sweep.max_ratio", b.max_ratio)?;
            }
            Kind::FatouExact => {
                let b = self.fatou_exact.as_ref().ok_or_else(missing)?;
                nonzero("fatou_exact.instances", b.instances)?;
                positive_increasing("fatou_exact.dims", &b.dims)?;
                nonzero("fatou_exact.min_cells", b.min_cells)?;
                if b.max_cells < b.min_cells {
                    return Err(CliError::invalid("fatou_exact.max_cells", "is below min_cells"));
                }
                nonzero("fatou_exact.max_period", b.max_period)?;
                nonzero("fatou_exact.window", b.window)?;
                if b.terms < b.max_transient + 2 * b.window {
                    return Err(CliError::invalid("fatou_exact.terms", "must cover the transient plus two windows"));
                }
                positive("fatou_exact.tol", b.tol)?;
            }
            Kind::FatouSweep => {
                let b = self.fatou_sweep.as_ref().ok_or_else(missing)?;
                positive_increasing("fatou_sweep.d_values", &b.d_values)?;
                if b.d_values[0] < 2 {
                    return Err(CliError::invalid("fatou_sweep.d_values", "bump dimension must be at least 2"));
                }
                if b.proxy_rank == 0 || b.proxy_rank > b.d_values[0] {
                    return Err(CliError::invalid("fatou_sweep.proxy_rank", "must lie in 1..=min(d_values)"));
                }
                nonzero("fatou_sweep.cells", b.cells)?;
                nonzero("fatou_sweep.window", b.window)?;
                if b.terms < 2 * b.window {
                    return Err(CliError::invalid("fatou_sweep.terms", "must cover two windows"));
                }
                positive("fatou_sweep.tol", b.tol)?;
                positive("fatou_sweep.scale", b.scale)?;
            }
            Kind::GalerkinIdentities => {
                let b = self.galerkin_identities.as_ref().ok_or_else(missing)?;
                if !(1..=fatou_core::galerkin::MAX_DYADIC_LEVEL).contains(&b.n_max) {
                    return Err(CliError::invalid("galerkin_identities.n_max", "outside the supported dyadic levels"));
                }
                nonzero("galerkin_identities.vectors", b.vectors)?;
                positive("galerkin_identities.tol", b.tol)?;
                if b.gap_levels.iter().any(|n| *n > b.n_max) {
                    return Err(CliError::invalid("galerkin_identities.gap_levels", "level above n_max"));
                }
                for (i, [lo, hi]) in b.test_intervals.iter().enumerate() {
                    if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                        return Err(CliError::invalid(&format!("galerkin_identities.test_intervals[{i}]"), "needs 0 <= lo < hi <= 1"));
                    }
                }
            }
            Kind::Solve | Kind::Schmeidler => {
                if self.kind == Kind::Solve {
                    self.solve.as_ref().ok_or_else(missing)?;
                } else {
                    let b = self.schmeidler.as_ref().ok_or_else(missing)?;
                    positive_increasing("schmeidler.schedule", &b.schedule)?;
                    nonzero("schmeidler.window", b.window)?;
                }
                if self.economies.is_empty() {
                    return Err(CliError::invalid("economies", "at least one economy is required"));
                }
                for (i, e) in self.economies.iter().enumerate() {
                    for (c, cell) in e.cells.iter().enumerate() {
                        if !(cell.mass.is_finite() && cell.mass > 0.0) {
                            return Err(CliError::invalid(
                                &format!("economies[{i}].cells[{c}].mass"),
                                &format!("mass must be positive, got {}", cell.mass),
                            ));
                        }
                    }
                    e.build().map_err(|err| CliError::invalid(&format!("economies[{i}] ({})", e.name), &err.to_string()))?;
                }
            }
            Kind::We1 | Kind::We2 => {
                let (key, b) = if self.kind == Kind::We1 { ("we1", &self.we1) } else { ("we2", &self.we2) };
                let b = b.as_ref().ok_or_else(missing)?;
                b.agents.check(&format!("{key}.agents"))?;
                positive_increasing(&format!("{key}.schedule"), &b.schedule)?;
                let dyadic = matches!(b.scheme, SchemeDescriptor::Dyadic { .. });
                if dyadic != (self.kind == Kind::We2) {
                    return Err(CliError::invalid(&format!("{key}.scheme"), "we1 needs a coordinate scheme, we2 a dyadic one"));
                }
                if b.types.len() != b.agents.len() {
                    return Err(CliError::invalid(&format!("{key}.types"), "need one type per agent cell"));
                }
                b.spec()
                    .and_then(|s| s.validate().map(|_| ()))
                    .map_err(|err| CliError::invalid(key, &err.to_string()))?;
            }
        }
        Ok(())
    }
}

fn nonzero(path: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::invalid(path, "must be positive"));
    }
    Ok(())
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(CliError::invalid(path, &format!("must be positive, got {v}")));
    }
    Ok(())
}

fn positive_increasing(path: &str, v: &[usize]) -> Result<(), CliError> {
    if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::invalid(path, "must be a nonempty, strictly increasing list of positive integers"));
    }
    Ok(())
}

