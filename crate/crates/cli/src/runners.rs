//! One runner per scenario kind, plus the seeded instance generators they share.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fatou_core::agent_space::{build_uniform, AgentSpace, CellFunction};
use fatou_core::economy::PriceVector;
use fatou_core::fatou::{approx_fatou_epsilon, check_fatou_inclusion, fatou_select, sliding_bump_sequence, FunctionSequence};
use fatou_core::galerkin::{dyadic_scheme, interval_density, sample_midpoints};
use fatou_core::pipeline::{run_we1, run_we2, YHDiagnostic};
use fatou_core::set_analysis::{lyapunov_range, TestPanel, VectorMeasure};
use fatou_core::solver::{schmeidler_limit, tatonnement, EquilibriumResult, SolverParams};

use crate::config::{
    EconomyBlock, FatouExact, FatouSweep, GalerkinIdentities, Kind, LyapunovSweep, PipelineBlock, SchmeidlerBlock,
    SolveBlock,
};
use crate::error::CliError;
use crate::report::{num, Check, Outcome, Table};

/// Maps `f` over `items` on up to `threads` scoped threads, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    })
}

/// Seed of the i-th instance drawn from a base seed.
pub fn instance_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// A random R^dim density that is constant on each of `pieces` equal
/// intervals of [0,1).
#[derive(Debug, Clone)]
pub struct StepDensity {
    pub values: Vec<Vec<f64>>,
}

impl StepDensity {
    pub fn random(seed: u64, dim: usize, pieces: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..pieces).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        Self { values }
    }

    /// The measure of the n equal cells of [0,1); n must be a multiple of the piece count.
    pub fn on_cells(&self, n: usize) -> Vec<Vec<f64>> {
        let per = n / self.values.len();
        (0..n).map(|i| self.values[i / per].iter().map(|v| v / n as f64).collect()).collect()
    }
}

/// A random bounded sequence whose cells turn periodic after a transient.
#[derive(Debug, Clone)]
pub struct PeriodicInstance {
    pub seed: u64,
    pub k: usize,
    pub transient: usize,
    pub periods: Vec<usize>,
    /// cycles[c][i] is the i-th value of cell c's cycle.
    pub cycles: Vec<Vec<Vec<f64>>>,
    pub seq: FunctionSequence,
}

pub fn periodic_instance(seed: u64, b: &FatouExact) -> fatou_core::Result<PeriodicInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = b.dims[rng.gen_range(0..b.dims.len())];
    let cells = rng.gen_range(b.min_cells..=b.max_cells);
    let masses: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.2..1.0)).collect();
    let transient = rng.gen_range(0..=b.max_transient);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let periods: Vec<usize> = (0..cells).map(|_| rng.gen_range(1..=b.max_period)).collect();
    let cycles: Vec<Vec<Vec<f64>>> = periods.iter().map(|&p| (0..p).map(|_| point(&mut rng)).collect()).collect();
    let mut terms = Vec::with_capacity(b.terms);
    for t in 0..b.terms {
        let rows: Vec<Vec<f64>> = (0..cells)
            .map(|c| if t < transient { point(&mut rng) } else { cycles[c][(t - transient) % periods[c]].clone() })
            .collect();
        terms.push(CellFunction::from_rows(k, &rows)?);
    }
    let space = AgentSpace::from_masses(&masses)?;
    let seq = FunctionSequence::new(space, terms, 1.0)?;
    Ok(PeriodicInstance { seed, k, transient, periods, cycles, seq })
}

pub fn run_kind(kind: Kind, cfg: &crate::config::ScenarioConfig, threads: usize) -> Result<Outcome, CliError> {
    let seed = cfg.seed.unwrap_or(0);
    let missing = || CliError::MissingBlock(kind.name());
    match kind {
        Kind::LyapunovSweep => lyapunov_sweep(cfg.lyapunov_sweep.as_ref().ok_or_else(missing)?, seed, threads),
        Kind::FatouExact => fatou_exact(cfg.fatou_exact.as_ref().ok_or_else(missing)?, seed, threads),
        Kind::FatouSweep => fatou_sweep(cfg.fatou_sweep.as_ref().ok_or_else(missing)?, threads),
        Kind::GalerkinIdentities => galerkin_identities(cfg.galerkin_identities.as_ref().ok_or_else(missing)?, seed),
        Kind::Solve => solve(cfg.solve.as_ref().ok_or_else(missing)?, &cfg.economies, threads),
        Kind::Schmeidler => schmeidler(cfg.schmeidler.as_ref().ok_or_else(missing)?, &cfg.economies, threads),
        Kind::We1 => pipeline(cfg.we1.as_ref().ok_or_else(missing)?, false),
        Kind::We2 => pipeline(cfg.we2.as_ref().ok_or_else(missing)?, true),
    }
}

fn lyapunov_sweep(b: &LyapunovSweep, seed: u64, threads: usize) -> Result<Outcome, CliError> {
    let seeds: Vec<u64> = (0..b.instances).map(|i| instance_seed(seed, i)).collect();
    let gaps = par_map(&seeds, threads, |&s| -> fatou_core::Result<Vec<f64>> {
        let density = StepDensity::random(s, b.dim, b.pieces);
        b.n_values
            .iter()
            .map(|&n| Ok(lyapunov_range(&VectorMeasure::new(density.on_cells(n))?, None)?.convexity_gap))
            .collect()
    });
    let mut t = Table::new(&["instance", "seed", "n", "convexity_gap"]);
    let mut monotone = true;
    let mut worst_ratio: f64 = 0.0;
    for (i, (s, g)) in seeds.iter().zip(gaps).enumerate() {
        let g = g?;
        for (n, v) in b.n_values.iter().zip(&g) {
            t.push(vec![i.to_string(), s.to_string(), n.to_string(), num(*v)]);
        }
        monotone &= g.windows(2).all(|w| w[1] <= w[0]);
        let ratio = if g[0] > 0.0 { g[g.len() - 1] / g[0] } else { 0.0 };
        worst_ratio = worst_ratio.max(ratio);
    }
    let mut out = Outcome::default();
    out.table("lyapunov_sweep.csv", "convexity gap per instance and cell count", t);
    out.metric("worst_ratio", worst_ratio);
    if b.require_monotone {
        out.checks.push(Check::holds("gap_monotone_in_n", monotone));
    }
    out.checks.push(Check::at_most("gap_ratio_last_over_first", worst_ratio, b.max_ratio));
    Ok(out)
}

fn fatou_exact(b: &FatouExact, seed: u64, threads: usize) -> Result<Outcome, CliError> {
    let seeds: Vec<u64> = (0..b.instances).map(|i| instance_seed(seed, i)).collect();
    let rows = par_map(&seeds, threads, |&s| -> fatou_core::Result<(PeriodicInstance, [f64; 5])> {
        let inst = periodic_instance(s, b)?;
        let rep = fatou_select(&inst.seq, b.window, b.tol)?;
        let inclusion = check_fatou_inclusion(&inst.seq, b.window, b.tol, b.aumann_budget)?;
        let scaled = rep.integral_gap / (inst.k as f64 * inst.seq.space().total_mass());
        Ok((inst, [rep.pointwise_gap, rep.integral_gap, scaled, inclusion, rep.epsilon_needed]))
    });
    let mut t = Table::new(&[
        "instance",
        "seed",
        "k",
        "cells",
        "transient",
        "max_period",
        "pointwise_gap",
        "integral_gap",
        "integral_gap_per_k_mass",
        "inclusion_gap",
        "epsilon_needed",
    ]);
    let mut worst = [0.0f64; 5];
    for (i, r) in rows.into_iter().enumerate() {
        let (inst, v) = r?;
        for (w, x) in worst.iter_mut().zip(&v) {
            *w = w.max(*x);
        }
        let mut row = vec![
            i.to_string(),
            inst.seed.to_string(),
            inst.k.to_string(),
            inst.seq.space().len().to_string(),
            inst.transient.to_string(),
            inst.periods.iter().max().expect("cells").to_string(),
        ];
        row.extend(v.iter().map(|x| num(*x)));
        t.push(row);
    }
    let mut out = Outcome::default();
    out.table("fatou_exact.csv", "per-instance gaps of the exact selection", t);
    out.metric("max_pointwise_gap", worst[0]);
    out.metric("max_integral_gap", worst[1]);
    out.metric("max_inclusion_gap", worst[3]);
    out.metric("max_epsilon_needed", worst[4]);
    out.checks.push(Check::at_most("pointwise_gap", worst[0], b.tol));
    out.checks.push(Check::at_most("integral_gap_per_k_mass", worst[2], b.tol));
    out.checks.push(Check::at_most("inclusion_gap", worst[3], b.tol));
    Ok(out)
}

fn fatou_sweep(b: &FatouSweep, threads: usize) -> Result<Outcome, CliError> {
    let space = build_uniform(b.cells, 1.0)?;
    let rows = par_map(&b.d_values, threads, |&d| -> fatou_core::Result<(f64, f64)> {
        let seq = sliding_bump_sequence(&space, d, b.scale, b.terms)?;
        let low = approx_fatou_epsilon(&seq, b.window, b.tol, Some(&TestPanel::coordinates(d, b.proxy_rank)?))?;
        let full = approx_fatou_epsilon(&seq, b.window, b.tol, Some(&TestPanel::coordinates(d, d)?))?;
        Ok((low, full))
    });
    let mut t = Table::new(&["d", "scale", "proxy_rank", "epsilon_needed", "full_rank_epsilon"]);
    let mut eps = Vec::new();
    let mut full_max: f64 = 0.0;
    for (d, r) in b.d_values.iter().zip(rows) {
        let (low, full) = r?;
        t.push(vec![d.to_string(), num(b.scale), b.proxy_rank.to_string(), num(low), num(full)]);
        eps.push(low);
        full_max = full_max.max(full);
    }
    let last = *eps.last().expect("nonempty sweep");
    let mut out = Outcome::default();
    out.table("fatou_sweep.csv", "epsilon_needed against the bump dimension", t);
    out.metric("final_epsilon", last);
    out.metric("max_full_rank_epsilon", full_max);
    out.checks.push(Check::holds("epsilon_nondecreasing_in_d", eps.windows(2).all(|w| w[1] >= w[0])));
    out.checks.push(Check::at_least("final_epsilon", last, b.min_final_epsilon));
    out.checks.push(Check::at_most("full_rank_epsilon", full_max, b.full_rank_max));
    Ok(out)
}

fn galerkin_identities(b: &GalerkinIdentities, seed: u64) -> Result<Outcome, CliError> {
    let s = dyadic_scheme(b.n_max)?;
    let top = s.top_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sup = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (mut idem, mut compat, mut pos, mut adj) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..b.vectors {
        let x: Vec<f64> = (0..top).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..top).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let proj: Vec<Vec<f64>> = (0..=b.n_max).map(|n| s.project(&x, n)).collect::<fatou_core::Result<_>>()?;
        for n in 0..=b.n_max {
            idem = idem.max(sup(&s.project(&proj[n], n)?, &proj[n]));
            for m in 0..=b.n_max {
                compat = compat.max(sup(&s.project(&proj[m], n)?, &proj[n.min(m)]));
            }
            pos = pos.max(0.0 - s.project(&abs, n)?.iter().cloned().fold(0.0, f64::min));
            adj = adj.max((s.pair(&s.adjoint_project(&p, n)?, &x)? - s.pair(&p, &proj[n])?).abs());
        }
    }
    let mut ids = Table::new(&["identity", "max_error"]);
    for (name, v) in [("idempotence", idem), ("compatibility", compat), ("positivity", pos), ("adjoint_duality", adj)] {
        ids.push(vec![name.into(), num(v)]);
    }
    let x = sample_midpoints(&s, |w| w);
    let tests: Vec<Vec<f64>> = b.test_intervals.iter().map(|[lo, hi]| interval_density(&s, *lo, *hi)).collect();
    let mut gaps = Table::new(&["n", "gap"]);
    let mut trace = Vec::new();
    for &n in &b.gap_levels {
        let g = s.weak_convergence_gap(&x, &tests, n)?;
        gaps.push(vec![n.to_string(), num(g)]);
        trace.push(g);
    }
    let mut out = Outcome::default();
    out.table("identities.csv", "largest identity error over the random vectors", ids);
    out.table("gap_trace.csv", "weak convergence gap of x(w) = w against indicator tests", gaps);
    for (name, v) in [("idempotence", idem), ("compatibility", compat), ("positivity", pos), ("adjoint_duality", adj)] {
        out.metric(name, v);
        out.checks.push(Check::at_most(name, v, b.tol));
    }
    out.checks.push(Check::holds("gap_strictly_decreasing", trace.windows(2).all(|w| w[1] < w[0])));
    Ok(out)
}

fn rel_err(p: &[f64], oracle: &[f64]) -> f64 {
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    p.iter().zip(oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn direct_solve(e: &EconomyBlock, params: &SolverParams) -> fatou_core::Result<EquilibriumResult> {
    let econ = e.build()?;
    let p0 = e.p0.clone().unwrap_or_else(|| vec![1.0; econ.k]);
    tatonnement(&econ, &PriceVector::new(p0, params.norm)?, params)
}

fn price_rows(t: &mut Table, name: &str, p: &[f64], oracle: Option<&Vec<f64>>) {
    for (j, v) in p.iter().enumerate() {
        let o = oracle.map_or(String::new(), |o| num(o[j]));
        t.push(vec![name.into(), j.to_string(), num(*v), o]);
    }
}

fn solve(b: &SolveBlock, economies: &[EconomyBlock], threads: usize) -> Result<Outcome, CliError> {
    let results = par_map(economies, threads, |e| direct_solve(e, &b.params));
    let mut summary = Table::new(&[
        "economy",
        "iterations",
        "converged",
        "clearing_residual",
        "budget_residual_max",
        "optimality_gap_max",
        "oracle_rel_err",
    ]);
    let mut prices = Table::new(&["economy", "good", "price", "oracle_price"]);
    let mut trace = Table::new(&["economy", "iteration", "residual"]);
    let mut out = Outcome::default();
    let (mut worst_err, mut worst_res) = (0.0f64, 0.0f64);
    let mut all_converged = true;
    for (e, r) in economies.iter().zip(results) {
        let r = r?;
        let err = e.oracle_price.as_ref().map(|o| rel_err(r.price.values(), o));
        worst_err = worst_err.max(err.unwrap_or(0.0));
        worst_res = worst_res.max(r.verification.worst());
        all_converged &= r.converged;
        summary.push(vec![
            e.name.clone(),
            r.iterations.to_string(),
            r.converged.to_string(),
            num(r.clearing_residual),
            num(r.budget_residual_max),
            num(r.optimality_gap_max),
            err.map_or(String::new(), num),
        ]);
        price_rows(&mut prices, &e.name, r.price.values(), e.oracle_price.as_ref());
        for (it, res) in &r.trace {
            trace.push(vec![e.name.clone(), it.to_string(), num(*res)]);
        }
    }
    out.table("solve.csv", "per-economy solver summary", summary);
    out.table("prices.csv", "equilibrium prices with oracle values", prices);
    out.table("trace.csv", "accepted tatonnement residuals", trace);
    out.metric("max_oracle_rel_err", worst_err);
    out.metric("max_verification_residual", worst_res);
    out.checks.push(Check::holds("all_converged", all_converged));
    out.checks.push(Check::at_most("oracle_rel_err", worst_err, b.price_rel_tol));
    out.checks.push(Check::at_most("verification_residual", worst_res, b.residual_tol));
    Ok(out)
}

fn schmeidler(b: &SchmeidlerBlock, economies: &[EconomyBlock], threads: usize) -> Result<Outcome, CliError> {
    let results = par_map(economies, threads, |e| -> fatou_core::Result<_> {
        let direct = direct_solve(e, &b.params)?;
        let lim = schmeidler_limit(&e.build()?, &b.schedule, &b.params, b.window, b.tol)?;
        Ok((direct, lim))
    });
    let mut levels = Table::new(&[
        "economy",
        "truncation",
        "iterations",
        "converged",
        "clearing_residual",
        "budget_residual_max",
        "optimality_gap_max",
        "caps_binding",
    ]);
    let mut summary = Table::new(&[
        "economy",
        "cauchy_spread",
        "limit_vs_direct",
        "budget_equality_max",
        "split_cells",
        "last_caps_binding",
    ]);
    let mut prices = Table::new(&["economy", "good", "price", "oracle_price"]);
    let (mut worst_gap, mut worst_budget) = (0.0f64, 0.0f64);
    let mut eventually_free = true;
    for (e, r) in economies.iter().zip(results) {
        let (direct, lim) = r?;
        for l in &lim.levels {
            levels.push(vec![
                e.name.clone(),
                l.truncation.map_or(String::new(), |n| n.to_string()),
                l.iterations.to_string(),
                l.converged.to_string(),
                num(l.clearing_residual),
                num(l.budget_residual_max),
                num(l.optimality_gap_max),
                l.caps_binding.to_string(),
            ]);
        }
        let gap = lim.limit.price.values().iter().zip(direct.price.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let last_binding = lim.levels.last().is_some_and(|l| l.caps_binding);
        eventually_free &= !last_binding;
        worst_gap = worst_gap.max(gap);
        worst_budget = worst_budget.max(lim.budget_equality_max);
        summary.push(vec![
            e.name.clone(),
            num(lim.cauchy_spread),
            num(gap),
            num(lim.budget_equality_max),
            lim.fatou.selection_space.len().to_string(),
            last_binding.to_string(),
        ]);
        price_rows(&mut prices, &e.name, lim.limit.price.values(), e.oracle_price.as_ref());
    }
    let mut out = Outcome::default();
    out.table("schmeidler_levels.csv", "per-level truncated equilibria", levels);
    out.table("schmeidler.csv", "truncation limit against the direct solve", summary);
    out.table("prices.csv", "limit prices with oracle values", prices);
    out.metric("max_limit_vs_direct", worst_gap);
    out.metric("max_budget_equality", worst_budget);
    out.checks.push(Check::holds("caps_eventually_nonbinding", eventually_free));
    out.checks.push(Check::at_most("limit_vs_direct", worst_gap, b.price_tol));
    out.checks.push(Check::at_most("budget_equality", worst_budget, b.budget_tol));
    Ok(out)
}

fn yh_table(yh: &YHDiagnostic) -> Table {
    let mut t = Table::new(&YHDiagnostic::CSV_HEADER.split(',').collect::<Vec<_>>());
    for line in yh.csv().lines().skip(1) {
        t.push(line.split(',').map(String::from).collect());
    }
    t
}

fn csv_table(text: &str) -> Table {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let mut t = Table::new(&header);
    for l in lines {
        t.push(l.split(',').map(String::from).collect());
    }
    t
}

fn pipeline(b: &PipelineBlock, dyadic: bool) -> Result<Outcome, CliError> {
    let spec = b.spec()?;
    let res = if dyadic { run_we2(&spec, &b.schedule, &b.params)? } else { run_we1(&spec, &b.schedule, &b.params)? };
    let th = &b.thresholds;
    let mut out = Outcome::default();
    out.table("levels.csv", "per-level truncated equilibria", csv_table(&res.levels_csv()));
    out.table("prices.csv", "per-level top-level price densities", csv_table(&res.price_csv()));
    let mut notes = Table::new(&["failure"]);
    for f in &res.failures {
        notes.push(vec![f.clone()]);
    }
    out.table("failures.csv", "conditions the pipeline could not certify", notes);

    let consistency = res
        .levels
        .windows(2)
        .map(|w| w[0].price_top.iter().zip(&w[1].price_top).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    out.metric("level_price_change_max", consistency);
    if let Some(tol) = th.consistency_tol {
        out.checks.push(Check::at_most("truncation_consistency", consistency, tol));
    }
    if th.require_converged {
        out.checks.push(Check::holds("converged", res.converged));
        match &res.verification {
            Some(v) => {
                out.metric("clearing_residual", v.clearing_residual);
                out.metric("budget_equality_max", v.budget_equality_max);
                out.metric("optimality_gap_max", v.optimality_gap_max);
                out.checks.push(Check::at_most("clearing_residual", v.clearing_residual, th.residual_tol));
                out.checks.push(Check::at_most("budget_equality", v.budget_equality_max, th.residual_tol));
                out.checks.push(Check::at_most("optimality_gap", v.optimality_gap_max, th.residual_tol));
            }
            None => out.checks.push(Check::holds("limit_verified", false)),
        }
    }
    if let Some(yh) = &res.yh {
        out.table("yh.csv", "price mass concentration across levels", yh_table(yh));
        out.metric("final_concentration_index", *yh.concentration_index.last().expect("levels"));
        if let Some(expect) = th.expect_pfa {
            out.checks.push(Check::holds(if expect { "pfa_flag_raised" } else { "pfa_flag_clear" }, yh.pfa_flag == expect));
        }
        if let Some(ca) = &yh.ca_price {
            let mut t = Table::new(&["bin", "ca_price"]);
            for (j, v) in ca.iter().enumerate() {
                t.push(vec![j.to_string(), num(*v)]);
            }
            out.table("ca_price.csv", "final price density with the concentrating bins removed", t);
            out.checks.push(Check::holds("ca_price_nonzero", ca.iter().all(|v| *v >= 0.0) && ca.iter().any(|v| *v > 0.0)));
        }
        if let Some(v) = &res.ca_verification {
            out.metric("ca_budget_residual", v.budget_residual_max);
            out.checks.push(Check::at_most("ca_budget_residual", v.budget_residual_max, th.ca_budget_tol));
        }
    } else if th.expect_pfa.is_some() {
        out.checks.push(Check::holds("yh_diagnostic_ran", false));
    }
    Ok(out)
}

