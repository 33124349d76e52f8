//! Exchange economies at a finite truncation level: preferences, endowments,
//! budget sets, demand correspondences and excess demand.

use serde::{Deserialize, Serialize};

use crate::agent_space::{AgentSpace, CellFunction};
use crate::error::{Error, Result};
use crate::set_analysis::{dot, PointSet};

mod search;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const BUDGET_TOL: f64 = 1e-12;
const TIE_REL: f64 = 1e-12;
const TABLE_VALUE_TOL: f64 = 1e-9;
const MAX_FACE_VERTICES: usize = 512;

/// Utility values on a rectangular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableUtility {
    /// Grid coordinates for each good, strictly increasing.
    pub axes: Vec<Vec<f64>>,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
}

impl TableUtility {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        let t = Self { axes, values };
        t.validate()?;
        Ok(t)
    }

    /// Samples `f` on the product grid.
    pub fn sample(axes: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut values = Vec::new();
        let probe = Self { axes: axes.clone(), values: Vec::new() };
        for idx in probe.grid_indices() {
            values.push(f(&probe.point(&idx)));
        }
        Self::new(axes, values)
    }

    fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::InvalidInput("table utility needs at least one axis".into()));
        }
        let mut size = 1usize;
        for a in &self.axes {
            if a.is_empty() || a.windows(2).any(|w| !(w[1] > w[0])) || a.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidInput("table axes must be nonnegative and strictly increasing".into()));
            }
            size = size.saturating_mul(a.len());
        }
        if size != self.values.len() {
            return Err(Error::DimensionMismatch { expected: size, found: self.values.len() });
        }
        Ok(())
    }

    fn grid_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for a in &self.axes {
            let mut next = Vec::with_capacity(out.len() * a.len());
            for prefix in &out {
                for i in 0..a.len() {
                    let mut v = prefix.clone();
                    v.push(i);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }

    fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    pub fn lookup(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.axes.len() {
            return Err(Error::DimensionMismatch { expected: self.axes.len(), found: x.len() });
        }
        let mut idx = Vec::with_capacity(x.len());
        for (v, a) in x.iter().zip(&self.axes) {
            let i = a
                .iter()
                .position(|g| (g - v).abs() <= 1e-12 * (1.0 + g.abs()))
                .ok_or_else(|| Error::InvalidInput(format!("bundle coordinate {v} is off the utility grid")))?;
            idx.push(i);
        }
        Ok(self.values[self.flat_index(&idx)])
    }
}

/// Preference kinds, all represented by utility functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preference {
    CobbDouglas { weights: Vec<f64> },
    Ces { rho: f64, weights: Vec<f64> },
    /// Inner utility applied to the moment vector `moments * x`.
    LinearMoments { moments: Vec<Vec<f64>>, inner: Box<Preference> },
    Table(TableUtility),
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() || w.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("preference weights must be strictly positive".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidInput(format!("preference weights sum to {s}, expected 1")));
    }
    Ok(())
}

impl Preference {
    /// Number of goods the preference is defined on.
    pub fn dim(&self) -> usize {
        match self {
            Preference::CobbDouglas { weights } | Preference::Ces { weights, .. } => weights.len(),
            Preference::LinearMoments { moments, .. } => moments.first().map_or(0, |r| r.len()),
            Preference::Table(t) => t.axes.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Preference::CobbDouglas { weights } => check_weights(weights),
            Preference::Ces { rho, weights } => {
                if !(rho.is_finite() && *rho != 0.0 && *rho <= 1.0) {
                    return Err(Error::InvalidInput(format!("CES rho must be nonzero and <= 1, got {rho}")));
                }
                check_weights(weights)
            }
            Preference::LinearMoments { moments, inner } => {
                let k = moments.first().map(|r| r.len()).unwrap_or(0);
                if k == 0 {
                    return Err(Error::InvalidInput("moment matrix must be nonempty".into()));
                }
                for r in moments {
                    if r.len() != k {
                        return Err(Error::DimensionMismatch { expected: k, found: r.len() });
                    }
                    if r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                        return Err(Error::InvalidInput("moment matrix must be nonnegative".into()));
                    }
                }
                match inner.as_ref() {
                    Preference::CobbDouglas { .. } | Preference::Ces { .. } => {}
                    _ => return Err(Error::InvalidInput("moment inner utility must be Cobb-Douglas or CES".into())),
                }
                inner.validate()?;
                if inner.dim() != moments.len() {
                    return Err(Error::DimensionMismatch { expected: moments.len(), found: inner.dim() });
                }
                Ok(())
            }
            Preference::Table(t) => t.validate(),
        }
    }

    /// Whether good `j` can ever change the utility level.
    pub fn values_good(&self, j: usize) -> bool {
        match self {
            Preference::LinearMoments { moments, .. } => moments.iter().any(|r| r.get(j).is_some_and(|v| *v > 0.0)),
            _ => true,
        }
    }

    /// Whether more of every valued good is always better.
    pub fn is_monotone(&self) -> bool {
        !matches!(self, Preference::Table(_))
    }
}

pub fn utility(pref: &Preference, x: &[f64]) -> Result<f64> {
    if x.len() != pref.dim() {
        return Err(Error::DimensionMismatch { expected: pref.dim(), found: x.len() });
    }
    if x.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("utility of a bundle with negative entries".into()));
    }
    Ok(match pref {
        Preference::CobbDouglas { weights } => weights.iter().zip(x).map(|(w, v)| v.powf(*w)).product(),
        Preference::Ces { rho, weights } => {
            if *rho < 0.0 && x.iter().any(|v| *v == 0.0) {
                0.0
            } else {
                let s: f64 = weights.iter().zip(x).map(|(w, v)| w * v.powf(*rho)).sum();
                s.powf(1.0 / rho)
            }
        }
        Preference::LinearMoments { moments, inner } => {
            let y: Vec<f64> = moments.iter().map(|r| dot(r, x)).collect();
            utility(inner, &y)?
        }
        Preference::Table(t) => t.lookup(x)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub preference: Preference,
    pub endowment: Vec<f64>,
}

impl AgentProfile {
    pub fn new(preference: Preference, endowment: Vec<f64>) -> Result<Self> {
        preference.validate()?;
        if endowment.len() != preference.dim() {
            return Err(Error::DimensionMismatch { expected: preference.dim(), found: endowment.len() });
        }
        if endowment.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("endowments must be nonnegative".into()));
        }
        Ok(Self { preference, endowment })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceNorm {
    UnitSum,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVector {
    values: Vec<f64>,
    norm: PriceNorm,
}

impl PriceVector {
    pub fn new(values: Vec<f64>, norm: PriceNorm) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("prices must be nonnegative and finite".into()));
        }
        let scale = match norm {
            PriceNorm::UnitSum => values.iter().sum::<f64>(),
            PriceNorm::Euclidean => dot(&values, &values).sqrt(),
        };
        if !(scale > 0.0) {
            return Err(Error::InvalidInput("price vector must be nonzero".into()));
        }
        Ok(Self { values: values.iter().map(|v| v / scale).collect(), norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> PriceNorm {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Economy {
    pub space: AgentSpace,
    pub k: usize,
    pub profiles: Vec<AgentProfile>,
    pub caps: Option<Vec<Vec<f64>>>,
}

impl Economy {
    pub fn new(space: AgentSpace, profiles: Vec<AgentProfile>, caps: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if profiles.len() != space.len() {
            return Err(Error::DimensionMismatch { expected: space.len(), found: profiles.len() });
        }
        let k = profiles[0].endowment.len();
        for p in &profiles {
            if p.endowment.len() != k || p.preference.dim() != k {
                return Err(Error::DimensionMismatch { expected: k, found: p.endowment.len() });
            }
            p.preference.validate()?;
        }
        if let Some(caps) = &caps {
            if caps.len() != profiles.len() {
                return Err(Error::DimensionMismatch { expected: profiles.len(), found: caps.len() });
            }
            for (c, p) in caps.iter().zip(&profiles) {
                if c.len() != k {
                    return Err(Error::DimensionMismatch { expected: k, found: c.len() });
                }
                if c.iter().zip(&p.endowment).any(|(ci, wi)| !(ci >= wi)) {
                    return Err(Error::InvalidInput("endowment exceeds the consumption cap".into()));
                }
            }
        }
        let econ = Self { space, k, profiles, caps };
        let agg = econ.aggregate_endowment();
        if agg.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("aggregate endowment must be strictly positive in every good".into()));
        }
        Ok(econ)
    }

    pub fn cap(&self, cell: usize) -> Option<&[f64]> {
        self.caps.as_ref().map(|c| c[cell].as_slice())
    }

    pub fn endowments(&self) -> CellFunction {
        let rows: Vec<Vec<f64>> = self.profiles.iter().map(|p| p.endowment.clone()).collect();
        CellFunction::from_rows(self.k, &rows).expect("validated shapes")
    }

    pub fn aggregate_endowment(&self) -> Vec<f64> {
        let mut agg = vec![0.0; self.k];
        for (c, p) in self.space.cells().iter().zip(&self.profiles) {
            for (a, w) in agg.iter_mut().zip(&p.endowment) {
                *a += c.mass * w;
            }
        }
        agg
    }

    /// Copy of the economy with every cap replaced.
    pub fn with_caps(&self, caps: Option<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(self.space.clone(), self.profiles.clone(), caps)
    }
}

pub fn budget_set_contains(profile: &AgentProfile, p: &[f64], x: &[f64], cap: Option<&[f64]>) -> bool {
    if x.iter().any(|v| *v < 0.0) || x.len() != p.len() {
        return false;
    }
    if let Some(c) = cap {
        if x.iter().zip(c).any(|(xi, ci)| xi > ci) {
            return false;
        }
    }
    dot(p, x) <= dot(p, &profile.endowment) + BUDGET_TOL
}

/// Rule picking one bundle from a demand set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Lexicographically smallest maximizer.
    #[default]
    LexSmallest,
    /// Among tied goods, the bundle that treats them alike.
    Balanced,
    /// Economy-wide: the selection whose aggregate excess demand is nearest
    /// zero. A lone agent falls back to `Balanced`.
    Clearing,
}

#[derive(Debug, Clone)]
pub struct Demand {
    pub set: PointSet,
    pub lex_smallest: Vec<f64>,
    pub balanced: Vec<f64>,
    /// The best bundle in the consumption set is affordable.
    pub satiated: bool,
    /// Computed by iterative search rather than in closed form.
    pub approximate: bool,
}

impl Demand {
    pub fn select(&self, selector: Selector) -> &[f64] {
        match selector {
            Selector::LexSmallest => &self.lex_smallest,
            Selector::Balanced | Selector::Clearing => &self.balanced,
        }
    }

    fn single(x: Vec<f64>, satiated: bool) -> Self {
        Self { set: PointSet::singleton(&x), lex_smallest: x.clone(), balanced: x, satiated, approximate: false }
    }
}

#[derive(Debug, Clone)]
pub enum DemandOutcome {
    Bundles(Demand),
    /// Demand is unbounded or undefined (a free good with no cap).
    Degenerate,
}

impl DemandOutcome {
    pub fn bundles(self) -> Option<Demand> {
        match self {
            DemandOutcome::Bundles(d) => Some(d),
            DemandOutcome::Degenerate => None,
        }
    }
}

/// Goods supplying one moment at a common unit cost.
#[derive(Debug, Clone)]
struct Segment {
    cost: f64,
    capacity: f64,
    goods: Vec<(usize, f64)>,
}

/// Supply curve of one moment: segments sorted by unit cost.
#[derive(Debug, Clone)]
struct Ladder {
    weight: f64,
    segments: Vec<Segment>,
}

enum Inner {
    Concave { rho: f64 },
    Linear,
}

fn inner_of(pref: &Preference) -> (Inner, &[f64]) {
    match pref {
        Preference::CobbDouglas { weights } => (Inner::Concave { rho: 0.0 }, weights),
        Preference::Ces { rho, weights } if *rho == 1.0 => (Inner::Linear, weights),
        Preference::Ces { rho, weights } => (Inner::Concave { rho: *rho }, weights),
        _ => unreachable!("inner utilities are Cobb-Douglas or CES"),
    }
}

/// Builds moment ladders when every good feeds at most one moment.
fn ladders(moments: &[Vec<f64>], weights: &[f64], p: &[f64], cap: Option<&[f64]>) -> Option<Vec<Ladder>> {
    let k = p.len();
    let mut owner = vec![None; k];
    for (i, row) in moments.iter().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            if a > 0.0 {
                if owner[j].is_some() {
                    return None;
                }
                owner[j] = Some((i, a));
            }
        }
    }
    let mut out: Vec<Ladder> = weights.iter().map(|&w| Ladder { weight: w, segments: Vec::new() }).collect();
    let mut items: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (j, o) in owner.iter().enumerate() {
        if let Some((i, a)) = o {
            items.push((*i, j, *a, p[j] / a));
        }
    }
    items.sort_by(|x, y| x.0.cmp(&y.0).then(x.3.partial_cmp(&y.3).expect("finite")).then(x.1.cmp(&y.1)));
    for (i, j, a, cost) in items {
        let capacity = cap.map_or(f64::INFINITY, |c| a * c[j]);
        let ladder = &mut out[i];
        match ladder.segments.last_mut() {
            Some(s) if (s.cost - cost).abs() <= TIE_REL * s.cost.max(cost) => {
                s.capacity += capacity;
                s.goods.push((j, a));
            }
            _ => ladder.segments.push(Segment { cost, capacity, goods: vec![(j, a)] }),
        }
    }
    Some(out)
}

/// Moment level wanted at marginal cost `m` and multiplier `lambda`.
fn desire(weight: f64, rho: f64, lambda: f64, m: f64) -> f64 {
    let base = weight / (lambda * m);
    if rho == 0.0 {
        base
    } else {
        base.powf(1.0 / (1.0 - rho))
    }
}

/// Per-segment moment amounts at multiplier `lambda`, and their total cost.
fn walk(ladders: &[Ladder], rho: f64, lambda: f64) -> (Vec<Vec<f64>>, f64) {
    let mut cost = 0.0;
    let mut fills = Vec::with_capacity(ladders.len());
    for l in ladders {
        let mut y = 0.0;
        let mut fill = vec![0.0; l.segments.len()];
        for (s, seg) in l.segments.iter().enumerate() {
            if seg.cost == 0.0 {
                fill[s] = seg.capacity;
                y += seg.capacity;
                continue;
            }
            let d = desire(l.weight, rho, lambda, seg.cost);
            if d <= y {
                break;
            }
            let take = (d - y).min(seg.capacity);
            fill[s] = take;
            y += take;
            cost += take * seg.cost;
            if take < seg.capacity {
                break;
            }
        }
        fills.push(fill);
    }
    (fills, cost)
}

fn full_cost(ladders: &[Ladder]) -> f64 {
    ladders.iter().flat_map(|l| l.segments.iter()).map(|s| s.cost * s.capacity).sum()
}

/// Fills for a strictly concave separable inner utility.
fn solve_concave(ladders: &[Ladder], rho: f64, income: f64) -> (Vec<Vec<f64>>, bool) {
    let total = full_cost(ladders);
    if total.is_finite() && total <= income {
        let fills = ladders.iter().map(|l| l.segments.iter().map(|s| s.capacity).collect()).collect();
        return (fills, true);
    }
    let wsum: f64 = ladders.iter().map(|l| l.weight).sum();
    let mut lo = wsum / income.max(f64::MIN_POSITIVE);
    let mut hi = lo;
    while walk(ladders, rho, lo).1 < income {
        lo /= 2.0;
    }
    while walk(ladders, rho, hi).1 > income {
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        if walk(ladders, rho, mid).1 > income {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (mut fills, cost) = walk(ladders, rho, hi);
    // Spend the rounding leftover on the marginal segments.
    let slack = income - cost;
    if slack > 0.0 {
        let mut marginal: Vec<(usize, usize)> = Vec::new();
        for (i, l) in ladders.iter().enumerate() {
            for (s, seg) in l.segments.iter().enumerate() {
                if seg.cost > 0.0 && fills[i][s] > 0.0 && fills[i][s] < seg.capacity {
                    marginal.push((i, s));
                }
            }
        }
        let spend: f64 = marginal.iter().map(|&(i, s)| fills[i][s] * ladders[i].segments[s].cost).sum();
        if spend > 0.0 {
            let scale = (spend + slack) / spend;
            for (i, s) in marginal {
                let cap = ladders[i].segments[s].capacity;
                fills[i][s] = (fills[i][s] * scale).min(cap);
            }
        }
    }
    (fills, false)
}

/// Linear inner utility: fills of the strictly better segments, plus the tied
/// group on which the remaining money is spent.
struct LinearFill {
    base: Vec<Vec<f64>>,
    group: Vec<(usize, usize)>,
    money: f64,
}

fn solve_linear(ladders: &[Ladder], income: f64) -> LinearFill {
    let mut base: Vec<Vec<f64>> = ladders.iter().map(|l| vec![0.0; l.segments.len()]).collect();
    let mut order: Vec<(usize, usize, f64)> = Vec::new();
    for (i, l) in ladders.iter().enumerate() {
        for (s, seg) in l.segments.iter().enumerate() {
            let ratio = if seg.cost == 0.0 { f64::INFINITY } else { l.weight / seg.cost };
            order.push((i, s, ratio));
        }
    }
    order.sort_by(|a, b| b.2.partial_cmp(&a.2).expect("comparable").then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut money = income;
    let mut g = 0;
    while g < order.len() {
        let mut h = g + 1;
        while h < order.len() && (order[h].2 - order[g].2).abs() <= TIE_REL * order[g].2.abs() {
            h += 1;
        }
        let group = &order[g..h];
        let need: f64 = group.iter().map(|&(i, s, _)| ladders[i].segments[s].cost * ladders[i].segments[s].capacity).sum();
        if need <= money {
            for &(i, s, _) in group {
                base[i][s] = ladders[i].segments[s].capacity;
            }
            money -= need;
        } else {
            let group = group.iter().map(|&(i, s, _)| (i, s)).collect();
            return LinearFill { base, group, money };
        }
        g = h;
    }
    LinearFill { base, group: Vec::new(), money: 0.0 }
}

impl LinearFill {
    fn satiated(&self) -> bool {
        self.group.is_empty()
    }

    /// Spends the leftover on the group members in the given order.
    fn in_order(&self, ladders: &[Ladder], members: &[(usize, usize)]) -> Vec<Vec<f64>> {
        let mut fills = self.base.clone();
        let mut left = self.money;
        for &(i, s) in members {
            let seg = &ladders[i].segments[s];
            let take = (left / seg.cost).min(seg.capacity);
            fills[i][s] = take;
            left -= take * seg.cost;
            if left <= 0.0 {
                break;
            }
        }
        fills
    }

    /// Splits the leftover evenly by money across the group.
    fn even(&self, ladders: &[Ladder]) -> Vec<Vec<f64>> {
        let mut fills = self.base.clone();
        let share = self.money / self.group.len().max(1) as f64;
        let mut left = self.money;
        for &(i, s) in &self.group {
            let seg = &ladders[i].segments[s];
            let take = (share / seg.cost).min(seg.capacity);
            fills[i][s] = take;
            left -= take * seg.cost;
        }
        for &(i, s) in &self.group {
            if left <= 0.0 {
                break;
            }
            let seg = &ladders[i].segments[s];
            let extra = (left / seg.cost).min(seg.capacity - fills[i][s]);
            fills[i][s] += extra;
            left -= extra * seg.cost;
        }
        fills
    }
}

fn max_good(ladders: &[Ladder], m: (usize, usize)) -> usize {
    ladders[m.0].segments[m.1].goods.iter().map(|g| g.0).max().unwrap_or(0)
}

/// Allocates a moment amount across the goods of a segment.
fn spread(seg: &Segment, amount: f64, cap: Option<&[f64]>, how: Selector, ascending: bool, x: &mut [f64]) {
    if amount >= seg.capacity {
        for &(j, _) in &seg.goods {
            x[j] = cap.map_or(f64::INFINITY, |c| c[j]);
        }
        return;
    }
    match how {
        Selector::Balanced | Selector::Clearing => {
            if seg.capacity.is_finite() {
                let frac = amount / seg.capacity;
                for &(j, _) in &seg.goods {
                    x[j] = frac * cap.expect("finite capacity has caps")[j];
                }
            } else {
                let n = seg.goods.len() as f64;
                for &(j, a) in &seg.goods {
                    x[j] = amount / (n * a);
                }
            }
        }
        Selector::LexSmallest => {
            let mut goods = seg.goods.clone();
            goods.sort_by_key(|g| g.0);
            if !ascending {
                goods.reverse();
            }
            let mut left = amount;
            for (j, a) in goods {
                if left <= 0.0 {
                    break;
                }
                let room = cap.map_or(f64::INFINITY, |c| a * c[j]);
                let take = left.min(room);
                x[j] = take / a;
                left -= take;
            }
        }
    }
}

fn assemble(
    ladders: &[Ladder],
    fills: &[Vec<f64>],
    k: usize,
    cap: Option<&[f64]>,
    how: Selector,
    ascending: bool,
) -> Vec<f64> {
    let mut x = vec![0.0; k];
    for (l, fill) in ladders.iter().zip(fills) {
        for (seg, &amount) in l.segments.iter().zip(fill) {
            if amount > 0.0 {
                spread(seg, amount, cap, how, ascending, &mut x);
            }
        }
    }
    x
}

/// Every vertex of the optimal face when ties are uncapped and few.
fn face_vertices(ladders: &[Ladder], fills: &[Vec<f64>], base: &[f64]) -> Option<Vec<Vec<f64>>> {
    let mut partial: Vec<(&Segment, f64)> = Vec::new();
    for (l, fill) in ladders.iter().zip(fills) {
        for (seg, &amount) in l.segments.iter().zip(fill) {
            if amount > 0.0 && seg.goods.len() > 1 && amount < seg.capacity {
                if seg.capacity.is_finite() {
                    return None;
                }
                partial.push((seg, amount));
            }
        }
    }
    let count = partial.iter().try_fold(1usize, |acc, (s, _)| acc.checked_mul(s.goods.len()))?;
    if count > MAX_FACE_VERTICES {
        return None;
    }
    let mut out = vec![base.to_vec()];
    for (seg, amount) in partial {
        for &(j, _) in &seg.goods {
            for v in out.iter_mut() {
                v[j] = 0.0;
            }
        }
        let mut next = Vec::with_capacity(out.len() * seg.goods.len());
        for v in &out {
            for &(j, a) in &seg.goods {
                let mut w = v.clone();
                w[j] = amount / a;
                next.push(w);
            }
        }
        out = next;
    }
    Some(out)
}

fn ladder_demand(
    moments: &[Vec<f64>],
    inner: &Preference,
    p: &[f64],
    income: f64,
    cap: Option<&[f64]>,
) -> Option<DemandOutcome> {
    let (kind, weights) = inner_of(inner);
    let ls = ladders(moments, weights, p, cap)?;
    for l in &ls {
        if l.segments.iter().any(|s| s.cost == 0.0 && !s.capacity.is_finite()) {
            return Some(DemandOutcome::Degenerate);
        }
        if l.segments.is_empty() && matches!(kind, Inner::Concave { rho } if rho <= 0.0) {
            // A moment no good supplies zeroes a Cobb-Douglas or complementary utility.
            return Some(DemandOutcome::Degenerate);
        }
    }
    if ls.iter().all(|l| l.segments.is_empty()) {
        return Some(DemandOutcome::Degenerate);
    }
    if income <= 0.0 && cap.is_none() {
        let free_valued = ls.iter().any(|l| l.segments.iter().any(|s| s.cost == 0.0));
        if free_valued || p.iter().any(|v| *v == 0.0) {
            return Some(DemandOutcome::Degenerate);
        }
        return Some(DemandOutcome::Bundles(Demand::single(vec![0.0; p.len()], false)));
    }
    let k = p.len();
    let (lex, balanced, points, satiated) = match kind {
        Inner::Concave { rho } => {
            let (fills, satiated) = solve_concave(&ls, rho, income);
            let lex = assemble(&ls, &fills, k, cap, Selector::LexSmallest, false);
            let lex_max = assemble(&ls, &fills, k, cap, Selector::LexSmallest, true);
            let balanced = assemble(&ls, &fills, k, cap, Selector::Balanced, false);
            let points = face_vertices(&ls, &fills, &lex).unwrap_or_else(|| vec![lex.clone(), lex_max.clone()]);
            (lex, balanced, points, satiated)
        }
        Inner::Linear => {
            let lf = solve_linear(&ls, income);
            let mut desc = lf.group.clone();
            desc.sort_by_key(|&m| std::cmp::Reverse(max_good(&ls, m)));
            let mut asc = desc.clone();
            asc.reverse();
            let lex = assemble(&ls, &lf.in_order(&ls, &desc), k, cap, Selector::LexSmallest, false);
            let lex_max = assemble(&ls, &lf.in_order(&ls, &asc), k, cap, Selector::LexSmallest, true);
            let balanced = assemble(&ls, &lf.even(&ls), k, cap, Selector::Balanced, false);
            let mut points = Vec::new();
            let finite = lf.group.iter().any(|&(i, s)| ls[i].segments[s].capacity.is_finite());
            if lf.group.len() > 1 && !finite {
                for &m in &lf.group {
                    let fills = lf.in_order(&ls, &[m]);
                    match face_vertices(&ls, &fills, &assemble(&ls, &fills, k, cap, Selector::LexSmallest, false)) {
                        Some(v) if points.len() + v.len() <= MAX_FACE_VERTICES => points.extend(v),
                        _ => {}
                    }
                }
            } else if let Some(v) = face_vertices(&ls, &lf.in_order(&ls, &desc), &lex) {
                points = v;
            }
            if points.is_empty() {
                points = vec![lex.clone(), lex_max.clone()];
            }
            (lex, balanced, points, lf.satiated())
        }
    };
    let set = PointSet::new(k, points).expect("nonempty demand");
    Some(DemandOutcome::Bundles(Demand { set, lex_smallest: lex, balanced, satiated, approximate: false }))
}

/// Demand for moment preferences whose goods feed several moments.
fn moment_search(pref: &Preference, p: &[f64], income: f64, cap: Option<&[f64]>) -> DemandOutcome {
    let Preference::LinearMoments { moments, inner } = pref else { unreachable!() };
    let k = p.len();
    if p.iter().enumerate().any(|(j, v)| *v == 0.0 && cap.is_none() && moments.iter().any(|r| r[j] > 0.0)) {
        return DemandOutcome::Degenerate;
    }
    let (kind, weights) = inner_of(inner);
    let rho = match kind {
        // A linear inner utility is linear in the goods: one combined moment.
        Inner::Linear => {
            let row: Vec<f64> = (0..k).map(|j| moments.iter().zip(weights).map(|(r, w)| w * r[j]).sum()).collect();
            let linear = Preference::Ces { rho: 1.0, weights: vec![1.0] };
            return ladder_demand(&[row], &linear, p, income, cap).expect("a single moment always has a ladder");
        }
        Inner::Concave { rho } => rho,
    };
    if rho <= 0.0 && moments.iter().any(|r| r.iter().all(|v| *v == 0.0)) {
        return DemandOutcome::Degenerate;
    }
    let u = search::LogUtility { moments, weights, rho };
    let x = search::search(&u, p, income, cap);
    let satiated = cap.is_some_and(|c| dot(p, c) <= income);
    let mut d = Demand::single(x, satiated);
    d.approximate = true;
    DemandOutcome::Bundles(d)
}

/// Grid argmax over the budget set; returns every maximizer within 1e-9.
fn table_demand(t: &TableUtility, p: &[f64], income: f64, cap: Option<&[f64]>) -> DemandOutcome {
    let mut best = f64::NEG_INFINITY;
    let mut global = f64::NEG_INFINITY;
    let mut feasible: Vec<(f64, Vec<f64>)> = Vec::new();
    for idx in t.grid_indices() {
        let x = t.point(&idx);
        let u = t.values[t.flat_index(&idx)];
        if cap.is_some_and(|c| x.iter().zip(c).any(|(a, b)| a > b)) {
            continue;
        }
        global = global.max(u);
        if dot(p, &x) <= income + BUDGET_TOL {
            best = best.max(u);
            feasible.push((u, x));
        }
    }
    if feasible.is_empty() {
        return DemandOutcome::Degenerate;
    }
    let mut maximizers: Vec<Vec<f64>> =
        feasible.into_iter().filter(|(u, _)| *u >= best - TABLE_VALUE_TOL).map(|(_, x)| x).collect();
    maximizers.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let lex = maximizers[0].clone();
    let k = p.len();
    let mut centroid = vec![0.0; k];
    for m in &maximizers {
        for (c, v) in centroid.iter_mut().zip(m) {
            *c += v / maximizers.len() as f64;
        }
    }
    let balanced = maximizers
        .iter()
        .min_by(|a, b| {
            crate::set_analysis::dist(a, &centroid)
                .partial_cmp(&crate::set_analysis::dist(b, &centroid))
                .expect("finite")
        })
        .expect("nonempty")
        .clone();
    let set = PointSet::with_tol(k, maximizers, 0.0).expect("nonempty");
    DemandOutcome::Bundles(Demand {
        set,
        lex_smallest: lex,
        balanced,
        satiated: best >= global - TABLE_VALUE_TOL,
        approximate: false,
    })
}

/// Utility-maximizing bundles in the (capped) budget set.
pub fn demand(profile: &AgentProfile, p: &[f64], cap: Option<&[f64]>) -> Result<DemandOutcome> {
    let k = profile.endowment.len();
    if p.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: p.len() });
    }
    if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("prices must be nonnegative".into()));
    }
    if let Some(c) = cap {
        if c.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: c.len() });
        }
    }
    let income = dot(p, &profile.endowment);
    let outcome = match &profile.preference {
        Preference::CobbDouglas { .. } | Preference::Ces { .. } => {
            let identity: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    let mut r = vec![0.0; k];
                    r[i] = 1.0;
                    r
                })
                .collect();
            ladder_demand(&identity, &profile.preference, p, income, cap).expect("identity is a partition")
        }
        Preference::LinearMoments { moments, inner } => match ladder_demand(moments, inner, p, income, cap) {
            Some(d) => d,
            None => moment_search(&profile.preference, p, income, cap),
        },
        Preference::Table(t) => table_demand(t, p, income, cap),
    };
    Ok(outcome)
}

/// Demand of every cell at `p`, failing on the first degenerate cell.
pub fn demands(econ: &Economy, p: &[f64]) -> Result<Vec<Demand>> {
    econ.profiles
        .iter()
        .enumerate()
        .map(|(c, prof)| match demand(prof, p, econ.cap(c))? {
            DemandOutcome::Bundles(d) => Ok(d),
            DemandOutcome::Degenerate => Err(Error::DegenerateDemand { cell: c }),
        })
        .collect()
}

/// Selected bundles per cell.
pub fn selected_allocation(econ: &Economy, p: &[f64], selector: Selector) -> Result<CellFunction> {
    let ds = demands(econ, p)?;
    let rows: Vec<Vec<f64>> = if selector == Selector::Clearing && ds.iter().any(|d| d.set.len() > 1) {
        clearing_rows(econ, &ds)
    } else {
        ds.iter().map(|d| d.select(selector).to_vec()).collect()
    };
    CellFunction::from_rows(econ.k, &rows)
}

/// Min-norm point of the aggregate excess demand set, the Minkowski sum of
/// the cells' demand hulls shifted by total endowment. Atoms are one vertex
/// index per cell; each cell's bundle is the matching mix of its vertices.
fn clearing_rows(econ: &Economy, ds: &[Demand]) -> Vec<Vec<f64>> {
    let k = econ.k;
    let masses: Vec<f64> = econ.space.cells().iter().map(|c| c.mass).collect();
    let supply = econ.aggregate_endowment();
    let point = |atom: &[usize]| -> Vec<f64> {
        let mut z: Vec<f64> = supply.iter().map(|s| -s).collect();
        for ((d, &i), m) in ds.iter().zip(atom).zip(&masses) {
            for (zj, v) in z.iter_mut().zip(d.set.point(i)) {
                *zj += m * v;
            }
        }
        z
    };
    let oracle = |x: &[f64]| -> (Vec<usize>, Vec<f64>) {
        let atom: Vec<usize> = ds
            .iter()
            .map(|d| {
                let mut best = (0, f64::INFINITY);
                for (i, v) in d.set.iter().enumerate() {
                    let s = dot(x, v);
                    if s < best.1 - 1e-15 {
                        best = (i, s);
                    }
                }
                best.0
            })
            .collect();
        let z = point(&atom);
        (atom, z)
    };
    let mut balanced = supply.iter().map(|s| -s).collect::<Vec<f64>>();
    for (d, m) in ds.iter().zip(&masses) {
        for (zj, v) in balanced.iter_mut().zip(&d.balanced) {
            *zj += m * v;
        }
    }
    let start = oracle(&balanced);
    let r = crate::set_analysis::wolfe(start, oracle, 200 + 20 * k);
    ds.iter()
        .enumerate()
        .map(|(c, d)| {
            let mut x = vec![0.0; k];
            for (atom, w) in r.atoms.iter().zip(&r.weights) {
                for (xj, v) in x.iter_mut().zip(d.set.point(atom[c])) {
                    *xj += w * v;
                }
            }
            x
        })
        .collect()
}

/// Integral of selected demand minus integral of endowment.
pub fn excess_demand(econ: &Economy, p: &[f64], selector: Selector) -> Result<Vec<f64>> {
    let alloc = selected_allocation(econ, p, selector)?;
    let mut z = vec![0.0; econ.k];
    for ((c, row), prof) in econ.space.cells().iter().zip(alloc.rows()).zip(&econ.profiles) {
        for j in 0..econ.k {
            z[j] += c.mass * (row[j] - prof.endowment[j]);
        }
    }
    Ok(z)
}
