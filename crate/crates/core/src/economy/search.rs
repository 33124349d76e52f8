//! Demand for moment preferences whose goods feed several moments.
//!
//! Pairwise Frank-Wolfe over the vertices of the (capped) budget set finds
//! the support; a primal active-set Newton method on the KKT system of the
//! free goods then polishes the bundle to rounding level.

use nalgebra::{DMatrix, DVector};

use crate::set_analysis::dot;

const FW_ITERS: usize = 20_000;
const FW_GAP: f64 = 1e-14;
const NEWTON_ROUNDS: usize = 200;
const KKT_REL: f64 = 1e-9;

/// log U(y) for a Cobb-Douglas (`rho == 0`) or CES inner utility, `rho < 1`.
pub(super) struct LogUtility<'a> {
    pub moments: &'a [Vec<f64>],
    pub weights: &'a [f64],
    pub rho: f64,
}

impl LogUtility<'_> {
    fn y(&self, x: &[f64]) -> Vec<f64> {
        self.moments.iter().map(|r| dot(r, x)).collect()
    }

    fn value(&self, y: &[f64]) -> f64 {
        if self.rho == 0.0 {
            if y.iter().any(|v| *v <= 0.0) {
                return f64::NEG_INFINITY;
            }
            return self.weights.iter().zip(y).map(|(w, v)| w * v.ln()).sum();
        }
        if self.rho < 0.0 && y.iter().any(|v| *v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let s: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v.powf(self.rho)).sum();
        if s > 0.0 {
            s.ln() / self.rho
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Gradient in moment space; infinite at an empty moment.
    fn grad_y(&self, y: &[f64]) -> Vec<f64> {
        if self.rho == 0.0 {
            return self.weights.iter().zip(y).map(|(w, v)| if *v > 0.0 { w / v } else { f64::INFINITY }).collect();
        }
        let s: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v.powf(self.rho)).sum();
        self.weights
            .iter()
            .zip(y)
            .map(|(w, v)| if *v > 0.0 { w * v.powf(self.rho - 1.0) / s } else { f64::INFINITY })
            .collect()
    }

    /// Hessian in moment space. Empty moments get zero rows; no free good
    /// feeds them.
    fn hess_y(&self, y: &[f64]) -> DMatrix<f64> {
        let m = y.len();
        let mut h = DMatrix::zeros(m, m);
        if self.rho == 0.0 {
            for i in 0..m {
                if y[i] > 0.0 {
                    h[(i, i)] = -self.weights[i] / (y[i] * y[i]);
                }
            }
            return h;
        }
        let s: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v.powf(self.rho)).sum();
        let g: Vec<f64> =
            self.weights.iter().zip(y).map(|(w, v)| if *v > 0.0 { w * v.powf(self.rho - 1.0) / s } else { 0.0 }).collect();
        for i in 0..m {
            if y[i] <= 0.0 {
                continue;
            }
            h[(i, i)] = (self.rho - 1.0) * self.weights[i] * y[i].powf(self.rho - 2.0) / s;
            for k in 0..m {
                if y[k] > 0.0 {
                    h[(i, k)] -= self.rho * g[i] * g[k];
                }
            }
        }
        h
    }

    /// Gradient in goods space, skipping goods that do not feed a moment.
    fn grad_x(&self, gy: &[f64], k: usize) -> Vec<f64> {
        (0..k)
            .map(|j| {
                self.moments.iter().zip(gy).filter(|(r, _)| r[j] > 0.0).map(|(r, g)| r[j] * g).sum()
            })
            .collect()
    }
}

struct Budget<'a> {
    p: &'a [f64],
    income: f64,
    cap: Option<&'a [f64]>,
    valued: Vec<bool>,
}

impl Budget<'_> {
    fn room(&self, j: usize) -> f64 {
        self.cap.map_or(f64::INFINITY, |c| c[j])
    }

    /// Greedy fill in the given order: a vertex of the capped budget set.
    fn fill(&self, order: impl Iterator<Item = usize>) -> Vec<f64> {
        let k = self.p.len();
        let mut v = vec![0.0; k];
        for j in 0..k {
            if self.valued[j] && self.p[j] == 0.0 {
                v[j] = self.room(j);
            }
        }
        let mut money = self.income;
        for j in order {
            if self.p[j] == 0.0 || money <= 0.0 {
                continue;
            }
            let take = (money / self.p[j]).min(self.room(j));
            v[j] = take;
            money -= take * self.p[j];
        }
        v
    }

    fn paid(&self) -> Vec<usize> {
        (0..self.p.len()).filter(|&j| self.valued[j] && self.p[j] > 0.0).collect()
    }

    /// Vertex maximizing <g, v>.
    fn lmo(&self, g: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = self.paid().into_iter().filter(|&j| g[j] > 0.0).collect();
        order.sort_by(|&a, &b| (g[b] / self.p[b]).partial_cmp(&(g[a] / self.p[a])).expect("finite ratio").then(a.cmp(&b)));
        self.fill(order.into_iter())
    }
}

/// Utility-maximizing bundle; the caller has ruled out degenerate cases.
pub(super) fn search(u: &LogUtility, p: &[f64], income: f64, cap: Option<&[f64]>) -> Vec<f64> {
    let k = p.len();
    let valued: Vec<bool> = (0..k).map(|j| u.moments.iter().any(|r| r[j] > 0.0)).collect();
    // Demand ignores the price level; a unit top price keeps the Newton
    // system equally conditioned at every scale.
    let top = p.iter().cloned().fold(0.0, f64::max);
    let p: Vec<f64> = p.iter().map(|v| v / top).collect();
    let income = income / top;
    let b = Budget { p: &p, income, cap, valued };
    let paid = b.paid();
    if let Some(c) = cap {
        if paid.iter().map(|&j| b.p[j] * c[j]).sum::<f64>() <= income {
            return b.fill(paid.into_iter());
        }
    }
    let x = frank_wolfe(u, &b, &paid);
    polish(u, &b, x)
}

fn frank_wolfe(u: &LogUtility, b: &Budget, paid: &[usize]) -> Vec<f64> {
    let k = b.p.len();
    // Start from the average of the vertices that fill each good first, so
    // every supplied moment is positive.
    let mut active: Vec<(Vec<f64>, f64)> = paid
        .iter()
        .map(|&j| (b.fill(std::iter::once(j).chain(paid.iter().copied().filter(move |&i| i != j))), 1.0 / paid.len() as f64))
        .collect();
    let mut x = vec![0.0; k];
    for (v, w) in &active {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += w * vi;
        }
    }
    for _ in 0..FW_ITERS {
        let y = u.y(&x);
        let g = u.grad_x(&u.grad_y(&y), k);
        let s = b.lmo(&g);
        let gap: f64 = (0..k).filter(|&j| s[j] != x[j]).map(|j| g[j] * (s[j] - x[j])).sum();
        if !(gap > FW_GAP) {
            break;
        }
        let (ai, _) = active
            .iter()
            .enumerate()
            .map(|(i, (v, _))| (i, dot(&g, v)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .expect("active set is nonempty");
        let d: Vec<f64> = s.iter().zip(&active[ai].0).map(|(a, c)| a - c).collect();
        let gmax = active[ai].1;
        let t = line_search(u, &x, &d, gmax);
        if t <= 0.0 {
            break;
        }
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi = (*xi + t * di).max(0.0);
        }
        match active.iter().position(|(v, _)| *v == s) {
            Some(i) => active[i].1 += t,
            None => active.push((s, t)),
        }
        active[ai].1 -= t;
        if t >= gmax {
            active.remove(ai);
        }
    }
    x
}

/// Maximizer of the concave map t -> log U(x + t d) on [0, tmax], by
/// bisection on the sign of the directional derivative.
fn line_search(u: &LogUtility, x: &[f64], d: &[f64], tmax: f64) -> f64 {
    let slope = |t: f64| -> Option<f64> {
        let z: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let y = u.y(&z);
        if u.value(&y) == f64::NEG_INFINITY {
            return None;
        }
        let dy = u.y(d);
        Some(u.grad_y(&y).iter().zip(&dy).filter(|(_, v)| **v != 0.0).map(|(g, v)| g * v).sum())
    };
    if slope(tmax).is_some_and(|s| s >= 0.0) {
        return tmax;
    }
    let (mut lo, mut hi) = (0.0, tmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match slope(mid) {
            Some(s) if s > 0.0 => lo = mid,
            _ => hi = mid,
        }
    }
    lo
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Zero,
    Capped,
}

/// Primal active-set Newton on max log U(Mx) s.t. p.x = income, 0 <= x <= cap.
fn polish(u: &LogUtility, b: &Budget, start: Vec<f64>) -> Vec<f64> {
    let k = b.p.len();
    let paid = b.paid();
    let mut x = start.clone();
    let mut state = vec![Bound::Zero; k];
    for &j in &paid {
        let scale = b.income / b.p[j];
        state[j] = if x[j] <= 1e-12 * scale {
            Bound::Zero
        } else if x[j] >= b.room(j) - 1e-12 * b.room(j) {
            Bound::Capped
        } else {
            Bound::Free
        };
        match state[j] {
            Bound::Zero => x[j] = 0.0,
            Bound::Capped => x[j] = b.room(j),
            Bound::Free => {}
        }
    }
    let mut prev_step = f64::INFINITY;
    for _ in 0..NEWTON_ROUNDS {
        let free: Vec<usize> = paid.iter().copied().filter(|&j| state[j] == Bound::Free).collect();
        if free.is_empty() {
            return start;
        }
        let y = u.y(&x);
        let gy = u.grad_y(&y);
        let g = u.grad_x(&gy, k);
        let hy = u.hess_y(&y);
        let n = free.len();
        let mf = DMatrix::from_fn(u.moments.len(), n, |i, c| u.moments[i][free[c]]);
        let hx = mf.transpose() * hy * &mf;
        let mut a = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] = hx[(r, c)];
            }
            a[(r, n)] = -b.p[free[r]];
            a[(n, r)] = b.p[free[r]];
            rhs[r] = -g[free[r]];
        }
        rhs[n] = b.income - dot(b.p, &x);
        let Ok(sol) = a.svd(true, true).solve(&rhs, 1e-14) else {
            return start;
        };
        let mu = sol[n];

        // Longest feasible step along the Newton direction.
        let mut t = 1.0f64;
        let mut blocking = None;
        for (r, &j) in free.iter().enumerate() {
            let dx = sol[r];
            let limit = if dx < 0.0 {
                -x[j] / dx
            } else if dx > 0.0 && b.room(j).is_finite() {
                (b.room(j) - x[j]) / dx
            } else {
                f64::INFINITY
            };
            if limit < t {
                t = limit;
                blocking = Some(j);
            }
        }
        let step: f64 = (0..n).map(|r| (t * sol[r]).abs() / (b.income / b.p[free[r]])).fold(0.0, f64::max);
        for (r, &j) in free.iter().enumerate() {
            x[j] += t * sol[r];
        }
        if let Some(j) = blocking {
            if sol[free.iter().position(|&f| f == j).expect("free good")] < 0.0 {
                x[j] = 0.0;
                state[j] = Bound::Zero;
            } else {
                x[j] = b.room(j);
                state[j] = Bound::Capped;
            }
            prev_step = f64::INFINITY;
            continue;
        }
        if step > 1e-15 && step < prev_step {
            prev_step = step;
            continue;
        }

        // Converged on this face: release the most violated bound, if any.
        let y = u.y(&x);
        let g = u.grad_x(&u.grad_y(&y), k);
        let worst = paid
            .iter()
            .copied()
            .filter_map(|j| {
                let ratio = g[j] / b.p[j];
                let excess = match state[j] {
                    Bound::Zero => ratio - mu * (1.0 + KKT_REL),
                    Bound::Capped => mu * (1.0 - KKT_REL) - ratio,
                    Bound::Free => return None,
                };
                (excess > 0.0).then_some((j, excess))
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"));
        match worst {
            Some((j, _)) => {
                state[j] = Bound::Free;
                prev_step = f64::INFINITY;
            }
            None => {
                let ok = x.iter().all(|v| *v >= 0.0) && u.value(&y) >= u.value(&u.y(&start)) - 1e-12;
                return if ok { x } else { start };
            }
        }
    }
    start
}
