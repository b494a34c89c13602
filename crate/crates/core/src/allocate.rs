//! Reserve allocation of a total capital `u` across independent lines.
//!
//! Method 1 minimizes the sum of per-line distorted deficits and reduces to
//! water-filling on the marginal levels `g_k(psi_k(u_k))`. Method 2 minimizes
//! the distorted deficit of the aggregate minimum reserve, which ruins as soon
//! as any line ruins.

use std::sync::Arc;

use crate::distortion::Distortion;
use crate::error::{Error, Result};
use crate::model::ExponentialLine;
use crate::numerics::{brent_root, tail_integral, Tolerance};

/// Lowest threshold searched by the water-filling bisection.
pub const THRESHOLD_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationMethod {
    MarginalSum,
    AggregateMin,
}

/// A line with its Method-1 distortion `g_k(x) = x^{1/gamma_k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedLine {
    pub line: ExponentialLine,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    lines: Vec<WeightedLine>,
    total_u: f64,
    method: AllocationMethod,
    aggregate_g: Distortion,
}

impl AllocationProblem {
    /// Method-1 problem.
    pub fn new(lines: Vec<WeightedLine>, total_u: f64) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::argument("allocation needs at least one line"));
        }
        if let Some(w) = lines.iter().find(|w| !(w.gamma >= 1.0) || !w.gamma.is_finite()) {
            return Err(Error::domain(format!("gamma must be >= 1, got {}", w.gamma)));
        }
        check_budget(total_u)?;
        Ok(AllocationProblem {
            lines,
            total_u,
            method: AllocationMethod::MarginalSum,
            aggregate_g: Distortion::Identity,
        })
    }

    /// Method-1 problem with `gamma_k = 1` throughout.
    pub fn undistorted(lines: &[ExponentialLine], total_u: f64) -> Result<Self> {
        Self::new(
            lines.iter().map(|&line| WeightedLine { line, gamma: 1.0 }).collect(),
            total_u,
        )
    }

    /// Switch to Method 2 with aggregate distortion `g`.
    pub fn aggregate(mut self, g: Distortion) -> Self {
        self.method = AllocationMethod::AggregateMin;
        self.aggregate_g = g;
        self
    }

    pub fn lines(&self) -> &[WeightedLine] {
        &self.lines
    }

    pub fn total_u(&self) -> f64 {
        self.total_u
    }

    pub fn method(&self) -> AllocationMethod {
        self.method
    }

    pub fn aggregate_g(&self) -> Distortion {
        self.aggregate_g
    }

    fn plain_lines(&self) -> Vec<ExponentialLine> {
        self.lines.iter().map(|w| w.line).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub u_star: Vec<f64>,
    /// Indices of lines receiving capital (or the argmax lines at zero budget).
    pub active_set: Vec<usize>,
    /// Method 1: the common level `lambda'`. Method 2: the common marginal
    /// reduction `-d rho_2 / d u_k` on the active set.
    pub threshold: f64,
    pub objective: f64,
    /// Method 1: `g_k(psi_k(u_k))`. Method 2: `-d rho_2 / d u_k`.
    pub marginals: Vec<f64>,
}

fn check_budget(total_u: f64) -> Result<()> {
    if !(total_u >= 0.0) || !total_u.is_finite() {
        return Err(Error::domain(format!("total capital must be >= 0, got {total_u}")));
    }
    Ok(())
}

fn argmax_set(values: &[f64]) -> Vec<usize> {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&k| values[k] == top).collect()
}

/// Water-filling for exponential lines under `g_k(x) = x^{1/gamma_k}`.
pub fn method1_exponential(problem: &AllocationProblem) -> Result<AllocationResult> {
    if problem.method != AllocationMethod::MarginalSum {
        return Err(Error::argument("method1_exponential needs a MarginalSum problem"));
    }
    let total = problem.total_u;
    // level_k(u) = m_k exp(-u / w_k)
    let m: Vec<f64> = problem
        .lines
        .iter()
        .map(|w| w.line.ruin_constants().a.powf(1.0 / w.gamma))
        .collect();
    let w: Vec<f64> = problem
        .lines
        .iter()
        .map(|wl| wl.gamma / wl.line.adjustment_coefficient())
        .collect();
    let top = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let assemble = |u: Vec<f64>, threshold: f64, active: Vec<usize>| {
        let marginals: Vec<f64> = (0..u.len()).map(|k| m[k] * (-u[k] / w[k]).exp()).collect();
        let objective = (0..u.len()).map(|k| w[k] * marginals[k]).sum();
        AllocationResult {
            u_star: u,
            active_set: active,
            threshold,
            objective,
            marginals,
        }
    };

    if total == 0.0 {
        return Ok(assemble(vec![0.0; m.len()], top, argmax_set(&m)));
    }

    let budget = |ln_t: f64| -> f64 {
        m.iter()
            .zip(&w)
            .map(|(mk, wk)| (wk * (mk.ln() - ln_t)).max(0.0))
            .sum()
    };
    let mut lo = THRESHOLD_FLOOR.ln();
    let mut hi = top.ln();
    if budget(lo) < total {
        lo = hi - total / w.iter().sum::<f64>() - 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if budget(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let mut ln_t = 0.5 * (lo + hi);
    // closed form on the active set removes the bisection residual
    let mut active: Vec<usize> = (0..m.len()).filter(|&k| m[k].ln() > ln_t).collect();
    for _ in 0..m.len() {
        let sw: f64 = active.iter().map(|&k| w[k]).sum();
        let swl: f64 = active.iter().map(|&k| w[k] * m[k].ln()).sum();
        ln_t = (swl - total) / sw;
        let next: Vec<usize> = (0..m.len()).filter(|&k| m[k].ln() > ln_t).collect();
        if next == active {
            break;
        }
        active = next;
    }
    let u: Vec<f64> = (0..m.len())
        .map(|k| {
            if active.contains(&k) {
                (w[k] * (m[k].ln() - ln_t)).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(assemble(u, ln_t.exp(), active))
}

/// A strictly decreasing marginal level `u -> g_k(psi_k(u))` on `u >= 0`.
pub trait Marginal: Send + Sync {
    fn level(&self, u: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Send + Sync> Marginal for F {
    fn level(&self, u: f64) -> f64 {
        self(u)
    }
}

/// `g(psi(u))` for an exponential line's ultimate ruin probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortedLine {
    pub line: ExponentialLine,
    pub g: Distortion,
}

impl Marginal for DistortedLine {
    fn level(&self, u: f64) -> f64 {
        self.g.eval(self.line.ultimate_ruin(u))
    }
}

const MONOTONE_GRID: usize = 64;

fn check_monotone(k: usize, marginal: &dyn Marginal, span: f64) -> Result<()> {
    let mut prev = marginal.level(0.0);
    if !(prev > 0.0 && prev <= 1.0) {
        return Err(Error::Model(format!(
            "marginal {k} has level {prev} at zero capital, outside (0, 1]"
        )));
    }
    for i in 1..=MONOTONE_GRID {
        let u = span * i as f64 / MONOTONE_GRID as f64;
        let cur = marginal.level(u);
        if !(cur < prev || (cur == 0.0 && prev == 0.0)) {
            return Err(Error::Model(format!(
                "marginal {k} is not strictly decreasing: level({u}) = {cur} >= {prev}"
            )));
        }
        prev = cur;
    }
    Ok(())
}

/// Capital at which `marginal` drops to `level`, clipped at 0.
fn inverse_level(marginal: &dyn Marginal, level: f64, tol: &Tolerance) -> Result<f64> {
    let f = |u: f64| marginal.level(u) - level;
    if f(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Bracketing {
                lo: 0.0,
                hi,
                f_lo: f(0.0),
                f_hi: f(hi),
            });
        }
    }
    brent_root(f, 0.0, hi, tol)
}

/// Water-filling for arbitrary decreasing marginals.
///
/// The objective is `sum_k ∫_{u_k}^∞ level_k(v) dv`.
pub fn method1_generic(marginals: &[&dyn Marginal], total_u: f64, tol: &Tolerance) -> Result<AllocationResult> {
    if marginals.is_empty() {
        return Err(Error::argument("allocation needs at least one line"));
    }
    check_budget(total_u)?;
    let span = total_u.max(1.0);
    for (k, m) in marginals.iter().enumerate() {
        check_monotone(k, *m, span)?;
    }
    let inner = Tolerance {
        abs_tol: tol.abs_tol.min(1e-12),
        rel_tol: tol.rel_tol.min(1e-14),
        max_iter: tol.max_iter.max(300),
    };
    let tops: Vec<f64> = marginals.iter().map(|m| m.level(0.0)).collect();
    let top = tops.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let allocation = |ln_t: f64| -> Result<Vec<f64>> {
        marginals
            .iter()
            .map(|m| inverse_level(*m, ln_t.exp(), &inner))
            .collect()
    };

    let (u, threshold, active) = if total_u == 0.0 {
        (vec![0.0; marginals.len()], top, argmax_set(&tops))
    } else {
        let excess = |ln_t: f64| -> f64 {
            match allocation(ln_t) {
                Ok(u) => u.iter().sum::<f64>() - total_u,
                Err(_) => f64::NAN,
            }
        };
        let lo = THRESHOLD_FLOOR.ln();
        let ln_t = brent_root(excess, lo, top.ln(), &inner)?;
        let mut u = allocation(ln_t)?;
        let active: Vec<usize> = (0..u.len()).filter(|&k| u[k] > 0.0).collect();
        // put the last rounding residue on the line with most capital
        let gap = total_u - u.iter().sum::<f64>();
        let big = (0..u.len()).max_by(|&i, &j| u[i].total_cmp(&u[j])).unwrap();
        u[big] += gap;
        (u, ln_t.exp(), active)
    };

    let quad = Tolerance {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_iter: 200,
    };
    let mut objective = 0.0;
    for (k, m) in marginals.iter().enumerate() {
        objective += tail_integral(|v| m.level(v), u[k], &quad)?;
    }
    let levels = marginals.iter().zip(&u).map(|(m, uk)| m.level(*uk)).collect();
    Ok(AllocationResult {
        u_star: u,
        active_set: active,
        threshold,
        objective,
        marginals: levels,
    })
}

/// `sum_k a_k e^{-b_k u_k} / b_k`.
pub fn rho1(lines: &[ExponentialLine], reserves: &[f64]) -> Result<f64> {
    check_reserves(lines, reserves)?;
    Ok(lines
        .iter()
        .zip(reserves)
        .map(|(l, u)| {
            let k = l.ruin_constants();
            k.a * (-k.b * u).exp() / k.b
        })
        .sum())
}

pub fn rho1_two_line(l1: &ExponentialLine, l2: &ExponentialLine, u1: f64, u2: f64) -> Result<f64> {
    rho1(&[*l1, *l2], &[u1, u2])
}

/// Identity-distorted deficit of the aggregate minimum reserve of two lines.
pub fn rho2_two_line(l1: &ExponentialLine, l2: &ExponentialLine, u1: f64, u2: f64) -> Result<f64> {
    let base = rho1_two_line(l1, l2, u1, u2)?;
    let (k1, k2) = (l1.ruin_constants(), l2.ruin_constants());
    Ok(base - k1.a * k2.a / (k1.b + k2.b) * (-k1.b * u1 - k2.b * u2).exp())
}

fn check_reserves(lines: &[ExponentialLine], reserves: &[f64]) -> Result<()> {
    if lines.len() != reserves.len() {
        return Err(Error::argument(format!(
            "{} lines but {} reserves",
            lines.len(),
            reserves.len()
        )));
    }
    if let Some(u) = reserves.iter().find(|u| !(**u >= 0.0)) {
        return Err(Error::domain(format!("reserves must be >= 0, got {u}")));
    }
    Ok(())
}

/// Partial derivatives of `rho2_two_line`.
fn rho2_two_line_gradient(l1: &ExponentialLine, l2: &ExponentialLine, u1: f64, u2: f64) -> [f64; 2] {
    let (k1, k2) = (l1.ruin_constants(), l2.ruin_constants());
    let (p1, p2) = (k1.ruin(u1), k2.ruin(u2));
    let s = k1.b + k2.b;
    [-p1 + k1.b / s * p1 * p2, -p2 + k2.b / s * p1 * p2]
}

/// Method 2 for two exponential lines under the identity distortion.
pub fn method2_two_line(l1: &ExponentialLine, l2: &ExponentialLine, total_u: f64) -> Result<AllocationResult> {
    check_budget(total_u)?;
    // derivative of rho_2 along u1 -> (u1, U - u1); increasing by convexity
    let h = |u1: f64| {
        let g = rho2_two_line_gradient(l1, l2, u1, total_u - u1);
        g[0] - g[1]
    };
    let u1 = if total_u == 0.0 || h(0.0) > 0.0 {
        0.0
    } else if h(total_u) < 0.0 {
        total_u
    } else {
        let tol = Tolerance {
            abs_tol: 1e-13,
            rel_tol: 1e-15,
            max_iter: 300,
        };
        brent_root(h, 0.0, total_u, &tol)?
    };
    let u = vec![u1, total_u - u1];
    let grad = rho2_two_line_gradient(l1, l2, u[0], u[1]);
    let marginals = vec![-grad[0], -grad[1]];
    let active: Vec<usize> = if total_u == 0.0 {
        argmax_set(&marginals)
    } else {
        (0..2).filter(|&k| u[k] > 0.0).collect()
    };
    let threshold = active.iter().map(|&k| marginals[k]).sum::<f64>() / active.len() as f64;
    Ok(AllocationResult {
        objective: rho2_two_line(l1, l2, u[0], u[1])?,
        u_star: u,
        active_set: active,
        threshold,
        marginals,
    })
}

/// `1 - prod_k (1 - psi_k(u_k + v))`.
pub fn psi_tilde(lines: &[ExponentialLine], reserves: &[f64], v: f64) -> Result<f64> {
    check_reserves(lines, reserves)?;
    if !(v >= 0.0) {
        return Err(Error::domain(format!("shift must be >= 0, got {v}")));
    }
    Ok(psi_tilde_unchecked(lines, reserves, v))
}

// expm1/ln1p keep full relative precision when every psi_k is tiny
fn psi_tilde_unchecked(lines: &[ExponentialLine], reserves: &[f64], v: f64) -> f64 {
    -lines
        .iter()
        .zip(reserves)
        .map(|(l, u)| (-l.ultimate_ruin(u + v)).ln_1p())
        .sum::<f64>()
        .exp_m1()
}

/// Distorted deficit of the aggregate minimum reserve,
/// `rho_2(u) = ∫_0^∞ g(psi_tilde(u + v)) dv`.
pub fn rho2(lines: &[ExponentialLine], g: &Distortion, reserves: &[f64], tol: &Tolerance) -> Result<f64> {
    check_reserves(lines, reserves)?;
    tail_integral(|v| g.eval(psi_tilde_unchecked(lines, reserves, v)), 0.0, tol)
}

/// Gradient of `rho2` by differentiating under the integral.
pub fn rho2_gradient(lines: &[ExponentialLine], g: &Distortion, reserves: &[f64], tol: &Tolerance) -> Result<Vec<f64>> {
    check_reserves(lines, reserves)?;
    (0..lines.len())
        .map(|k| {
            let integrand = |v: f64| {
                let mut log_others = 0.0;
                let mut log_survive = 0.0;
                for (j, (l, u)) in lines.iter().zip(reserves).enumerate() {
                    let s = (-l.ultimate_ruin(u + v)).ln_1p();
                    log_survive += s;
                    if j != k {
                        log_others += s;
                    }
                }
                let line = &lines[k];
                let dpsi = line.adjustment_coefficient() * line.ultimate_ruin(reserves[k] + v);
                g.derivative(-log_survive.exp_m1()) * dpsi * log_others.exp()
            };
            tail_integral(integrand, 0.0, tol).map(|x| -x)
        })
        .collect()
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
pub fn project_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut s = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, v) in s.iter().enumerate() {
        cum += v;
        let t = (cum - total) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Relative agreement required of active-line marginal reductions.
pub const KKT_REL_TOL: f64 = 1e-4;

/// Method 2 for any number of independent exponential lines and a concave
/// aggregate distortion, by projected gradient descent on the simplex.
///
/// `tol.abs_tol` bounds the projected-gradient norm at convergence.
pub fn method2_generic(
    lines: &[ExponentialLine],
    g: &Distortion,
    total_u: f64,
    tol: &Tolerance,
) -> Result<AllocationResult> {
    if lines.is_empty() {
        return Err(Error::argument("allocation needs at least one line"));
    }
    if !g.is_concave() {
        return Err(Error::domain(format!(
            "aggregate distortion {g} is not concave; the objective may not be convex"
        )));
    }
    check_budget(total_u)?;
    let quad = Tolerance {
        abs_tol: 1e-14,
        rel_tol: 1e-13,
        max_iter: 400,
    };
    let n = lines.len();
    let objective = |u: &[f64]| rho2(lines, g, u, &quad);
    let gradient = |u: &[f64]| rho2_gradient(lines, g, u, &quad);
    let finish = |u: Vec<f64>| -> Result<AllocationResult> {
        let grad = gradient(&u)?;
        let marginals: Vec<f64> = grad.iter().map(|x| -x).collect();
        let active: Vec<usize> = if total_u == 0.0 {
            argmax_set(&marginals)
        } else {
            (0..n).filter(|&k| u[k] > 0.0).collect()
        };
        let threshold = active.iter().map(|&k| marginals[k]).sum::<f64>() / active.len() as f64;
        Ok(AllocationResult {
            objective: objective(&u)?,
            u_star: u,
            active_set: active,
            threshold,
            marginals,
        })
    };
    if n == 1 || total_u == 0.0 {
        let mut u = vec![0.0; n];
        u[0] = total_u;
        if n > 1 {
            u[0] = 0.0;
        }
        return finish(u);
    }

    let pg_norm = |u: &[f64], grad: &[f64]| -> f64 {
        let step: Vec<f64> = u.iter().zip(grad).map(|(x, d)| x - d).collect();
        project_simplex(&step, total_u)
            .iter()
            .zip(u)
            .map(|(p, x)| (p - x).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut u = vec![total_u / n as f64; n];
    let mut f = objective(&u)?;
    let mut grad = gradient(&u)?;
    let mut step = total_u;
    let mut converged = false;
    let mut last_norm = f64::INFINITY;
    for _ in 0..tol.max_iter.max(1000) {
        last_norm = pg_norm(&u, &grad);
        if last_norm <= tol.abs_tol {
            converged = true;
            break;
        }
        let mut s = step;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = u.iter().zip(&grad).map(|(x, d)| x - s * d).collect();
            let cand = project_simplex(&trial, total_u);
            let decrease: f64 = cand.iter().zip(&u).zip(&grad).map(|((c, x), d)| d * (c - x)).sum();
            let fc = objective(&cand)?;
            if fc <= f + 1e-4 * decrease + 1e-14 * f.abs() {
                accepted = Some((cand, fc));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let g_new = gradient(&cand)?;
        let du: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = du.iter().zip(&dg).map(|(a, b)| a * b).sum();
        let ss: f64 = du.iter().map(|a| a * a).sum();
        if ss == 0.0 {
            // no movement: the projection pinned us
            u = cand;
            grad = g_new;
            converged = pg_norm(&u, &grad) <= tol.abs_tol;
            break;
        }
        step = if sy > 0.0 { (ss / sy).min(1e6 * total_u) } else { total_u };
        u = cand;
        f = fc;
        grad = g_new;
    }
    let result = finish(u)?;
    if !converged && !kkt_certificate(&result).is_ok() {
        return Err(Error::Convergence {
            iterations: tol.max_iter.max(1000),
            last: last_norm,
        });
    }
    Ok(result)
}

/// Checks the optimality conditions on a Method-2 result: marginal reductions
/// agree on the active set within [`KKT_REL_TOL`] and no inactive line offers
/// a larger reduction.
pub fn kkt_certificate(result: &AllocationResult) -> Result<()> {
    let level = result.threshold;
    let slack = KKT_REL_TOL * level.abs().max(f64::MIN_POSITIVE);
    for &k in &result.active_set {
        if (result.marginals[k] - level).abs() > slack {
            return Err(Error::Model(format!(
                "active line {k} has marginal reduction {} vs level {level}",
                result.marginals[k]
            )));
        }
    }
    for k in 0..result.u_star.len() {
        if !result.active_set.contains(&k) && result.marginals[k] > level + slack {
            return Err(Error::Model(format!(
                "inactive line {k} has marginal reduction {} above level {level}",
                result.marginals[k]
            )));
        }
    }
    Ok(())
}

/// Solve with the problem's method. Method 2 uses the closed form for two
/// lines under the identity and projected gradient otherwise.
pub fn solve(problem: &AllocationProblem, tol: &Tolerance) -> Result<AllocationResult> {
    match problem.method {
        AllocationMethod::MarginalSum => method1_exponential(problem),
        AllocationMethod::AggregateMin => {
            let lines = problem.plain_lines();
            if lines.len() == 2 && problem.aggregate_g == Distortion::Identity {
                method2_two_line(&lines[0], &lines[1], problem.total_u)
            } else {
                method2_generic(&lines, &problem.aggregate_g, problem.total_u, tol)
            }
        }
    }
}

/// Whether a uniform distortion leaves the Method-1 allocation unchanged.
pub fn invariance_check(lines: &[ExponentialLine], g: &Distortion, total_u: f64) -> Result<bool> {
    if !g.is_strictly_increasing() {
        return Err(Error::domain(format!(
            "distortion {g} is not strictly increasing on [0, 1]"
        )));
    }
    let base = method1_exponential(&AllocationProblem::undistorted(lines, total_u)?)?;
    let marginals: Vec<Arc<dyn Marginal>> = lines
        .iter()
        .map(|&line| Arc::new(DistortedLine { line, g: *g }) as Arc<dyn Marginal>)
        .collect();
    let refs: Vec<&dyn Marginal> = marginals.iter().map(|m| m.as_ref()).collect();
    let distorted = method1_generic(&refs, total_u, &Tolerance::default())?;
    Ok(base
        .u_star
        .iter()
        .zip(&distorted.u_star)
        .all(|(x, y)| (x - y).abs() <= 1e-6))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> Vec<ExponentialLine> {
        vec![
            ExponentialLine::new(10.0, 1.0, 12.0).unwrap(),
            ExponentialLine::new(1.0, 10.0, 15.0).unwrap(),
            ExponentialLine::new(0.1, 100.0, 20.0).unwrap(),
        ]
    }

    fn table4() -> (ExponentialLine, ExponentialLine) {
        (
            ExponentialLine::from_ruin_constants(0.9, 0.05, 1.0).unwrap(),
            ExponentialLine::from_ruin_constants(0.9, 0.01, 1.0).unwrap(),
        )
    }

    fn weighted(gammas: &[f64]) -> Vec<WeightedLine> {
        table1()
            .into_iter()
            .zip(gammas)
            .map(|(line, &gamma)| WeightedLine { line, gamma })
            .collect()
    }

    fn close(x: &[f64], y: &[f64], tol: f64) -> bool {
        x.iter().zip(y).all(|(a, b)| (a - b).abs() <= tol)
    }

    #[test]
    fn water_filling_exact_values() {
        let solve = |u| method1_exponential(&AllocationProblem::undistorted(&table1(), u).unwrap()).unwrap();
        // reference values from the closed-form active-set solution
        assert!(close(&solve(100.0).u_star, &[5.3100, 19.8556, 74.8344], 1e-4));
        assert!(close(&solve(40.0).u_star, &[3.7846, 12.2285, 23.9869], 1e-4));
        assert!(close(&solve(10.0).u_star, &[2.7824, 7.2176, 0.0], 1e-4));
        assert!(close(&solve(1.0).u_star, &[1.0, 0.0, 0.0], 1e-12));
        let het = method1_exponential(&AllocationProblem::new(weighted(&[1.0, 1.0, 2.0]), 100.0).unwrap()).unwrap();
        assert!(close(&het.u_star, &[2.3724, 5.1677, 92.4598], 1e-4));
    }

    #[test]
    fn water_filling_kkt() {
        for u in [0.5, 3.0, 10.0, 55.0, 400.0] {
            let r = method1_exponential(&AllocationProblem::new(weighted(&[1.0, 1.5, 2.0]), u).unwrap()).unwrap();
            assert!((r.u_star.iter().sum::<f64>() - u).abs() <= 1e-9 * u);
            for k in 0..3 {
                if r.active_set.contains(&k) {
                    assert!((r.marginals[k] - r.threshold).abs() <= 1e-8);
                } else {
                    assert_eq!(r.u_star[k], 0.0);
                    assert!(r.marginals[k] <= r.threshold + 1e-8);
                }
            }
        }
    }

    #[test]
    fn zero_budget() {
        let r = method1_exponential(&AllocationProblem::undistorted(&table1(), 0.0).unwrap()).unwrap();
        assert_eq!(r.u_star, vec![0.0; 3]);
        assert_eq!(r.active_set, vec![0]);
        assert!((r.threshold - 10.0 / 12.0).abs() < 1e-15);
        assert!(AllocationProblem::undistorted(&table1(), -1.0).is_err());
        assert!(AllocationProblem::new(weighted(&[0.5, 1.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn generic_matches_exponential() {
        for gammas in [[1.0, 1.0, 1.0], [1.0, 1.0, 2.0], [3.0, 1.2, 1.0]] {
            let exact = method1_exponential(&AllocationProblem::new(weighted(&gammas), 100.0).unwrap()).unwrap();
            let ls = table1();
            let ms: Vec<DistortedLine> = ls
                .iter()
                .zip(gammas)
                .map(|(&line, gm)| DistortedLine {
                    line,
                    g: Distortion::ProportionalHazard { exponent: 1.0 / gm },
                })
                .collect();
            let refs: Vec<&dyn Marginal> = ms.iter().map(|m| m as &dyn Marginal).collect();
            let gen = method1_generic(&refs, 100.0, &Tolerance::default()).unwrap();
            assert!(close(&gen.u_star, &exact.u_star, 1e-6), "{:?} vs {:?}", gen.u_star, exact.u_star);
            assert!((gen.objective - exact.objective).abs() < 1e-6);
        }
    }

    #[test]
    fn generic_trivial_cases() {
        let l = table1()[0];
        let single = |u: f64| l.ultimate_ruin(u);
        let r = method1_generic(&[&single], 7.0, &Tolerance::default()).unwrap();
        assert!((r.u_star[0] - 7.0).abs() < 1e-9);
        let r = method1_generic(&[&single, &single], 7.0, &Tolerance::default()).unwrap();
        assert!((r.u_star[0] - 3.5).abs() < 1e-8 && (r.u_star[1] - 3.5).abs() < 1e-8);
        let bumpy = |u: f64| 0.5 + 0.1 * (u).sin() * 0.0 + if u > 2.0 { 0.1 } else { -0.01 * u };
        assert!(matches!(
            method1_generic(&[&bumpy], 5.0, &Tolerance::default()),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn table4_method2() {
        let (l1, l2) = table4();
        let expect = [(30.0, 0.0, 30.0), (60.0, 3.0848, 56.9152), (120.0, 16.0263, 103.9737)];
        for (u, x1, x2) in expect {
            let r = method2_two_line(&l1, &l2, u).unwrap();
            assert!(close(&r.u_star, &[x1, x2], 1e-4), "{u}: {:?}", r.u_star);
            kkt_certificate(&r).unwrap();
        }
        let r = method1_exponential(&AllocationProblem::undistorted(&[l1, l2], 60.0).unwrap()).unwrap();
        assert!(close(&r.u_star, &[10.0, 50.0], 1e-9));
    }

    #[test]
    fn rho2_identities() {
        let (l1, l2) = table4();
        let direct = rho1_two_line(&l1, &l2, 0.0, 30.0).unwrap() - 0.81 / 0.06 * (-0.3f64).exp();
        assert!((rho2_two_line(&l1, &l2, 0.0, 30.0).unwrap() - direct).abs() < 1e-12);
        assert!(rho2_two_line(&l1, &l2, 1e4, 1e5).unwrap() < 1e-12);
        let r = rho2_two_line(&l1, &l2, 10.0, 1e5).unwrap();
        assert!((r - 0.9 * (-0.5f64).exp() / 0.05).abs() < 1e-12);
        assert!(rho2_two_line(&l1, &l2, -1.0, 0.0).is_err());
        let tol = Tolerance::default().with_tol(1e-13);
        let q = rho2(&[l1, l2], &Distortion::Identity, &[3.0, 57.0], &tol).unwrap();
        assert!((q - rho2_two_line(&l1, &l2, 3.0, 57.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn psi_tilde_cases() {
        let (l1, l2) = table4();
        assert!((psi_tilde(&[l1], &[5.0], 1.0).unwrap() - l1.ultimate_ruin(6.0)).abs() < 1e-15);
        let (p1, p2) = (l1.ultimate_ruin(3.0), l2.ultimate_ruin(8.0));
        assert!((psi_tilde(&[l1, l2], &[1.0, 6.0], 2.0).unwrap() - (p1 + p2 - p1 * p2)).abs() < 1e-15);
        let certain = |_: f64| 1.0;
        let _ = certain;
        assert!(psi_tilde(&[l1], &[-1.0], 0.0).is_err());
    }

    #[test]
    fn projection() {
        let p = project_simplex(&[0.5, 0.5], 1.0);
        assert!(close(&p, &[0.5, 0.5], 1e-15));
        let p = project_simplex(&[3.0, -1.0, 0.2], 1.0);
        assert!(close(&p, &[1.0, 0.0, 0.0], 1e-15));
        let p = project_simplex(&[0.0, 0.0, 0.0], 3.0);
        assert!(close(&p, &[1.0, 1.0, 1.0], 1e-15));
    }

    #[test]
    fn generic_method2_matches_two_line() {
        let (l1, l2) = table4();
        let tol = Tolerance::new(1e-10, 1e-10, 2000).unwrap();
        for u in [30.0, 60.0, 120.0] {
            let exact = method2_two_line(&l1, &l2, u).unwrap();
            let pg = method2_generic(&[l1, l2], &Distortion::Identity, u, &tol).unwrap();
            assert!(close(&pg.u_star, &exact.u_star, 1e-3), "{u}: {:?} vs {:?}", pg.u_star, exact.u_star);
            kkt_certificate(&pg).unwrap();
        }
    }

    #[test]
    fn generic_method2_trivial() {
        let (l1, _) = table4();
        let tol = Tolerance::new(1e-10, 1e-10, 2000).unwrap();
        let g = Distortion::ProportionalHazard { exponent: 0.7 };
        let one = method2_generic(&[l1], &g, 25.0, &tol).unwrap();
        assert_eq!(one.u_star, vec![25.0]);
        let sym = method2_generic(&[l1, l1], &g, 25.0, &tol).unwrap();
        assert!(close(&sym.u_star, &[12.5, 12.5], 1e-6));
        assert!(method2_generic(&[l1], &Distortion::VaRStep { alpha: 0.1 }, 1.0, &tol).is_err());
    }

    #[test]
    fn invariance() {
        let g = Distortion::ProportionalHazard { exponent: 0.5 };
        assert!(invariance_check(&table1(), &g, 100.0).unwrap());
        assert!(invariance_check(&table1()[..1], &g, 10.0).unwrap());
        assert!(invariance_check(&table1(), &Distortion::TVaR { alpha: 0.1 }, 10.0).is_err());
        let het = method1_exponential(&AllocationProblem::new(weighted(&[1.0, 1.0, 2.0]), 100.0).unwrap()).unwrap();
        let base = method1_exponential(&AllocationProblem::undistorted(&table1(), 100.0).unwrap()).unwrap();
        assert!(!close(&het.u_star, &base.u_star, 1e-3));
    }

    #[test]
    fn brute_force_two_line() {
        let (l1, l2) = table4();
        for u in [5.0, 20.0, 60.0] {
            let m2 = method2_two_line(&l1, &l2, u).unwrap();
            let m1 = method1_exponential(&AllocationProblem::undistorted(&[l1, l2], u).unwrap()).unwrap();
            let n = 10_000;
            let mut best2 = (f64::INFINITY, 0.0);
            let mut best1 = (f64::INFINITY, 0.0);
            for i in 0..=n {
                let x = u * i as f64 / n as f64;
                let r2 = rho2_two_line(&l1, &l2, x, u - x).unwrap();
                let r1 = rho1_two_line(&l1, &l2, x, u - x).unwrap();
                assert!(r2 <= r1);
                assert!(m2.objective <= r2 + 1e-12);
                assert!(m1.objective <= r1 + 1e-12);
                if r2 < best2.0 {
                    best2 = (r2, x);
                }
                if r1 < best1.0 {
                    best1 = (r1, x);
                }
            }
            let h = u / n as f64;
            assert!((best2.1 - m2.u_star[0]).abs() <= h);
            assert!((best1.1 - m1.u_star[0]).abs() <= h);
        }
    }

    fn arb_line() -> impl Strategy<Value = ExponentialLine> {
        (0.1f64..20.0, 0.1f64..20.0, 0.05f64..2.0)
            .prop_map(|(l, m, load)| ExponentialLine::new(l, m, l * m * (1.0 + load)).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn monotone_and_nested(lines in prop::collection::vec((arb_line(), 1.0f64..3.0), 1..5),
                               budgets in prop::collection::vec(0.0f64..200.0, 2..8)) {
            let ws: Vec<WeightedLine> = lines.iter().map(|&(line, gamma)| WeightedLine { line, gamma }).collect();
            let mut budgets = budgets;
            budgets.sort_by(f64::total_cmp);
            let mut prev: Option<AllocationResult> = None;
            for u in budgets {
                let r = method1_exponential(&AllocationProblem::new(ws.clone(), u).unwrap()).unwrap();
                prop_assert!((r.u_star.iter().sum::<f64>() - u).abs() <= 1e-9 * u.max(1.0));
                if let Some(p) = &prev {
                    for k in 0..ws.len() {
                        prop_assert!(r.u_star[k] >= p.u_star[k] - 1e-9);
                    }
                    prop_assert!(p.active_set.iter().all(|k| r.active_set.contains(k)));
                }
                prev = Some(r);
            }
        }

        #[test]
        fn cross_method_ordering(l1 in arb_line(), l2 in arb_line(), u1 in 0.0f64..100.0, u2 in 0.0f64..100.0) {
            prop_assert!(rho2_two_line(&l1, &l2, u1, u2).unwrap() <= rho1_two_line(&l1, &l2, u1, u2).unwrap());
        }
    }
}
