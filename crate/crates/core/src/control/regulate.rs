//! One-step and receding-horizon set-point selection.

use nalgebra::{DVector, RowDVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::r_operator;
use crate::control::switched::SwitchedControlModel;
use crate::error::{invalid_input, Error, Result};

/// Upper limit on enumerated schedules.
pub const MAX_SCHEDULES: u128 = 1_000_000;

/// Orders candidates by cost, then distance from nominal, then index order.
fn better(a: (f64, usize, &[usize]), b: (f64, usize, &[usize])) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (a.1, a.2) < (b.1, b.2),
    }
}

/// Set-point minimising `|H F_sigma x_hat - y_des|`.
pub fn one_step_regulate(model: &SwitchedControlModel, x_hat: &DVector<f64>, y_des: f64) -> usize {
    let mut best: Option<(f64, usize, usize)> = None;
    for (k, hf) in model.h_f.iter().enumerate() {
        let err = (hf.dot(&x_hat.transpose()) - y_des).abs();
        let cand = (err, k.abs_diff(model.nominal), k);
        if best.is_none_or(|b| better((cand.0, cand.1, &[cand.2]), (b.0, b.1, &[b.2]))) {
            best = Some(cand);
        }
    }
    best.expect("empty family").2
}

#[derive(Debug, Clone)]
pub struct SmpcProblem {
    pub horizon: usize,
    /// Reference for the `horizon` steps after the current one, kW.
    pub y_des: Vec<f64>,
    /// Terminal weight on the occupancy; zero when `None`.
    pub kappa: Option<DVector<f64>>,
    /// Largest set-point move per step, in grid steps.
    pub rate_limit: usize,
    /// Set-point index in force before the first move.
    pub current: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmpcPlan {
    pub schedule: Vec<usize>,
    pub cost: f64,
}

fn check_schedule(model: &SwitchedControlModel, schedule: &[usize], rate: usize, current: usize) -> Result<()> {
    let mut prev = current;
    for &s in schedule {
        if s >= model.len() {
            return Err(invalid_input(format!("set-point index {s} out of range")));
        }
        if s.abs_diff(prev) > rate {
            return Err(invalid_input(format!("move {prev} -> {s} exceeds the rate limit {rate}")));
        }
        prev = s;
    }
    Ok(())
}

/// `Psi(T, t)` by the backward recursion
/// `Psi(T, k) = Psi(T, k+1) F_k + (1/n_p) sum_{tau > k} R(H Phi(tau, k+1), F_k)`.
pub fn psi_recursive(
    model: &SwitchedControlModel,
    schedule: &[usize],
    kappa: Option<&DVector<f64>>,
) -> RowDVector<f64> {
    let n = model.h.len();
    let np = model.n_p as f64;
    let mut psi = kappa.map_or_else(|| RowDVector::zeros(n), |k| k.transpose());
    // rows[j] = H Phi(tau_j, k+1) for tau_j = k+1 ..= T
    let mut rows: Vec<RowDVector<f64>> = Vec::with_capacity(schedule.len());
    for k in (0..schedule.len()).rev() {
        if k + 1 < schedule.len() {
            let f_next = &model.f[schedule[k + 1]];
            for r in rows.iter_mut() {
                *r = &*r * f_next;
            }
        }
        rows.push(model.h.clone());
        let f = &model.f[schedule[k]];
        let mut noise = RowDVector::zeros(n);
        for r in &rows {
            noise += r_operator(r, f);
        }
        psi = psi * f + noise / np;
    }
    psi
}

/// `Psi(T, t)` from the explicit double sum, for cross-checking.
pub fn psi_explicit(
    model: &SwitchedControlModel,
    schedule: &[usize],
    kappa: Option<&DVector<f64>>,
) -> RowDVector<f64> {
    let n = model.h.len();
    let t_len = schedule.len();
    let np = model.n_p as f64;
    let phi_row = |c: &RowDVector<f64>, from: usize, to: usize| {
        // c * Phi(to, from) = c F_{to-1} ... F_{from}
        let mut r = c.clone();
        for k in (from..to).rev() {
            r *= &model.f[schedule[k]];
        }
        r
    };
    let mut psi = match kappa {
        Some(k) => phi_row(&k.transpose(), 0, t_len),
        None => RowDVector::zeros(n),
    };
    for t1 in 0..t_len {
        for t2 in t1 + 1..=t_len {
            let c = phi_row(&model.h, t1 + 1, t2);
            let r = r_operator(&c, &model.f[schedule[t1]]);
            psi += phi_row(&r, 0, t1) / np;
        }
    }
    psi
}

/// Expected tracking cost of a schedule from occupancy `x`.
pub fn smpc_cost(
    model: &SwitchedControlModel,
    problem: &SmpcProblem,
    schedule: &[usize],
    x: &DVector<f64>,
) -> Result<f64> {
    if schedule.len() != problem.horizon || problem.y_des.len() != problem.horizon {
        return Err(invalid_input("schedule and reference must match the horizon"));
    }
    check_schedule(model, schedule, problem.rate_limit, problem.current)?;
    Ok(cost_unchecked(model, problem, schedule, x))
}

fn cost_unchecked(model: &SwitchedControlModel, problem: &SmpcProblem, schedule: &[usize], x: &DVector<f64>) -> f64 {
    let mut xk = x.clone();
    let mut quad = 0.0;
    for (k, &s) in schedule.iter().enumerate() {
        xk = &model.f[s] * xk;
        let y = model.h.dot(&xk.transpose());
        quad += (y - problem.y_des[k]).powi(2);
    }
    let psi = psi_recursive(model, schedule, problem.kappa.as_ref());
    quad + psi.dot(&x.transpose())
}

fn count_schedules(n_sigma: usize, horizon: usize, rate: usize, current: usize) -> u128 {
    let mut ways = vec![0u128; n_sigma];
    ways[current] = 1;
    for _ in 0..horizon {
        let mut next = vec![0u128; n_sigma];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            let lo = s.saturating_sub(rate);
            let hi = (s + rate).min(n_sigma - 1);
            for v in next.iter_mut().take(hi + 1).skip(lo) {
                *v = v.saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0u128, |a, &b| a.saturating_add(b))
}

fn enumerate(n_sigma: usize, horizon: usize, rate: usize, current: usize) -> Result<Vec<Vec<usize>>> {
    let count = count_schedules(n_sigma, horizon, rate, current);
    if count > MAX_SCHEDULES {
        return Err(Error::Intractable { count, limit: MAX_SCHEDULES });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut stack = vec![(Vec::with_capacity(horizon), current)];
    while let Some((prefix, prev)) = stack.pop() {
        if prefix.len() == horizon {
            out.push(prefix);
            continue;
        }
        let lo = prev.saturating_sub(rate);
        let hi = (prev + rate).min(n_sigma - 1);
        for s in (lo..=hi).rev() {
            let mut p = prefix.clone();
            p.push(s);
            stack.push((p, s));
        }
    }
    Ok(out)
}

fn argmin(model: &SwitchedControlModel, candidates: Vec<Vec<usize>>, cost: impl Fn(&[usize]) -> f64 + Sync) -> SmpcPlan {
    let costs: Vec<f64> = candidates.par_iter().map(|s| cost(s)).collect();
    let dist = |s: &[usize]| s.iter().map(|&k| k.abs_diff(model.nominal)).sum::<usize>();
    let mut best = 0;
    for i in 1..candidates.len() {
        if better(
            (costs[i], dist(&candidates[i]), &candidates[i]),
            (costs[best], dist(&candidates[best]), &candidates[best]),
        ) {
            best = i;
        }
    }
    SmpcPlan { schedule: candidates[best].clone(), cost: costs[best] }
}

/// Exhaustive search over rate-limited schedules.
pub fn smpc_plan(model: &SwitchedControlModel, problem: &SmpcProblem, x: &DVector<f64>) -> Result<SmpcPlan> {
    if problem.horizon == 0 {
        return Err(invalid_input("horizon must be at least 1"));
    }
    if problem.y_des.len() != problem.horizon {
        return Err(invalid_input("reference length must equal the horizon"));
    }
    if problem.current >= model.len() {
        return Err(invalid_input("current set-point index out of range"));
    }
    let cands = enumerate(model.len(), problem.horizon, problem.rate_limit, problem.current)?;
    Ok(argmin(model, cands, |s| cost_unchecked(model, problem, s, x)))
}

/// Expected energy cost `sum_tau price_tau h H Phi(tau, t) x`, `h` in hours.
pub fn energy_cost(model: &SwitchedControlModel, prices: &[f64], h_hours: f64, schedule: &[usize], x: &DVector<f64>) -> f64 {
    let mut xk = x.clone();
    let mut total = 0.0;
    for (k, &s) in schedule.iter().enumerate() {
        xk = &model.f[s] * xk;
        total += prices[k] * h_hours * model.h.dot(&xk.transpose());
    }
    total
}

pub fn energy_cost_plan(
    model: &SwitchedControlModel,
    prices: &[f64],
    h_hours: f64,
    rate_limit: usize,
    current: usize,
    x: &DVector<f64>,
) -> Result<SmpcPlan> {
    if prices.is_empty() {
        return Err(invalid_input("price profile is empty"));
    }
    if current >= model.len() {
        return Err(invalid_input("current set-point index out of range"));
    }
    let cands = enumerate(model.len(), prices.len(), rate_limit, current)?;
    Ok(argmin(model, cands, |s| energy_cost(model, prices, h_hours, s, x)))
}
