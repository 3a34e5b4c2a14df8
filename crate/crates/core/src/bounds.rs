//! Abstraction error bounds and value functions.
//!
//! All bounds concern the expected power after `N` steps: the true population
//! against the chain abstraction started from the histogram of the same
//! initial states.

use nalgebra::DVector;
use serde::Serialize;

use crate::chain::{build_chain, MarkovChainModel};
use crate::error::{invalid_input, invalid_param, Result};
use crate::gauss::{self, INV_SQRT_2PI};
use crate::heterogeneity::{ClusteredModel, HeterogeneitySpec};
use crate::params::{Mode, TclParams};
use crate::partition::TemperaturePartition;
use crate::tcl::{mc_expected_power, PopulationParams, PopulationSnapshot};

/// `R P_rate + |2 (theta_s - theta_a) + R P_rate|`, twice the largest
/// distance from the set-point to either drift target.
pub fn lambda_constant(p: &TclParams) -> f64 {
    p.r * p.p_rate + (2.0 * (p.theta_s - p.theta_a) + p.r * p.p_rate).abs()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundParams {
    pub gamma: f64,
    pub lambda: f64,
    /// Mills-ratio tail bound; `None` when `gamma <= 0`.
    pub epsilon: Option<f64>,
    /// Exact Gaussian tail `Q(gamma)`; `None` when `gamma <= 0`.
    pub q_exact: Option<f64>,
}

impl BoundParams {
    pub fn vacuous(&self) -> bool {
        self.epsilon.is_none()
    }
}

pub fn bound_params(p: &TclParams, part: &TemperaturePartition, horizon: usize) -> Result<BoundParams> {
    p.validate()?;
    if horizon == 0 {
        return Err(invalid_param("horizon must be at least 1"));
    }
    if p.sigma <= 0.0 {
        return Err(invalid_param("bounds need sigma > 0"));
    }
    let a = p.decay();
    let an = a.powi(horizon as i32);
    let lambda = lambda_constant(p);
    let gamma = (1.0 - a) / (2.0 * p.sigma) * ((an * part.truncated_width() + p.delta) / (1.0 - an) - lambda);
    let (epsilon, q_exact) = if gamma > 0.0 {
        (Some(gauss::q_bound(gamma)), Some(gauss::sf(gamma)))
    } else {
        (None, None)
    };
    Ok(BoundParams { gamma, lambda, epsilon, q_exact })
}

/// Per-step partition error `2 a upsilon / (sigma sqrt(2 pi))`.
pub fn partition_term(p: &TclParams, upsilon: f64) -> f64 {
    2.0 * p.decay() * upsilon * INV_SQRT_2PI / p.sigma
}

/// Single-TCL bound `(N-1) [ (N-2)/2 eps + 2 a upsilon / (sigma sqrt(2 pi)) ]`.
/// Infinite when the tail term is needed (`N >= 3`) but `gamma <= 0`.
pub fn single_tcl_bound(p: &TclParams, part: &TemperaturePartition, bp: &BoundParams, horizon: usize) -> f64 {
    let n = horizon as f64;
    let cu = partition_term(p, part.upsilon);
    let tail = if horizon <= 2 {
        0.0
    } else {
        match bp.epsilon {
            Some(e) => 0.5 * (n - 2.0) * e,
            None => f64::INFINITY,
        }
    };
    (n - 1.0) * (tail + cu)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub horizon: usize,
    pub n_p: usize,
    pub params: BoundParams,
    pub single_tcl: f64,
    pub population_kw: f64,
    /// Per-state local error bounds `E_1`.
    pub local: Vec<f64>,
    /// `n_p P_on E_1^T X_0`, when an initial occupancy was supplied.
    pub tightened_kw: Option<f64>,
}

/// Global and local bounds for a homogeneous population.
pub fn homogeneous_bound(
    chain: &MarkovChainModel,
    n_p: usize,
    horizon: usize,
    x0: Option<&DVector<f64>>,
) -> Result<BoundReport> {
    let part = chain.partition().ok_or_else(|| invalid_input("bounds need a formal abstraction"))?;
    let p = &chain.params;
    let bp = bound_params(p, part, horizon)?;
    let single = single_tcl_bound(p, part, &bp, horizon);
    let population_kw = n_p as f64 * p.p_on() * single;

    // Local recursion E_k = E + P E_{k+1}, E_N = 0. A probability error never
    // exceeds one, which is used for the absorbing entries when gamma <= 0.
    let cu = partition_term(p, part.upsilon);
    let abs_err = bp.epsilon.map_or(1.0, |e| e.min(1.0));
    let e = DVector::from_fn(chain.n_states(), |i, _| if part.is_absorbing_state(i) { abs_err } else { cu });
    let mut ek = DVector::zeros(chain.n_states());
    for _ in 1..horizon {
        ek = &e + &chain.p * &ek;
    }
    let tightened_kw = match x0 {
        Some(x) => {
            if x.len() != ek.len() {
                return Err(invalid_input("initial occupancy has the wrong length"));
            }
            Some(n_p as f64 * p.p_on() * ek.dot(x))
        }
        None => None,
    };
    Ok(BoundReport {
        horizon,
        n_p,
        params: bp,
        single_tcl: single,
        population_kw,
        local: ek.iter().cloned().collect(),
        tightened_kw,
    })
}

/// `W_1 .. W_N` over the chain: `W_N` is the indicator of the states from
/// which the thermostat selects ON next, `W_k = P W_{k+1}`. With `pin`, the
/// absorbing bins are held at their limits (0 below, 1 above) at every stage.
/// `W_1` approximates the probability of being ON after `N` steps.
pub fn value_functions(chain: &MarkovChainModel, horizon: usize, pin: bool) -> Result<Vec<DVector<f64>>> {
    let part = chain.partition().ok_or_else(|| invalid_input("value functions need a formal abstraction"))?;
    if horizon == 0 {
        return Err(invalid_param("horizon must be at least 1"));
    }
    let n = part.n_bins();
    let p = &chain.params;
    let indicator = DVector::from_fn(2 * n, |i, _| {
        let (mode, bin) = part.state_of(i);
        let rep = part.representatives[bin];
        let on = match mode {
            Mode::On => rep >= p.theta_minus(),
            Mode::Off => rep >= p.theta_plus(),
        };
        if on {
            1.0
        } else {
            0.0
        }
    });
    let pin_fn = |w: &mut DVector<f64>| {
        if pin {
            w[0] = 0.0;
            w[n] = 0.0;
            w[n - 1] = 1.0;
            w[2 * n - 1] = 1.0;
        }
    };
    let mut out = vec![DVector::zeros(2 * n); horizon];
    let mut w = indicator;
    pin_fn(&mut w);
    out[horizon - 1] = w.clone();
    for k in (0..horizon - 1).rev() {
        w = &chain.p * &w;
        pin_fn(&mut w);
        out[k] = w.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClusteredBound {
    pub homogeneous_term: f64,
    pub clustering_term: f64,
    pub total: f64,
}

/// Bound for a clustered heterogeneous population: the worst homogeneous
/// term over the population's parameter values plus
/// `n_p [P_on_bar (N-1) h_a + 1] upsilon_a`.
pub fn clustered_bound(
    spec: &HeterogeneitySpec,
    model: &ClusteredModel,
    part: &TemperaturePartition,
    horizon: usize,
    h_a: f64,
) -> Result<ClusteredBound> {
    let np = spec.n_p() as f64;
    let mut vals = spec.values.clone();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let mut worst = 0.0f64;
    for v in vals {
        let p = spec.member(v);
        let bp = bound_params(&p, part, horizon)?;
        worst = worst.max(np * p.p_on() * single_tcl_bound(&p, part, &bp, horizon));
    }
    let clustering = np * (model.mean_p_on() * (horizon as f64 - 1.0) * h_a + 1.0) * model.upsilon_a;
    Ok(ClusteredBound { homogeneous_term: worst, clustering_term: clustering, total: worst + clustering })
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalErrorReport {
    pub horizon: usize,
    pub mc_mean_kw: f64,
    pub mc_std_err_kw: f64,
    pub abstraction_kw: f64,
    pub observed_error_kw: f64,
    pub bound_kw: f64,
    pub tightened_kw: f64,
}

/// Monte Carlo estimate of the abstraction error at `horizon` against the bound.
pub fn empirical_abstraction_error(
    params: &TclParams,
    part: &TemperaturePartition,
    horizon: usize,
    init: &PopulationSnapshot,
    runs: usize,
    seed: u64,
) -> Result<EmpiricalErrorReport> {
    let chain = build_chain(part, params)?;
    let n_p = init.states.len();
    let x0 = chain.discretize(init)?;
    let report = homogeneous_bound(&chain, n_p, horizon, Some(&x0))?;
    let mut x = x0;
    for _ in 0..horizon {
        x = chain.p.tr_mul(&x);
    }
    let abstraction_kw = (chain.output_row(n_p as f64) * &x)[(0, 0)];
    let mc = mc_expected_power(init, &PopulationParams::Homogeneous(*params), horizon, runs, seed)?;
    Ok(EmpiricalErrorReport {
        horizon,
        mc_mean_kw: mc.mean[horizon],
        mc_std_err_kw: mc.std_err[horizon],
        abstraction_kw,
        observed_error_kw: (mc.mean[horizon] - abstraction_kw).abs(),
        bound_kw: report.population_kw,
        tightened_kw: report.tightened_kw.unwrap_or(f64::NAN),
    })
}
