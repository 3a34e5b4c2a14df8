//! Stochastic single-TCL dynamics and direct population simulation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::params::{Mode, TclParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TclState {
    pub mode: Mode,
    pub theta: f64,
}

impl TclState {
    pub fn new(mode: Mode, theta: f64) -> Self {
        Self { mode, theta }
    }
}

/// One step of the switched diffusion. The mode update reads the
/// temperature *before* the step.
pub fn tcl_step(state: TclState, params: &TclParams, noise: f64) -> TclState {
    let theta = params.mean_next(state.mode, state.theta) + noise;
    let mode = params.switch(state.mode, state.theta);
    TclState { mode, theta }
}

/// Same as [`tcl_step`] but switching against an overridden set-point.
fn tcl_step_with(state: TclState, params: &TclParams, theta_s: f64, noise: f64) -> TclState {
    let theta = params.mean_next(state.mode, state.theta) + noise;
    let half = 0.5 * params.delta;
    let mode = if state.theta < theta_s - half {
        Mode::Off
    } else if state.theta > theta_s + half {
        Mode::On
    } else {
        state.mode
    };
    TclState { mode, theta }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    pub states: Vec<TclState>,
    pub time_index: usize,
}

impl PopulationSnapshot {
    pub fn uniform(n_p: usize, state: TclState) -> Self {
        Self { states: vec![state; n_p], time_index: 0 }
    }
}

/// Either one parameter set shared by all TCLs or one per TCL.
#[derive(Debug, Clone, PartialEq)]
pub enum PopulationParams {
    Homogeneous(TclParams),
    PerTcl(Vec<TclParams>),
}

impl PopulationParams {
    pub fn get(&self, k: usize) -> &TclParams {
        match self {
            PopulationParams::Homogeneous(p) => p,
            PopulationParams::PerTcl(v) => &v[k],
        }
    }

    fn validate(&self, n_p: usize) -> Result<()> {
        match self {
            PopulationParams::Homogeneous(p) => p.validate(),
            PopulationParams::PerTcl(v) => {
                if v.len() != n_p {
                    return Err(invalid_input(format!(
                        "{} parameter sets for {n_p} TCLs",
                        v.len()
                    )));
                }
                v.iter().try_for_each(|p| p.validate())
            }
        }
    }
}

/// A population of independent TCLs, each with its own random stream.
#[derive(Debug, Clone)]
pub struct Population {
    params: PopulationParams,
    states: Vec<TclState>,
    rngs: Vec<ChaCha8Rng>,
    time_index: usize,
}

impl Population {
    pub fn new(init: &PopulationSnapshot, params: PopulationParams, seed: u64, run: u64) -> Result<Self> {
        let n_p = init.states.len();
        if n_p == 0 {
            return Err(invalid_input("population is empty"));
        }
        params.validate(n_p)?;
        if init.states.iter().any(|s| !s.theta.is_finite()) {
            return Err(invalid_input("initial temperature is not finite"));
        }
        let rngs = (0..n_p as u64).map(|k| rng::stream(seed, run, k)).collect();
        Ok(Self { params, states: init.states.clone(), rngs, time_index: init.time_index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[TclState] {
        &self.states
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    /// Total electrical power of the ON units, kW.
    pub fn power(&self) -> f64 {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.mode == Mode::On)
            .map(|(k, _)| self.params.get(k).p_on())
            .sum()
    }

    pub fn step(&mut self) {
        for (k, (s, r)) in self.states.iter_mut().zip(self.rngs.iter_mut()).enumerate() {
            let p = self.params.get(k);
            let z: f64 = r.sample(StandardNormal);
            *s = tcl_step(*s, p, p.sigma * z);
        }
        self.time_index += 1;
    }

    /// Step every TCL with its thermostat re-centred on `theta_s`.
    pub fn step_with_setpoint(&mut self, theta_s: f64) {
        for (k, (s, r)) in self.states.iter_mut().zip(self.rngs.iter_mut()).enumerate() {
            let p = self.params.get(k);
            let z: f64 = r.sample(StandardNormal);
            *s = tcl_step_with(*s, p, theta_s, p.sigma * z);
        }
        self.time_index += 1;
    }

    pub fn snapshot(&self) -> PopulationSnapshot {
        PopulationSnapshot { states: self.states.clone(), time_index: self.time_index }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    /// Aggregate power at t = 0..=steps.
    pub power: Vec<f64>,
    pub snapshots: Vec<PopulationSnapshot>,
}

pub fn simulate_population(
    init: &PopulationSnapshot,
    params: PopulationParams,
    steps: usize,
    seed: u64,
    keep_snapshots: bool,
) -> Result<SimulationOutput> {
    let mut pop = Population::new(init, params, seed, 0)?;
    let mut power = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    power.push(pop.power());
    if keep_snapshots {
        snapshots.push(pop.snapshot());
    }
    for _ in 0..steps {
        pop.step();
        power.push(pop.power());
        if keep_snapshots {
            snapshots.push(pop.snapshot());
        }
    }
    Ok(SimulationOutput { power, snapshots })
}

/// Monte Carlo mean and standard error of aggregate power over independent runs.
#[derive(Debug, Clone)]
pub struct McPower {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub runs: usize,
}

pub fn mc_expected_power(
    init: &PopulationSnapshot,
    params: &PopulationParams,
    steps: usize,
    runs: usize,
    seed: u64,
) -> Result<McPower> {
    if runs == 0 {
        return Err(invalid_input("runs must be positive"));
    }
    let traces: Vec<Vec<f64>> = (0..runs as u64)
        .into_par_iter()
        .map(|run| -> Result<Vec<f64>> {
            let mut pop = Population::new(init, params.clone(), seed, run)?;
            let mut out = Vec::with_capacity(steps + 1);
            out.push(pop.power());
            for _ in 0..steps {
                pop.step();
                out.push(pop.power());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n = runs as f64;
    let mut mean = vec![0.0; steps + 1];
    let mut std_err = vec![0.0; steps + 1];
    for t in 0..=steps {
        let m = traces.iter().map(|tr| tr[t]).sum::<f64>() / n;
        mean[t] = m;
        if runs > 1 {
            let var = traces.iter().map(|tr| (tr[t] - m).powi(2)).sum::<f64>() / (n - 1.0);
            std_err[t] = (var / n).sqrt();
        }
    }
    Ok(McPower { mean, std_err, runs })
}

#[derive(Debug, Clone, Copy)]
pub struct ModeEstimate {
    pub p_on: f64,
    pub std_err: f64,
    pub ci95: (f64, f64),
}

/// Probability that a single TCL started at `init` is ON after `n` steps.
pub fn mc_expected_mode(
    init: TclState,
    params: &TclParams,
    n: usize,
    runs: usize,
    seed: u64,
) -> Result<ModeEstimate> {
    params.validate()?;
    if runs == 0 {
        return Err(invalid_input("runs must be positive"));
    }
    let on: usize = (0..runs as u64)
        .into_par_iter()
        .map(|run| {
            let mut r = rng::stream(seed, run, 0);
            let mut s = init;
            for _ in 0..n {
                let z: f64 = r.sample(StandardNormal);
                s = tcl_step(s, params, params.sigma * z);
            }
            usize::from(s.mode == Mode::On)
        })
        .sum();
    let p = on as f64 / runs as f64;
    let se = (p * (1.0 - p) / runs as f64).sqrt();
    Ok(ModeEstimate { p_on: p, std_err: se, ci95: (p - 1.96 * se, p + 1.96 * se) })
}
