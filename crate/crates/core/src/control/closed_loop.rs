use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::control::kalman::{kf_step, FilterState};
use crate::control::regulate::{one_step_regulate, smpc_plan, SmpcProblem};
use crate::control::switched::SwitchedControlModel;
use crate::error::{invalid_input, Result};
use crate::rng;
use crate::tcl::{Population, PopulationParams, PopulationSnapshot};

#[derive(Debug, Clone)]
pub enum Controller {
    OneStep,
    Smpc { horizon: usize, rate_limit: usize, kappa: Option<DVector<f64>> },
}

#[derive(Debug, Clone)]
pub struct ClosedLoopScenario {
    pub init: PopulationSnapshot,
    pub population: PopulationParams,
    pub controller: Controller,
    /// Desired power for `t = 0..=steps`; the last value is held beyond.
    pub reference: Vec<f64>,
    pub steps: usize,
    /// Measurement noise variance, kW^2.
    pub r_v: f64,
    pub seed: u64,
    /// Initial filter; defaults to the histogram of the initial population
    /// with zero covariance.
    pub filter_init: Option<FilterState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedLoopRow {
    pub t: usize,
    pub y_true_kw: f64,
    pub y_meas_kw: f64,
    pub y_est_kw: f64,
    pub y_des_kw: f64,
    pub theta_s_c: f64,
}

/// Occupancy histogram on the model's partition.
pub fn histogram(model: &SwitchedControlModel, snap: &PopulationSnapshot) -> Result<DVector<f64>> {
    let part = model
        .partition
        .as_ref()
        .ok_or_else(|| invalid_input("closed loop needs a family built on a temperature partition"))?;
    let mut x = DVector::zeros(part.n_states());
    for s in &snap.states {
        x[part.state_index(s.mode, part.bin_of(s.theta))] += 1.0;
    }
    Ok(x / snap.states.len() as f64)
}

/// Runs the loop: at each step the controller picks the set-point from the
/// current estimate, the population moves one step under it, the power is
/// measured with noise, and the filter absorbs the measurement.
pub fn closed_loop_run(sc: &ClosedLoopScenario, model: &SwitchedControlModel) -> Result<Vec<ClosedLoopRow>> {
    if sc.init.states.len() != model.n_p {
        return Err(invalid_input("population size differs from the model"));
    }
    if sc.reference.is_empty() {
        return Err(invalid_input("reference is empty"));
    }
    let y_des = |t: usize| sc.reference[t.min(sc.reference.len() - 1)];
    let mut pop = Population::new(&sc.init, sc.population.clone(), sc.seed, 0)?;
    let mut meas_rng = rng::stream(sc.seed, 0, rng::MEASUREMENT_UNIT);
    let sd = sc.r_v.sqrt();
    let mut measure = |y: f64| {
        let z: f64 = meas_rng.sample(StandardNormal);
        y + sd * z
    };
    let mut filter = match &sc.filter_init {
        Some(f) => f.clone(),
        None => {
            let x0 = histogram(model, &sc.init)?;
            let n = x0.len();
            FilterState::new(x0, DMatrix::zeros(n, n), sc.r_v)?
        }
    };
    let np = model.n_p as f64;
    let mut current = model.nominal;
    let mut rows = Vec::with_capacity(sc.steps + 1);
    let y0 = pop.power();
    rows.push(ClosedLoopRow {
        t: 0,
        y_true_kw: y0,
        y_meas_kw: measure(y0),
        y_est_kw: model.h.dot(&filter.x_hat.transpose()),
        y_des_kw: y_des(0),
        theta_s_c: model.setpoints[current],
    });
    for t in 0..sc.steps {
        let sigma = match &sc.controller {
            Controller::OneStep => one_step_regulate(model, &filter.x_hat, y_des(t + 1)),
            Controller::Smpc { horizon, rate_limit, kappa } => {
                let problem = SmpcProblem {
                    horizon: *horizon,
                    y_des: (1..=*horizon).map(|k| y_des(t + k)).collect(),
                    kappa: kappa.clone(),
                    rate_limit: *rate_limit,
                    current,
                };
                smpc_plan(model, &problem, &filter.x_hat)?.schedule[0]
            }
        };
        current = sigma;
        pop.step_with_setpoint(model.setpoints[sigma]);
        let y = pop.power();
        let ym = measure(y);
        filter = kf_step(&filter, &model.f[sigma], &model.h, np, ym)?;
        rows.push(ClosedLoopRow {
            t: t + 1,
            y_true_kw: y,
            y_meas_kw: ym,
            y_est_kw: model.h.dot(&filter.x_hat.transpose()),
            y_des_kw: y_des(t + 1),
            theta_s_c: model.setpoints[sigma],
        });
    }
    Ok(rows)
}
