use std::fmt::Write as _;

use anyhow::Result;
use nalgebra::{DMatrix, DVector, RowDVector};

use tclpop::aggregate::mean_trajectory;
use tclpop::baseline::{build_baseline, build_baseline_averaged};
use tclpop::bounds::{bound_params, clustered_bound, empirical_abstraction_error, homogeneous_bound, lambda_constant};
use tclpop::chain::{self, build_chain, MarkovChainModel};
use tclpop::control::{
    build_switched_family, build_switched_family_averaged, closed_loop_run, rate_limit_steps, ClosedLoopScenario,
    Controller,
};
use tclpop::heterogeneity::{
    build_averaged_model, build_clustered_model, lipschitz_constant, HeterogeneitySpec, LipschitzMode,
};
use tclpop::partition::{build_partition, TemperaturePartition};
use tclpop::reduction::{eliminate_state, RestrictedChain};
use tclpop::tcl::{mc_expected_power, Population, PopulationParams, PopulationSnapshot, TclState};
use tclpop::{Mode, TclParams};

use crate::config::{
    Config, ConfigError, ControlMode, Distribution, HeterogeneityMode, InitSpec, Method, ModeName, ReferenceType,
};
use crate::output::{num, Artifact, Table};

/// Run index of the burn-in stream, kept apart from the Monte Carlo runs.
const BURN_IN_RUN: u64 = u64::MAX;

struct Scenario {
    params: TclParams,
    spec: Option<HeterogeneitySpec>,
    population: PopulationParams,
    init: PopulationSnapshot,
}

impl Scenario {
    fn new(cfg: &Config) -> Result<Self> {
        let params = cfg.params();
        let n_p = cfg.population.n_p;
        let spec = match &cfg.heterogeneity {
            None => None,
            Some(h) => Some(match &h.distribution {
                Distribution::Uniform { lo, hi } => {
                    HeterogeneitySpec::sample_uniform(params, h.parameter, *lo, *hi, n_p, cfg.simulation.seed)?
                }
                Distribution::Values { values } => HeterogeneitySpec::from_values(params, h.parameter, values.clone())?,
            }),
        };
        let population = match &spec {
            None => PopulationParams::Homogeneous(params),
            Some(s) => PopulationParams::PerTcl(s.members()),
        };
        let init = initial_population(cfg, &params, &population)?;
        Ok(Self { params, spec, population, init })
    }

    fn n_p(&self) -> usize {
        self.init.states.len()
    }

    fn initial_power(&self) -> f64 {
        self.init
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.mode == Mode::On)
            .map(|(k, _)| self.population.get(k).p_on())
            .sum()
    }
}

fn initial_population(cfg: &Config, p: &TclParams, population: &PopulationParams) -> Result<PopulationSnapshot> {
    let n_p = cfg.population.n_p;
    let off = PopulationSnapshot::uniform(n_p, TclState::new(Mode::Off, p.theta_s));
    Ok(match cfg.population.init {
        InitSpec::SetpointOff => off,
        InitSpec::Uniform { mode, theta } => {
            let mode = match mode {
                ModeName::Off => Mode::Off,
                ModeName::On => Mode::On,
            };
            PopulationSnapshot::uniform(n_p, TclState::new(mode, theta))
        }
        InitSpec::Spread => PopulationSnapshot {
            states: (0..n_p)
                .map(|k| {
                    let mode = if k % 2 == 0 { Mode::Off } else { Mode::On };
                    TclState::new(mode, p.theta_minus() + p.delta * (k as f64 + 0.5) / n_p as f64)
                })
                .collect(),
            time_index: 0,
        },
        InitSpec::BurnIn { steps } => {
            let mut pop = Population::new(&off, population.clone(), cfg.simulation.seed, BURN_IN_RUN)?;
            for _ in 0..steps {
                pop.step();
            }
            let mut snap = pop.snapshot();
            snap.time_index = 0;
            snap
        }
    })
}

fn occupancy(part: &TemperaturePartition, snap: &PopulationSnapshot) -> DVector<f64> {
    let mut x = DVector::zeros(part.n_states());
    for s in &snap.states {
        x[part.state_index(s.mode, part.bin_of(s.theta))] += 1.0;
    }
    x / snap.states.len() as f64
}

fn partition(cfg: &Config, p: &TclParams) -> Result<TemperaturePartition> {
    let (l, m) = cfg.grid()?;
    Ok(build_partition(p, l, m)?)
}

fn times(steps: usize) -> Vec<usize> {
    (0..=steps).collect()
}

fn seconds(steps: usize, h: f64) -> Vec<f64> {
    (0..=steps).map(|t| t as f64 * h).collect()
}

fn outputs(p: &DMatrix<f64>, h: &RowDVector<f64>, x0: &DVector<f64>, steps: usize) -> Vec<f64> {
    mean_trajectory(x0, p, steps).iter().map(|x| h.dot(&x.transpose())).collect()
}

fn write_matrix<W: std::io::Write>(w: &mut W, title: &str, p: &DMatrix<f64>) -> std::io::Result<()> {
    writeln!(w, "# kind: {title}")?;
    writeln!(w, "# n: {}", p.nrows())?;
    for i in 0..p.nrows() {
        let row: Vec<String> = p.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

fn chain_text(c: &MarkovChainModel) -> Result<String> {
    let mut buf = Vec::new();
    c.write_to(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn max_row_defect(p: &DMatrix<f64>) -> f64 {
    (0..p.nrows()).map(|i| (p.row(i).sum() - 1.0).abs()).fold(0.0, f64::max)
}

fn rms_tail(a: &[f64], b: &[f64]) -> f64 {
    let from = a.len() / 2;
    let n = (a.len() - from) as f64;
    (a[from..].iter().zip(&b[from..]).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn simulate(cfg: &Config, art: &Artifact) -> Result<()> {
    let sc = Scenario::new(cfg)?;
    let steps = cfg.simulation.steps;
    let mc = mc_expected_power(&sc.init, &sc.population, steps, cfg.simulation.mc_runs, cfg.simulation.seed)?;
    let mut t = Table::new("t", times(steps));
    t.column("time_s", seconds(steps, sc.params.h_seconds));
    t.column("mean_kw", mc.mean);
    t.column("std_err_kw", mc.std_err);
    art.write("trajectories.csv", &t.render())
}

pub fn abstract_models(cfg: &Config, art: &Artifact) -> Result<()> {
    let sc = Scenario::new(cfg)?;
    let mut report = String::new();
    if cfg.abstraction.method == Method::Stochastic {
        let part = partition(cfg, &sc.params)?;
        writeln!(report, "partition: l = {}, m = {}, upsilon = {} C, {} states", part.l, part.m, num(part.upsilon), part.n_states())?;
        match (&sc.spec, cfg.heterogeneity.as_ref().map(|h| h.mode)) {
            (None, _) => {
                let c = build_chain(&part, &sc.params)?;
                c.check_row_stochastic(chain::ROW_FAIL_TOL)?;
                c.check_structure()?;
                writeln!(report, "chain: max row defect {:e}, switching structure ok", max_row_defect(&c.p))?;
                art.write("chain.txt", &chain_text(&c)?)?;
            }
            (Some(spec), Some(HeterogeneityMode::Averaging)) => {
                let m = build_averaged_model(spec, &part)?;
                writeln!(report, "averaged chain over {} TCLs: max row defect {:e}", m.n_p, max_row_defect(&m.p_bar))?;
                writeln!(report, "mean ON power: {} kW", num(m.p_on_bar))?;
                let mut buf = Vec::new();
                write_matrix(&mut buf, "averaged", &m.p_bar)?;
                art.write("averaged.txt", &String::from_utf8(buf)?)?;
            }
            (Some(spec), _) => {
                let k = cfg.heterogeneity.as_ref().and_then(|h| h.n_clusters).unwrap_or(1);
                let m = build_clustered_model(spec, &part, k)?;
                writeln!(report, "clusters: {} non-empty of {k}, upsilon_a = {}", m.clusters.len(), num(m.upsilon_a))?;
                for (i, c) in m.clusters.iter().enumerate() {
                    writeln!(report, "  cluster {i}: representative {}, {} members", num(c.representative), c.size())?;
                    art.write(&format!("cluster_{i}.txt"), &chain_text(&c.chain)?)?;
                }
            }
        }
    }
    if let Some(n_d) = cfg.abstraction.n_d {
        let rule = cfg.abstraction.baseline_rule;
        let b = match &sc.spec {
            None => build_baseline(&sc.params, n_d, rule)?,
            Some(spec) => build_baseline_averaged(&spec.members(), n_d, rule)?.0,
        };
        writeln!(report, "baseline: {n_d} bins, {} rule, max row defect {:e}", rule.name(), max_row_defect(&b.p))?;
        art.write("baseline.txt", &chain_text(&b)?)?;
    }
    art.write("validation.txt", &report)
}

/// Reduced-order output from an interior restriction of `p`.
fn reduced_output(p: &DMatrix<f64>, h: &RowDVector<f64>, part: &TemperaturePartition, x0: &DVector<f64>, order: usize, steps: usize) -> Result<(Vec<f64>, String)> {
    let keep: Vec<usize> = (0..p.nrows()).filter(|&i| !part.is_absorbing_state(i)).collect();
    let interior = RestrictedChain::new(p, keep)?;
    let full = eliminate_state(&interior.p, &interior.restrict_row(h))?;
    let red = full.truncate(order)?;
    let y = red.simulate(&red.initial_state(&interior.restrict_vector(x0)), steps);
    let note = format!(
        "reduced model: order {} -> {}, largest interior leak {:e}, Hankel tail bound {}",
        full.order(),
        red.order(),
        interior.max_leak,
        red.truncation_bound().map_or("n/a".into(), num)
    );
    Ok((y, note))
}

pub fn compare(cfg: &Config, art: &Artifact) -> Result<()> {
    let sc = Scenario::new(cfg)?;
    let steps = cfg.simulation.steps;
    let n_p = sc.n_p();
    let mc = mc_expected_power(&sc.init, &sc.population, steps, cfg.simulation.mc_runs, cfg.simulation.seed)?;
    let mut t = Table::new("t", times(steps));
    t.column("time_s", seconds(steps, sc.params.h_seconds));
    let mut summary = String::new();
    writeln!(summary, "RMS deviation from the Monte Carlo mean over the second half of the horizon")?;
    let add = |t: &mut Table, name: &str, y: Vec<f64>, summary: &mut String| -> Result<()> {
        writeln!(summary, "{name}: {} kW", num(rms_tail(&y, &mc.mean)))?;
        t.column(name, y);
        Ok(())
    };
    t.column("mc_mean_kw", mc.mean.clone());
    t.column("mc_std_err_kw", mc.std_err.clone());

    if cfg.abstraction.method == Method::Stochastic {
        let part = partition(cfg, &sc.params)?;
        let x0 = occupancy(&part, &sc.init);
        let mode = cfg.heterogeneity.as_ref().map(|h| h.mode);
        let linear: Option<(DMatrix<f64>, RowDVector<f64>)> = match (&sc.spec, mode) {
            (None, _) => {
                let c = build_chain(&part, &sc.params)?;
                let h = c.output_row(n_p as f64);
                Some((c.p, h))
            }
            (Some(spec), Some(HeterogeneityMode::Averaging)) => {
                let m = build_averaged_model(spec, &part)?;
                let h = m.output_row();
                Some((m.p_bar, h))
            }
            (Some(spec), _) => {
                let k = cfg.heterogeneity.as_ref().and_then(|h| h.n_clusters).unwrap_or(1);
                let m = build_clustered_model(spec, &part, k)?;
                let xs = m.discretize(&sc.init)?;
                add(&mut t, "aggregate_kw", m.mean_power(&xs, steps), &mut summary)?;
                None
            }
        };
        if let Some((p, h)) = linear {
            add(&mut t, "aggregate_kw", outputs(&p, &h, &x0, steps), &mut summary)?;
            if let Some(r) = cfg.reduction.as_ref().filter(|r| r.enabled) {
                let (y, note) = reduced_output(&p, &h, &part, &x0, r.order, steps)?;
                add(&mut t, "reduced_kw", y, &mut summary)?;
                writeln!(summary, "{note}")?;
            }
        }
    }
    if let Some(n_d) = cfg.abstraction.n_d {
        let rule = cfg.abstraction.baseline_rule;
        let (b, p_on) = match &sc.spec {
            None => (build_baseline(&sc.params, n_d, rule)?, sc.params.p_on()),
            Some(spec) => build_baseline_averaged(&spec.members(), n_d, rule)?,
        };
        let h = chain::output_row(b.n_bins(), n_p as f64 * p_on);
        let x0 = b.discretize(&sc.init)?;
        add(&mut t, "baseline_kw", outputs(&b.p, &h, &x0, steps), &mut summary)?;
    }
    art.write("trajectories.csv", &t.render())?;
    art.write("summary.txt", &summary)
}

pub fn bounds(cfg: &Config, art: &Artifact) -> Result<()> {
    let sc = Scenario::new(cfg)?;
    if cfg.abstraction.method != Method::Stochastic {
        return Err(ConfigError("abstraction.method: bounds apply to the stochastic abstraction".into()).into());
    }
    let part = partition(cfg, &sc.params)?;
    let n_p = sc.n_p();
    let runs = cfg.bounds.verify_runs;
    let mut out = String::new();
    writeln!(out, "# abstraction error bounds")?;
    writeln!(out, "# n_p = {n_p}, l = {}, m = {}, sigma = {} C", part.l, part.m, num(sc.params.sigma))?;
    writeln!(out, "# lambda = {}", num(lambda_constant(&sc.params)))?;
    match (&sc.spec, cfg.heterogeneity.as_ref().map(|h| h.mode)) {
        (None, _) => {
            let c = build_chain(&part, &sc.params)?;
            let x0 = occupancy(&part, &sc.init);
            writeln!(out, "horizon gamma epsilon single_tcl population_kw tightened_kw observed_kw mc_std_err_kw")?;
            for &n in &cfg.bounds.horizons {
                let rep = homogeneous_bound(&c, n_p, n, Some(&x0))?;
                let (obs, se) = if runs > 0 {
                    let e = empirical_abstraction_error(&sc.params, &part, n, &sc.init, runs, cfg.simulation.seed)?;
                    (num(e.observed_error_kw), num(e.mc_std_err_kw))
                } else {
                    ("-".into(), "-".into())
                };
                writeln!(
                    out,
                    "{n} {} {} {} {} {} {obs} {se}",
                    num(rep.params.gamma),
                    rep.params.epsilon.map_or("vacuous".into(), num),
                    num(rep.single_tcl),
                    num(rep.population_kw),
                    rep.tightened_kw.map_or("-".into(), num),
                )?;
            }
        }
        (Some(spec), Some(HeterogeneityMode::Clustering)) => {
            let k = cfg.heterogeneity.as_ref().and_then(|h| h.n_clusters).unwrap_or(1);
            let model = build_clustered_model(spec, &part, k)?;
            let h_a = lipschitz_constant(spec, &part, LipschitzMode::Empirical)?;
            writeln!(out, "# clusters = {}, upsilon_a = {}, lipschitz = {}", model.clusters.len(), num(model.upsilon_a), num(h_a))?;
            let horizon_max = *cfg.bounds.horizons.iter().max().unwrap();
            let verify = if runs > 0 {
                let mc = mc_expected_power(&sc.init, &sc.population, horizon_max, runs, cfg.simulation.seed)?;
                let xs = model.discretize(&sc.init)?;
                Some((mc, model.mean_power(&xs, horizon_max)))
            } else {
                None
            };
            writeln!(out, "horizon gamma_base homogeneous_kw clustering_kw total_kw observed_kw mc_std_err_kw")?;
            for &n in &cfg.bounds.horizons {
                let b = clustered_bound(spec, &model, &part, n, h_a)?;
                let gamma = bound_params(&sc.params, &part, n)?.gamma;
                let (obs, se) = match &verify {
                    Some((mc, y)) => (num((mc.mean[n] - y[n]).abs()), num(mc.std_err[n])),
                    None => ("-".into(), "-".into()),
                };
                writeln!(
                    out,
                    "{n} {} {} {} {} {obs} {se}",
                    num(gamma),
                    num(b.homogeneous_term),
                    num(b.clustering_term),
                    num(b.total)
                )?;
            }
        }
        (Some(_), _) => {
            return Err(ConfigError("heterogeneity.mode: bounds for a heterogeneous population need clustering".into()).into());
        }
    }
    art.write("bounds.txt", &out)
}

pub fn track(cfg: &Config, art: &Artifact) -> Result<()> {
    let sc = Scenario::new(cfg)?;
    let c = &cfg.control;
    let reference_cfg = cfg.reference.as_ref().ok_or_else(|| ConfigError("reference: required by track".into()))?;
    if c.mode == ControlMode::None {
        return Err(ConfigError("control.mode: track needs onestep or smpc".into()).into());
    }
    let part = partition(cfg, &sc.params)?;
    let model = match &sc.spec {
        None => build_switched_family(&sc.params, &part, sc.n_p())?,
        Some(spec) => build_switched_family_averaged(spec, &part)?,
    };
    let y0 = sc.initial_power();
    if y0 <= 0.0 {
        return Err(ConfigError("population.init: the initial power is zero, so rv_fraction gives no noise level".into()).into());
    }
    let steps = cfg.simulation.steps;
    let scale = if reference_cfg.relative { y0 } else { 1.0 };
    let seg = match reference_cfg.kind {
        ReferenceType::Constant => usize::MAX,
        ReferenceType::Piecewise => reference_cfg.segment_steps.unwrap_or(usize::MAX),
    };
    let last = reference_cfg.values.len() - 1;
    let reference: Vec<f64> = (0..=steps).map(|t| reference_cfg.values[(t / seg).min(last)] * scale).collect();
    let controller = match c.mode {
        ControlMode::Onestep => Controller::OneStep,
        _ => Controller::Smpc {
            horizon: c.horizon,
            rate_limit: rate_limit_steps(c.rate_limit, part.upsilon),
            kappa: (c.kappa != 0.0).then(|| model.h.transpose() * c.kappa),
        },
    };
    let scenario = ClosedLoopScenario {
        init: sc.init.clone(),
        population: sc.population.clone(),
        controller,
        reference: reference.clone(),
        steps,
        r_v: (c.rv_fraction * y0).powi(2),
        seed: cfg.simulation.seed,
        filter_init: None,
    };
    let rows = closed_loop_run(&scenario, &model)?;
    let mut t = Table::new("t", rows.iter().map(|r| r.t).collect());
    t.column("time_s", rows.iter().map(|r| r.t as f64 * sc.params.h_seconds).collect());
    t.column("y_true_kw", rows.iter().map(|r| r.y_true_kw).collect());
    t.column("y_meas_kw", rows.iter().map(|r| r.y_meas_kw).collect());
    t.column("y_est_kw", rows.iter().map(|r| r.y_est_kw).collect());
    t.column("y_des_kw", rows.iter().map(|r| r.y_des_kw).collect());
    t.column("theta_s_c", rows.iter().map(|r| r.theta_s_c).collect());
    art.write("trajectories.csv", &t.render())?;

    let err = (rows.iter().map(|r| (r.y_true_kw - r.y_des_kw).powi(2)).sum::<f64>() / rows.len() as f64).sqrt();
    let mean_ref = reference.iter().sum::<f64>() / reference.len() as f64;
    let mut summary = String::new();
    writeln!(summary, "initial power: {} kW", num(y0))?;
    writeln!(summary, "RMS tracking error: {} kW ({}% of the mean reference)", num(err), num(100.0 * err / mean_ref))?;
    art.write("summary.txt", &summary)
}
