//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tclpop::aggregate::{aggregate_step, noise_covariance, quadratic_form_identity, r_operator, NoiseMode};
use tclpop::baseline::{build_baseline, BaselineRule};
use tclpop::bounds::{bound_params, empirical_abstraction_error, homogeneous_bound, lambda_constant};
use tclpop::chain::build_chain;
use tclpop::control::{
    build_switched_family, closed_loop_run, energy_cost_plan, one_step_regulate, psi_explicit, psi_recursive,
    rate_limit_steps, smpc_cost, smpc_plan, ClosedLoopRow, ClosedLoopScenario, Controller, SmpcProblem,
    SwitchedControlModel,
};
use tclpop::heterogeneity::{build_averaged_model, AveragedAggregateModel, HeterogeneitySpec, HeterogeneousParameter};
use tclpop::partition::build_partition;
use tclpop::reduction::{eliminate_state, RestrictedChain};
use tclpop::tcl::{mc_expected_power, simulate_population, PopulationParams, PopulationSnapshot, TclState};
use tclpop::{Mode, TclParams};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_stochastic(r: &mut ChaCha8Rng, n: usize, sparse: bool) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(n, n, |_, _| {
        if sparse && r.random::<f64>() < 0.4 {
            0.0
        } else {
            r.random::<f64>() + 0.01
        }
    });
    for i in 0..n {
        if p.row(i).sum() == 0.0 {
            p[(i, i)] = 1.0;
        }
        let s = p.row(i).sum();
        let mut row = p.row_mut(i);
        row /= s;
    }
    p
}

fn random_simplex(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| r.random::<f64>() + 1e-3);
    let s = v.sum();
    v / s
}

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let el = start.elapsed();
    check(el <= limit, format!("runtime {:.1} s exceeds {:.0} s", el.as_secs_f64(), limit.as_secs_f64()))
}

fn reference_params(sigma: f64) -> TclParams {
    TclParams::reference(sigma)
}

// ---------------------------------------------------------------------------
// 1. Exactness suite

fn criterion_exactness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);

    // Row sums and structural zeros on a range of chains.
    let mut worst_row = 0.0f64;
    for (sigma, l, m) in [(0.032, 7, 35), (0.05, 1, 2), (0.0032, 70, 350), (0.032, 8, 40), (0.032, 10, 50)] {
        let p = reference_params(sigma);
        let part = build_partition(&p, l, m).map_err(|e| e.to_string())?;
        let c = build_chain(&part, &p).map_err(|e| e.to_string())?;
        for i in 0..c.n_states() {
            worst_row = worst_row.max((c.p.row(i).sum() - 1.0).abs());
        }
        c.check_structure().map_err(|e| format!("structure (l={l}, m={m}): {e}"))?;
    }
    check(worst_row <= 1e-9, format!("row defect {worst_row:e}"))?;

    // Quadratic-form identity and positive semidefiniteness of the noise covariance.
    let mut worst_rel = 0.0f64;
    let mut worst_eig = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..14);
        let p = random_stochastic(&mut r, n, true);
        let x = random_simplex(&mut r, n);
        let nu = DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
        let np = r.random_range(1..2000) as f64;
        let (lhs, rhs) = quadratic_form_identity(&nu, &x, &p, np);
        // Relative to the size of the terms that cancel inside R(nu, P^T).
        let scale = (r_operator(&nu.map(|v| v.abs()).transpose(), &p.transpose()).abs()
            + (&nu.map(|v| v * v).transpose() * p.transpose()).abs())
            * &x
            / np;
        worst_rel = worst_rel.max((lhs - rhs).abs() / scale[(0, 0)].max(lhs.abs()).max(1e-300));
        let s = noise_covariance(&x, &p, np);
        let min = s.symmetric_eigenvalues().min();
        worst_eig = worst_eig.min(min);
    }
    check(worst_rel <= 1e-12, format!("quadratic identity relative error {worst_rel:e}"))?;
    check(worst_eig >= -1e-10, format!("covariance eigenvalue {worst_eig:e}"))?;

    // Spectrum after eliminating one state.
    let mut worst_spec = 0.0f64;
    let mut mats: Vec<DMatrix<f64>> = (0..10).map(|_| {
        let n = r.random_range(3..12);
        random_stochastic(&mut r, n, false)
    }).collect();
    let small = reference_params(0.032);
    let part = build_partition(&small, 2, 6).map_err(|e| e.to_string())?;
    mats.push(build_chain(&part, &small).map_err(|e| e.to_string())?.p);
    for p in &mats {
        let n = p.nrows();
        let h = RowDVector::from_fn(n, |_, j| j as f64);
        let red = eliminate_state(p, &h).map_err(|e| e.to_string())?;
        let mut want: Vec<nalgebra::Complex<f64>> = red.a.complex_eigenvalues().iter().cloned().collect();
        want.push(nalgebra::Complex::new(1.0, 0.0));
        let mut have: Vec<nalgebra::Complex<f64>> = p.complex_eigenvalues().iter().cloned().collect();
        for w in &want {
            let (idx, d) = have
                .iter()
                .enumerate()
                .map(|(i, h)| (i, (h - w).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            worst_spec = worst_spec.max(d);
            have.swap_remove(idx);
        }
    }
    check(worst_spec <= 1e-8, format!("eigenvalue mismatch {worst_spec:e}"))?;

    // Psi recursion against the explicit double sum.
    let mut worst_psi = 0.0f64;
    for _ in 0..30 {
        let n = r.random_range(2..8);
        let fam_size = r.random_range(1..5);
        let f: Vec<DMatrix<f64>> = (0..fam_size).map(|_| random_stochastic(&mut r, n, true).transpose()).collect();
        let h = RowDVector::from_fn(n, |_, _| r.random_range(0.0..5.0));
        let model = SwitchedControlModel::from_matrices(f, (0..fam_size).map(|k| k as f64).collect(), 0, h, r.random_range(1..100))
            .map_err(|e| e.to_string())?;
        let t = r.random_range(1..7);
        let sched: Vec<usize> = (0..t).map(|_| r.random_range(0..fam_size)).collect();
        let kappa = if r.random::<bool>() { Some(DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0))) } else { None };
        let a = psi_recursive(&model, &sched, kappa.as_ref());
        let b = psi_explicit(&model, &sched, kappa.as_ref());
        worst_psi = worst_psi.max((a - &b).abs().max() / b.abs().max().max(1.0));
    }
    check(worst_psi <= 1e-10, format!("psi recursion mismatch {worst_psi:e}"))?;
    within_time(start, Duration::from_secs(10))?;
    Ok(format!(
        "row defect {worst_row:.1e}, identity rel {worst_rel:.1e}, min eig {worst_eig:.1e}, spectrum {worst_spec:.1e}, psi {worst_psi:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 2. Brute-force oracles

/// Exact mean and covariance of the next occupancy for labelled TCLs with
/// given chains, averaging uniformly over all label assignments consistent
/// with the occupancy.
fn enumerate_moments(chains: &[DMatrix<f64>], counts: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let np = chains.len();
    let n = counts.len();
    // Multiset of current states.
    let mut states = Vec::new();
    for (s, &c) in counts.iter().enumerate() {
        states.extend(std::iter::repeat_n(s, c));
    }
    // Distinct assignments of states to labelled TCLs.
    let mut assignments: Vec<Vec<usize>> = Vec::new();
    permute(&mut states.clone(), 0, &mut assignments);
    assignments.sort();
    assignments.dedup();
    let mut mean = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    let w_assign = 1.0 / assignments.len() as f64;
    for z in &assignments {
        // Enumerate destinations of every TCL.
        let total = n.pow(np as u32);
        for code in 0..total {
            let mut c = code;
            let mut prob = 1.0;
            let mut x = DVector::zeros(n);
            for k in 0..np {
                let dest = c % n;
                c /= n;
                prob *= chains[k][(z[k], dest)];
                x[dest] += 1.0 / np as f64;
            }
            if prob == 0.0 {
                continue;
            }
            mean += &x * (prob * w_assign);
            second += &x * x.transpose() * (prob * w_assign);
        }
    }
    let cov = second - &mean * mean.transpose();
    (mean, cov)
}

fn permute(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, out);
        v.swap(k, i);
    }
}

fn criterion_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);

    // (a) homogeneous and heterogeneous moments against enumeration.
    let mut worst_hom = 0.0f64;
    let mut worst_het = 0.0f64;
    let mut printed_gap = 0.0f64;
    for _ in 0..20 {
        let p1 = random_stochastic(&mut r, 2, false);
        let p2 = random_stochastic(&mut r, 2, false);
        for counts in [[2usize, 0], [1, 1], [0, 2]] {
            let x = DVector::from_fn(2, |i, _| counts[i] as f64 / 2.0);
            let (m, c) = enumerate_moments(&[p1.clone(), p1.clone()], &counts);
            worst_hom = worst_hom.max((m - p1.tr_mul(&x)).abs().max());
            worst_hom = worst_hom.max((c - noise_covariance(&x, &p1, 2.0)).abs().max());

            let model = AveragedAggregateModel::from_members(vec![p1.clone(), p2.clone()], 1.0)
                .map_err(|e| e.to_string())?;
            let (m, c) = enumerate_moments(&[p1.clone(), p2.clone()], &counts);
            worst_het = worst_het.max((m - model.mean_step(&x)).abs().max());
            worst_het = worst_het.max((&c - model.covariance(&x)).abs().max());
            printed_gap = printed_gap.max((&c - model.covariance_without_correction(&x)).abs().max());
        }
    }
    check(worst_hom <= 1e-14, format!("homogeneous moments off by {worst_hom:e}"))?;
    check(worst_het <= 1e-14, format!("heterogeneous moments off by {worst_het:e}"))?;

    // (b) tracking cost against Monte Carlo rollouts.
    let n = 4;
    let mut rr = rng(20);
    let f: Vec<DMatrix<f64>> = (0..3).map(|_| random_stochastic(&mut rr, n, false).transpose()).collect();
    let h = RowDVector::from_row_slice(&[0.0, 0.0, 1000.0, 1000.0]);
    let np = 1000;
    let model = SwitchedControlModel::from_matrices(f, vec![0.0, 1.0, 2.0], 1, h.clone(), np).map_err(|e| e.to_string())?;
    let x0 = DVector::from_row_slice(&[0.3, 0.2, 0.25, 0.25]);
    let schedule = vec![0usize, 2, 1, 1];
    // Reference on the mean trajectory isolates the noise term; the second
    // case adds a deterministic offset.
    let mut mean_y = Vec::new();
    let mut xm = x0.clone();
    for &s in &schedule {
        xm = &model.f[s] * xm;
        mean_y.push(h.dot(&xm.transpose()));
    }
    let kappa = DVector::from_row_slice(&[5.0, -2.0, 1.0, 3.0]);
    let mut mc_report = Vec::new();
    for (case, offset) in [(0, 0.0), (1, 3.0)] {
        let problem = SmpcProblem {
            horizon: schedule.len(),
            y_des: mean_y.iter().map(|y| y + offset).collect(),
            kappa: Some(kappa.clone()),
            rate_limit: 2,
            current: 1,
        };
        let j = smpc_cost(&model, &problem, &schedule, &x0).map_err(|e| e.to_string())?;
        for mode in [NoiseMode::Gaussian, NoiseMode::ExactMultinomial] {
            let runs = 10_000;
            let mut rs = tclpop::rng::stream(77, case, 0);
            let mut samples = Vec::with_capacity(runs);
            for _ in 0..runs {
                let mut x = x0.clone();
                let mut cost = 0.0;
                for (k, &s) in schedule.iter().enumerate() {
                    x = aggregate_step(&x, &model.p(s), np, mode, &mut rs).map_err(|e| e.to_string())?;
                    cost += (h.dot(&x.transpose()) - problem.y_des[k]).powi(2);
                }
                cost += kappa.dot(&x);
                samples.push(cost);
            }
            let mean = samples.iter().sum::<f64>() / runs as f64;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
            let se = (var / runs as f64).sqrt();
            let z = (mean - j) / se;
            check(z.abs() <= 3.0, format!("cost case {case} {mode:?}: closed form {j:.5}, MC {mean:.5} +- {se:.5}"))?;
            mc_report.push(format!("{z:+.2}"));
        }
    }

    // (c) controllers against independent exhaustive search.
    let mut plans_checked = 0;
    for trial in 0..12 {
        let n = r.random_range(3..6);
        let fam = r.random_range(2..5);
        let f: Vec<DMatrix<f64>> = (0..fam).map(|_| random_stochastic(&mut r, n, true).transpose()).collect();
        let h = RowDVector::from_fn(n, |_, j| if j >= n / 2 { 10.0 } else { 0.0 });
        let model = SwitchedControlModel::from_matrices(f, (0..fam).map(|k| k as f64).collect(), fam / 2, h.clone(), r.random_range(5..200))
            .map_err(|e| e.to_string())?;
        let x = random_simplex(&mut r, n);
        let y = r.random_range(0.0..10.0);
        let chosen = one_step_regulate(&model, &x, y);
        let oracle = (0..fam)
            .map(|k| ((&h * &model.f[k] * &x)[(0, 0)] - y).abs())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        check(chosen == oracle, format!("one-step trial {trial}: chose {chosen}, oracle {oracle}"))?;

        let horizon = r.random_range(1..4);
        let rate = r.random_range(0..fam);
        let current = r.random_range(0..fam);
        let kappa = Some(DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0)));
        let problem = SmpcProblem {
            horizon,
            y_des: (0..horizon).map(|_| r.random_range(0.0..10.0)).collect(),
            kappa: kappa.clone(),
            rate_limit: rate,
            current,
        };
        let plan = smpc_plan(&model, &problem, &x).map_err(|e| e.to_string())?;
        // Independent route: all fam^horizon sequences, mean/covariance propagation.
        let mut best: Option<(f64, Vec<usize>)> = None;
        for code in 0..fam.pow(horizon as u32) {
            let mut c = code;
            let seq: Vec<usize> = (0..horizon).map(|_| { let s = c % fam; c /= fam; s }).collect();
            let mut prev = current;
            if seq.iter().any(|&s| { let bad = s.abs_diff(prev) > rate; prev = s; bad }) {
                continue;
            }
            let mut m = x.clone();
            let mut cov = DMatrix::<f64>::zeros(n, n);
            let mut cost = 0.0;
            for (k, &s) in seq.iter().enumerate() {
                let fk = &model.f[s];
                cov = fk * &cov * fk.transpose() + noise_covariance(&m, &fk.transpose(), model.n_p as f64);
                m = fk * m;
                cost += (h.dot(&m.transpose()) - problem.y_des[k]).powi(2) + (&h * &cov * h.transpose())[(0, 0)];
            }
            cost += kappa.as_ref().unwrap().dot(&m);
            if best.as_ref().is_none_or(|b| cost < b.0 - 1e-12) {
                best = Some((cost, seq));
            }
        }
        let (bc, bs) = best.unwrap();
        check((plan.cost - bc).abs() <= 1e-9 * bc.abs().max(1.0), format!("plan cost {} vs oracle {bc}", plan.cost))?;
        check(plan.schedule == bs, format!("plan {:?} vs oracle {bs:?}", plan.schedule))?;

        let prices: Vec<f64> = (0..horizon).map(|_| r.random_range(0.0..3.0)).collect();
        let ep = energy_cost_plan(&model, &prices, 0.5, rate, current, &x).map_err(|e| e.to_string())?;
        let mut eb = f64::INFINITY;
        for code in 0..fam.pow(horizon as u32) {
            let mut c = code;
            let seq: Vec<usize> = (0..horizon).map(|_| { let s = c % fam; c /= fam; s }).collect();
            let mut prev = current;
            if seq.iter().any(|&s| { let bad = s.abs_diff(prev) > rate; prev = s; bad }) {
                continue;
            }
            let mut m = x.clone();
            let mut e = 0.0;
            for (k, &s) in seq.iter().enumerate() {
                m = &model.f[s] * m;
                e += prices[k] * 0.5 * h.dot(&m.transpose());
            }
            eb = eb.min(e);
        }
        check((ep.cost - eb).abs() <= 1e-12 * eb.abs().max(1.0), format!("energy plan {} vs oracle {eb}", ep.cost))?;
        plans_checked += 1;
    }
    within_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "moments hom {worst_hom:.1e} het {worst_het:.1e} (uncorrected formula off by {printed_gap:.2e}); \
         MC z-scores [{}]; {plans_checked} plans match",
        mc_report.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 3. Empirical bound check

fn criterion_bound_holds() -> Outcome {
    let start = Instant::now();
    let p = reference_params(0.032);
    let part = build_partition(&p, 7, 35).map_err(|e| e.to_string())?;
    let np = 500;
    // Spread initial states over both modes and the dead-band.
    let init = PopulationSnapshot {
        states: (0..np)
            .map(|k| {
                let mode = if k % 2 == 0 { Mode::Off } else { Mode::On };
                TclState::new(mode, p.theta_minus() + p.delta * (k as f64 + 0.5) / np as f64)
            })
            .collect(),
        time_index: 0,
    };
    let mut lines = Vec::new();
    for n in [2usize, 6, 12] {
        let rep = empirical_abstraction_error(&p, &part, n, &init, 50, 3).map_err(|e| e.to_string())?;
        let slack = rep.bound_kw + 3.0 * rep.mc_std_err_kw;
        check(
            rep.observed_error_kw <= slack,
            format!("N={n}: error {:.3} kW exceeds bound {:.3} + 3 SE", rep.observed_error_kw, rep.bound_kw),
        )?;
        lines.push(format!("N={n}: |err| {:.2} kW <= {:.1} kW", rep.observed_error_kw, rep.bound_kw));
    }
    within_time(start, Duration::from_secs(300))?;
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// 4. Stochastic aggregate against the deterministic baseline

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn criterion_benchmark() -> Outcome {
    let start = Instant::now();
    let p = reference_params(0.032);
    let np = 500;
    let steps = 360;
    let init = PopulationSnapshot::uniform(np, TclState::new(Mode::Off, p.theta_s));
    let mc = mc_expected_power(&init, &PopulationParams::Homogeneous(p), steps, 50, 4).map_err(|e| e.to_string())?;

    let part = build_partition(&p, 7, 35).map_err(|e| e.to_string())?;
    let chain = build_chain(&part, &p).map_err(|e| e.to_string())?;
    let h = chain.output_row(np as f64);
    let mut x = chain.discretize(&init).map_err(|e| e.to_string())?;
    let mut stoch = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        stoch.push(h.dot(&x.transpose()));
        x = chain.p.tr_mul(&x);
    }

    let base = build_baseline(&p, 5, BaselineRule::UniformBin).map_err(|e| e.to_string())?;
    let hb = base.output_row(np as f64);
    let mut xb = base.discretize(&init).map_err(|e| e.to_string())?;
    let mut det = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        det.push(hb.dot(&xb.transpose()));
        xb = base.p.tr_mul(&xb);
    }
    let from = steps / 2;
    let e_stoch = rms(&stoch[from..], &mc.mean[from..]);
    let e_det = rms(&det[from..], &mc.mean[from..]);
    check(
        e_stoch <= 0.5 * e_det,
        format!("stochastic RMS {e_stoch:.2} kW vs deterministic {e_det:.2} kW"),
    )?;
    within_time(start, Duration::from_secs(300))?;
    Ok(format!("final-half RMS vs Monte Carlo: stochastic {e_stoch:.2} kW, deterministic {e_det:.2} kW"))
}

// ---------------------------------------------------------------------------
// 5. Variance scaling

fn criterion_scaling() -> Outcome {
    let start = Instant::now();
    let p = reference_params(0.032);
    let part = build_partition(&p, 7, 35).map_err(|e| e.to_string())?;
    let chain = build_chain(&part, &p).map_err(|e| e.to_string())?;
    // An occupancy representable exactly with both 250 and 1000 TCLs.
    let init = PopulationSnapshot::uniform(1, TclState::new(Mode::Off, p.theta_s));
    let mut x = chain.discretize(&init).map_err(|e| e.to_string())?;
    for _ in 0..120 {
        x = chain.p.tr_mul(&x);
    }
    let counts = tclpop::aggregate::apportion(&x, 250);
    let x = DVector::from_fn(x.len(), |i, _| counts[i] as f64 / 250.0);

    let draws = 20_000;
    let var_at = |np: usize, seed: u64| -> Result<DVector<f64>, String> {
        let mut r = tclpop::rng::stream(seed, 0, 0);
        let n = x.len();
        let mut s1 = DVector::zeros(n);
        let mut s2 = DVector::zeros(n);
        for _ in 0..draws {
            let y = aggregate_step(&x, &chain.p, np, NoiseMode::ExactMultinomial, &mut r).map_err(|e| e.to_string())?;
            s1 += &y;
            s2 += y.map(|v| v * v);
        }
        let d = draws as f64;
        Ok(DVector::from_fn(n, |i, _| (s2[i] - s1[i] * s1[i] / d) / (d - 1.0)))
    };
    let v250 = var_at(250, 5)?;
    let v1000 = var_at(1000, 6)?;
    let ratios: Vec<f64> = (0..x.len())
        .filter(|&i| v250[i] > 1e-8 && v1000[i] > 1e-8)
        .map(|i| v250[i] / v1000[i])
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    check((mean_ratio - 4.0).abs() <= 1.0, format!("variance ratio {mean_ratio:.3} over {} coordinates", ratios.len()))?;
    let _ = start;
    Ok(format!("mean variance ratio {mean_ratio:.3} over {} coordinates", ratios.len()))
}

// ---------------------------------------------------------------------------
// 6. Model reduction on a heterogeneous population

fn criterion_reduction() -> Outcome {
    let base = reference_params(0.032);
    let np = 500;
    let spec = HeterogeneitySpec::sample_uniform(base, HeterogeneousParameter::Capacitance, 2.0, 18.0, np, 6)
        .map_err(|e| e.to_string())?;
    let part = build_partition(&base, 10, 50).map_err(|e| e.to_string())?;
    let model = build_averaged_model(&spec, &part).map_err(|e| e.to_string())?;
    check(model.p_bar.nrows() == 204, format!("model has {} states", model.p_bar.nrows()))?;
    let h = model.output_row();
    let mut x0 = DVector::zeros(204);
    x0[part.state_index(Mode::Off, part.bin_of(base.theta_s))] = 1.0;

    let steps = 360;
    let mut full = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for _ in 0..=steps {
        full.push(h.dot(&x.transpose()));
        x = model.p_bar.tr_mul(&x);
    }

    let keep: Vec<usize> = (0..204).filter(|&i| !part.is_absorbing_state(i)).collect();
    let interior = RestrictedChain::new(&model.p_bar, keep).map_err(|e| e.to_string())?;
    let lin = eliminate_state(&interior.p, &interior.restrict_row(&h)).map_err(|e| e.to_string())?;
    let red = lin.truncate(6).map_err(|e| e.to_string())?;
    let y_red = red.simulate(&red.initial_state(&interior.restrict_vector(&x0)), steps);

    let steady = full[100..].iter().sum::<f64>() / (steps - 99) as f64;
    let sup = full[100..].iter().zip(&y_red[100..]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(sup <= 0.05 * steady, format!("sup deviation {sup:.2} kW vs 5% of {steady:.1} kW"))?;
    Ok(format!(
        "order 199 -> 6, sup deviation {sup:.2} kW ({:.2}% of steady {steady:.0} kW), interior leak {:.1e}, Hankel tail bound {:.3}",
        100.0 * sup / steady,
        interior.max_leak,
        red.truncation_bound().unwrap_or(f64::NAN)
    ))
}

// ---------------------------------------------------------------------------
// 7. Closed-loop tracking

fn burned_in_population(p: &TclParams, np: usize, seed: u64) -> Result<PopulationSnapshot, String> {
    let init = PopulationSnapshot::uniform(np, TclState::new(Mode::Off, p.theta_s));
    let out = simulate_population(&init, PopulationParams::Homogeneous(*p), 1440, seed, true).map_err(|e| e.to_string())?;
    let mut snap = out.snapshots.last().unwrap().clone();
    snap.time_index = 0;
    Ok(snap)
}

fn criterion_tracking() -> Outcome {
    let start = Instant::now();
    let p = reference_params(0.032);
    let np = 500;
    let part = build_partition(&p, 8, 40).map_err(|e| e.to_string())?;
    let model = build_switched_family(&p, &part, np).map_err(|e| e.to_string())?;
    let init = burned_in_population(&p, np, 11)?;
    let y0: f64 = init.states.iter().filter(|s| s.mode == Mode::On).count() as f64 * p.p_on();
    let r_v = (0.005 * y0).powi(2);

    // One-step regulation of a piecewise-constant reference, 10 minutes per level.
    let levels = [1.0, 1.06, 0.95, 1.03, 0.97];
    let seg = 60;
    let reference: Vec<f64> = (0..=levels.len() * seg).map(|t| levels[(t / seg).min(levels.len() - 1)] * y0).collect();
    let sc = ClosedLoopScenario {
        init: init.clone(),
        population: PopulationParams::Homogeneous(p),
        controller: Controller::OneStep,
        reference: reference.clone(),
        steps: levels.len() * seg,
        r_v,
        seed: 12,
        filter_init: None,
    };
    let rows = closed_loop_run(&sc, &model).map_err(|e| e.to_string())?;
    let transient = 12;
    let kept: Vec<&ClosedLoopRow> = rows.iter().filter(|r| r.t % seg >= transient).collect();
    let err = (kept.iter().map(|r| (r.y_true_kw - r.y_des_kw).powi(2)).sum::<f64>() / kept.len() as f64).sqrt();
    let mean_ref = reference.iter().sum::<f64>() / reference.len() as f64;
    let one_step_ok = err <= 0.02 * mean_ref;

    // SMPC on a constant reference above the initial level.
    let rate = rate_limit_steps(0.025, part.upsilon);
    let target = 1.1 * y0;
    let steps = 180;
    let sc = ClosedLoopScenario {
        init,
        population: PopulationParams::Homogeneous(p),
        controller: Controller::Smpc { horizon: 5, rate_limit: rate, kappa: None },
        reference: vec![target; steps + 1],
        steps,
        r_v,
        seed: 13,
        filter_init: None,
    };
    let rows = closed_loop_run(&sc, &model).map_err(|e| e.to_string())?;
    let window = 12;
    let abs_err: Vec<f64> = rows.iter().map(|r| (r.y_true_kw - r.y_des_kw).abs()).collect();
    let win_mean: Vec<f64> = (0..=abs_err.len() - window).map(|t| abs_err[t..t + window].iter().sum::<f64>() / window as f64).collect();
    let settle = (0..win_mean.len())
        .find(|&t| win_mean[t..].iter().all(|&e| e <= 0.02 * target))
        .unwrap_or(usize::MAX);
    let settle_min = settle as f64 * p.h_seconds / 60.0;
    let smpc_ok = settle_min <= 6.0;

    let detail = format!(
        "one-step RMS {err:.2} kW ({:.2}% of {mean_ref:.0} kW); SMPC settles after {settle_min:.1} min (rate limit {rate} grid step)",
        100.0 * err / mean_ref
    );
    within_time(start, Duration::from_secs(600))?;
    if one_step_ok && smpc_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 8. Bound formula reproduction

fn criterion_bound_formula() -> Outcome {
    let p = reference_params(0.0032);
    check(lambda_constant(&p) == 32.0, format!("lambda {}", lambda_constant(&p)))?;

    // Independent evaluation from the raw parameter values.
    let a = (-10.0f64 / 3600.0 / (2.0 * 10.0)).exp();
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let mut worst = 0.0f64;
    let mut side = Vec::new();
    for (sigma, l, m) in [(0.0032, 70usize, 350usize), (0.032, 7, 35), (0.032, 70, 350)] {
        let p = reference_params(sigma);
        let part = build_partition(&p, l, m).map_err(|e| e.to_string())?;
        let ups = 0.5 / (2.0 * l as f64);
        let big_l = 2.0 * m as f64 * ups;
        for n in [2usize, 3, 6, 12, 40] {
            let an = a.powi(n as i32);
            let head = (an * big_l + 0.5) / (1.0 - an);
            let gamma = (1.0 - a) / (2.0 * sigma) * (head - 32.0);
            let bp = bound_params(&p, &part, n).map_err(|e| e.to_string())?;
            // gamma is a difference of two comparable terms; measure against their size.
            let scale = (1.0 - a) / (2.0 * sigma) * head.max(32.0);
            worst = worst.max((bp.gamma - gamma).abs() / scale);
            if bp.gamma > 0.0 {
                let g = bp.gamma;
                let eps = (-g * g / 2.0).exp() / (g * sqrt_2pi);
                worst = worst.max((bp.epsilon.unwrap() - eps).abs() / eps.max(1e-300));
            }
        }
        let chain = build_chain(&part, &p).map_err(|e| e.to_string())?;
        let rep = homogeneous_bound(&chain, 500, 2, None).map_err(|e| e.to_string())?;
        let single = 2.0 * a * ups / (sigma * sqrt_2pi);
        worst = worst.max((rep.single_tcl - single).abs() / single);
        worst = worst.max((rep.population_kw - 500.0 * 5.6 * single).abs() / (500.0 * 5.6 * single));
        side.push(format!("sigma={sigma}, l={l}: {:.4}", rep.single_tcl));
    }
    check(worst <= 1e-12, format!("formula mismatch {worst:e}"))?;
    Ok(format!(
        "lambda = 32; two-step single-TCL bound {} (reference value 0.226 not reproduced); max rel diff {worst:.1e}",
        side.join(", ")
    ))
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 exactness", criterion_exactness),
        ("2 brute-force oracles", criterion_oracles),
        ("3 empirical bound", criterion_bound_holds),
        ("4 stochastic vs deterministic baseline", criterion_benchmark),
        ("5 variance scaling", criterion_scaling),
        ("6 model reduction", criterion_reduction),
        ("7 closed-loop tracking", criterion_tracking),
        ("8 bound formulas", criterion_bound_formula),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if let Some(fl) = &filter {
            if !name.contains(fl.as_str()) {
                continue;
            }
        }
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("PASS  criterion {name} ({secs:.1} s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name} ({secs:.1} s): {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
