//! Populations whose TCLs differ in one physical parameter.
//!
//! Two aggregations are offered: averaging the member chains into one model,
//! and clustering the parameter range into homogeneous sub-populations.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{sample_zero_sum_gaussian, NoiseMode};
use crate::bounds::lambda_constant;
use crate::chain::{build_chain, gaussian_marginals, assemble_transition, MarkovChainModel};
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::gauss::INV_SQRT_2PI;
use crate::params::TclParams;
use crate::partition::TemperaturePartition;
use crate::rng;
use crate::tcl::PopulationSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneousParameter {
    /// Thermal capacitance `C`; enters the dynamics through the decay factor `a`.
    Capacitance,
    Resistance,
    PowerRate,
    Efficiency,
}

impl HeterogeneousParameter {
    pub fn apply(self, base: &TclParams, v: f64) -> TclParams {
        let mut p = *base;
        match self {
            HeterogeneousParameter::Capacitance => p.c = v,
            HeterogeneousParameter::Resistance => p.r = v,
            HeterogeneousParameter::PowerRate => p.p_rate = v,
            HeterogeneousParameter::Efficiency => p.eta = v,
        }
        p
    }

    /// Coordinate in which Lipschitz constants and cluster diameters are
    /// measured: the decay factor for capacitance, the raw value otherwise.
    pub fn coordinate(self, base: &TclParams, v: f64) -> f64 {
        match self {
            HeterogeneousParameter::Capacitance => self.apply(base, v).decay(),
            _ => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneitySpec {
    pub base: TclParams,
    pub parameter: HeterogeneousParameter,
    /// One value per TCL.
    pub values: Vec<f64>,
    /// Parameter range used for clustering.
    pub range: (f64, f64),
}

impl HeterogeneitySpec {
    pub fn from_values(base: TclParams, parameter: HeterogeneousParameter, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid_input("heterogeneity needs at least one value"));
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spec = Self { base, parameter, values, range: (lo, hi) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sample_uniform(
        base: TclParams,
        parameter: HeterogeneousParameter,
        lo: f64,
        hi: f64,
        n_p: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(lo <= hi) || n_p == 0 {
            return Err(invalid_param(format!("bad uniform range [{lo}, {hi}] or size {n_p}")));
        }
        let mut r = rng::stream(seed, 0, rng::AGGREGATE_UNIT);
        let values = if lo == hi {
            vec![lo; n_p]
        } else {
            let u = Uniform::new_inclusive(lo, hi).map_err(|e| invalid_param(e.to_string()))?;
            (0..n_p).map(|_| u.sample(&mut r)).collect()
        };
        let spec = Self { base, parameter, values, range: (lo, hi) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for &v in &self.values {
            if !(v >= self.range.0 && v <= self.range.1) {
                return Err(invalid_param(format!("value {v} outside range {:?}", self.range)));
            }
            self.member(v).validate()?;
        }
        Ok(())
    }

    pub fn n_p(&self) -> usize {
        self.values.len()
    }

    pub fn member(&self, v: f64) -> TclParams {
        self.parameter.apply(&self.base, v)
    }

    pub fn members(&self) -> Vec<TclParams> {
        self.values.iter().map(|&v| self.member(v)).collect()
    }

    pub fn mean_p_on(&self) -> f64 {
        self.values.iter().map(|&v| self.member(v).p_on()).sum::<f64>() / self.n_p() as f64
    }
}

/// Equally weighted average of the member chains.
#[derive(Debug, Clone)]
pub struct AveragedAggregateModel {
    pub p_bar: DMatrix<f64>,
    pub p_on_bar: f64,
    pub n_p: usize,
    /// Member transition matrices, one per TCL. Needed for second moments.
    pub members: Vec<DMatrix<f64>>,
}

pub fn build_averaged_model(spec: &HeterogeneitySpec, part: &TemperaturePartition) -> Result<AveragedAggregateModel> {
    let n_p = spec.n_p();
    if n_p < 2 {
        return Err(invalid_input("averaged model needs at least two TCLs"));
    }
    let members: Vec<DMatrix<f64>> = spec
        .values
        .par_iter()
        .map(|&v| build_chain(part, &spec.member(v)).map(|c| c.p))
        .collect::<Result<_>>()?;
    let mut p_bar = DMatrix::zeros(part.n_states(), part.n_states());
    for m in &members {
        p_bar += m;
    }
    p_bar /= n_p as f64;
    crate::chain::check_row_stochastic(&p_bar, 1e-9)?;
    Ok(AveragedAggregateModel { p_bar, p_on_bar: spec.mean_p_on(), n_p, members })
}

impl AveragedAggregateModel {
    /// Model over explicit member matrices, one per TCL.
    pub fn from_members(members: Vec<DMatrix<f64>>, p_on_bar: f64) -> Result<Self> {
        let n_p = members.len();
        if n_p < 2 {
            return Err(invalid_input("averaged model needs at least two TCLs"));
        }
        let n = members[0].nrows();
        let mut p_bar = DMatrix::zeros(n, n);
        for m in &members {
            crate::chain::check_row_stochastic(m, 1e-9)?;
            if m.nrows() != n {
                return Err(invalid_input("member matrices differ in size"));
            }
            p_bar += m;
        }
        p_bar /= n_p as f64;
        Ok(Self { p_bar, p_on_bar, n_p, members })
    }

    /// Output row for a chain whose second half of states is ON.
    pub fn output_row(&self) -> RowDVector<f64> {
        crate::chain::output_row(self.p_bar.nrows() / 2, self.n_p as f64 * self.p_on_bar)
    }

    pub fn mean_step(&self, x: &DVector<f64>) -> DVector<f64> {
        self.p_bar.tr_mul(x)
    }

    /// Conditional covariance of `X(t+1)` given `X(t) = x` when the member
    /// parameters are spread over the TCLs uniformly at random.
    ///
    /// Splitting the sum over ordered pairs of TCLs into same-TCL and
    /// distinct-TCL terms gives
    ///
    /// ```text
    /// Cov = [diag(mu) - Pb' D Pb] / n_p
    ///     + [mu mu' - mean_k v_k v_k' + (mean_k P_k' D P_k - Pb' D Pb) / n_p] / (n_p - 1)
    /// ```
    ///
    /// with `D = diag(x)`, `mu = Pb' x`, `v_k = P_k' x`. It reduces to the
    /// homogeneous multinomial covariance when all members coincide.
    pub fn covariance(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let np = self.n_p as f64;
        let mu = self.p_bar.tr_mul(x);
        let pdp = |p: &DMatrix<f64>| {
            let mut w = p.clone();
            for (r, mut row) in w.row_iter_mut().enumerate() {
                row *= x[r];
            }
            p.tr_mul(&w)
        };
        let bar = pdp(&self.p_bar);
        let (vv, mem) = self
            .members
            .par_iter()
            .map(|p| {
                let v = p.tr_mul(x);
                (&v * v.transpose(), pdp(p))
            })
            .reduce(
                || (DMatrix::zeros(n, n), DMatrix::zeros(n, n)),
                |a, b| (a.0 + b.0, a.1 + b.1),
            );
        let k = self.members.len() as f64;
        let vv = vv / k;
        let mem = mem / k;
        let mut cov = -&bar / np;
        for i in 0..n {
            cov[(i, i)] += mu[i] / np;
        }
        cov += (&mu * mu.transpose() - vv + (mem - bar) / np) / (np - 1.0);
        0.5 * (&cov + cov.transpose())
    }

    /// The moment expressions without the same-TCL correction terms. They do
    /// not reduce to the homogeneous case; kept to document the difference.
    pub fn covariance_without_correction(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let np = self.n_p as f64;
        let mu = self.p_bar.tr_mul(x);
        let k = self.members.len() as f64;
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut bar_ij = 0.0;
                let mut mean_prod = 0.0;
                for r in 0..n {
                    bar_ij += x[r] * self.p_bar[(r, i)] * self.p_bar[(r, j)];
                    let mp: f64 = self.members.iter().map(|p| p[(r, i)] * p[(r, j)]).sum::<f64>() / k;
                    mean_prod += x[r] * mp;
                }
                cov[(i, j)] = if i == j {
                    (mu[i] - mean_prod) / np + (mu[i] * mu[i] - bar_ij) / (np - 1.0)
                } else {
                    (mu[i] * mu[j] - bar_ij) / (np - 1.0) - mean_prod / np
                };
            }
        }
        cov
    }

    /// One stochastic step. The exact mode draws a random assignment of
    /// member parameters to TCLs and moves every TCL with its own chain.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: &DVector<f64>, mode: NoiseMode, rng: &mut R) -> Result<DVector<f64>> {
        match mode {
            NoiseMode::MeanOnly => Ok(self.mean_step(x)),
            NoiseMode::Gaussian => {
                let w = sample_zero_sum_gaussian(&self.covariance(x), rng)?;
                Ok(self.mean_step(x) + w)
            }
            NoiseMode::ExactMultinomial => {
                let counts = crate::aggregate::apportion(x, self.n_p);
                let mut order: Vec<usize> = (0..self.members.len()).collect();
                order.shuffle(rng);
                let n = x.len();
                let mut out = DVector::zeros(n);
                let mut next = order.into_iter();
                for (r, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        let p = &self.members[next.next().unwrap()];
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut dest = n - 1;
                        for j in 0..n {
                            acc += p[(r, j)];
                            if u < acc {
                                dest = j;
                                break;
                            }
                        }
                        out[dest] += 1.0;
                    }
                }
                Ok(out / self.n_p as f64)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub representative: f64,
    /// Indices into the spec's value list.
    pub members: Vec<usize>,
    pub chain: MarkovChainModel,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone)]
pub struct ClusteredModel {
    pub clusters: Vec<Cluster>,
    pub n_p: usize,
    /// Largest distance, in the parameter's Lipschitz coordinate, between a
    /// member and its cluster representative.
    pub upsilon_a: f64,
    pub parameter: HeterogeneousParameter,
}

/// Uniform bins over the parameter range. Empty bins are dropped. Each
/// non-empty cluster is represented by the midpoint of its members' span, so
/// a cluster holding a single value is exact.
pub fn build_clustered_model(
    spec: &HeterogeneitySpec,
    part: &TemperaturePartition,
    n_clusters: usize,
) -> Result<ClusteredModel> {
    if n_clusters == 0 {
        return Err(invalid_param("need at least one cluster"));
    }
    if spec.values.is_empty() {
        return Err(invalid_input("empty population"));
    }
    let (lo, hi) = spec.range;
    let width = (hi - lo) / n_clusters as f64;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (k, &v) in spec.values.iter().enumerate() {
        let idx = if width == 0.0 {
            0
        } else {
            // Values on an interior edge fall into the lower bin.
            let t = ((v - lo) / width).ceil() as usize;
            t.saturating_sub(1).min(n_clusters - 1)
        };
        groups[idx].push(k);
    }
    let groups: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    let clusters: Vec<Cluster> = groups
        .into_par_iter()
        .map(|members| {
            let vmin = members.iter().map(|&k| spec.values[k]).fold(f64::INFINITY, f64::min);
            let vmax = members.iter().map(|&k| spec.values[k]).fold(f64::NEG_INFINITY, f64::max);
            let rep = 0.5 * (vmin + vmax);
            let chain = build_chain(part, &spec.member(rep))?;
            Ok(Cluster { representative: rep, members, chain })
        })
        .collect::<Result<_>>()?;
    let coord = |v: f64| spec.parameter.coordinate(&spec.base, v);
    let upsilon_a = clusters
        .iter()
        .flat_map(|c| {
            let r = coord(c.representative);
            c.members.iter().map(move |&k| (coord(spec.values[k]) - r).abs())
        })
        .fold(0.0, f64::max);
    Ok(ClusteredModel { clusters, n_p: spec.n_p(), upsilon_a, parameter: spec.parameter })
}

impl ClusteredModel {
    /// Per-cluster occupancy histograms of a population snapshot.
    pub fn discretize(&self, snap: &PopulationSnapshot) -> Result<Vec<DVector<f64>>> {
        if snap.states.len() != self.n_p {
            return Err(invalid_input("snapshot size differs from the population"));
        }
        self.clusters
            .iter()
            .map(|c| {
                let sub = PopulationSnapshot {
                    states: c.members.iter().map(|&k| snap.states[k]).collect(),
                    time_index: snap.time_index,
                };
                c.chain.discretize(&sub)
            })
            .collect()
    }

    /// Sum of the cluster outputs.
    pub fn output(&self, xs: &[DVector<f64>]) -> f64 {
        self.clusters
            .iter()
            .zip(xs)
            .map(|(c, x)| (c.chain.output_row(c.size() as f64) * x)[(0, 0)])
            .sum()
    }

    /// Expected total power for `t = 0..=steps`.
    pub fn mean_power(&self, x0: &[DVector<f64>], steps: usize) -> Vec<f64> {
        let mut xs: Vec<DVector<f64>> = x0.to_vec();
        let mut out = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            out.push(self.output(&xs));
            for (x, c) in xs.iter_mut().zip(&self.clusters) {
                *x = c.chain.p.tr_mul(x);
            }
        }
        out
    }

    /// Size-weighted mean ON power of the representatives.
    pub fn mean_p_on(&self) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.size() as f64 * c.chain.params.p_on())
            .sum::<f64>()
            / self.n_p as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzMode {
    Empirical,
    ClosedFormCapacitance,
}

/// Lipschitz constant of `alpha -> P_alpha` in the infinity norm, measured in
/// the parameter's coordinate (the decay factor for capacitance).
pub fn lipschitz_constant(spec: &HeterogeneitySpec, part: &TemperaturePartition, mode: LipschitzMode) -> Result<f64> {
    match mode {
        LipschitzMode::ClosedFormCapacitance => {
            if spec.parameter != HeterogeneousParameter::Capacitance {
                return Err(invalid_param("closed form applies only to capacitance heterogeneity"));
            }
            let p = &spec.base;
            if p.sigma <= 0.0 {
                return Err(invalid_param("closed form needs sigma > 0"));
            }
            Ok((part.truncated_width() + lambda_constant(p)) * INV_SQRT_2PI / p.sigma)
        }
        LipschitzMode::Empirical => {
            let mut vals = spec.values.clone();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            if vals.len() < 2 {
                return Ok(0.0);
            }
            let marg_base = &spec.base;
            let mats: Vec<DMatrix<f64>> = vals
                .par_iter()
                .map(|&v| {
                    let m = spec.member(v);
                    let g = gaussian_marginals(part, &m)?;
                    Ok(assemble_transition(&g, part, &m, marg_base.theta_s))
                })
                .collect::<Result<_>>()?;
            // For a scalar parameter the largest slope over adjacent sorted
            // pairs equals the largest slope over all pairs (triangle inequality).
            let mut h = 0.0f64;
            for w in 0..vals.len() - 1 {
                let d = (spec.parameter.coordinate(marg_base, vals[w + 1])
                    - spec.parameter.coordinate(marg_base, vals[w]))
                .abs();
                if d == 0.0 {
                    continue;
                }
                let diff = &mats[w + 1] - &mats[w];
                let norm = diff
                    .row_iter()
                    .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                h = h.max(norm / d);
            }
            if !h.is_finite() {
                return Err(Error::Numerical("non-finite Lipschitz estimate".into()));
            }
            Ok(h)
        }
    }
}
