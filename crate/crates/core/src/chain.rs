//! Finite Markov chain abstraction of a single TCL.

use std::io::{BufRead, Write};

use log::warn;
use nalgebra::{DMatrix, DVector, RowDVector};

use crate::baseline::BaselineGrid;
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::gauss;
use crate::params::{Mode, TclParams};
use crate::partition::{build_partition, TemperaturePartition};
use crate::tcl::PopulationSnapshot;

/// Row-sum defect above which rows are renormalised (with a warning).
pub const ROW_RENORM_TOL: f64 = 1e-12;
/// Row-sum defect above which construction fails.
pub const ROW_FAIL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ChainKind {
    /// Gaussian-kernel abstraction over a [`TemperaturePartition`].
    Formal(TemperaturePartition),
    /// Noise-free dead-band discretisation used for comparison.
    Baseline(BaselineGrid),
}

#[derive(Debug, Clone)]
pub struct MarkovChainModel {
    /// Row-stochastic transition matrix, rows indexed by the current state.
    pub p: DMatrix<f64>,
    pub params: TclParams,
    pub kind: ChainKind,
}

/// One-step temperature kernel per mode: entry `(i, j)` is the probability
/// that a TCL at the representative of bin `i` lands in bin `j`.
/// Independent of the set-point, so it can be shared across a switched family.
#[derive(Debug, Clone)]
pub struct GaussianMarginals {
    pub by_mode: [DMatrix<f64>; 2],
}

pub fn gaussian_marginals(part: &TemperaturePartition, params: &TclParams) -> Result<GaussianMarginals> {
    params.validate()?;
    if params.sigma == 0.0 {
        return Err(invalid_param(
            "sigma = 0 gives a degenerate kernel; use the deterministic baseline instead",
        ));
    }
    let n = part.n_bins();
    let nb = part.boundaries.len();
    let sd = params.sigma;
    let mut by_mode = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    let mut z = vec![0.0; nb];
    let mut lo_tail = vec![0.0; nb];
    let mut hi_tail = vec![0.0; nb];
    for mode in [Mode::Off, Mode::On] {
        let mat = &mut by_mode[mode.index()];
        for i in 1..n - 1 {
            let mu = params.mean_next(mode, part.representatives[i]);
            for k in 0..nb {
                z[k] = (part.boundaries[k] - mu) / sd;
                lo_tail[k] = gauss::cdf(z[k]);
                hi_tail[k] = gauss::sf(z[k]);
            }
            let mut sum = 0.0;
            for j in 0..n {
                let v = if j == 0 {
                    lo_tail[0]
                } else if j == n - 1 {
                    hi_tail[nb - 1]
                } else if z[j - 1] >= 0.0 {
                    hi_tail[j - 1] - hi_tail[j]
                } else if z[j] <= 0.0 {
                    lo_tail[j] - lo_tail[j - 1]
                } else {
                    1.0 - lo_tail[j - 1] - hi_tail[j]
                };
                let v = v.max(0.0);
                mat[(i, j)] = v;
                sum += v;
            }
            let defect = (sum - 1.0).abs();
            if defect > ROW_FAIL_TOL {
                return Err(Error::Numerical(format!(
                    "kernel row ({mode:?}, {i}) sums to {sum}"
                )));
            }
            if defect > ROW_RENORM_TOL {
                warn!("renormalising kernel row ({mode:?}, {i}); defect {defect:e}");
                for j in 0..n {
                    mat[(i, j)] /= sum;
                }
            }
        }
    }
    Ok(GaussianMarginals { by_mode })
}

/// Transition matrix for the thermostat centred on `theta_s`, reusing precomputed marginals.
pub fn assemble_transition(
    marginals: &GaussianMarginals,
    part: &TemperaturePartition,
    params: &TclParams,
    theta_s: f64,
) -> DMatrix<f64> {
    let n = part.n_bins();
    let thermostat = params.with_setpoint(theta_s);
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    for mode in [Mode::Off, Mode::On] {
        let marg = &marginals.by_mode[mode.index()];
        for i in 0..n {
            let row = part.state_index(mode, i);
            if part.is_absorbing(i) {
                p[(row, row)] = 1.0;
                continue;
            }
            let next = thermostat.switch(mode, part.representatives[i]);
            let off = next.index() * n;
            for j in 0..n {
                p[(row, off + j)] = marg[(i, j)];
            }
        }
    }
    p
}

pub fn build_chain(part: &TemperaturePartition, params: &TclParams) -> Result<MarkovChainModel> {
    if (part.theta_s - params.theta_s).abs() > 1e-12 {
        return Err(invalid_input(format!(
            "partition centred on {} but parameters use set-point {}",
            part.theta_s, params.theta_s
        )));
    }
    let marg = gaussian_marginals(part, params)?;
    let p = assemble_transition(&marg, part, params, params.theta_s);
    Ok(MarkovChainModel { p, params: *params, kind: ChainKind::Formal(part.clone()) })
}

impl MarkovChainModel {
    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }

    /// Bins per mode.
    pub fn n_bins(&self) -> usize {
        self.n_states() / 2
    }

    pub fn partition(&self) -> Option<&TemperaturePartition> {
        match &self.kind {
            ChainKind::Formal(p) => Some(p),
            ChainKind::Baseline(_) => None,
        }
    }

    /// Output row mapping an occupancy vector to aggregate power for `n_p` TCLs.
    pub fn output_row(&self, n_p: f64) -> RowDVector<f64> {
        output_row(self.n_bins(), n_p * self.params.p_on())
    }

    /// Occupancy histogram of a population snapshot.
    pub fn discretize(&self, snap: &PopulationSnapshot) -> Result<DVector<f64>> {
        if snap.states.is_empty() {
            return Err(invalid_input("cannot discretise an empty population"));
        }
        let n = self.n_bins();
        let mut x = DVector::zeros(2 * n);
        for s in &snap.states {
            let bin = match &self.kind {
                ChainKind::Formal(part) => part.bin_of(s.theta),
                ChainKind::Baseline(g) => g.bin_of(s.theta),
            };
            x[s.mode.index() * n + bin] += 1.0;
        }
        x /= snap.states.len() as f64;
        Ok(x)
    }

    pub fn check_row_stochastic(&self, tol: f64) -> Result<()> {
        check_row_stochastic(&self.p, tol)
    }

    /// Verifies the sparsity pattern implied by the thermostat rule: every
    /// interior row puts all its mass in the block of the mode selected by the
    /// representative temperature, and absorbing rows are unit self-loops.
    pub fn check_structure(&self) -> Result<()> {
        let part = match &self.kind {
            ChainKind::Formal(p) => p,
            ChainKind::Baseline(_) => return Ok(()),
        };
        let n = part.n_bins();
        for row in 0..2 * n {
            let (mode, i) = part.state_of(row);
            if part.is_absorbing(i) {
                for col in 0..2 * n {
                    let want = if col == row { 1.0 } else { 0.0 };
                    if self.p[(row, col)] != want {
                        return Err(Error::Numerical(format!("absorbing row {row} is not a self-loop")));
                    }
                }
                continue;
            }
            let next = self.params.switch(mode, part.representatives[i]);
            for col in 0..2 * n {
                if part.state_of(col).0 != next && self.p[(row, col)] != 0.0 {
                    return Err(Error::Numerical(format!(
                        "row {row} leaks mass into the {:?} block",
                        part.state_of(col).0
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the matrix with a commented header; values use the shortest
    /// representation that parses back to the same bits.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.n_bins();
        writeln!(w, "# tclpop transition matrix")?;
        match &self.kind {
            ChainKind::Formal(part) => {
                writeln!(w, "# kind: formal")?;
                writeln!(w, "# n: {n}")?;
                writeln!(w, "# l: {}", part.l)?;
                writeln!(w, "# m: {}", part.m)?;
            }
            ChainKind::Baseline(g) => {
                writeln!(w, "# kind: baseline")?;
                writeln!(w, "# n: {n}")?;
                writeln!(w, "# rule: {}", g.rule.name())?;
            }
        }
        writeln!(w, "# params_sha256: {}", self.params.hash_hex())?;
        let mut line = String::new();
        for r in 0..self.p.nrows() {
            line.clear();
            for c in 0..self.p.ncols() {
                if c > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{:e}", self.p[(r, c)]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a matrix written by [`write_to`](Self::write_to). The parameter
    /// hash in the header must match `params`.
    pub fn read_from(r: impl BufRead, params: &TclParams) -> Result<Self> {
        let mut header = std::collections::BTreeMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let row = t
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("line {}: bad number {tok:?}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("missing header field {k:?}")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("header field {k:?} is not an integer")))
        };
        let hash = get("params_sha256")?;
        if hash != params.hash_hex() {
            return Err(invalid_input("matrix file was generated with different TCL parameters"));
        }
        let n = parse_usize("n")?;
        let kind = match get("kind")?.as_str() {
            "formal" => {
                let part = build_partition(params, parse_usize("l")?, parse_usize("m")?)?;
                if part.n_bins() != n {
                    return Err(Error::Parse(format!("n = {n} inconsistent with l and m")));
                }
                ChainKind::Formal(part)
            }
            "baseline" => {
                let rule = crate::baseline::BaselineRule::from_name(&get("rule")?)
                    .ok_or_else(|| Error::Parse("unknown baseline rule".into()))?;
                ChainKind::Baseline(BaselineGrid::new(params, n, rule)?)
            }
            other => return Err(Error::Parse(format!("unknown chain kind {other:?}"))),
        };
        if rows.len() != 2 * n || rows.iter().any(|r| r.len() != 2 * n) {
            return Err(Error::Parse(format!("expected a {0}x{0} matrix", 2 * n)));
        }
        let p = DMatrix::from_fn(2 * n, 2 * n, |i, j| rows[i][j]);
        check_row_stochastic(&p, ROW_FAIL_TOL)?;
        Ok(Self { p, params: *params, kind })
    }
}

/// `[0_n, scale * 1_n]`: power drawn by the ON block.
pub fn output_row(n_bins: usize, scale: f64) -> RowDVector<f64> {
    RowDVector::from_fn(2 * n_bins, |_, j| if j >= n_bins { scale } else { 0.0 })
}

pub fn check_row_stochastic(p: &DMatrix<f64>, tol: f64) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(invalid_input("transition matrix must be square"));
    }
    for r in 0..p.nrows() {
        let row = p.row(r);
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Numerical(format!("row {r} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Numerical(format!("row {r} sums to {s}")));
        }
    }
    Ok(())
}
