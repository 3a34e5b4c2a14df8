//! Noise-free dead-band discretisation used as a comparison model.
//!
//! Each mode gets `n_d` equal bins spanning `[theta_-, theta_+]`. Mass that
//! the drift carries past a dead-band edge reappears in the nearest bin of the
//! mode the thermostat would select there.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainKind, MarkovChainModel};
use crate::error::{invalid_input, invalid_param, Result};
use crate::params::{Mode, TclParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineRule {
    /// Each bin is collapsed to its midpoint, which moves as a point mass.
    /// With drift much smaller than the bin width every row is a self-loop.
    PointMass,
    /// Mass is spread uniformly over the bin and the image interval is split
    /// across destination bins by overlap.
    UniformBin,
}

impl BaselineRule {
    pub fn name(self) -> &'static str {
        match self {
            BaselineRule::PointMass => "point-mass",
            BaselineRule::UniformBin => "uniform-bin",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "point-mass" => Some(BaselineRule::PointMass),
            "uniform-bin" => Some(BaselineRule::UniformBin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGrid {
    pub n_d: usize,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub rule: BaselineRule,
}

impl BaselineGrid {
    pub fn new(params: &TclParams, n_d: usize, rule: BaselineRule) -> Result<Self> {
        if n_d == 0 {
            return Err(invalid_param("baseline needs at least one bin per mode"));
        }
        let lower = params.theta_minus();
        let upper = params.theta_plus();
        Ok(Self { n_d, lower, upper, width: (upper - lower) / n_d as f64, rule })
    }

    /// Bin of `theta`, clamping temperatures outside the dead-band to the end bins.
    pub fn bin_of(&self, theta: f64) -> usize {
        if theta < self.lower {
            return 0;
        }
        (((theta - self.lower) / self.width).floor() as usize).min(self.n_d - 1)
    }

    fn edge(&self, k: usize) -> f64 {
        if k == self.n_d {
            self.upper
        } else {
            self.lower + k as f64 * self.width
        }
    }
}

pub fn build_baseline(params: &TclParams, n_d: usize, rule: BaselineRule) -> Result<MarkovChainModel> {
    params.validate()?;
    let grid = BaselineGrid::new(params, n_d, rule)?;
    let p = baseline_matrix(params, &grid);
    Ok(MarkovChainModel { p, params: *params, kind: ChainKind::Baseline(grid) })
}

/// Baseline averaged over a heterogeneous population. All members must share
/// the dead-band. Returns the model (carrying the first member's parameters)
/// and the mean ON power.
pub fn build_baseline_averaged(
    members: &[TclParams],
    n_d: usize,
    rule: BaselineRule,
) -> Result<(MarkovChainModel, f64)> {
    let first = members.first().ok_or_else(|| invalid_input("no members"))?;
    let grid = BaselineGrid::new(first, n_d, rule)?;
    let mut p = DMatrix::zeros(2 * n_d, 2 * n_d);
    for m in members {
        m.validate()?;
        if m.theta_minus() != first.theta_minus() || m.theta_plus() != first.theta_plus() {
            return Err(invalid_input("members must share the dead-band"));
        }
        p += baseline_matrix(m, &grid);
    }
    let k = members.len() as f64;
    p /= k;
    let p_on = members.iter().map(|m| m.p_on()).sum::<f64>() / k;
    Ok((MarkovChainModel { p, params: *first, kind: ChainKind::Baseline(grid) }, p_on))
}

fn baseline_matrix(params: &TclParams, g: &BaselineGrid) -> DMatrix<f64> {
    let n = g.n_d;
    let a = params.decay();
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    let top_on = n + n - 1;
    let bottom_off = 0;
    for mode in [Mode::Off, Mode::On] {
        let shift = (1.0 - a) * (params.theta_a - mode.as_f64() * params.r * params.p_rate);
        for i in 0..n {
            let row = mode.index() * n + i;
            match g.rule {
                BaselineRule::PointMass => {
                    let mid = 0.5 * (g.edge(i) + g.edge(i + 1));
                    let y = a * mid + shift;
                    let col = if y > g.upper {
                        top_on
                    } else if y < g.lower {
                        bottom_off
                    } else {
                        mode.index() * n + g.bin_of(y)
                    };
                    p[(row, col)] = 1.0;
                }
                BaselineRule::UniformBin => {
                    let lo = a * g.edge(i) + shift;
                    let hi = a * g.edge(i + 1) + shift;
                    let len = hi - lo;
                    let overlap = |x0: f64, x1: f64| (hi.min(x1) - lo.max(x0)).max(0.0) / len;
                    let above = overlap(g.upper, f64::INFINITY);
                    let below = overlap(f64::NEG_INFINITY, g.lower);
                    p[(row, top_on)] += above;
                    p[(row, bottom_off)] += below;
                    let mut inside = 0.0;
                    for j in 0..n {
                        let w = overlap(g.edge(j), g.edge(j + 1));
                        p[(row, mode.index() * n + j)] += w;
                        inside += w;
                    }
                    // Absorb the rounding residue in the largest entry of the row.
                    let total = above + below + inside;
                    let (jmax, _) = p
                        .row(row)
                        .iter()
                        .enumerate()
                        .fold((0, f64::MIN), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
                    p[(row, jmax)] += 1.0 - total;
                }
            }
        }
    }
    p
}
