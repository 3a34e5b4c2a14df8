use nalgebra::{DMatrix, RowDVector};
use rayon::prelude::*;

use crate::chain::{assemble_transition, check_row_stochastic, gaussian_marginals, output_row};
use crate::error::{invalid_param, Result};
use crate::heterogeneity::HeterogeneitySpec;
use crate::params::TclParams;
use crate::partition::TemperaturePartition;

/// Transition matrices for every admissible grid set-point.
///
/// The temperature grid is shared; moving the set-point only changes which
/// bins switch mode.
#[derive(Debug, Clone)]
pub struct SwitchedControlModel {
    /// `F_sigma = P(theta_sigma)^T`, indexed like `setpoints`.
    pub f: Vec<DMatrix<f64>>,
    /// Set-points `theta_{-l} ..= theta_l`.
    pub setpoints: Vec<f64>,
    pub nominal: usize,
    pub h: RowDVector<f64>,
    /// `H F_sigma`, cached for one-step prediction.
    pub h_f: Vec<RowDVector<f64>>,
    pub n_p: usize,
    /// Temperature grid of the family; absent for families built from raw matrices.
    pub partition: Option<TemperaturePartition>,
}

fn setpoint_grid(part: &TemperaturePartition) -> Result<Vec<f64>> {
    let l = part.l as i64;
    if 2 * part.l > part.m {
        return Err(invalid_param(format!(
            "with l = {} and m = {} the extreme set-points move the dead-band outside the partition; need m >= 2l",
            part.l, part.m
        )));
    }
    Ok((-l..=l).map(|k| part.boundary(k)).collect())
}

fn finish(
    f: Vec<DMatrix<f64>>,
    setpoints: Vec<f64>,
    h: RowDVector<f64>,
    n_p: usize,
    part: &TemperaturePartition,
) -> Result<SwitchedControlModel> {
    let mut m = SwitchedControlModel::from_matrices(f, setpoints, part.l, h, n_p)?;
    m.partition = Some(part.clone());
    Ok(m)
}

pub fn build_switched_family(
    params: &TclParams,
    part: &TemperaturePartition,
    n_p: usize,
) -> Result<SwitchedControlModel> {
    let setpoints = setpoint_grid(part)?;
    let marg = gaussian_marginals(part, params)?;
    let f = setpoints
        .iter()
        .map(|&s| assemble_transition(&marg, part, params, s).transpose())
        .collect();
    finish(f, setpoints, output_row(part.n_bins(), n_p as f64 * params.p_on()), n_p, part)
}

/// Family for a heterogeneous population using the averaged member chains.
pub fn build_switched_family_averaged(
    spec: &HeterogeneitySpec,
    part: &TemperaturePartition,
) -> Result<SwitchedControlModel> {
    let setpoints = setpoint_grid(part)?;
    let n = part.n_states();
    let k = spec.n_p() as f64;
    let sums = spec
        .values
        .par_iter()
        .map(|&v| -> Result<Vec<DMatrix<f64>>> {
            let m = spec.member(v);
            let marg = gaussian_marginals(part, &m)?;
            Ok(setpoints.iter().map(|&s| assemble_transition(&marg, part, &m, s)).collect())
        })
        .try_reduce(
            || vec![DMatrix::zeros(n, n); setpoints.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    let f = sums.into_iter().map(|p| (p / k).transpose()).collect();
    let h = output_row(part.n_bins(), spec.n_p() as f64 * spec.mean_p_on());
    finish(f, setpoints, h, spec.n_p(), part)
}

impl SwitchedControlModel {
    /// Family from explicit `F_sigma = P_sigma^T` matrices.
    pub fn from_matrices(
        f: Vec<DMatrix<f64>>,
        setpoints: Vec<f64>,
        nominal: usize,
        h: RowDVector<f64>,
        n_p: usize,
    ) -> Result<Self> {
        if f.is_empty() || f.len() != setpoints.len() || nominal >= f.len() {
            return Err(invalid_param("family, set-points and nominal index are inconsistent"));
        }
        if n_p == 0 {
            return Err(invalid_param("population size must be positive"));
        }
        let n = h.len();
        for fk in &f {
            if fk.nrows() != n || fk.ncols() != n {
                return Err(invalid_param("family members must share the output dimension"));
            }
            check_row_stochastic(&fk.transpose(), 1e-9)?;
        }
        let h_f = f.iter().map(|fk| &h * fk).collect();
        Ok(Self { f, setpoints, nominal, h, h_f, n_p, partition: None })
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Row-stochastic matrix for set-point `k`.
    pub fn p(&self, k: usize) -> DMatrix<f64> {
        self.f[k].transpose()
    }
}

/// Grid steps allowed per move for a set-point rate bound in degrees per step.
pub fn rate_limit_steps(max_change: f64, upsilon: f64) -> usize {
    // Guard against 0.025 / 0.025 landing a hair above 1.
    ((max_change / upsilon) - 1e-9).ceil().max(0.0) as usize
}
