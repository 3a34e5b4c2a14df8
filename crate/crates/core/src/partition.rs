//! Uniform temperature partition around the set-point.
//!
//! `2m+1` boundaries spaced `upsilon = delta / (2l)` apart give `2m+2` bins:
//! two unbounded absorbing bins at either end and `2m` interior bins.
//! The dead-band edges sit exactly on boundaries `m-l` and `m+l`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::params::{Mode, TclParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePartition {
    pub l: usize,
    pub m: usize,
    pub theta_s: f64,
    pub upsilon: f64,
    /// `theta_{-m} ..= theta_m`
    pub boundaries: Vec<f64>,
    pub representatives: Vec<f64>,
}

pub fn build_partition(params: &TclParams, l: usize, m: usize) -> Result<TemperaturePartition> {
    params.validate()?;
    if l == 0 {
        return Err(invalid_param("l must be at least 1"));
    }
    if m <= l {
        return Err(invalid_param(format!("m = {m} must exceed l = {l}")));
    }
    let upsilon = params.delta / (2.0 * l as f64);
    let mut boundaries: Vec<f64> = (0..=2 * m)
        .map(|k| params.theta_s + (k as f64 - m as f64) * upsilon)
        .collect();
    // Pin the dead-band edges so they compare equal to the thermostat thresholds.
    boundaries[m - l] = params.theta_minus();
    boundaries[m + l] = params.theta_plus();
    boundaries[m] = params.theta_s;

    let n = 2 * m + 2;
    let mut representatives = Vec::with_capacity(n);
    representatives.push(boundaries[0] - 0.5 * upsilon);
    for w in boundaries.windows(2) {
        representatives.push(0.5 * (w[0] + w[1]));
    }
    representatives.push(boundaries[2 * m] + 0.5 * upsilon);

    Ok(TemperaturePartition { l, m, theta_s: params.theta_s, upsilon, boundaries, representatives })
}

impl TemperaturePartition {
    /// Bins per mode.
    pub fn n_bins(&self) -> usize {
        2 * self.m + 2
    }

    /// Total states over both modes.
    pub fn n_states(&self) -> usize {
        2 * self.n_bins()
    }

    /// Width of the bounded region, `2 m upsilon`.
    pub fn truncated_width(&self) -> f64 {
        2.0 * self.m as f64 * self.upsilon
    }

    pub fn lower(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn upper(&self) -> f64 {
        self.boundaries[2 * self.m]
    }

    /// Boundary `theta_k` for `k` in `-m..=m`.
    pub fn boundary(&self, k: i64) -> f64 {
        self.boundaries[(k + self.m as i64) as usize]
    }

    pub fn is_absorbing(&self, bin: usize) -> bool {
        bin == 0 || bin == self.n_bins() - 1
    }

    /// Bin containing `theta`; interior bins are closed on the left.
    pub fn bin_of(&self, theta: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= theta)
    }

    /// Half-open interval `[lo, hi)` of a bin, with infinite ends for the absorbing bins.
    pub fn bin_interval(&self, bin: usize) -> (f64, f64) {
        let n = self.n_bins();
        let lo = if bin == 0 { f64::NEG_INFINITY } else { self.boundaries[bin - 1] };
        let hi = if bin == n - 1 { f64::INFINITY } else { self.boundaries[bin] };
        (lo, hi)
    }

    pub fn state_index(&self, mode: Mode, bin: usize) -> usize {
        mode.index() * self.n_bins() + bin
    }

    pub fn state_of(&self, index: usize) -> (Mode, usize) {
        let n = self.n_bins();
        (Mode::from_index(index / n), index % n)
    }

    pub fn is_absorbing_state(&self, index: usize) -> bool {
        self.is_absorbing(index % self.n_bins())
    }
}
