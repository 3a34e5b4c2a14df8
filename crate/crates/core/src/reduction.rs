//! Linear state-space form of the aggregate mean dynamics and balanced truncation.
//!
//! The occupancy vector always sums to one, so one state is redundant.
//! Eliminating the last state turns `X(t+1) = P^T X(t)`, `y = h X` into
//! `x(t+1) = A x(t) + B u`, `y = C x + D u` driven by a unit step `u = 1`.

use log::debug;
use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};

use crate::error::{invalid_input, Error, Result};

#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    /// Maps a full occupancy vector to this model's state.
    pub projection: DMatrix<f64>,
    /// Hankel singular values of the model this one was truncated from;
    /// empty for an untruncated model.
    pub hankel_singular_values: Vec<f64>,
}

/// Exact state elimination: drops the last occupancy entry.
pub fn eliminate_state(p: &DMatrix<f64>, h: &RowDVector<f64>) -> Result<ReducedModel> {
    let n = p.nrows();
    if n < 2 || p.ncols() != n || h.len() != n {
        return Err(invalid_input("need a square transition matrix with at least two states"));
    }
    let k = n - 1;
    let last = p.row(k);
    let a = DMatrix::from_fn(k, k, |i, j| p[(j, i)] - last[i]);
    let b = DVector::from_fn(k, |i, _| last[i]);
    let hn = h[k];
    let c = RowDVector::from_fn(k, |_, j| h[j] - hn);
    let mut projection = DMatrix::zeros(k, n);
    for i in 0..k {
        projection[(i, i)] = 1.0;
    }
    Ok(ReducedModel { a, b, c, d: hn, projection, hankel_singular_values: Vec::new() })
}

/// Sub-chain on a subset of states with rows renormalised.
#[derive(Debug, Clone)]
pub struct RestrictedChain {
    pub p: DMatrix<f64>,
    pub keep: Vec<usize>,
    /// Largest probability mass any kept row sent outside the subset.
    pub max_leak: f64,
}

impl RestrictedChain {
    pub fn new(p: &DMatrix<f64>, keep: Vec<usize>) -> Result<Self> {
        if keep.is_empty() {
            return Err(invalid_input("no states kept"));
        }
        let k = keep.len();
        let mut sub = DMatrix::from_fn(k, k, |i, j| p[(keep[i], keep[j])]);
        let mut max_leak = 0.0f64;
        for i in 0..k {
            let s: f64 = sub.row(i).sum();
            if s <= 0.0 {
                return Err(Error::Numerical(format!("state {} leaves the subset surely", keep[i])));
            }
            max_leak = max_leak.max(1.0 - s);
            let mut row = sub.row_mut(i);
            row /= s;
        }
        Ok(Self { p: sub, keep, max_leak })
    }

    pub fn restrict_vector(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = DVector::from_fn(self.keep.len(), |i, _| x[self.keep[i]]);
        let s = v.sum();
        if s > 0.0 {
            v / s
        } else {
            v
        }
    }

    pub fn restrict_row(&self, h: &RowDVector<f64>) -> RowDVector<f64> {
        RowDVector::from_fn(self.keep.len(), |_, j| h[self.keep[j]])
    }
}

impl ReducedModel {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn initial_state(&self, x_full: &DVector<f64>) -> DVector<f64> {
        &self.projection * x_full
    }

    /// Output for `t = 0..=steps` under the unit step input.
    pub fn simulate(&self, z0: &DVector<f64>, steps: usize) -> Vec<f64> {
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            out.push(self.c.dot(&z.transpose()) + self.d);
            z = &self.a * &z + &self.b;
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a.complex_eigenvalues().iter().fold(0.0, |m, l| m.max(l.norm()))
    }

    /// Balanced truncation to order `k` (square-root method).
    pub fn truncate(&self, k: usize) -> Result<ReducedModel> {
        let n = self.order();
        if k == 0 || k > n {
            return Err(invalid_input(format!("order {k} outside 1..={n}")));
        }
        let rho = self.spectral_radius();
        if rho >= 1.0 - 1e-12 {
            return Err(Error::Numerical(format!(
                "A has spectral radius {rho}; balanced truncation needs a stable system \
                 (restrict the chain to its interior states first)"
            )));
        }
        let bb = &self.b * self.b.transpose();
        let cc = self.c.transpose() * &self.c;
        let wc = stein_solve(&self.a, &bb)?;
        let wo = stein_solve(&self.a.transpose(), &cc)?;
        let lc = psd_factor(&wc);
        let lo = psd_factor(&wo);
        let svd = (lo.transpose() * &lc).svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let hsv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let floor = hsv[0] * 1e-13;
        if hsv[k - 1] <= floor {
            return Err(invalid_input(format!(
                "order {k} exceeds the numerical rank of the Hankel operator"
            )));
        }
        let mut t = DMatrix::zeros(n, k);
        let mut ti = DMatrix::zeros(k, n);
        for (col, &i) in order.iter().take(k).enumerate() {
            let s = svd.singular_values[i].sqrt();
            t.set_column(col, &(&lc * vt.row(i).transpose() / s));
            ti.set_row(col, &((lo.clone() * u.column(i)).transpose() / s));
        }
        debug!("balanced truncation {n} -> {k}; tail sum {:e}", hsv[k..].iter().sum::<f64>());
        Ok(ReducedModel {
            a: &ti * &self.a * &t,
            b: &ti * &self.b,
            c: &self.c * &t,
            d: self.d,
            projection: &ti * &self.projection,
            hankel_singular_values: hsv,
        })
    }

    /// `2 * sum` of the discarded Hankel singular values.
    pub fn truncation_bound(&self) -> Option<f64> {
        if self.hankel_singular_values.is_empty() {
            return None;
        }
        Some(2.0 * self.hankel_singular_values[self.order()..].iter().sum::<f64>())
    }
}

/// Solves `X = A X A^T + Q` by doubling.
fn stein_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        x += &ak * &x * ak.transpose();
        ak = &ak * &ak;
        if ak.norm() < 1e-15 * (1.0 + x.norm()) {
            return Ok(0.5 * (&x + x.transpose()));
        }
    }
    Err(Error::Numerical("gramian iteration did not converge".into()))
}

/// `L` with `L L^T = W` for symmetric PSD `W`, clamping round-off negatives.
fn psd_factor(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w.clone());
    let mut l = eig.eigenvectors;
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        let mut col = l.column_mut(j);
        col *= s;
    }
    l
}
