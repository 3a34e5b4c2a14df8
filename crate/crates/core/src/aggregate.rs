//! Population-level occupancy dynamics `X(t+1) = P^T X(t) + W(t)`.

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

/// Occupancy vector over chain states; non-negative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateState(pub DVector<f64>);

impl AggregateState {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        if x.iter().any(|&v| !(v >= -1e-12) || !v.is_finite()) {
            return Err(invalid_input("occupancy has a negative or non-finite entry"));
        }
        let s = x.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid_input(format!("occupancy sums to {s}")));
        }
        Ok(Self(x))
    }

    /// All mass on one state.
    pub fn point(n: usize, index: usize) -> Self {
        let mut x = DVector::zeros(n);
        x[index] = 1.0;
        Self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    MeanOnly,
    Gaussian,
    ExactMultinomial,
}

impl NoiseMode {
    /// Gaussian approximation for large populations, exact sampling otherwise.
    pub fn default_for(n_p: usize) -> Self {
        if n_p >= 1000 {
            NoiseMode::Gaussian
        } else {
            NoiseMode::ExactMultinomial
        }
    }
}

/// Conditional covariance of `X(t+1)` given `X(t) = x`:
/// `(diag(P^T x) - P^T diag(x) P) / n_p`. Rows and columns sum to zero.
pub fn noise_covariance(x: &DVector<f64>, p: &DMatrix<f64>, n_p: f64) -> DMatrix<f64> {
    let mean = p.tr_mul(x);
    let mut weighted = p.clone();
    for (r, mut row) in weighted.row_iter_mut().enumerate() {
        row *= x[r];
    }
    let mut s = -(p.tr_mul(&weighted));
    for i in 0..mean.len() {
        s[(i, i)] += mean[i];
    }
    s /= n_p;
    s
}

/// `R(C, D) = C^{o2} D - (C D)^{o2}` for a row vector `C`.
pub fn r_operator(c: &RowDVector<f64>, d: &DMatrix<f64>) -> RowDVector<f64> {
    let c2 = c.map(|v| v * v);
    let cd = c * d;
    c2 * d - cd.map(|v| v * v)
}

/// Both sides of the quadratic-form identity
/// `nu^T Sigma(x) nu = R(nu^T, P^T) x / n_p`, returned as `(lhs, rhs)`.
pub fn quadratic_form_identity(
    nu: &DVector<f64>,
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    n_p: f64,
) -> (f64, f64) {
    let sigma = noise_covariance(x, p, n_p);
    let lhs = (nu.transpose() * &sigma * nu)[(0, 0)];
    let rhs = (r_operator(&nu.transpose(), &p.transpose()) * x)[(0, 0)] / n_p;
    (lhs, rhs)
}

pub fn mean_step(x: &DVector<f64>, p: &DMatrix<f64>) -> DVector<f64> {
    p.tr_mul(x)
}

/// Expected occupancy for `t = 0..=steps`.
pub fn mean_trajectory(x0: &DVector<f64>, p: &DMatrix<f64>, steps: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for _ in 0..steps {
        let next = p.tr_mul(out.last().unwrap());
        out.push(next);
    }
    out
}

/// One stochastic step of the aggregate model.
pub fn aggregate_step<R: Rng + ?Sized>(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    n_p: usize,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.len() != p.nrows() {
        return Err(invalid_input("state and transition matrix sizes differ"));
    }
    if n_p == 0 {
        return Err(invalid_input("population size must be positive"));
    }
    match mode {
        NoiseMode::MeanOnly => Ok(p.tr_mul(x)),
        NoiseMode::Gaussian => {
            let cov = noise_covariance(x, p, n_p as f64);
            let w = sample_zero_sum_gaussian(&cov, rng)?;
            Ok(p.tr_mul(x) + w)
        }
        NoiseMode::ExactMultinomial => multinomial_step(x, p, n_p, rng),
    }
}

/// Draws from `N(0, cov)` where `cov` is PSD up to round-off with zero row sums.
/// Negative eigenvalues are clamped and the draw is projected back onto the
/// zero-sum subspace.
pub fn sample_zero_sum_gaussian<R: Rng + ?Sized>(cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if min < -1e-8 * scale.max(1e-300) {
        return Err(Error::Numerical(format!(
            "noise covariance has eigenvalue {min:e}, not positive semidefinite"
        )));
    }
    let z = DVector::from_fn(n, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    let scaled = DVector::from_fn(n, |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    let mut w = &eig.eigenvectors * scaled;
    let mean = w.sum() / n as f64;
    w.add_scalar_mut(-mean);
    Ok(w)
}

/// Integer counts summing to `n_p` that best approximate `n_p * x`
/// (largest-remainder apportionment).
pub fn apportion(x: &DVector<f64>, n_p: usize) -> Vec<u64> {
    let target: Vec<f64> = x.iter().map(|&v| v.max(0.0) * n_p as f64).collect();
    let mut counts: Vec<u64> = target.iter().map(|t| t.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut rem: Vec<(usize, f64)> = target.iter().enumerate().map(|(i, t)| (i, t - t.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_p = n_p as u64;
    if assigned < n_p {
        for &(i, _) in rem.iter().take((n_p - assigned) as usize) {
            counts[i] += 1;
        }
    } else if assigned > n_p {
        let mut excess = assigned - n_p;
        for &(i, _) in rem.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

fn multinomial_step<R: Rng + ?Sized>(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    n_p: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = x.len();
    let counts = apportion(x, n_p);
    let mut out = DVector::zeros(n);
    for (r, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let mut left = c;
        let mut mass_left = 1.0;
        for j in 0..n {
            if left == 0 {
                break;
            }
            let pj = p[(r, j)];
            if pj <= 0.0 {
                continue;
            }
            let q = if mass_left <= 0.0 { 1.0 } else { (pj / mass_left).clamp(0.0, 1.0) };
            let k = if j == n - 1 || q >= 1.0 {
                left
            } else {
                Binomial::new(left, q)
                    .map_err(|e| Error::Numerical(format!("binomial parameters: {e}")))?
                    .sample(rng)
            };
            out[j] += k as f64;
            left -= k;
            mass_left -= pj;
        }
        if left > 0 {
            // Round-off left a few units unassigned; they stay where the row puts most mass.
            let jmax = p.row(r).transpose().iamax();
            out[jmax] += left as f64;
        }
    }
    out /= n_p as f64;
    Ok(out)
}
