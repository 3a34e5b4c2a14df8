use nalgebra::{DMatrix, DVector, RowDVector};

use crate::aggregate::noise_covariance;
use crate::error::{invalid_param, Error, Result};

#[derive(Debug, Clone)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Measurement noise variance, kW^2.
    pub r_v: f64,
}

impl FilterState {
    pub fn new(x_hat: DVector<f64>, cov: DMatrix<f64>, r_v: f64) -> Result<Self> {
        if !(r_v > 0.0) {
            return Err(invalid_param("measurement noise variance must be positive"));
        }
        if cov.nrows() != x_hat.len() || cov.ncols() != x_hat.len() {
            return Err(invalid_param("covariance size does not match the state"));
        }
        Ok(Self { x_hat, cov, r_v })
    }

    /// Number of estimate entries outside `[0, 1]`.
    pub fn out_of_simplex(&self) -> usize {
        self.x_hat.iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count()
    }

    /// Euclidean projection of the estimate onto the probability simplex.
    pub fn project_to_simplex(&mut self) {
        let mut u: Vec<f64> = self.x_hat.iter().cloned().collect();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut tau = 0.0;
        for (j, &v) in u.iter().enumerate() {
            cum += v;
            let t = (cum - 1.0) / (j + 1) as f64;
            if v - t > 0.0 {
                tau = t;
            }
        }
        self.x_hat.apply(|v| *v = (*v - tau).max(0.0));
    }
}

/// Time update with `F` and noise covariance at the current estimate, then
/// a scalar measurement update.
///
/// The noise covariance is evaluated at the estimate with negative entries
/// clamped to zero; at a negative occupancy it would not be a covariance.
pub fn kf_step(
    filter: &FilterState,
    f: &DMatrix<f64>,
    h: &RowDVector<f64>,
    n_p: f64,
    y_meas: f64,
) -> Result<FilterState> {
    let x_prior = f * &filter.x_hat;
    let xc = filter.x_hat.map(|v| v.max(0.0));
    let sigma = noise_covariance(&xc, &f.transpose(), n_p);
    let p_prior = f * &filter.cov * f.transpose() + sigma;
    let ph = &p_prior * h.transpose();
    let s = (h * &ph)[(0, 0)] + filter.r_v;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Numerical(format!("innovation variance {s}")));
    }
    let k = ph / s;
    let innovation = y_meas - (h * &x_prior)[(0, 0)];
    let x_hat = x_prior + &k * innovation;
    let n = x_hat.len();
    let cov = (DMatrix::identity(n, n) - &k * h) * p_prior;
    let cov = 0.5 * (&cov + cov.transpose());
    Ok(FilterState { x_hat, cov, r_v: filter.r_v })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, RowDVector<f64>) {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        (p.transpose(), RowDVector::from_row_slice(&[0.0, 2.0]))
    }

    #[test]
    fn hand_computed_step() {
        let (f, h) = toy();
        let x = DVector::from_vec(vec![0.6, 0.4]);
        let fs = FilterState::new(x, DMatrix::from_row_slice(2, 2, &[0.01, -0.01, -0.01, 0.01]), 0.05).unwrap();
        let out = kf_step(&fs, &f, &h, 4.0, 0.9).unwrap();
        // Prior mean: [0.66, 0.34].
        // Sigma: mass 0.6 splits (0.9, 0.1), 0.4 splits (0.3, 0.7);
        // var = (0.6*0.09 + 0.4*0.21)/4 = 0.0345, covariance -0.0345.
        // F P F^T with P = 0.01 [1 -1; -1 1]: F [1,-1]^T = [0.6, -0.6] -> 0.0036 [1 -1; -1 1].
        // P- = 0.0381 [1 -1; -1 1]; H P- H^T = 4 * 0.0381 = 0.1524; S = 0.2024.
        // K = P- H^T / S = [-0.0762, 0.0762] / 0.2024.
        // Innovation 0.9 - 0.68 = 0.22.
        let k1 = 0.0762 / 0.2024;
        assert!((out.x_hat[0] - (0.66 - k1 * 0.22)).abs() < 1e-12);
        assert!((out.x_hat[1] - (0.34 + k1 * 0.22)).abs() < 1e-12);
        let post = 0.0381 * (1.0 - 2.0 * k1);
        assert!((out.cov[(0, 0)] - post).abs() < 1e-12);
        assert!((out.cov[(0, 1)] + post).abs() < 1e-12);
    }

    #[test]
    fn huge_measurement_noise_keeps_prediction() {
        let (f, h) = toy();
        let x = DVector::from_vec(vec![0.6, 0.4]);
        let fs = FilterState::new(x.clone(), DMatrix::zeros(2, 2), 1e12).unwrap();
        let out = kf_step(&fs, &f, &h, 4.0, 100.0).unwrap();
        assert!((out.x_hat - &f * x).abs().max() < 1e-9);
    }

    #[test]
    fn zero_innovation_keeps_prediction() {
        let (f, h) = toy();
        let x = DVector::from_vec(vec![0.6, 0.4]);
        let fs = FilterState::new(x.clone(), DMatrix::identity(2, 2) * 0.01, 0.1).unwrap();
        let prior = &f * x;
        let y = (&h * &prior)[(0, 0)];
        let out = kf_step(&fs, &f, &h, 4.0, y).unwrap();
        assert!((out.x_hat - prior).abs().max() < 1e-15);
    }

    #[test]
    fn simplex_projection() {
        let mut fs = FilterState::new(DVector::from_vec(vec![0.7, 0.5, -0.1]), DMatrix::zeros(3, 3), 1.0).unwrap();
        assert_eq!(fs.out_of_simplex(), 1);
        fs.project_to_simplex();
        assert!((fs.x_hat.sum() - 1.0).abs() < 1e-15);
        assert!((fs.x_hat[0] - 0.6).abs() < 1e-15 && (fs.x_hat[1] - 0.4).abs() < 1e-15);
        assert_eq!(fs.x_hat[2], 0.0);
    }
}
