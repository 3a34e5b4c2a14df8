//! Standard normal distribution helpers built on `erfc`.
//!
//! Interval masses are evaluated on whichever tail keeps the subtraction
//! well conditioned, so masses far out in either tail keep full relative
//! precision instead of collapsing to `1 - 1`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1 / sqrt(2 pi)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `P(Z <= x)`
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `P(Z > x)`, the Gaussian Q-function.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Mills-ratio upper bound `phi(x)/x` on the Q-function, valid for `x > 0`.
pub fn q_bound(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    (-0.5 * x * x).exp() / (x * (2.0 * PI).sqrt())
}

/// Probability that `N(mean, sd^2)` falls in `[lo, hi)`. Either end may be infinite.
pub fn interval_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    if a >= 0.0 {
        sf(a) - sf(b)
    } else if b <= 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - cdf(a) - sf(b)
    }
}
