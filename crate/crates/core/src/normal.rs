//! Standard normal CDF and quantile.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc_inv;

/// `Phi(x)`, evaluated through `erfc` so the left tail keeps full relative accuracy.
pub fn cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Phi^{-1}(p)` for `p` in `(0, 1)`; returns `-inf`/`inf` at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // Two Newton steps on Phi(x) - p polish the erfc_inv starting point.
    for _ in 0..2 {
        let dens = pdf(x);
        if dens <= 0.0 || !dens.is_finite() {
            break;
        }
        let step = (cdf(x) - p) / dens;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}
