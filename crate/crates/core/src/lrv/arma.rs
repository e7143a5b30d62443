//! Low-order ARMA prewhitening filters selected by BIC.
//!
//! Candidates are white noise, AR(1), MA(1) and ARMA(1,1). MA terms are fitted
//! by Hannan-Rissanen: a long Yule-Walker autoregression supplies innovation
//! proxies, which then enter an ordinary least-squares regression.

use serde::{Deserialize, Serialize};

/// Largest admissible |phi| and |theta| for a prewhitening filter.
pub const MAX_ROOT: f64 = 0.97;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmaModel {
    WhiteNoise,
    Ar1,
    Ma1,
    Arma11,
}

impl ArmaModel {
    pub fn num_params(self) -> usize {
        match self {
            ArmaModel::WhiteNoise => 0,
            ArmaModel::Ar1 | ArmaModel::Ma1 => 1,
            ArmaModel::Arma11 => 2,
        }
    }
}

/// A fitted filter `x_t = phi x_{t-1} + u_t + theta u_{t-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmaFit {
    pub model: ArmaModel,
    pub phi: f64,
    pub theta: f64,
    pub sigma2: f64,
    pub bic: f64,
}

impl ArmaFit {
    /// `psi(1) = (1 + theta) / (1 - phi)`, the factor that recolors a long-run variance.
    pub fn recoloring(&self) -> f64 {
        (1.0 + self.theta) / (1.0 - self.phi)
    }

    /// Filtered innovations. White noise returns the series itself; other
    /// models drop the first observation, which only seeds the recursion.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        if self.model == ArmaModel::WhiteNoise {
            return x.to_vec();
        }
        filter_residuals(x, self.phi, self.theta)[1..].to_vec()
    }
}

/// `u_t = x_t - phi x_{t-1} - theta u_{t-1}` with `u_0 = x_0`.
fn filter_residuals(x: &[f64], phi: f64, theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev_u = 0.0;
    for (t, &v) in x.iter().enumerate() {
        let u = if t == 0 { v } else { v - phi * x[t - 1] - theta * prev_u };
        out.push(u);
        prev_u = u;
    }
    out
}

fn evaluate(x: &[f64], model: ArmaModel, phi: f64, theta: f64) -> Option<ArmaFit> {
    if !(phi.is_finite() && theta.is_finite()) || phi.abs() > MAX_ROOT || theta.abs() > MAX_ROOT {
        return None;
    }
    let u = filter_residuals(x, phi, theta);
    let eff = (x.len() - 1) as f64;
    let sigma2 = u[1..].iter().map(|v| v * v).sum::<f64>() / eff;
    if !(sigma2 > 0.0) {
        return None;
    }
    let bic = eff * sigma2.ln() + model.num_params() as f64 * eff.ln();
    Some(ArmaFit { model, phi, theta, sigma2, bic })
}

/// Yule-Walker AR(p) coefficients via Levinson-Durbin; `None` if degenerate.
fn yule_walker(gamma: &[f64], order: usize) -> Option<Vec<f64>> {
    if !(gamma[0] > 0.0) {
        return None;
    }
    let mut a = vec![0.0; order];
    let mut err = gamma[0];
    for k in 0..order {
        let mut acc = gamma[k + 1];
        for j in 0..k {
            acc -= a[j] * gamma[k - j];
        }
        let reflection = acc / err;
        let prev = a.clone();
        a[k] = reflection;
        for j in 0..k {
            a[j] = prev[j] - reflection * prev[k - 1 - j];
        }
        err *= 1.0 - reflection * reflection;
        if !(err > 0.0) {
            return None;
        }
    }
    Some(a)
}

fn long_ar_order(len: usize) -> usize {
    ((len as f64).ln().ceil() as usize).clamp(1, (len / 4).max(1))
}

/// Least squares without intercept of `y` on one or two regressors.
fn ols2(y: &[f64], x1: &[f64], x2: Option<&[f64]>) -> Option<(f64, f64)> {
    match x2 {
        None => {
            let sxx: f64 = x1.iter().map(|v| v * v).sum();
            let sxy: f64 = x1.iter().zip(y).map(|(a, b)| a * b).sum();
            (sxx > 0.0).then(|| (sxy / sxx, 0.0))
        }
        Some(x2) => {
            let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((a, b), c) in x1.iter().zip(x2).zip(y) {
                s11 += a * a;
                s12 += a * b;
                s22 += b * b;
                s1y += a * c;
                s2y += b * c;
            }
            let det = s11 * s22 - s12 * s12;
            if !(det.abs() > 1e-12 * (s11 * s22).max(f64::MIN_POSITIVE)) {
                return None;
            }
            Some(((s22 * s1y - s12 * s2y) / det, (s11 * s2y - s12 * s1y) / det))
        }
    }
}

/// Fits the four candidate filters and returns the BIC-minimizing admissible one.
///
/// Candidates that fail to fit or fall outside `|phi|, |theta| <= MAX_ROOT`
/// drop out; white noise is always admissible.
pub fn select_prewhitening(x: &[f64], gamma: &[f64]) -> ArmaFit {
    let n = x.len();
    let white = evaluate(x, ArmaModel::WhiteNoise, 0.0, 0.0).unwrap_or(ArmaFit {
        model: ArmaModel::WhiteNoise,
        phi: 0.0,
        theta: 0.0,
        sigma2: 0.0,
        bic: f64::NEG_INFINITY,
    });
    if n < 4 || !(white.sigma2 > 0.0) {
        return white;
    }
    let mut candidates = vec![white];

    if let Some((phi, _)) = ols2(&x[1..], &x[..n - 1], None) {
        candidates.extend(evaluate(x, ArmaModel::Ar1, phi, 0.0));
    }

    let order = long_ar_order(n);
    if let Some(a) = gamma.get(..=order).and_then(|g| yule_walker(g, order)) {
        // Innovation proxies from the long autoregression, defined for t >= order.
        let proxies: Vec<f64> = (order..n)
            .map(|t| x[t] - (0..order).map(|j| a[j] * x[t - 1 - j]).sum::<f64>())
            .collect();
        // Regress x_t on (x_{t-1}, e_{t-1}) for t >= order + 1.
        let y = &x[order + 1..];
        let lag_x = &x[order..n - 1];
        let lag_e = &proxies[..proxies.len() - 1];
        if !y.is_empty() {
            if let Some((theta, _)) = ols2(y, lag_e, None) {
                candidates.extend(evaluate(x, ArmaModel::Ma1, 0.0, theta));
            }
            if let Some((phi, theta)) = ols2(y, lag_x, Some(lag_e)) {
                candidates.extend(evaluate(x, ArmaModel::Arma11, phi, theta));
            }
        }
    }

    candidates
        .into_iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .expect("white noise candidate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrv::autocovariances;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn arma_path(phi: f64, theta: f64, len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let mut prev = 0.0;
        let mut out = Vec::with_capacity(len + 200);
        for _ in 0..len + 200 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = phi * x + e + theta * prev;
            prev = e;
            out.push(x);
        }
        out.split_off(200)
    }

    fn fit(x: &[f64]) -> ArmaFit {
        let g = autocovariances(x, long_ar_order(x.len()) + 1).unwrap();
        select_prewhitening(x, &g)
    }

    #[test]
    fn levinson_matches_direct_ar1() {
        let g = [2.0, 0.8, 0.32];
        let a = yule_walker(&g, 2).unwrap();
        assert!((a[0] - 0.4).abs() < 1e-12 && a[1].abs() < 1e-12);
    }

    #[test]
    fn recovers_simple_models() {
        let f = fit(&arma_path(0.5, 0.0, 4000, 1));
        assert!(matches!(f.model, ArmaModel::Ar1 | ArmaModel::Arma11));
        assert!((f.recoloring() - 2.0).abs() < 0.2, "{f:?}");

        let f = fit(&arma_path(0.0, 0.4, 4000, 2));
        assert!(matches!(f.model, ArmaModel::Ma1 | ArmaModel::Arma11));
        assert!((f.recoloring() - 1.4).abs() < 0.1, "{f:?}");

        let f = fit(&arma_path(0.0, 0.0, 4000, 3));
        assert_eq!(f.model, ArmaModel::WhiteNoise);
    }

    #[test]
    fn filter_undoes_the_model() {
        let x = arma_path(0.3, 0.2, 50, 4);
        let f = ArmaFit { model: ArmaModel::Arma11, phi: 0.3, theta: 0.2, sigma2: 1.0, bic: 0.0 };
        let u = f.filter(&x);
        assert_eq!(u.len(), 49);
        // Recolor the innovations and compare with the original series.
        let mut prev_u = x[0];
        for t in 1..x.len() {
            let rebuilt = 0.3 * x[t - 1] + u[t - 1] + 0.2 * prev_u;
            assert!((rebuilt - x[t]).abs() < 1e-12);
            prev_u = u[t - 1];
        }
    }

    #[test]
    fn inadmissible_fits_fall_back_to_white_noise() {
        // A near-random-walk: AR fits hit the root bound and are discarded.
        let mut x = vec![0.0; 60];
        for t in 1..60 {
            x[t] = x[t - 1] + 1.0;
        }
        let f = fit(&x);
        assert!(f.phi.abs() <= MAX_ROOT && f.theta.abs() <= MAX_ROOT);
        let zero = fit(&[0.0; 20]);
        assert_eq!(zero.model, ArmaModel::WhiteNoise);
    }
}
