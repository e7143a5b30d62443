//! Invariant suites shared by the self-test command and the acceptance run.
//!
//! Each suite returns the largest discrepancy it observed; callers compare it
//! against their own tolerance through [`Check`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::asymptotics::{local_power_mp_bn, power_envelope};
use crate::dgp::{derive_seed, simulate, DgpConfig, Framework};
use crate::error::Result;
use crate::factors::{estimate_factors, FactorFit};
use crate::lan::{self, Covariance, OracleNuisance};
use crate::lrv::{estimate_lrv_set, LrvConfig, LrvSet};
use crate::panel::{cumsum_matrix, difference, DiffPanel, Panel};
use crate::statistics::{
    bn_tests, mp_levels, mp_tests, precision_matrix, ump_statistics, PrecisionMatrix, UmpIntermediates,
};

const ALPHA: f64 = 0.05;

/// Reference asymptote series at `alpha = 0.05` on `|h| = 0, 0.5, ..., 10`.
pub const REFERENCE_ENVELOPE: [f64; 21] = [
    0.05, 0.0982997943579869, 0.174187261617932, 0.279545082168832, 0.40879721979387,
    0.548912133494125, 0.683129043080007, 0.796736292319397, 0.881709031778347,
    0.937868880186123, 0.970666481721523, 0.987591314616084, 0.995308667068827,
    0.998418010195963, 0.999524938097729, 0.999873126014575, 0.999969896829354,
    0.999993659951843, 0.999998815591325, 0.999999803854295, 0.99999997121906,
];

/// Same grid, MP/BN local power with LRV ratio 0.8.
pub const REFERENCE_MP_BN_08: [f64; 21] = [
    0.05, 0.086597220324702, 0.140256376014454, 0.212921436930562, 0.303806827684513,
    0.40879721979387, 0.520816388451858, 0.631204565473129, 0.73167543915016,
    0.816134261898544, 0.881709031778347, 0.928732533597412, 0.959876863505192,
    0.97892831605412, 0.989692011034052, 0.995308667068827, 0.998015592348848,
    0.999220504561804, 0.999715856448866, 0.999903939633294, 0.999969896829354,
];

/// Outcome of one invariant suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value <= bound }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.3e} (bound {:.1e})", self.name, self.value, self.bound)
    }
}

fn rng_for(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]))
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Largest deviation from the reference series over the first `points` grid points.
pub fn envelope_discrepancy(points: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 0..points.min(REFERENCE_ENVELOPE.len()) {
        let h = 0.5 * j as f64;
        worst = worst.max((power_envelope(ALPHA, h)? - REFERENCE_ENVELOPE[j]).abs());
        worst = worst.max((local_power_mp_bn(ALPHA, h, 0.8)? - REFERENCE_MP_BN_08[j]).abs());
    }
    Ok(worst)
}

fn simulated_fit(framework: Framework, n: usize, t: usize, k: usize, seed: u64) -> Result<(Panel, DiffPanel, FactorFit)> {
    let cfg = DgpConfig { framework, n, t, k, lrv_ratio: 0.8, seed, ..DgpConfig::default() };
    let panel = simulate(&cfg)?.panel;
    let d = difference(&panel)?;
    let fit = estimate_factors(&d, k)?;
    Ok((panel, d, fit))
}

/// `max |t_emp - P_b|` with homogeneous long-run variances inserted.
pub fn homogeneous_reduction(panels: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..panels {
        let mut rng = rng_for(seed, i);
        let framework = if i % 2 == 0 { Framework::Panic } else { Framework::Mp };
        let (_, d, fit) = simulated_fit(framework, 20, 60, 1, derive_seed(seed, &[i as u64, 1]))?;
        let n = d.n();
        let omega2 = rng.random_range(0.2..3.0);
        let delta = rng.random_range(-0.3..0.3);
        let lrvs = LrvSet::from_parts(vec![omega2; n], vec![delta; n], vec![omega2; n])?;
        let psi = precision_matrix(&lrvs, &fit.loadings_hat)?;
        let emp = ump_statistics(&d, &psi, &lrvs)?.t_ump_emp(ALPHA)?;
        let (_, pb) = bn_tests(&fit, &lrvs, ALPHA)?;
        worst = worst.max((emp.statistic - pb.statistic).abs());
    }
    Ok(worst)
}

fn feasible_stats(panel: &Panel, k: usize) -> Result<[f64; 4]> {
    let d = difference(panel)?;
    let fit = estimate_factors(&d, k)?;
    let lrvs = estimate_lrv_set(&fit.residuals, &LrvConfig::default())?;
    let psi = precision_matrix(&lrvs, &fit.loadings_hat)?;
    let u = ump_statistics(&d, &psi, &lrvs)?;
    let (pa, pb) = bn_tests(&fit, &lrvs, ALPHA)?;
    Ok([u.t_ump(ALPHA)?.statistic, u.t_ump_emp(ALPHA)?.statistic, pa.statistic, pb.statistic])
}

/// `max` change of `t_UMP`, `t_emp`, `P_a`, `P_b` when units are shifted by constants.
pub fn intercept_invariance(instances: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = rng_for(seed, i);
        let (panel, _, _) = simulated_fit(Framework::Panic, 15, 50, 1, derive_seed(seed, &[i as u64, 1]))?;
        let shifts: Vec<f64> = (0..panel.n()).map(|_| rng.random_range(-50.0..50.0)).collect();
        let a = feasible_stats(&panel, 1)?;
        let b = feasible_stats(&panel.shift_units(&shifts)?, 1)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// `max` change of the UMP and MP statistics when `Lambda_hat -> Lambda_hat H`.
pub fn rotation_invariance(instances: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = rng_for(seed, i);
        let (_, d, fit) = simulated_fit(Framework::Mp, 15, 50, 2, derive_seed(seed, &[i as u64, 1]))?;
        let lrvs = estimate_lrv_set(&fit.residuals, &LrvConfig::default())?;
        let h = loop {
            let h: DMatrix<f64> = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
            if h.determinant().abs() > 0.5 {
                break h;
            }
        };
        let rotated = &fit.loadings_hat * h;
        let y = mp_levels(&d)?;
        let stats = |l: &DMatrix<f64>| -> Result<[f64; 4]> {
            let u = ump_statistics(&d, &precision_matrix(&lrvs, l)?, &lrvs)?;
            let (ta, tb) = mp_tests(&y, l, &lrvs, ALPHA)?;
            Ok([u.t_ump(ALPHA)?.statistic, u.t_ump_emp(ALPHA)?.statistic, ta.statistic, tb.statistic])
        };
        let (a, b) = (stats(&fit.loadings_hat)?, stats(&rotated)?);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Direct double-sum evaluation of the UMP intermediates.
pub fn ump_statistics_naive(d: &DiffPanel, psi: &PrecisionMatrix, lrvs: &LrvSet) -> UmpIntermediates {
    let (n, tp) = (d.n(), d.t());
    let dm = d.to_matrix();
    let p = psi.matrix();
    let (mut cross, mut info) = (0.0, 0.0);
    for t in 1..tp {
        for s in 1..t {
            cross += (dm.column(s).transpose() * p * dm.column(t))[0];
            for r in 1..t {
                info += (dm.column(s).transpose() * p * dm.column(r))[0];
            }
        }
    }
    let (nf, tf) = (n as f64, tp as f64);
    let correction = (0..n).map(|i| lrvs.delta[i] / lrvs.omega2[i]).sum::<f64>() / nf.sqrt();
    UmpIntermediates {
        delta_hat: cross / (nf.sqrt() * tf) - correction,
        j_hat: info / (nf * tf * tf),
        correction,
    }
}

/// Largest relative gap between running-sum and double-sum intermediates.
pub fn running_sum_vs_naive(instances: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = rng_for(seed, i);
        let n = rng.random_range(2..8);
        let t = rng.random_range(4..20);
        let k = rng.random_range(0..n.min(3));
        let d = DiffPanel::from_matrix(&DMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0)))?;
        let omega: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
        let delta: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
        let lrvs = LrvSet::from_parts(omega.clone(), delta, omega)?;
        let loadings = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..2.0));
        let psi = precision_matrix(&lrvs, &loadings)?;
        let fast = ump_statistics(&d, &psi, &lrvs)?;
        let slow = ump_statistics_naive(&d, &psi, &lrvs);
        worst = worst.max(rel_diff(fast.delta_hat, slow.delta_hat)).max(rel_diff(fast.j_hat, slow.j_hat));
    }
    Ok(worst)
}

/// Largest entrywise gap between the SMW inverse of `Psi_bar` and direct inversion, `n <= 50`.
pub fn smw_vs_direct(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, n) in [1usize, 2, 5, 10, 25, 50].into_iter().enumerate() {
        let mut rng = rng_for(seed, i);
        let k = rng.random_range(1..=n.min(4));
        let loadings = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..2.0));
        let sigma_eta = (0..n)
            .map(|_| Covariance::ar1_with_lrv(rng.random_range(-0.5..0.8), rng.random_range(0.2..3.0)))
            .collect();
        let sigma_f = (0..k).map(|_| Covariance::ma1_with_lrv(0.4, rng.random_range(0.5..2.0))).collect();
        let nu = OracleNuisance::new(40, sigma_eta, sigma_f, loadings)?;
        let direct = lan::psi_bar(&nu)
            .try_inverse()
            .ok_or_else(|| crate::Error::Numerical("direct inverse failed".into()))?;
        worst = worst.max((lan::psi_bar_inverse(&nu)? - direct).abs().max());
    }
    Ok(worst)
}

/// Largest relative gap between blockwise and full Kronecker PANIC terms at `n = 2`, `T = 4`.
pub fn blockwise_vs_kronecker(instances: usize, seed: u64) -> Result<f64> {
    let (n, t) = (2, 4);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = rng_for(seed, i);
        let covs: Vec<DMatrix<f64>> = (0..n)
            .map(|_| {
                let b = DMatrix::from_fn(t, t, |_, _| rng.random_range(-1.0..1.0));
                &b * b.transpose() + DMatrix::identity(t, t) * 0.5
            })
            .collect();
        let dense = covs.iter().map(|c| Covariance::dense(c.clone())).collect::<Result<Vec<_>>>()?;
        let nu = OracleNuisance::new(t, dense, vec![], DMatrix::zeros(n, 0))?;
        let de = DiffPanel::from_matrix(&DMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0)))?;
        let (delta, j) = lan::delta_panic_exact(&de, &nu)?;

        let mut sigma = DMatrix::zeros(n * t, n * t);
        for (b, c) in covs.iter().enumerate() {
            sigma.view_mut((b * t, b * t), (t, t)).copy_from(c);
        }
        let inv = sigma
            .try_inverse()
            .ok_or_else(|| crate::Error::Numerical("direct inverse failed".into()))?;
        let a = DMatrix::<f64>::identity(n, n).kronecker(&cumsum_matrix(t));
        let x = DVector::from_column_slice(de.values());
        let ax = &a * &x;
        let (nf, tf) = (n as f64, t as f64);
        let delta_k = ax.dot(&(&inv * &x)) / (nf.sqrt() * tf);
        let j_k = ax.dot(&(&inv * &ax)) / (nf * tf * tf);
        worst = worst.max(rel_diff(delta, delta_k)).max(rel_diff(j, j_k));
    }
    Ok(worst)
}

/// Mean and sample variance of `t_UMP` under the null with true loadings and LRVs.
pub fn null_calibration(n: usize, t: usize, reps: usize, seed: u64) -> Result<(f64, f64)> {
    let stats = (0..reps)
        .map(|r| {
            let cfg = DgpConfig { n, t, k: 1, lrv_ratio: 0.8, seed: derive_seed(seed, &[r as u64]), ..DgpConfig::default() };
            let sim = simulate(&cfg)?;
            let d = difference(&sim.panel)?;
            let lrvs = LrvSet::from_parts(sim.true_lrvs.clone(), vec![0.0; n], sim.true_lrvs)?;
            let psi = precision_matrix(&lrvs, &sim.true_loadings)?;
            Ok(ump_statistics(&d, &psi, &lrvs)?.t_ump(ALPHA)?.statistic)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = reps as f64;
    let mean = stats.iter().sum::<f64>() / m;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_small_scale() {
        assert!(envelope_discrepancy(21).unwrap() < 1e-12);
        assert!(homogeneous_reduction(4, 1).unwrap() < 1e-8);
        assert!(intercept_invariance(3, 2).unwrap() < 1e-8);
        assert!(rotation_invariance(3, 3).unwrap() < 1e-8);
        assert!(running_sum_vs_naive(5, 4).unwrap() < 1e-10);
        assert!(smw_vs_direct(5).unwrap() < 1e-9);
        assert!(blockwise_vs_kronecker(3, 6).unwrap() < 1e-10);
    }

    #[test]
    fn check_formatting() {
        let c = Check::at_most("x", 1e-12, 1e-10);
        assert!(c.passed);
        assert!(c.to_string().starts_with("PASS x"));
        assert!(!Check::at_most("y", f64::NAN, 1.0).passed);
    }
}
