//! Kernel estimates of long-run and one-sided long-run variances.
//!
//! For a residual series `s` the estimator returns
//!
//! * `omega2`, the long-run variance `sum_m gamma(m)`, from a Bartlett or
//!   quadratic-spectral kernel, optionally after ARMA prewhitening and
//!   recoloring;
//! * `gamma0`, the sample variance of the original series;
//! * `delta = (omega2 - gamma0) / 2`, the one-sided long-run variance
//!   `sum_{m >= 1} gamma(m)`.
//!
//! Autocovariances are not demeaned: the inputs are differenced, intercept-free
//! residuals.

pub mod arma;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::DiffPanel;

pub use arma::{ArmaFit, ArmaModel};

/// Smallest long-run variance the estimator reports.
pub const OMEGA2_FLOOR: f64 = 1e-8;
/// Shortest series accepted by [`kernel_lrv`].
pub const MIN_SERIES_LEN: usize = 8;
/// Bound on the lag-one autocorrelation used by the Andrews plug-in.
const ANDREWS_RHO_BOUND: f64 = 0.97;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Bartlett,
    QuadraticSpectral,
}

impl Kernel {
    pub fn weight(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            Kernel::Bartlett => (1.0 - x).max(0.0),
            Kernel::QuadraticSpectral => {
                if x == 0.0 {
                    return 1.0;
                }
                let z = 6.0 * PI * x / 5.0;
                25.0 / (12.0 * PI * PI * x * x) * (z.sin() / z - z.cos())
            }
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kernel::Bartlett => "bartlett",
            Kernel::QuadraticSpectral => "quadratic_spectral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// AR(1) plug-in rule.
    Andrews,
    /// Deterministic `floor(4 (T / 100)^(2/9))` truncation.
    NeweyWest,
    Fixed(f64),
}

impl std::fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthRule::Andrews => f.write_str("andrews"),
            BandwidthRule::NeweyWest => f.write_str("newey_west"),
            BandwidthRule::Fixed(b) => write!(f, "fixed={b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrvConfig {
    pub kernel: Kernel,
    pub bandwidth: BandwidthRule,
    pub prewhiten: bool,
}

impl Default for LrvConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Bartlett, bandwidth: BandwidthRule::Andrews, prewhiten: true }
    }
}

impl LrvConfig {
    pub fn validate(&self) -> Result<()> {
        if let BandwidthRule::Fixed(b) = self.bandwidth {
            if !(b >= 1.0 && b.is_finite()) {
                return Err(Error::Config(format!("fixed bandwidth must be >= 1, got {b}")));
            }
        }
        Ok(())
    }
}

/// Per-series output of [`kernel_lrv`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelLrv {
    pub omega2: f64,
    pub delta: f64,
    pub gamma0: f64,
    pub bandwidth: f64,
    pub prewhitening: Option<ArmaFit>,
}

/// Sample autocovariances `gamma(m) = (1/T) sum_t s_t s_{t+m}` for `m = 0..=max_lag`.
pub fn autocovariances(s: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let len = s.len();
    if max_lag >= len {
        return Err(Error::Dimension(format!(
            "max_lag {max_lag} must be below the series length {len}"
        )));
    }
    let inv = 1.0 / len as f64;
    Ok((0..=max_lag)
        .map(|m| s[..len - m].iter().zip(&s[m..]).map(|(a, b)| a * b).sum::<f64>() * inv)
        .collect())
}

/// Bandwidth chosen by `rule` for series `s`.
pub fn bandwidth(s: &[f64], kernel: Kernel, rule: BandwidthRule) -> f64 {
    let len = s.len() as f64;
    match rule {
        BandwidthRule::Fixed(b) => b,
        BandwidthRule::NeweyWest => (4.0 * (len / 100.0).powf(2.0 / 9.0)).floor(),
        BandwidthRule::Andrews => {
            let num: f64 = s.windows(2).map(|w| w[0] * w[1]).sum();
            let den: f64 = s[..s.len() - 1].iter().map(|v| v * v).sum();
            let rho = if den > 0.0 { num / den } else { 0.0 };
            let rho = rho.clamp(-ANDREWS_RHO_BOUND, ANDREWS_RHO_BOUND);
            let r2 = rho * rho;
            match kernel {
                Kernel::Bartlett => {
                    let alpha = 4.0 * r2 / ((1.0 - rho).powi(2) * (1.0 + rho).powi(2));
                    1.1447 * (alpha * len).cbrt()
                }
                Kernel::QuadraticSpectral => {
                    let alpha = 4.0 * r2 / (1.0 - rho).powi(4);
                    1.3221 * (alpha * len).powf(0.2)
                }
            }
        }
    }
}

/// Lags entering the kernel sum: the Bartlett support is `|m| <= floor(B)`,
/// the quadratic-spectral kernel uses every available lag.
fn kernel_max_lag(len: usize, kernel: Kernel, bw: f64) -> usize {
    let cap = len - 1;
    if !(bw > 0.0) {
        return 0;
    }
    match kernel {
        Kernel::Bartlett => (bw.floor() as usize).min(cap),
        Kernel::QuadraticSpectral => cap,
    }
}

/// `gamma(0) + 2 sum_{m >= 1} k(m / B) gamma(m)`.
pub fn weighted_lrv(gamma: &[f64], kernel: Kernel, bw: f64) -> f64 {
    let tail: f64 = gamma
        .iter()
        .enumerate()
        .skip(1)
        .map(|(m, g)| kernel.weight(m as f64 / bw) * g)
        .sum();
    gamma[0] + 2.0 * tail
}

pub fn kernel_lrv(s: &[f64], cfg: &LrvConfig) -> Result<KernelLrv> {
    if s.len() < MIN_SERIES_LEN {
        return Err(Error::Data(format!(
            "long-run variance needs at least {MIN_SERIES_LEN} observations, got {}",
            s.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    cfg.validate()?;
    let gamma0 = autocovariances(s, 0)?[0];

    let (filtered, prewhitening) = if cfg.prewhiten {
        let max_lag = ((s.len() as f64).ln().ceil() as usize + 1).min(s.len() - 1);
        let gamma = autocovariances(s, max_lag)?;
        let fit = arma::select_prewhitening(s, &gamma);
        (fit.filter(s), Some(fit))
    } else {
        (s.to_vec(), None)
    };

    let bw = bandwidth(&filtered, cfg.kernel, cfg.bandwidth);
    let gamma = autocovariances(&filtered, kernel_max_lag(filtered.len(), cfg.kernel, bw))?;
    let raw = weighted_lrv(&gamma, cfg.kernel, bw);
    let recolor = prewhitening.map_or(1.0, |f| f.recoloring());
    let omega2 = (recolor * recolor * raw).max(OMEGA2_FLOOR);

    Ok(KernelLrv {
        omega2,
        delta: (omega2 - gamma0) / 2.0,
        gamma0,
        bandwidth: bw,
        prewhitening,
    })
}

/// Per-unit long-run variances and their cross-sectional aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct LrvSet {
    pub omega2: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma0: Vec<f64>,
    /// `mean(omega2)`
    pub pooled_omega2: f64,
    /// `mean(omega2^2)`
    pub pooled_phi4: f64,
    /// `mean(delta)`
    pub pooled_delta: f64,
}

impl LrvSet {
    /// Builds a set from known per-unit values (e.g. true nuisance parameters).
    pub fn from_parts(omega2: Vec<f64>, delta: Vec<f64>, gamma0: Vec<f64>) -> Result<Self> {
        let n = omega2.len();
        if n == 0 || delta.len() != n || gamma0.len() != n {
            return Err(Error::Dimension(format!(
                "inconsistent LRV lengths: {} omega2, {} delta, {} gamma0",
                n,
                delta.len(),
                gamma0.len()
            )));
        }
        if let Some(i) = omega2.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(format!(
                "long-run variance of unit {} must be positive, got {}",
                i + 1,
                omega2[i]
            )));
        }
        let nf = n as f64;
        let pooled_omega2 = omega2.iter().sum::<f64>() / nf;
        let pooled_phi4 = omega2.iter().map(|w| w * w).sum::<f64>() / nf;
        let pooled_delta = delta.iter().sum::<f64>() / nf;
        Ok(Self { omega2, delta, gamma0, pooled_omega2, pooled_phi4, pooled_delta })
    }

    pub fn n(&self) -> usize {
        self.omega2.len()
    }

    /// `sqrt(omega^4 / phi^4)`, one under homogeneous long-run variances.
    pub fn heterogeneity_ratio(&self) -> f64 {
        self.pooled_omega2 / self.pooled_phi4.sqrt()
    }
}

pub fn estimate_lrv_set(residuals: &DiffPanel, cfg: &LrvConfig) -> Result<LrvSet> {
    let n = residuals.n();
    let (mut omega2, mut delta, mut gamma0) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, row) in residuals.units().enumerate() {
        let est = kernel_lrv(row, cfg).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("unit {}: {msg}", i + 1)),
            other => other,
        })?;
        omega2.push(est.omega2);
        delta.push(est.delta);
        gamma0.push(est.gamma0);
    }
    LrvSet::from_parts(omega2, delta, gamma0)
}
