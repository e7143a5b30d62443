//! Asymptotic local power of the optimal test and of the pooled MP/BN tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::statistics::check_alpha;

/// Limiting Fisher information of the unit-root experiment.
pub const FISHER_INFORMATION: f64 = 0.5;

/// `Phi(Phi^{-1}(alpha) + |h| / sqrt(2))`.
pub fn power_envelope(alpha: f64, h_abs: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_h(h_abs)?;
    Ok(normal::cdf(normal::quantile(alpha) + h_abs * FISHER_INFORMATION.sqrt()))
}

/// `Phi(Phi^{-1}(alpha) + ratio |h| / sqrt(2))` with `ratio = sqrt(omega^4 / phi^4)`.
pub fn local_power_mp_bn(alpha: f64, h_abs: f64, ratio: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_h(h_abs)?;
    check_ratio(ratio)?;
    Ok(normal::cdf(normal::quantile(alpha) + ratio * h_abs * FISHER_INFORMATION.sqrt()))
}

fn check_h(h_abs: f64) -> Result<()> {
    if h_abs >= 0.0 && h_abs.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("|h| must be finite and nonnegative, got {h_abs}")))
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("LRV ratio must lie in (0, 1], got {ratio}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub alpha: f64,
    pub ratio: f64,
    pub h_grid: Vec<f64>,
    pub envelope: Vec<f64>,
    pub local_power: Vec<f64>,
}

pub fn emit_power_curve(alpha: f64, h_grid: &[f64], ratio: f64) -> Result<PowerCurve> {
    check_alpha(alpha)?;
    check_ratio(ratio)?;
    if let Some(w) = h_grid.windows(2).find(|w| !(w[0] <= w[1])) {
        return Err(Error::Data(format!(
            "|h| grid must be sorted ascending, found {} before {}",
            w[0], w[1]
        )));
    }
    let envelope = h_grid.iter().map(|&h| power_envelope(alpha, h)).collect::<Result<Vec<_>>>()?;
    let local_power = h_grid
        .iter()
        .map(|&h| local_power_mp_bn(alpha, h, ratio))
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve { alpha, ratio, h_grid: h_grid.to_vec(), envelope, local_power })
}

/// `0, step, 2 step, ..., max` (inclusive).
pub fn uniform_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= 0.0 && max.is_finite()) {
        return Err(Error::Config(format!("invalid grid: max {max}, step {step}")));
    }
    let count = (max / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|j| j as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{REFERENCE_ENVELOPE as ENVELOPE, REFERENCE_MP_BN_08 as MP_BN_08};

    #[test]
    fn reproduces_reference_series() {
        let grid = uniform_grid(10.0, 0.5).unwrap();
        assert_eq!(grid.len(), 21);
        let curve = emit_power_curve(0.05, &grid, 0.8).unwrap();
        for j in 0..21 {
            assert!((curve.envelope[j] - ENVELOPE[j]).abs() < 1e-12, "envelope at {}", grid[j]);
            assert!((curve.local_power[j] - MP_BN_08[j]).abs() < 1e-12, "MP/BN at {}", grid[j]);
        }
    }

    #[test]
    fn level_at_the_null() {
        assert!((power_envelope(0.05, 0.0).unwrap() - 0.05).abs() < 1e-15);
        assert!((power_envelope(0.01, 0.0).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_ratio_attains_envelope() {
        for h in [0.0, 0.3, 1.0, 4.0, 9.5] {
            assert_eq!(local_power_mp_bn(0.05, h, 1.0).unwrap(), power_envelope(0.05, h).unwrap());
        }
        let c = emit_power_curve(0.1, &[0.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(c.envelope, c.local_power);
    }

    #[test]
    fn monotone_and_dominated() {
        let grid = uniform_grid(10.0, 0.25).unwrap();
        for ratio in [0.2, 0.5, 0.8, 0.99] {
            let c = emit_power_curve(0.05, &grid, ratio).unwrap();
            for j in 0..grid.len() {
                assert!(c.envelope[j] >= c.local_power[j]);
                assert!(c.local_power[j] >= 0.05 - 1e-15 && c.envelope[j] <= 1.0);
                if j > 0 {
                    assert!(c.envelope[j] >= c.envelope[j - 1]);
                    assert!(c.local_power[j] > c.local_power[j - 1] || c.local_power[j] == 1.0);
                }
            }
        }
        assert!(local_power_mp_bn(0.05, 2.0, 0.5).unwrap() < local_power_mp_bn(0.05, 2.0, 0.6).unwrap());
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(power_envelope(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(power_envelope(0.05, -1.0), Err(Error::Domain(_))));
        assert!(matches!(local_power_mp_bn(0.05, 1.0, 1.2), Err(Error::Domain(_))));
        assert!(matches!(local_power_mp_bn(0.05, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(emit_power_curve(0.05, &[0.0, 2.0, 1.0], 0.8), Err(Error::Data(_))));
    }
}
