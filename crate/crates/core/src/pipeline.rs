//! End-to-end testing of a level panel: difference, estimate factors and
//! long-run variances, then compute every statistic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{estimate_factors, select_num_factors};
use crate::lrv::{estimate_lrv_set, LrvConfig, LrvSet};
use crate::panel::{difference, DiffPanel, Panel};
use crate::statistics::{
    bn_tests, check_alpha, mp_levels, mp_tests, precision_matrix, ump_statistics, TestName,
    TestOutcome, UmpIntermediates,
};

pub const DEFAULT_K_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorChoice {
    Known(usize),
    /// Information-criterion selection up to `k_max` (capped at `min(n, T')`).
    Select { k_max: usize },
}

impl Default for FactorChoice {
    fn default() -> Self {
        FactorChoice::Select { k_max: DEFAULT_K_MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub factors: FactorChoice,
    pub lrv: LrvConfig,
    pub alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { factors: FactorChoice::default(), lrv: LrvConfig::default(), alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub k: usize,
    pub loadings: DMatrix<f64>,
    pub lrvs: LrvSet,
    pub ump: UmpIntermediates,
    /// One outcome per statistic, in [`TestName::ALL`] order.
    pub outcomes: Vec<TestOutcome>,
}

impl PipelineResult {
    pub fn outcome(&self, name: TestName) -> &TestOutcome {
        self.outcomes.iter().find(|o| o.name == name).expect("every statistic is computed")
    }
}

pub fn run_tests(panel: &Panel, cfg: &PipelineConfig) -> Result<PipelineResult> {
    run_on_differences(&difference(panel)?, cfg)
}

pub fn run_on_differences(d: &DiffPanel, cfg: &PipelineConfig) -> Result<PipelineResult> {
    check_alpha(cfg.alpha)?;
    if d.t() < 2 {
        return Err(Error::Dimension(format!("testing needs at least 3 periods, got {}", d.t() + 1)));
    }
    let k = match cfg.factors {
        FactorChoice::Known(k) => k,
        FactorChoice::Select { k_max } => select_num_factors(d, k_max.min(d.n()).min(d.t()))?,
    };
    let fit = estimate_factors(d, k)?;
    let lrvs = estimate_lrv_set(&fit.residuals, &cfg.lrv)?;
    let psi = precision_matrix(&lrvs, &fit.loadings_hat)?;
    let ump = ump_statistics(d, &psi, &lrvs)?;
    let (pa, pb) = bn_tests(&fit, &lrvs, cfg.alpha)?;
    let (ta, tb) = mp_tests(&mp_levels(d)?, &fit.loadings_hat, &lrvs, cfg.alpha)?;
    let outcomes = vec![ump.t_ump(cfg.alpha)?, ump.t_ump_emp(cfg.alpha)?, pa, pb, ta, tb];
    Ok(PipelineResult { k, loadings: fit.loadings_hat, lrvs, ump, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate, DgpConfig};

    #[test]
    fn outcomes_follow_name_order() {
        let sim = simulate(&DgpConfig { n: 20, t: 60, seed: 1, ..DgpConfig::default() }).unwrap();
        let res = run_tests(&sim.panel, &PipelineConfig::default()).unwrap();
        let names: Vec<TestName> = res.outcomes.iter().map(|o| o.name).collect();
        assert_eq!(names, TestName::ALL);
        assert_eq!(res.k, 1);
        assert!(res.outcomes.iter().all(|o| o.statistic.is_finite()));
    }

    #[test]
    fn known_zero_factors_uses_diagonal_precision() {
        let sim = simulate(&DgpConfig { n: 10, t: 50, k: 0, seed: 2, ..DgpConfig::default() }).unwrap();
        let cfg = PipelineConfig { factors: FactorChoice::Known(0), ..PipelineConfig::default() };
        let res = run_tests(&sim.panel, &cfg).unwrap();
        assert_eq!(res.loadings.ncols(), 0);
        assert!(res.outcome(TestName::TUmp).statistic.is_finite());
    }

    #[test]
    fn short_panels_fail_cleanly() {
        let p = Panel::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(run_tests(&p, &PipelineConfig::default()), Err(Error::Dimension(_))));
    }
}
