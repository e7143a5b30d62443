//! Seeded Monte Carlo experiments over grids of simulation designs.
//!
//! Every replication draws its panel from a seed addressed by the cell's
//! sampling coordinates and the replication index, so results do not depend
//! on scheduling or worker count. The seed deliberately ignores the
//! framework and `h`, which gives common random numbers across alternatives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{local_power_mp_bn, power_envelope};
use crate::dgp::{derive_seed, simulate, DgpConfig, Framework, InnovationKind, InnovationLaw, InnovationSpec};
use crate::error::{Error, Result};
use crate::lrv::LrvConfig;
use crate::normal;
use crate::parallel;
use crate::pipeline::{run_tests, FactorChoice, PipelineConfig, DEFAULT_K_MAX};
use crate::statistics::{check_alpha, TestName};

/// Grid of simulation designs; every combination forms one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpGrid {
    pub frameworks: Vec<Framework>,
    pub n: Vec<usize>,
    #[serde(rename = "T", alias = "t")]
    pub t: Vec<usize>,
    pub ratios: Vec<f64>,
    /// Applied to both factor and idiosyncratic innovations.
    pub innovations: Vec<InnovationKind>,
    pub innovation_parameter: f64,
    pub distributions: Vec<InnovationLaw>,
    /// Local alternatives; `h <= 0`.
    pub h: Vec<f64>,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    pub heterogeneous_alternatives: bool,
    pub panic_stationary_factors: bool,
}

impl Default for DgpGrid {
    fn default() -> Self {
        Self {
            frameworks: vec![Framework::Mp, Framework::Panic],
            n: vec![50],
            t: vec![100],
            ratios: vec![0.8],
            innovations: vec![InnovationKind::Iid],
            innovation_parameter: 0.4,
            distributions: vec![InnovationLaw::Gaussian],
            h: vec![0.0],
            k: 1,
            heterogeneous_alternatives: false,
            panic_stationary_factors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub dgp: DgpGrid,
    pub lrv_cfg: LrvConfig,
    pub tests: Vec<TestName>,
    pub alpha: f64,
    pub replications: usize,
    pub base_seed: u64,
    /// Use the true number of factors instead of selecting it.
    pub k_known: bool,
    pub k_max: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            dgp: DgpGrid::default(),
            lrv_cfg: LrvConfig::default(),
            tests: TestName::ALL.to_vec(),
            alpha: 0.05,
            replications: 1000,
            base_seed: 0,
            k_known: true,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// One combination of grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub framework: Framework,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub ratio: f64,
    pub innovation: InnovationKind,
    pub distribution: InnovationLaw,
    pub h: f64,
}

impl Cell {
    /// Seed coordinates: everything that changes the sampling law except the
    /// framework and the alternative.
    fn sampling_key(&self) -> [u64; 5] {
        [
            self.n as u64,
            self.t as u64,
            self.ratio.to_bits(),
            self.innovation as u64,
            self.distribution as u64,
        ]
    }

    fn same_design_at_null(&self, other: &Cell) -> bool {
        Cell { h: 0.0, ..*self } == Cell { h: 0.0, ..*other }
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha).map_err(|e| Error::Config(e.to_string()))?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        let g = &self.dgp;
        let empty = [
            ("frameworks", g.frameworks.is_empty()),
            ("n", g.n.is_empty()),
            ("T", g.t.is_empty()),
            ("ratios", g.ratios.is_empty()),
            ("innovations", g.innovations.is_empty()),
            ("distributions", g.distributions.is_empty()),
            ("h", g.h.is_empty()),
            ("tests", self.tests.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("grid '{name}' must not be empty")));
        }
        self.lrv_cfg.validate()?;
        for cell in self.cells() {
            self.dgp_config(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Cells in row-major grid order (frameworks outermost, `h` innermost).
    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.dgp;
        let mut out = Vec::new();
        for &framework in &g.frameworks {
            for &n in &g.n {
                for &t in &g.t {
                    for &ratio in &g.ratios {
                        for &innovation in &g.innovations {
                            for &distribution in &g.distributions {
                                for &h in &g.h {
                                    out.push(Cell { framework, n, t, ratio, innovation, distribution, h });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn replication_seed(&self, cell: &Cell, r: usize) -> u64 {
        let mut coords = cell.sampling_key().to_vec();
        coords.push(r as u64);
        derive_seed(self.base_seed, &coords)
    }

    pub fn dgp_config(&self, cell: &Cell, r: usize) -> DgpConfig {
        let spec = InnovationSpec {
            kind: cell.innovation,
            parameter: self.dgp.innovation_parameter,
            distribution: cell.distribution,
            target_lrv: 1.0,
        };
        DgpConfig {
            framework: cell.framework,
            n: cell.n,
            t: cell.t,
            h: cell.h,
            k: self.dgp.k,
            factor_spec: spec,
            idio_spec: spec,
            lrv_ratio: cell.ratio,
            heterogeneous_alternatives: self.dgp.heterogeneous_alternatives,
            panic_stationary_factors: self.dgp.panic_stationary_factors,
            seed: self.replication_seed(cell, r),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let factors = if self.k_known {
            FactorChoice::Known(self.dgp.k)
        } else {
            FactorChoice::Select { k_max: self.k_max }
        };
        PipelineConfig { factors, lrv: self.lrv_cfg, alpha: self.alpha }
    }

    /// Requested statistics of one replication, in `tests` order.
    pub fn replicate(&self, cell: &Cell, r: usize) -> Result<Vec<f64>> {
        let sim = simulate(&self.dgp_config(cell, r))?;
        let res = run_tests(&sim.panel, &self.pipeline_config())?;
        Ok(self.tests.iter().map(|&name| res.outcome(name).statistic).collect())
    }
}

/// Raw statistics of every replication of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDraws {
    pub cell: Cell,
    /// `statistics[j]` holds the successful draws of `tests[j]`.
    pub statistics: Vec<Vec<f64>>,
    pub errors: usize,
}

pub fn simulate_statistics(exp: &Experiment, workers: Option<usize>) -> Result<Vec<CellDraws>> {
    exp.validate()?;
    let cells = exp.cells();
    let r_total = exp.replications;
    let draws: Vec<Result<Vec<f64>>> = parallel::install(workers, || {
        (0..cells.len() * r_total)
            .into_par_iter()
            .map(|job| exp.replicate(&cells[job / r_total], job % r_total))
            .collect()
    })?;
    Ok(cells
        .iter()
        .zip(draws.chunks(r_total))
        .map(|(cell, chunk)| {
            let mut statistics = vec![Vec::with_capacity(r_total); exp.tests.len()];
            let mut errors = 0;
            for d in chunk {
                match d {
                    Ok(v) => statistics.iter_mut().zip(v).for_each(|(s, x)| s.push(*x)),
                    Err(_) => errors += 1,
                }
            }
            CellDraws { cell: *cell, statistics, errors }
        })
        .collect())
}

/// One line of the rejection-frequency table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub framework: Framework,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub ratio: f64,
    pub innovation: InnovationKind,
    pub distribution: InnovationLaw,
    pub bandwidth: String,
    pub kernel: String,
    pub prewhiten: bool,
    pub h: f64,
    pub test: TestName,
    pub rejection_rate: f64,
    pub mc_std_err: f64,
    /// Successful replications.
    pub replications: usize,
    pub errors: usize,
}

/// `sqrt(r (1 - r) / R)`.
pub fn mc_std_err(rate: f64, replications: usize) -> f64 {
    (rate * (1.0 - rate) / replications as f64).sqrt()
}

/// Share of `draws` at or below `critical`; `NaN` when there are none.
pub fn rejection_rate(draws: &[f64], critical: f64) -> f64 {
    if draws.is_empty() {
        return f64::NAN;
    }
    draws.iter().filter(|&&x| x <= critical).count() as f64 / draws.len() as f64
}

pub fn run(exp: &Experiment) -> Result<Vec<ResultRow>> {
    run_with_workers(exp, None)
}

pub fn run_with_workers(exp: &Experiment, workers: Option<usize>) -> Result<Vec<ResultRow>> {
    let critical = normal::quantile(exp.alpha);
    let mut rows = Vec::new();
    for cd in simulate_statistics(exp, workers)? {
        for (j, &test) in exp.tests.iter().enumerate() {
            let draws = &cd.statistics[j];
            let rate = rejection_rate(draws, critical);
            rows.push(ResultRow {
                framework: cd.cell.framework,
                n: cd.cell.n,
                t: cd.cell.t,
                ratio: cd.cell.ratio,
                innovation: cd.cell.innovation,
                distribution: cd.cell.distribution,
                bandwidth: exp.lrv_cfg.bandwidth.to_string(),
                kernel: exp.lrv_cfg.kernel.to_string(),
                prewhiten: exp.lrv_cfg.prewhiten,
                h: cd.cell.h,
                test,
                rejection_rate: rate,
                mc_std_err: mc_std_err(rate, draws.len()),
                replications: draws.len(),
                errors: cd.errors,
            });
        }
    }
    Ok(rows)
}

/// One line of the power-figure table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub framework: Framework,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub ratio: f64,
    pub innovation: InnovationKind,
    pub distribution: InnovationLaw,
    pub h_abs: f64,
    pub test: TestName,
    /// Rejection rate at the asymptotic critical value.
    pub power: f64,
    /// Rejection rate at the empirical `alpha`-quantile of the `h = 0` cell.
    pub size_adjusted_power: f64,
    pub mc_std_err: f64,
    pub envelope: f64,
    pub mp_bn_asymptote: f64,
    pub replications: usize,
    pub errors: usize,
}

/// Empirical lower `alpha`-quantile: the `ceil(alpha R)`-th smallest draw.
pub fn empirical_critical_value(draws: &[f64], alpha: f64) -> f64 {
    if draws.is_empty() {
        return f64::NAN;
    }
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((alpha * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

pub fn power_figure_data(exp: &Experiment) -> Result<Vec<PowerRow>> {
    power_figure_data_with_workers(exp, None)
}

pub fn power_figure_data_with_workers(exp: &Experiment, workers: Option<usize>) -> Result<Vec<PowerRow>> {
    if !exp.dgp.h.contains(&0.0) {
        return Err(Error::Config("power figure data needs h = 0 in the grid".into()));
    }
    let draws = simulate_statistics(exp, workers)?;
    let critical = normal::quantile(exp.alpha);
    let mut rows = Vec::new();
    for cd in &draws {
        let null = draws
            .iter()
            .find(|o| o.cell.h == 0.0 && o.cell.same_design_at_null(&cd.cell))
            .expect("h = 0 is in the grid");
        let h_abs = cd.cell.h.abs();
        let envelope = power_envelope(exp.alpha, h_abs)?;
        let mp_bn_asymptote = local_power_mp_bn(exp.alpha, h_abs, cd.cell.ratio)?;
        for (j, &test) in exp.tests.iter().enumerate() {
            let stats = &cd.statistics[j];
            let power = rejection_rate(stats, critical);
            let adjusted = empirical_critical_value(&null.statistics[j], exp.alpha);
            rows.push(PowerRow {
                framework: cd.cell.framework,
                n: cd.cell.n,
                t: cd.cell.t,
                ratio: cd.cell.ratio,
                innovation: cd.cell.innovation,
                distribution: cd.cell.distribution,
                h_abs,
                test,
                power,
                size_adjusted_power: rejection_rate(stats, adjusted),
                mc_std_err: mc_std_err(power, stats.len()),
                envelope,
                mp_bn_asymptote,
                replications: stats.len(),
                errors: cd.errors,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(replications: usize) -> Experiment {
        Experiment {
            dgp: DgpGrid { n: vec![10], t: vec![30], h: vec![0.0, -4.0], ..DgpGrid::default() },
            replications,
            base_seed: 11,
            ..Experiment::default()
        }
    }

    #[test]
    fn rows_cover_grid_and_tests() {
        let exp = small(6);
        let rows = run(&exp).unwrap();
        assert_eq!(rows.len(), exp.cells().len() * 6);
        for r in &rows {
            assert!(r.rejection_rate >= 0.0 && r.rejection_rate <= 1.0);
            assert_eq!(r.replications + r.errors, 6);
            assert!((r.mc_std_err - mc_std_err(r.rejection_rate, r.replications)).abs() < 1e-15);
            assert_eq!(r.bandwidth, "andrews");
        }
    }

    #[test]
    fn deterministic_and_worker_independent() {
        let exp = small(5);
        let a = run_with_workers(&exp, Some(1)).unwrap();
        let b = run_with_workers(&exp, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(run_with_workers(&exp, Some(1)).unwrap(), a);
    }

    #[test]
    fn frameworks_agree_under_the_null() {
        let exp = Experiment { dgp: DgpGrid { h: vec![0.0], ..small(8).dgp }, ..small(8) };
        let draws = simulate_statistics(&exp, None).unwrap();
        assert_eq!(draws.len(), 2);
        assert_eq!(draws[0].statistics, draws[1].statistics);
    }

    #[test]
    fn null_row_of_figure_data() {
        let exp = small(40);
        let rows = power_figure_data(&exp).unwrap();
        let size = run(&exp).unwrap();
        for (p, s) in rows.iter().zip(&size) {
            assert_eq!(p.power, s.rejection_rate);
            if p.h_abs == 0.0 {
                assert!((p.envelope - 0.05).abs() < 1e-15);
                assert!((p.size_adjusted_power - 2.0 / 40.0).abs() < 1e-15);
            }
        }
        let no_null = Experiment { dgp: DgpGrid { h: vec![-1.0], ..exp.dgp.clone() }, ..exp };
        assert!(matches!(power_figure_data(&no_null), Err(Error::Config(_))));
    }

    #[test]
    fn replication_errors_are_counted() {
        // T = 2 leaves a single difference column, too short for the LRV estimator.
        let exp = Experiment {
            dgp: DgpGrid { n: vec![4], t: vec![2], h: vec![0.0], frameworks: vec![Framework::Panic], ..DgpGrid::default() },
            replications: 3,
            ..Experiment::default()
        };
        let rows = run(&exp).unwrap();
        assert!(rows.iter().all(|r| r.errors == 3 && r.replications == 0 && r.rejection_rate.is_nan()));
    }

    #[test]
    fn invalid_experiments() {
        let bad = |f: fn(&mut Experiment)| {
            let mut e = small(1);
            f(&mut e);
            matches!(e.validate(), Err(Error::Config(_)))
        };
        assert!(bad(|e| e.replications = 0));
        assert!(bad(|e| e.dgp.n.clear()));
        assert!(bad(|e| e.tests.clear()));
        assert!(bad(|e| e.alpha = 1.5));
        assert!(bad(|e| e.dgp.h = vec![1.0]));
    }

    #[test]
    fn json_schema_defaults() {
        let e: Experiment = serde_json::from_str(r#"{"dgp": {"n": [20], "T": [40]}, "replications": 3}"#).unwrap();
        assert_eq!(e.dgp.t, vec![40]);
        assert_eq!(e.dgp.ratios, vec![0.8]);
        assert_eq!(e.tests.len(), 6);
        assert!(serde_json::from_str::<Experiment>(r#"{"replicates": 3}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn critical_value_controls_level(draws in proptest::collection::vec(-5.0f64..5.0, 1..200), alpha in 0.01f64..0.5) {
            let cv = empirical_critical_value(&draws, alpha);
            let rate = rejection_rate(&draws, cv);
            prop_assert!(rate >= alpha - 1e-12);
            prop_assert!(rate <= alpha + (draws.len() as f64).recip() * (1.0 + draws.iter().filter(|&&x| x == cv).count() as f64) + 1e-12);
        }

        #[test]
        fn std_err_formula(rate in 0.0f64..=1.0, reps in 1usize..100_000) {
            let se = mc_std_err(rate, reps);
            prop_assert!(se >= 0.0 && se <= 0.5 / (reps as f64).sqrt() + 1e-15);
        }

        #[test]
        fn seeds_ignore_framework_and_h(h in -10.0f64..0.0, r in 0usize..1000) {
            let exp = small(1);
            let a = Cell { framework: Framework::Mp, n: 10, t: 30, ratio: 0.8, innovation: InnovationKind::Iid, distribution: InnovationLaw::Gaussian, h: 0.0 };
            let b = Cell { framework: Framework::Panic, h, ..a };
            prop_assert_eq!(exp.replication_seed(&a, r), exp.replication_seed(&b, r));
            prop_assert_ne!(exp.replication_seed(&a, r), exp.replication_seed(&a, r + 1));
        }
    }
}
