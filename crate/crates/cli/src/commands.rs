use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use panelur::asymptotics::{emit_power_curve, uniform_grid};
use panelur::dgp::{simulate as simulate_panel, DgpConfig};
use panelur::lan::{lan_convergence_report_with, LanDesign};
use panelur::lrv::{BandwidthRule, Kernel, LrvConfig};
use panelur::mc::{self, Experiment};
use panelur::pipeline::{run_tests, FactorChoice, PipelineConfig};
use panelur::statistics::TestName;
use panelur::verify::{self, Check};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::loader::{read_panel, write_panel};
use crate::{KernelArg, TestArgs};

const SELFTEST_SEED: u64 = 2024;

pub fn parse_bandwidth(s: &str) -> Result<BandwidthRule> {
    match s {
        "andrews" => Ok(BandwidthRule::Andrews),
        "newey-west" | "newey_west" => Ok(BandwidthRule::NeweyWest),
        _ => match s.strip_prefix("fixed=").map(str::parse::<f64>) {
            Some(Ok(b)) => Ok(BandwidthRule::Fixed(b)),
            _ => Err(CliError::Usage(format!(
                "--bandwidth must be andrews, newey-west or fixed=B, got '{s}'"
            ))),
        },
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| CliError::Data(format!("{}: invalid config: {e}", path.display())))
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Data(format!("cannot write CSV: {e}")))?;
    }
    w.flush().map_err(|e| CliError::Data(format!("cannot write CSV: {e}")))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct UnitReport {
    unit: String,
    omega2: f64,
    delta: f64,
}

#[derive(Debug, Serialize)]
struct StatisticReport {
    test: TestName,
    statistic: f64,
    p_value: f64,
    reject: bool,
}

#[derive(Debug, Serialize)]
struct TestReport {
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    k: usize,
    k_selected: bool,
    alpha: f64,
    kernel: String,
    bandwidth: String,
    prewhiten: bool,
    delta_hat: f64,
    j_hat: f64,
    units: Vec<UnitReport>,
    statistics: Vec<StatisticReport>,
}

pub fn test(args: &TestArgs) -> Result<()> {
    let lrv = LrvConfig {
        kernel: match args.kernel {
            KernelArg::Bartlett => Kernel::Bartlett,
            KernelArg::Qs => Kernel::QuadraticSpectral,
        },
        bandwidth: parse_bandwidth(&args.bandwidth)?,
        prewhiten: args.prewhiten,
    };
    lrv.validate()?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let factors = match args.k {
        Some(k) => FactorChoice::Known(k),
        None => FactorChoice::Select { k_max: args.kmax },
    };
    let panel = read_panel(open(&args.path)?)?;
    let res = run_tests(&panel, &PipelineConfig { factors, lrv, alpha: args.alpha })?;
    let report = TestReport {
        n: panel.n(),
        t: panel.t(),
        k: res.k,
        k_selected: args.k.is_none(),
        alpha: args.alpha,
        kernel: lrv.kernel.to_string(),
        bandwidth: lrv.bandwidth.to_string(),
        prewhiten: lrv.prewhiten,
        delta_hat: res.ump.delta_hat,
        j_hat: res.ump.j_hat,
        units: panel
            .unit_ids()
            .iter()
            .enumerate()
            .map(|(i, u)| UnitReport { unit: u.clone(), omega2: res.lrvs.omega2[i], delta: res.lrvs.delta[i] })
            .collect(),
        statistics: res
            .outcomes
            .iter()
            .map(|o| StatisticReport { test: o.name, statistic: o.statistic, p_value: o.p_value, reject: o.reject })
            .collect(),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e| CliError::io("<stdout>", e);
    if args.json {
        serde_json::to_writer_pretty(&mut out, &report)
            .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
        writeln!(out).map_err(io)?;
        return Ok(());
    }
    let how = if report.k_selected { format!("selected, kmax = {}", args.kmax) } else { "given".into() };
    writeln!(out, "panel: n = {}, T = {}", report.n, report.t).map_err(io)?;
    writeln!(out, "factors: K = {} ({how})", report.k).map_err(io)?;
    writeln!(
        out,
        "long-run variance: kernel = {}, bandwidth = {}, prewhiten = {}",
        report.kernel, report.bandwidth, report.prewhiten
    )
    .map_err(io)?;
    writeln!(out, "delta_hat = {}, j_hat = {}", report.delta_hat, report.j_hat).map_err(io)?;
    writeln!(out, "\n{:<12} {:>24} {:>24}", "unit", "omega2", "delta").map_err(io)?;
    for u in &report.units {
        writeln!(out, "{:<12} {:>24} {:>24}", u.unit, u.omega2, u.delta).map_err(io)?;
    }
    writeln!(out, "\n{:<10} {:>24} {:>24} {:>8}", "test", "statistic", "p_value", "reject").map_err(io)?;
    for s in &report.statistics {
        writeln!(out, "{:<10} {:>24} {:>24} {:>8}", s.test.as_str(), s.statistic, s.p_value, s.reject)
            .map_err(io)?;
    }
    writeln!(out, "\nrejections at alpha = {} (left-tailed, standard normal)", report.alpha).map_err(io)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Truth<'a> {
    config: &'a DgpConfig,
    /// `n x K`, one row per unit.
    loadings: Vec<Vec<f64>>,
    lrvs: &'a [f64],
    rho: &'a [f64],
}

/// `out.csv` -> `out.truth.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: DgpConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Data(format!("{}: {e}", config.display())))?;
    let sim = simulate_panel(&cfg)?;
    write_panel(&sim.panel, create(out)?)?;
    let l = &sim.true_loadings;
    let truth = Truth {
        config: &cfg,
        loadings: (0..l.nrows()).map(|i| l.row(i).iter().copied().collect()).collect(),
        lrvs: &sim.true_lrvs,
        rho: &sim.rho_used,
    };
    let path = sidecar_path(out);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &truth)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

pub fn mc(config: &Path, out: &Path, figure: bool, seed: Option<u64>) -> Result<()> {
    let mut exp: Experiment = read_config(config)?;
    if let Some(s) = seed {
        exp.base_seed = s;
    }
    exp.validate().map_err(|e| CliError::Data(format!("{}: {e}", config.display())))?;
    let w = create(out)?;
    if figure {
        write_csv(&mc::power_figure_data(&exp)?, w)
    } else {
        write_csv(&mc::run(&exp)?, w)
    }
}

#[derive(Debug, Serialize)]
struct EnvelopeRow {
    h_abs: f64,
    envelope: f64,
    mp_bn: f64,
}

pub fn envelope(alpha: f64, ratio: f64, max: f64, step: f64, out: Option<&Path>) -> Result<()> {
    let grid = uniform_grid(max, step)?;
    let curve = emit_power_curve(alpha, &grid, ratio)?;
    let rows: Vec<EnvelopeRow> = (0..grid.len())
        .map(|j| EnvelopeRow { h_abs: grid[j], envelope: curve.envelope[j], mp_bn: curve.local_power[j] })
        .collect();
    match out {
        Some(path) => write_csv(&rows, create(path)?),
        None => write_csv(&rows, std::io::stdout().lock()),
    }
}

pub fn selftest(seeds: usize, seed: Option<u64>) -> Result<()> {
    let base = seed.unwrap_or(SELFTEST_SEED);
    let mut checks = vec![
        Check::at_most("reference power curves", verify::envelope_discrepancy(21)?, 1e-10),
        Check::at_most("homogeneous reduction", verify::homogeneous_reduction(10, base)?, 1e-8),
        Check::at_most("intercept invariance", verify::intercept_invariance(10, base)?, 1e-8),
        Check::at_most("rotation invariance", verify::rotation_invariance(10, base)?, 1e-8),
        Check::at_most("running sums vs double loop", verify::running_sum_vs_naive(10, base)?, 1e-10),
        Check::at_most("SMW vs direct inverse", verify::smw_vs_direct(base)?, 1e-9),
        Check::at_most("blockwise vs Kronecker", verify::blockwise_vs_kronecker(10, base)?, 1e-10),
    ];
    let design = LanDesign { base_seed: base, ..LanDesign::default() };
    let rows = lan_convergence_report_with(&design, &[(10, 40), (20, 160)], seeds, None)?;
    let nonfinite = rows
        .iter()
        .filter(|r| ![r.mean, r.variance, r.skew, r.kurtosis].iter().all(|v| v.is_finite()))
        .count();
    checks.push(Check::at_most("oracle report is finite", nonfinite as f64, 0.0));

    let mut out = std::io::stdout().lock();
    let io = |e| CliError::io("<stdout>", e);
    for c in &checks {
        writeln!(out, "{c}").map_err(io)?;
    }
    writeln!(out, "\noracle convergence report ({seeds} seeds per size)").map_err(io)?;
    write_csv(&rows, &mut out)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::SelfTest(failed));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_flags() {
        assert_eq!(parse_bandwidth("andrews").unwrap(), BandwidthRule::Andrews);
        assert_eq!(parse_bandwidth("newey-west").unwrap(), BandwidthRule::NeweyWest);
        assert_eq!(parse_bandwidth("fixed=4.5").unwrap(), BandwidthRule::Fixed(4.5));
        for bad in ["fixed=", "fixed=x", "nw", ""] {
            assert_eq!(parse_bandwidth(bad).unwrap_err().exit_code(), 1);
        }
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(sidecar_path(Path::new("/tmp/panel.csv")), PathBuf::from("/tmp/panel.truth.json"));
    }
}
