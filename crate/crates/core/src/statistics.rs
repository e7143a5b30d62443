//! Feasible optimal panel unit-root statistics and the pooled competitors.
//!
//! * `t_ump = sqrt(2) * delta_hat` and `t_ump_emp = delta_hat / sqrt(j_hat)`,
//!   built from a factor-annihilating precision matrix.
//! * `P_a`, `P_b` on PANIC idiosyncratic paths.
//! * `t_a`, `t_b` on defactored levels.
//!
//! All statistics reject for small values. Time normalizations use the
//! number of difference columns `T'`. The optimal statistic and the PANIC
//! paths skip the first difference column.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorFit;
use crate::lrv::LrvSet;
use crate::normal;
use crate::panel::{DiffPanel, Panel};

const INNER_RCOND: f64 = 1e-12;
/// Pooled denominators below this fraction of the data's squared norm count as zero.
const DEGENERACY_TOL: f64 = 1e-14;

/// `Psi^{-1} = Omega^{-1} - Omega^{-1} L (L' Omega^{-1} L)^{-1} L' Omega^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    matrix: DMatrix<f64>,
}

impl PrecisionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestName {
    TUmp,
    TUmpEmp,
    PA,
    PB,
    TA,
    TB,
}

impl TestName {
    pub const ALL: [TestName; 6] =
        [TestName::TUmp, TestName::TUmpEmp, TestName::PA, TestName::PB, TestName::TA, TestName::TB];

    pub fn as_str(self) -> &'static str {
        match self {
            TestName::TUmp => "t_ump",
            TestName::TUmpEmp => "t_ump_emp",
            TestName::PA => "p_a",
            TestName::PB => "p_b",
            TestName::TA => "t_a",
            TestName::TB => "t_b",
        }
    }
}

impl std::fmt::Display for TestName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown test '{s}'")))
    }
}

/// A left-tailed test decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub name: TestName,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

impl TestOutcome {
    pub fn new(name: TestName, statistic: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !statistic.is_finite() {
            return Err(Error::Numerical(format!("{name} statistic is not finite")));
        }
        Ok(Self {
            name,
            statistic,
            p_value: normal::cdf(statistic),
            reject: statistic <= normal::quantile(alpha),
            alpha,
        })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmpIntermediates {
    pub delta_hat: f64,
    pub j_hat: f64,
    /// `(1/sqrt(n)) sum_i delta_i / omega2_i`
    pub correction: f64,
}

impl UmpIntermediates {
    pub fn t_ump(&self, alpha: f64) -> Result<TestOutcome> {
        TestOutcome::new(TestName::TUmp, std::f64::consts::SQRT_2 * self.delta_hat, alpha)
    }

    pub fn t_ump_emp(&self, alpha: f64) -> Result<TestOutcome> {
        if !(self.j_hat > 0.0) {
            return Err(Error::Degenerate(
                "empirical information is zero; the differenced data carry no variation".into(),
            ));
        }
        TestOutcome::new(TestName::TUmpEmp, self.delta_hat / self.j_hat.sqrt(), alpha)
    }
}

pub fn precision_matrix(lrvs: &LrvSet, loadings: &DMatrix<f64>) -> Result<PrecisionMatrix> {
    let n = lrvs.n();
    if let Some(i) = lrvs.omega2.iter().position(|w| !(*w > 0.0)) {
        return Err(Error::Domain(format!(
            "long-run variance of unit {} must be positive, got {}",
            i + 1,
            lrvs.omega2[i]
        )));
    }
    let inv_omega: Vec<f64> = lrvs.omega2.iter().map(|w| 1.0 / w).collect();
    let k = loadings.ncols();
    if k == 0 {
        return Ok(PrecisionMatrix { matrix: DMatrix::from_diagonal(&DVector::from_vec(inv_omega)) });
    }
    if loadings.nrows() != n {
        return Err(Error::Dimension(format!(
            "loadings have {} rows for {n} units",
            loadings.nrows()
        )));
    }
    // W = Omega^{-1} L, inner = L' Omega^{-1} L.
    let w = DMatrix::from_fn(n, k, |i, j| inv_omega[i] * loadings[(i, j)]);
    let inner = loadings.transpose() * &w;
    let inner_inv = invert_spd(&inner).ok_or_else(|| {
        Error::Numerical(format!(
            "loading cross-product (K = {k}) is singular across {n} units"
        ))
    })?;
    let mut matrix = -(&w * inner_inv * w.transpose());
    for i in 0..n {
        matrix[(i, i)] += inv_omega[i];
    }
    symmetrize(&mut matrix);
    Ok(PrecisionMatrix { matrix })
}

/// Inverse of a symmetric positive definite matrix, `None` if numerically singular.
fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > INNER_RCOND * max) {
        return None;
    }
    m.clone().cholesky().map(|c| c.inverse())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Intermediates of the feasible optimal statistic, computed with running
/// partial sums over difference columns `2..=T'`.
pub fn ump_statistics(d: &DiffPanel, psi: &PrecisionMatrix, lrvs: &LrvSet) -> Result<UmpIntermediates> {
    let (n, tp) = (d.n(), d.t());
    if tp < 2 {
        return Err(Error::Dimension(format!(
            "the optimal statistic needs at least 3 periods, got {}",
            tp + 1
        )));
    }
    if psi.n() != n || lrvs.n() != n {
        return Err(Error::Dimension(format!(
            "panel has {n} units, precision matrix {} and LRV set {}",
            psi.n(),
            lrvs.n()
        )));
    }
    let dm = d.to_matrix();
    // Columns of Psi * dZ; Psi * S_{t-1} is their running sum.
    let w = psi.matrix() * &dm;
    let mut s = DVector::zeros(n);
    let mut psi_s = DVector::zeros(n);
    let (mut cross, mut info) = (0.0, 0.0);
    for t in 1..tp {
        cross += psi_s.dot(&dm.column(t));
        info += s.dot(&psi_s);
        s += dm.column(t);
        psi_s += w.column(t);
    }
    let nf = n as f64;
    let tf = tp as f64;
    let correction = lrvs.delta.iter().zip(&lrvs.omega2).map(|(d, w)| d / w).sum::<f64>() / nf.sqrt();
    Ok(UmpIntermediates {
        delta_hat: cross / (nf.sqrt() * tf) - correction,
        j_hat: info / (nf * tf * tf),
        correction,
    })
}

pub fn t_ump(d: &DiffPanel, psi: &PrecisionMatrix, lrvs: &LrvSet, alpha: f64) -> Result<TestOutcome> {
    ump_statistics(d, psi, lrvs)?.t_ump(alpha)
}

pub fn t_ump_emp(d: &DiffPanel, psi: &PrecisionMatrix, lrvs: &LrvSet, alpha: f64) -> Result<TestOutcome> {
    ump_statistics(d, psi, lrvs)?.t_ump_emp(alpha)
}

/// Lagged and current partial-sum paths of a residual panel: `(E_{-1}, E)`.
pub fn idiosyncratic_paths(residuals: &DiffPanel) -> (Panel, Panel) {
    let (n, t) = (residuals.n(), residuals.t());
    let mut lagged = Vec::with_capacity(n * t);
    let mut current = Vec::with_capacity(n * t);
    for row in residuals.units() {
        let mut acc = 0.0;
        for &v in row {
            lagged.push(acc);
            acc += v;
            current.push(acc);
        }
    }
    (
        Panel::from_row_major(n, t, lagged).expect("shape from residuals"),
        Panel::from_row_major(n, t, current).expect("shape from residuals"),
    )
}

/// PANIC estimates of the idiosyncratic levels from a factor fit.
pub fn panic_idiosyncratic(fit: &FactorFit) -> (Panel, Panel) {
    idiosyncratic_paths(&fit.residuals)
}

/// `P_a`, `P_b` from explicit paths and time normalization `t_norm`.
pub fn bn_from_paths(
    lagged: &Panel,
    current: &Panel,
    lrvs: &LrvSet,
    t_norm: f64,
    alpha: f64,
) -> Result<(TestOutcome, TestOutcome)> {
    let n = lagged.n();
    if current.n() != n || current.t() != lagged.t() || lrvs.n() != n {
        return Err(Error::Dimension("BN paths and LRV set disagree in shape".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let cross = dot(lagged.values(), current.values());
    let denom = dot(lagged.values(), lagged.values());
    let scale = dot(current.values(), current.values());
    if !(denom > DEGENERACY_TOL * scale) {
        return Err(Error::Degenerate("lagged idiosyncratic paths are identically zero".into()));
    }
    pooled_outcomes(cross, denom, n, t_norm, lrvs, alpha, (TestName::PA, TestName::PB))
}

/// `(num - nT delta) / den`, then the `a` and `b` studentizations.
fn pooled_outcomes(
    cross: f64,
    denom: f64,
    n: usize,
    t_norm: f64,
    lrvs: &LrvSet,
    alpha: f64,
    names: (TestName, TestName),
) -> Result<(TestOutcome, TestOutcome)> {
    let nf = n as f64;
    let rho = (cross - nf * t_norm * lrvs.pooled_delta) / denom;
    let scaled = nf.sqrt() * t_norm * (rho - 1.0);
    let w2 = lrvs.pooled_omega2;
    let phi4 = lrvs.pooled_phi4;
    if !(phi4 > 0.0) {
        return Err(Error::Degenerate("pooled fourth moment of the LRVs is zero".into()));
    }
    let a = scaled / (2.0 * phi4 / (w2 * w2)).sqrt();
    let b = scaled * (denom / (nf * t_norm * t_norm) * w2 / phi4).sqrt();
    Ok((TestOutcome::new(names.0, a, alpha)?, TestOutcome::new(names.1, b, alpha)?))
}

/// `P_a`, `P_b` on the PANIC paths of difference columns `2..=T'`.
pub fn bn_tests(fit: &FactorFit, lrvs: &LrvSet, alpha: f64) -> Result<(TestOutcome, TestOutcome)> {
    let tp = fit.residuals.t();
    if tp < 2 {
        return Err(Error::Dimension(format!("BN tests need at least 3 periods, got {}", tp + 1)));
    }
    let (lagged, current) = idiosyncratic_paths(&fit.residuals.skip_periods(1)?);
    bn_from_paths(&lagged, &current, lrvs, tp as f64, alpha)
}

/// Intercept-free levels for [`mp_tests`] on the index set of the other
/// statistics: a zero column followed by partial sums of difference columns
/// `2..=T'`, so the panel has `T'` columns.
pub fn mp_levels(d: &DiffPanel) -> Result<Panel> {
    let (n, tp) = (d.n(), d.t());
    if tp < 2 {
        return Err(Error::Dimension(format!("MP tests need at least 3 periods, got {}", tp + 1)));
    }
    let mut values = Vec::with_capacity(n * tp);
    for row in d.units() {
        values.push(0.0);
        let mut acc = 0.0;
        for &v in &row[1..] {
            acc += v;
            values.push(acc);
        }
    }
    Panel::from_row_major(n, tp, values)
}

/// `t_a`, `t_b` on levels `Y_1..Y_T` (columns of `y`) with `Y_0 = 0`.
pub fn mp_tests(
    y: &Panel,
    loadings: &DMatrix<f64>,
    lrvs: &LrvSet,
    alpha: f64,
) -> Result<(TestOutcome, TestOutcome)> {
    let (n, t) = (y.n(), y.t());
    if lrvs.n() != n {
        return Err(Error::Dimension(format!("panel has {n} units, LRV set {}", lrvs.n())));
    }
    let ym = y.to_matrix();
    let qy = if loadings.ncols() == 0 {
        ym.clone()
    } else {
        if loadings.nrows() != n {
            return Err(Error::Dimension(format!(
                "loadings have {} rows for {n} units",
                loadings.nrows()
            )));
        }
        let gram = loadings.transpose() * loadings;
        let inv = invert_spd(&gram).ok_or_else(|| {
            Error::Numerical(format!("loading Gram matrix is singular across {n} units"))
        })?;
        let coef = inv * (loadings.transpose() * &ym);
        &ym - loadings * coef
    };
    // Q is idempotent, so Y_t' Q Y_{t-1} = (QY_t)' Y_{t-1}.
    let (mut cross, mut denom) = (0.0, 0.0);
    for c in 1..t {
        cross += qy.column(c).dot(&ym.column(c - 1));
        denom += qy.column(c - 1).dot(&ym.column(c - 1));
    }
    if !(denom > DEGENERACY_TOL * ym.norm_squared()) {
        return Err(Error::Degenerate("defactored lagged levels are identically zero".into()));
    }
    pooled_outcomes(cross, denom, n, t as f64, lrvs, alpha, (TestName::TA, TestName::TB))
}
