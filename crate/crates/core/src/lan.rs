//! Infeasible central sequences with known nuisance parameters.
//!
//! These oracles evaluate the exact log-likelihood-ratio terms of the PANIC
//! and MP experiments and their successive simplifications:
//!
//! | quantity          | data | weight matrix                                   |
//! |-------------------|------|-------------------------------------------------|
//! | `delta_panic`     | dE   | `Sigma_eta^{-1}`                                |
//! | `delta`           | dE   | `Omega_eta^{-1} (x) I_T` plus LRV correction    |
//! | `delta_mp`        | dY   | `Sigma_eps^{-1}`                                |
//! | `delta_mp_tilde`  | dY   | `(L Omega_F L' + Omega_eta)^{-1} (x) I_T`       |
//! | `delta_star`      | dY   | factor-annihilating projection `(x) I_T`        |
//!
//! Every quadratic form pairs the lagged partial sums `A x` with the data `x`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{derive_seed, draw_loadings, draw_lrvs, stream};
use crate::error::{Error, Result};
use crate::lrv::LrvSet;
use crate::panel::{lagged_cumsum, DiffPanel};
use crate::parallel;
use crate::statistics::precision_matrix;

/// Largest `n T` for the dense `Sigma_eps` oracle.
pub const DENSE_GUARD: usize = 4000;

/// Covariance matrix of a length-`T` stationary series.
#[derive(Debug, Clone)]
pub enum Covariance {
    /// `scale * I`.
    Identity { scale: f64 },
    /// Stationary AR(1) with innovation variance `sigma2`.
    Ar1 { phi: f64, sigma2: f64 },
    /// MA(1) with innovation variance `sigma2`.
    Ma1 { theta: f64, sigma2: f64 },
    Dense { matrix: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
}

impl Covariance {
    /// AR(1) scaled to long-run variance `lrv`.
    pub fn ar1_with_lrv(phi: f64, lrv: f64) -> Self {
        Covariance::Ar1 { phi, sigma2: lrv * (1.0 - phi).powi(2) }
    }

    /// MA(1) scaled to long-run variance `lrv`.
    pub fn ma1_with_lrv(theta: f64, lrv: f64) -> Self {
        Covariance::Ma1 { theta, sigma2: lrv / (1.0 + theta).powi(2) }
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension("covariance matrix must be square".into()));
        }
        if (&matrix - matrix.transpose()).abs().max() > 1e-10 * (1.0 + matrix.abs().max()) {
            return Err(Error::Domain("covariance matrix is not symmetric".into()));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::Numerical("covariance matrix is not positive definite".into()))?;
        Ok(Covariance::Dense { matrix, chol })
    }

    fn validate(&self, t: usize) -> Result<()> {
        let ok = match self {
            Covariance::Identity { scale } => *scale > 0.0,
            Covariance::Ar1 { phi, sigma2 } => phi.abs() < 1.0 && *sigma2 > 0.0,
            Covariance::Ma1 { theta, sigma2 } => theta.abs() < 1.0 && *sigma2 > 0.0,
            Covariance::Dense { matrix, .. } => {
                if matrix.nrows() != t {
                    return Err(Error::Dimension(format!(
                        "dense covariance is {}x{} but T = {t}",
                        matrix.nrows(),
                        matrix.ncols()
                    )));
                }
                true
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid covariance parameters: {self:?}")))
        }
    }

    fn autocovariance(&self, m: usize) -> Option<f64> {
        match *self {
            Covariance::Identity { scale } => Some(if m == 0 { scale } else { 0.0 }),
            Covariance::Ar1 { phi, sigma2 } => Some(sigma2 / (1.0 - phi * phi) * phi.powi(m as i32)),
            Covariance::Ma1 { theta, sigma2 } => Some(match m {
                0 => sigma2 * (1.0 + theta * theta),
                1 => sigma2 * theta,
                _ => 0.0,
            }),
            Covariance::Dense { .. } => None,
        }
    }

    pub fn to_dense(&self, t: usize) -> DMatrix<f64> {
        match self {
            Covariance::Dense { matrix, .. } => matrix.clone(),
            _ => DMatrix::from_fn(t, t, |s, u| {
                self.autocovariance(s.abs_diff(u)).expect("structured covariance")
            }),
        }
    }

    /// `1' Sigma 1 / T`.
    pub fn lrv_approx(&self, t: usize) -> f64 {
        match self {
            Covariance::Dense { matrix, .. } => matrix.sum() / t as f64,
            _ => {
                let g = |m| self.autocovariance(m).expect("structured covariance");
                let tail: f64 = (1..t).map(|m| (t - m) as f64 * g(m)).sum();
                (t as f64 * g(0) + 2.0 * tail) / t as f64
            }
        }
    }

    /// `tr(A Sigma) / T`.
    pub fn oslrv_approx(&self, t: usize) -> f64 {
        match self {
            Covariance::Dense { matrix, .. } => {
                (0..t).map(|s| (0..s).map(|u| matrix[(s, u)]).sum::<f64>()).sum::<f64>() / t as f64
            }
            _ => {
                let g = |m| self.autocovariance(m).expect("structured covariance");
                (1..t).map(|m| (t - m) as f64 * g(m)).sum::<f64>() / t as f64
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Covariance::Dense { matrix, .. } => matrix[(0, 0)],
            _ => self.autocovariance(0).expect("structured covariance"),
        }
    }

    /// `Sigma^{-1} x`.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = x.len();
        match *self {
            Covariance::Identity { scale } => Ok(x.iter().map(|v| v / scale).collect()),
            Covariance::Ar1 { phi, sigma2 } => {
                if t == 1 {
                    return Ok(vec![x[0] * (1.0 - phi * phi) / sigma2]);
                }
                Ok((0..t)
                    .map(|s| {
                        let diag = if s == 0 || s == t - 1 { 1.0 } else { 1.0 + phi * phi };
                        let mut v = diag * x[s];
                        if s > 0 {
                            v -= phi * x[s - 1];
                        }
                        if s + 1 < t {
                            v -= phi * x[s + 1];
                        }
                        v / sigma2
                    })
                    .collect())
            }
            Covariance::Ma1 { theta, sigma2 } => {
                Ok(thomas(sigma2 * theta, sigma2 * (1.0 + theta * theta), x))
            }
            Covariance::Dense { ref matrix, ref chol } => {
                if matrix.nrows() != t {
                    return Err(Error::Dimension(format!(
                        "dense covariance is {0}x{0} but the series has length {t}",
                        matrix.nrows()
                    )));
                }
                Ok(chol.solve(&DVector::from_column_slice(x)).as_slice().to_vec())
            }
        }
    }

    /// Adds `w * Sigma^{-1}` to a `T x T` block.
    fn add_scaled_inverse(&self, w: f64, block: &mut nalgebra::DMatrixViewMut<'_, f64>) {
        let t = block.nrows();
        match *self {
            Covariance::Identity { scale } => {
                for s in 0..t {
                    block[(s, s)] += w / scale;
                }
            }
            Covariance::Ar1 { phi, sigma2 } if t > 1 => {
                let c = w / sigma2;
                for s in 0..t {
                    let diag = if s == 0 || s == t - 1 { 1.0 } else { 1.0 + phi * phi };
                    block[(s, s)] += c * diag;
                    if s + 1 < t {
                        block[(s, s + 1)] -= c * phi;
                        block[(s + 1, s)] -= c * phi;
                    }
                }
            }
            _ => {
                let mut e = vec![0.0; t];
                for u in 0..t {
                    e[u] = 1.0;
                    let col = self.solve(&e).expect("validated covariance");
                    e[u] = 0.0;
                    for s in 0..t {
                        block[(s, u)] += w * col[s];
                    }
                }
            }
        }
    }

    /// One Gaussian draw of length `t`.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<f64> {
        let mut z = || -> f64 { StandardNormal.sample(rng) };
        match *self {
            Covariance::Identity { scale } => (0..t).map(|_| scale.sqrt() * z()).collect(),
            Covariance::Ar1 { phi, sigma2 } => {
                let sd = sigma2.sqrt();
                let mut x = sd / (1.0 - phi * phi).sqrt() * z();
                let mut out = Vec::with_capacity(t);
                for s in 0..t {
                    if s > 0 {
                        x = phi * x + sd * z();
                    }
                    out.push(x);
                }
                out
            }
            Covariance::Ma1 { theta, sigma2 } => {
                let sd = sigma2.sqrt();
                let mut prev = z();
                (0..t)
                    .map(|_| {
                        let cur = z();
                        let v = sd * (cur + theta * prev);
                        prev = cur;
                        v
                    })
                    .collect()
            }
            Covariance::Dense { ref chol, .. } => {
                let draws = DVector::from_fn(t, |_, _| z());
                (chol.l() * draws).as_slice().to_vec()
            }
        }
    }
}

/// Solves the symmetric Toeplitz tridiagonal system `tridiag(off, diag, off) y = x`.
fn thomas(off: f64, diag: f64, x: &[f64]) -> Vec<f64> {
    let t = x.len();
    let mut c = vec![0.0; t];
    let mut d = vec![0.0; t];
    let mut denom = diag;
    c[0] = off / denom;
    d[0] = x[0] / denom;
    for s in 1..t {
        denom = diag - off * c[s - 1];
        c[s] = off / denom;
        d[s] = (x[s] - off * d[s - 1]) / denom;
    }
    for s in (0..t.saturating_sub(1)).rev() {
        d[s] -= c[s] * d[s + 1];
    }
    d
}

/// Known nuisance parameters of the Gaussian experiments.
#[derive(Debug, Clone)]
pub struct OracleNuisance {
    t: usize,
    pub sigma_eta: Vec<Covariance>,
    pub sigma_f: Vec<Covariance>,
    pub loadings: DMatrix<f64>,
    /// `1' Sigma_eta_i 1 / T`
    pub lrv_eta: Vec<f64>,
    /// `tr(A Sigma_eta_i) / T`
    pub oslrv_eta: Vec<f64>,
    /// `1' Sigma_f_k 1 / T`
    pub lrv_f: Vec<f64>,
}

impl OracleNuisance {
    pub fn new(
        t: usize,
        sigma_eta: Vec<Covariance>,
        sigma_f: Vec<Covariance>,
        loadings: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, k) = (sigma_eta.len(), sigma_f.len());
        if n == 0 || t == 0 {
            return Err(Error::Dimension("oracle needs n >= 1 and T >= 1".into()));
        }
        if loadings.nrows() != n || loadings.ncols() != k {
            return Err(Error::Dimension(format!(
                "loadings are {}x{} for n = {n}, K = {k}",
                loadings.nrows(),
                loadings.ncols()
            )));
        }
        for c in sigma_eta.iter().chain(&sigma_f) {
            c.validate(t)?;
        }
        let lrv_eta: Vec<f64> = sigma_eta.iter().map(|c| c.lrv_approx(t)).collect();
        if let Some(i) = lrv_eta.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Numerical(format!(
                "approximate long-run variance of unit {} is {}",
                i + 1,
                lrv_eta[i]
            )));
        }
        let oslrv_eta = sigma_eta.iter().map(|c| c.oslrv_approx(t)).collect();
        let lrv_f = sigma_f.iter().map(|c| c.lrv_approx(t)).collect();
        Ok(Self { t, sigma_eta, sigma_f, loadings, lrv_eta, oslrv_eta, lrv_f })
    }

    pub fn n(&self) -> usize {
        self.sigma_eta.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k(&self) -> usize {
        self.sigma_f.len()
    }

    /// `(1/sqrt(n)) sum_i delta_i / omega2_i`
    pub fn correction(&self) -> f64 {
        let n = self.n() as f64;
        self.oslrv_eta.iter().zip(&self.lrv_eta).map(|(d, w)| d / w).sum::<f64>() / n.sqrt()
    }

    fn lrv_set(&self) -> Result<LrvSet> {
        let gamma0 = self.sigma_eta.iter().map(Covariance::variance).collect();
        LrvSet::from_parts(self.lrv_eta.clone(), self.oslrv_eta.clone(), gamma0)
    }

    fn check(&self, d: &DiffPanel) -> Result<()> {
        if d.n() != self.n() || d.t() != self.t {
            return Err(Error::Dimension(format!(
                "panel is {}x{} but the nuisance describes {}x{}",
                d.n(),
                d.t(),
                self.n(),
                self.t
            )));
        }
        Ok(())
    }
}

fn scale_pair(n: usize, t: usize) -> (f64, f64) {
    let (n, t) = (n as f64, t as f64);
    (1.0 / (n.sqrt() * t), 1.0 / (n * t * t))
}

/// Exact PANIC central sequence and information, computed unit by unit.
pub fn delta_panic_exact(de: &DiffPanel, nu: &OracleNuisance) -> Result<(f64, f64)> {
    nu.check(de)?;
    let (mut cross, mut info) = (0.0, 0.0);
    for (x, cov) in de.units().zip(&nu.sigma_eta) {
        let lag = lagged_cumsum(x);
        let w = cov.solve(x)?;
        cross += dot(&lag, &w);
        info += dot(&lag, &cov.solve(&lag)?);
    }
    let (a, b) = scale_pair(de.n(), de.t());
    Ok((a * cross, b * info))
}

/// Central sequence with variances replaced by approximate long-run variances.
pub fn delta_simplified(de: &DiffPanel, nu: &OracleNuisance) -> Result<f64> {
    nu.check(de)?;
    let cross: f64 = de
        .units()
        .zip(&nu.lrv_eta)
        .map(|(x, w)| dot(&lagged_cumsum(x), x) / w)
        .sum();
    Ok(scale_pair(de.n(), de.t()).0 * cross - nu.correction())
}

/// `sum_ij P_ij <A x_i, x_j>`, the quadratic form with weight `P (x) I_T`.
pub fn kron_cross(d: &DiffPanel, p: &DMatrix<f64>) -> f64 {
    let x = d.to_matrix();
    let lags: Vec<Vec<f64>> = d.units().map(lagged_cumsum).collect();
    let lag = DMatrix::from_fn(d.n(), d.t(), |i, s| lags[i][s]);
    let g = &lag * x.transpose();
    p.component_mul(&g).sum()
}

/// `Psi_bar = L Omega_F L' + Omega_eta`.
pub fn psi_bar(nu: &OracleNuisance) -> DMatrix<f64> {
    let omega_f = DMatrix::from_diagonal(&DVector::from_vec(nu.lrv_f.clone()));
    let mut m = &nu.loadings * omega_f * nu.loadings.transpose();
    for (i, w) in nu.lrv_eta.iter().enumerate() {
        m[(i, i)] += w;
    }
    m
}

/// `Psi_bar^{-1}` by the Woodbury identity.
pub fn psi_bar_inverse(nu: &OracleNuisance) -> Result<DMatrix<f64>> {
    let n = nu.n();
    let inv_omega: Vec<f64> = nu.lrv_eta.iter().map(|w| 1.0 / w).collect();
    if nu.k() == 0 {
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(inv_omega)));
    }
    if let Some(k) = nu.lrv_f.iter().position(|w| !(*w > 0.0)) {
        return Err(Error::Numerical(format!("factor {} has zero long-run variance", k + 1)));
    }
    let w = DMatrix::from_fn(n, nu.k(), |i, j| inv_omega[i] * nu.loadings[(i, j)]);
    let mut inner = nu.loadings.transpose() * &w;
    for (k, f) in nu.lrv_f.iter().enumerate() {
        inner[(k, k)] += 1.0 / f;
    }
    let inner_inv = Cholesky::new(inner)
        .ok_or_else(|| Error::Numerical("SMW inner matrix is not positive definite".into()))?
        .inverse();
    let mut out = -(&w * inner_inv * w.transpose());
    for i in 0..n {
        out[(i, i)] += inv_omega[i];
    }
    Ok(out)
}

/// Simplified MP central sequence with weight `Psi_bar^{-1} (x) I_T`.
pub fn delta_mp_simplified(dy: &DiffPanel, nu: &OracleNuisance) -> Result<f64> {
    nu.check(dy)?;
    let p = psi_bar_inverse(nu)?;
    Ok(scale_pair(dy.n(), dy.t()).0 * kron_cross(dy, &p) - nu.correction())
}

/// Central sequence with the factor-annihilating projection weight.
pub fn delta_star(dy: &DiffPanel, nu: &OracleNuisance) -> Result<f64> {
    nu.check(dy)?;
    let p = precision_matrix(&nu.lrv_set()?, &nu.loadings)?;
    Ok(scale_pair(dy.n(), dy.t()).0 * kron_cross(dy, p.matrix()) - nu.correction())
}

/// `Sigma_eps = sum_k l_k l_k' (x) Sigma_f_k + blockdiag(Sigma_eta_i)`, dense.
pub fn sigma_eps_dense(nu: &OracleNuisance) -> Result<DMatrix<f64>> {
    let (n, t) = (nu.n(), nu.t());
    if n * t > DENSE_GUARD {
        return Err(Error::Resource(format!(
            "dense MP oracle limited to nT <= {DENSE_GUARD}, got {}",
            n * t
        )));
    }
    let mut m = DMatrix::zeros(n * t, n * t);
    for (k, cov) in nu.sigma_f.iter().enumerate() {
        let l = nu.loadings.column(k);
        m += (&l * l.transpose()).kronecker(&cov.to_dense(t));
    }
    for (i, cov) in nu.sigma_eta.iter().enumerate() {
        let mut block = m.view_mut((i * t, i * t), (t, t));
        block += cov.to_dense(t);
    }
    Ok(m)
}

/// Exact MP central sequence and information via a dense `nT x nT` solve.
pub fn delta_mp_exact(dy: &DiffPanel, nu: &OracleNuisance) -> Result<(f64, f64)> {
    nu.check(dy)?;
    let chol = Cholesky::new(sigma_eps_dense(nu)?)
        .ok_or_else(|| Error::Numerical("Sigma_eps is not positive definite".into()))?;
    let x = DVector::from_column_slice(dy.values());
    let lag = DVector::from_vec(dy.units().flat_map(lagged_cumsum).collect());
    let (a, b) = scale_pair(dy.n(), dy.t());
    Ok((a * lag.dot(&chol.solve(&x)), b * lag.dot(&chol.solve(&lag))))
}

/// Exact `Sigma_eps^{-1}` through Woodbury on the `K T` factor block:
/// `Sigma_eta^{-1} - Sigma_eta^{-1} U M^{-1} U' Sigma_eta^{-1}` with
/// `U = [l_k (x) I_T]` and `M = blockdiag(Sigma_f)^{-1} + U' Sigma_eta^{-1} U`.
#[derive(Debug, Clone)]
pub struct MpSolver {
    nu: OracleNuisance,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl MpSolver {
    pub fn new(nu: &OracleNuisance) -> Result<Self> {
        let (n, t, k) = (nu.n(), nu.t(), nu.k());
        if k == 0 {
            return Ok(Self { nu: nu.clone(), chol: None });
        }
        let mut m = DMatrix::zeros(k * t, k * t);
        for a in 0..k {
            nu.sigma_f[a].add_scaled_inverse(1.0, &mut m.view_mut((a * t, a * t), (t, t)));
            for b in 0..k {
                let mut block = m.view_mut((a * t, b * t), (t, t));
                for i in 0..n {
                    let w = nu.loadings[(i, a)] * nu.loadings[(i, b)];
                    if w != 0.0 {
                        nu.sigma_eta[i].add_scaled_inverse(w, &mut block);
                    }
                }
            }
        }
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Numerical("Woodbury factor block is not positive definite".into()))?;
        Ok(Self { nu: nu.clone(), chol: Some(chol) })
    }

    pub fn nuisance(&self) -> &OracleNuisance {
        &self.nu
    }

    /// `Sigma_eps^{-1} x` for a unit-major `n T` vector.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (n, t, k) = (self.nu.n(), self.nu.t(), self.nu.k());
        let mut a = Vec::with_capacity(n * t);
        for (i, cov) in self.nu.sigma_eta.iter().enumerate() {
            a.extend(cov.solve(&x[i * t..(i + 1) * t])?);
        }
        let Some(chol) = &self.chol else { return Ok(a) };
        let mut b = DVector::zeros(k * t);
        for j in 0..k {
            for i in 0..n {
                let l = self.nu.loadings[(i, j)];
                for s in 0..t {
                    b[j * t + s] += l * a[i * t + s];
                }
            }
        }
        let c = chol.solve(&b);
        for (i, cov) in self.nu.sigma_eta.iter().enumerate() {
            let uc: Vec<f64> = (0..t)
                .map(|s| (0..k).map(|j| self.nu.loadings[(i, j)] * c[j * t + s]).sum())
                .collect();
            for (dst, v) in a[i * t..(i + 1) * t].iter_mut().zip(cov.solve(&uc)?) {
                *dst -= v;
            }
        }
        Ok(a)
    }

    /// Exact MP central sequence and information.
    pub fn delta(&self, dy: &DiffPanel) -> Result<(f64, f64)> {
        self.nu.check(dy)?;
        let lag: Vec<f64> = dy.units().flat_map(lagged_cumsum).collect();
        let (a, b) = scale_pair(dy.n(), dy.t());
        Ok((a * dot(&lag, &self.solve(dy.values())?), b * dot(&lag, &self.solve(&lag)?)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nuisance design of the convergence report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LanDesign {
    pub k: usize,
    pub phi_eta: f64,
    pub phi_f: f64,
    pub lrv_ratio: f64,
    pub base_seed: u64,
}

impl Default for LanDesign {
    fn default() -> Self {
        Self { k: 1, phi_eta: 0.4, phi_f: 0.4, lrv_ratio: 0.8, base_seed: 2019 }
    }
}

impl LanDesign {
    /// Fixed loadings and AR(1) covariances for size `(n, T)`.
    pub fn nuisance(&self, n: usize, t: usize) -> Result<OracleNuisance> {
        let seed = derive_seed(self.base_seed, &[n as u64, t as u64]);
        let loadings = draw_loadings(n, self.k, seed);
        let sigma_eta = draw_lrvs(n, self.lrv_ratio, seed)?
            .into_iter()
            .map(|w| Covariance::ar1_with_lrv(self.phi_eta, w))
            .collect();
        let sigma_f = (0..self.k).map(|_| Covariance::ar1_with_lrv(self.phi_f, 1.0)).collect();
        OracleNuisance::new(t, sigma_eta, sigma_f, loadings)
    }
}

/// Null draws `(dE, dY)` with `dE = eta` and `dY = eta + L f`.
pub fn simulate_null(nu: &OracleNuisance, seed: u64) -> Result<(DiffPanel, DiffPanel)> {
    let (n, t) = (nu.n(), nu.t());
    let mut rng = stream(seed, 0);
    let f: Vec<Vec<f64>> = nu.sigma_f.iter().map(|c| c.sample(t, &mut rng)).collect();
    let mut de = Vec::with_capacity(n * t);
    let mut dy = Vec::with_capacity(n * t);
    for (i, cov) in nu.sigma_eta.iter().enumerate() {
        let eta = cov.sample(t, &mut rng);
        for s in 0..t {
            let common: f64 = f.iter().enumerate().map(|(k, fk)| nu.loadings[(i, k)] * fk[s]).sum();
            de.push(eta[s]);
            dy.push(eta[s] + common);
        }
    }
    Ok((DiffPanel::from_row_major(n, t, de)?, DiffPanel::from_row_major(n, t, dy)?))
}

/// All oracle quantities for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LanDraw {
    pub delta_panic: f64,
    pub j_panic: f64,
    pub delta: f64,
    pub delta_mp: f64,
    pub j_mp: f64,
    pub delta_mp_tilde: f64,
    pub delta_star: f64,
}

pub fn lan_draw(solver: &MpSolver, seed: u64) -> Result<LanDraw> {
    let nu = solver.nuisance();
    let (de, dy) = simulate_null(nu, seed)?;
    let (delta_panic, j_panic) = delta_panic_exact(&de, nu)?;
    let (delta_mp, j_mp) = solver.delta(&dy)?;
    Ok(LanDraw {
        delta_panic,
        j_panic,
        delta: delta_simplified(&de, nu)?,
        delta_mp,
        j_mp,
        delta_mp_tilde: delta_mp_simplified(&dy, nu)?,
        delta_star: delta_star(&dy, nu)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub quantity: String,
    /// Median absolute value; reported for the approximation gaps only.
    pub median_abs_diff: Option<f64>,
    pub mean: f64,
    pub variance: f64,
    pub skew: f64,
    pub kurtosis: f64,
    pub seeds: usize,
}

/// Names of the four approximation gaps in report order.
pub const GAP_QUANTITIES: [&str; 4] = ["gap_panic", "gap_mp", "gap_projection", "gap_equivalence"];

pub fn lan_convergence_report(sizes: &[(usize, usize)], seeds: usize) -> Result<Vec<LanRow>> {
    lan_convergence_report_with(&LanDesign::default(), sizes, seeds, None)
}

pub fn lan_convergence_report_with(
    design: &LanDesign,
    sizes: &[(usize, usize)],
    seeds: usize,
    workers: Option<usize>,
) -> Result<Vec<LanRow>> {
    let mut rows = Vec::new();
    if seeds == 0 {
        return Ok(rows);
    }
    for &(n, t) in sizes {
        let solver = MpSolver::new(&design.nuisance(n, t)?)?;
        let base = derive_seed(design.base_seed, &[n as u64, t as u64, 1]);
        let draws = parallel::install(workers, || {
            (0..seeds as u64)
                .into_par_iter()
                .map(|r| lan_draw(&solver, derive_seed(base, &[r])))
                .collect::<Result<Vec<_>>>()
        })??;
        let series: [(&str, Box<dyn Fn(&LanDraw) -> f64>, bool); 11] = [
            ("delta_panic", Box::new(|d| d.delta_panic), false),
            ("j_panic", Box::new(|d| d.j_panic), false),
            ("delta", Box::new(|d| d.delta), false),
            ("delta_mp", Box::new(|d| d.delta_mp), false),
            ("j_mp", Box::new(|d| d.j_mp), false),
            ("delta_mp_tilde", Box::new(|d| d.delta_mp_tilde), false),
            ("delta_star", Box::new(|d| d.delta_star), false),
            (GAP_QUANTITIES[0], Box::new(|d| d.delta_panic - d.delta), true),
            (GAP_QUANTITIES[1], Box::new(|d| d.delta_mp - d.delta_mp_tilde), true),
            (GAP_QUANTITIES[2], Box::new(|d| d.delta_mp_tilde - d.delta_star), true),
            (GAP_QUANTITIES[3], Box::new(|d| d.delta_star - d.delta), true),
        ];
        for (name, f, gap) in series.iter() {
            let v: Vec<f64> = draws.iter().map(f).collect();
            let m = Moments::of(&v);
            rows.push(LanRow {
                n,
                t,
                quantity: name.to_string(),
                median_abs_diff: gap.then(|| median(v.iter().map(|x| x.abs()).collect())),
                mean: m.mean,
                variance: m.variance,
                skew: m.skew,
                kurtosis: m.kurtosis,
                seeds,
            });
        }
    }
    Ok(rows)
}

struct Moments {
    mean: f64,
    variance: f64,
    skew: f64,
    kurtosis: f64,
}

impl Moments {
    fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let central = |p: i32| v.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
        let m2 = central(2);
        let variance = if v.len() > 1 { m2 * n / (n - 1.0) } else { 0.0 };
        let (skew, kurtosis) = if m2 > 0.0 {
            (central(3) / m2.powf(1.5), central(4) / (m2 * m2))
        } else {
            (0.0, 0.0)
        };
        Self { mean, variance, skew, kurtosis }
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::cumsum_matrix;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(t, t, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(t, t) * 0.5
    }

    fn identity_nuisance(n: usize, t: usize, loadings: DMatrix<f64>) -> OracleNuisance {
        let k = loadings.ncols();
        OracleNuisance::new(
            t,
            vec![Covariance::Identity { scale: 1.0 }; n],
            vec![Covariance::Identity { scale: 1.0 }; k],
            loadings,
        )
        .unwrap()
    }

    #[test]
    fn structured_covariances_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = 9;
        let x: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        for cov in [
            Covariance::Identity { scale: 2.5 },
            Covariance::Ar1 { phi: 0.6, sigma2: 0.7 },
            Covariance::Ar1 { phi: -0.3, sigma2: 1.2 },
            Covariance::Ma1 { theta: 0.4, sigma2: 0.9 },
            Covariance::Ma1 { theta: -0.8, sigma2: 1.1 },
        ] {
            let dense = cov.to_dense(t);
            let direct = dense.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&x));
            let fast = cov.solve(&x).unwrap();
            for s in 0..t {
                assert!((direct[s] - fast[s]).abs() < 1e-10, "{cov:?}");
            }
            let mut block = DMatrix::zeros(t, t);
            cov.add_scaled_inverse(2.0, &mut block.view_mut((0, 0), (t, t)));
            let inv = dense.clone().try_inverse().unwrap() * 2.0;
            assert!((block - inv).abs().max() < 1e-10);
            let a = cumsum_matrix(t);
            assert_relative_eq!(cov.lrv_approx(t), dense.sum() / t as f64, epsilon = 1e-12);
            assert_relative_eq!(cov.oslrv_approx(t), (&a * &dense).trace() / t as f64, epsilon = 1e-12);
        }
        let ar = Covariance::Ar1 { phi: 0.5, sigma2: 1.0 };
        assert!((ar.solve(&[2.0]).unwrap()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn lrv_scaled_constructors() {
        let t = 100_000;
        assert!((Covariance::ar1_with_lrv(0.4, 2.0).lrv_approx(t) - 2.0).abs() < 1e-3);
        assert!((Covariance::ma1_with_lrv(0.4, 2.0).lrv_approx(t) - 2.0).abs() < 1e-3);
        assert!(Covariance::dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn hand_evaluated_panic_terms() {
        let nu = identity_nuisance(1, 3, DMatrix::zeros(1, 0));
        let de = DiffPanel::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (d, j) = delta_panic_exact(&de, &nu).unwrap();
        assert_relative_eq!(d, 11.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(j, 10.0 / 9.0, epsilon = 1e-14);
        assert_eq!(nu.oslrv_eta[0], 0.0);
        assert_relative_eq!(delta_simplified(&de, &nu).unwrap(), 11.0 / 3.0, epsilon = 1e-14);
        let zero = DiffPanel::from_rows(&[vec![0.0; 3]]).unwrap();
        assert_eq!(delta_panic_exact(&zero, &nu).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn blockwise_matches_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, t) = (2, 4);
        let covs: Vec<DMatrix<f64>> = (0..n).map(|_| random_spd(t, &mut rng)).collect();
        let nu = OracleNuisance::new(
            t,
            covs.iter().map(|c| Covariance::dense(c.clone()).unwrap()).collect(),
            vec![],
            DMatrix::zeros(n, 0),
        )
        .unwrap();
        let de = DiffPanel::from_matrix(&DMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0))).unwrap();
        let (d, j) = delta_panic_exact(&de, &nu).unwrap();

        let mut sigma = DMatrix::zeros(n * t, n * t);
        for i in 0..n {
            sigma.view_mut((i * t, i * t), (t, t)).copy_from(&covs[i]);
        }
        let big_a = DMatrix::<f64>::identity(n, n).kronecker(&cumsum_matrix(t));
        let inv = sigma.try_inverse().unwrap();
        let x = DVector::from_column_slice(de.values());
        let ax = &big_a * &x;
        let (sa, sb) = scale_pair(n, t);
        assert_relative_eq!(d, sa * ax.dot(&(&inv * &x)), max_relative = 1e-10);
        assert_relative_eq!(j, sb * ax.dot(&(&inv * &ax)), max_relative = 1e-10);
    }

    #[test]
    fn symmetrized_cumsum_gives_the_same_form() {
        // For weights P (x) I_T the pairing with A equals the pairing with (A + A')/2.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, t) = (3, 7);
        let d = DiffPanel::from_matrix(&DMatrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let p = random_spd(n, &mut rng);
        let a = cumsum_matrix(t);
        let sym = (&a + a.transpose()) * 0.5;
        let big = p.kronecker(&sym);
        let x = DVector::from_column_slice(d.values());
        assert_relative_eq!(kron_cross(&d, &p), x.dot(&(&big * &x)), max_relative = 1e-12);
    }

    #[test]
    fn mp_without_factors_is_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, t) = (3, 6);
        let nu = OracleNuisance::new(
            t,
            (0..n).map(|i| Covariance::ar1_with_lrv(0.3, 1.0 + i as f64)).collect(),
            vec![],
            DMatrix::zeros(n, 0),
        )
        .unwrap();
        let d = DiffPanel::from_matrix(&DMatrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let panic = delta_panic_exact(&d, &nu).unwrap();
        let woodbury = MpSolver::new(&nu).unwrap().delta(&d).unwrap();
        assert_relative_eq!(woodbury.0, panic.0, max_relative = 1e-12);
        assert_relative_eq!(woodbury.1, panic.1, max_relative = 1e-12);
        let dense = delta_mp_exact(&d, &nu).unwrap();
        assert_relative_eq!(dense.0, panic.0, max_relative = 1e-12);
        assert_relative_eq!(
            delta_mp_simplified(&d, &nu).unwrap(),
            delta_simplified(&d, &nu).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(delta_star(&d, &nu).unwrap(), delta_simplified(&d, &nu).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn small_mp_case_matches_direct_inversion() {
        let (n, t) = (2, 3);
        let nu = identity_nuisance(n, t, DMatrix::from_element(2, 1, 1.0));
        let sigma = DMatrix::from_element(2, 2, 1.0).kronecker(&DMatrix::identity(3, 3)) + DMatrix::identity(6, 6);
        assert_eq!(sigma_eps_dense(&nu).unwrap(), sigma);
        let d = DiffPanel::from_rows(&[vec![1.0, -0.5, 2.0], vec![0.3, 1.2, -1.0]]).unwrap();
        let inv = sigma.try_inverse().unwrap();
        let x = DVector::from_column_slice(d.values());
        let ax = DMatrix::<f64>::identity(n, n).kronecker(&cumsum_matrix(t)) * &x;
        let (sa, sb) = scale_pair(n, t);
        let expected = (sa * ax.dot(&(&inv * &x)), sb * ax.dot(&(&inv * &ax)));
        for got in [delta_mp_exact(&d, &nu).unwrap(), MpSolver::new(&nu).unwrap().delta(&d).unwrap()] {
            assert_relative_eq!(got.0, expected.0, max_relative = 1e-12);
            assert_relative_eq!(got.1, expected.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn woodbury_solver_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, t, k) = (4, 12, 2);
        let loadings = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..2.0));
        let sigma_eta = vec![
            Covariance::ar1_with_lrv(0.4, 1.3),
            Covariance::ma1_with_lrv(-0.3, 0.7),
            Covariance::Identity { scale: 2.0 },
            Covariance::dense(random_spd(t, &mut rng)).unwrap(),
        ];
        let sigma_f = vec![Covariance::ar1_with_lrv(0.5, 1.0), Covariance::ma1_with_lrv(0.4, 2.0)];
        let nu = OracleNuisance::new(t, sigma_eta, sigma_f, loadings).unwrap();
        let d = DiffPanel::from_matrix(&DMatrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let dense = delta_mp_exact(&d, &nu).unwrap();
        let fast = MpSolver::new(&nu).unwrap().delta(&d).unwrap();
        assert_relative_eq!(dense.0, fast.0, max_relative = 1e-10);
        assert_relative_eq!(dense.1, fast.1, max_relative = 1e-10);
    }

    #[test]
    fn dense_guard() {
        let nu = identity_nuisance(50, 100, DMatrix::from_element(50, 1, 1.0));
        let d = DiffPanel::from_row_major(50, 100, vec![0.0; 5000]).unwrap();
        assert!(matches!(delta_mp_exact(&d, &nu), Err(Error::Resource(_))));
    }

    #[test]
    fn smw_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1, 5, 20, 50] {
            let k = 3.min(n);
            let loadings = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..2.0));
            let sigma_eta = (0..n).map(|_| Covariance::ar1_with_lrv(0.4, rng.random_range(0.3..3.0))).collect();
            let sigma_f = (0..k).map(|_| Covariance::ar1_with_lrv(0.2, rng.random_range(0.5..2.0))).collect();
            let nu = OracleNuisance::new(30, sigma_eta, sigma_f, loadings).unwrap();
            let direct = psi_bar(&nu).try_inverse().unwrap();
            assert!((psi_bar_inverse(&nu).unwrap() - direct).abs().max() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn delta_star_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let design = LanDesign { k: 2, ..LanDesign::default() };
        let nu = design.nuisance(10, 30).unwrap();
        let (_, dy) = simulate_null(&nu, 8).unwrap();
        let h = DMatrix::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5));
        let mut rotated = nu.clone();
        rotated.loadings = &nu.loadings * h;
        assert!((delta_star(&dy, &nu).unwrap() - delta_star(&dy, &rotated).unwrap()).abs() < 1e-9);
    }

    fn gap_median(n: usize, t: usize, seeds: u64, f: impl Fn(&MpSolver, u64) -> f64) -> f64 {
        let solver = MpSolver::new(&LanDesign::default().nuisance(n, t).unwrap()).unwrap();
        median((0..seeds).map(|s| f(&solver, 1000 + s)).collect())
    }

    #[test]
    fn ma1_simplification_gap_shrinks() {
        let gap = |t: usize| {
            let n = 50;
            let nu = OracleNuisance::new(
                t,
                vec![Covariance::ma1_with_lrv(0.4, 1.0); n],
                vec![],
                DMatrix::zeros(n, 0),
            )
            .unwrap();
            median(
                (0..200)
                    .map(|s| {
                        let (de, _) = simulate_null(&nu, 500 + s).unwrap();
                        (delta_simplified(&de, &nu).unwrap() - delta_panic_exact(&de, &nu).unwrap().0).abs()
                    })
                    .collect(),
            )
        };
        let (g200, g400) = (gap(200), gap(400));
        assert!(g200 < 0.15, "median gap {g200}");
        assert!(g400 < g200, "{g400} >= {g200}");
    }

    #[test]
    fn mp_exact_close_to_projection_form() {
        let g = gap_median(25, 100, 100, |s, seed| {
            let d = lan_draw(s, seed).unwrap();
            (d.delta_mp - d.delta_star).abs()
        });
        assert!(g < 0.2, "median |delta_mp - delta_star| = {g}");
    }

    #[test]
    fn projection_form_close_to_simplified() {
        let g = gap_median(50, 200, 100, |s, seed| {
            let d = lan_draw(s, seed).unwrap();
            (d.delta_star - d.delta).abs()
        });
        assert!(g < 0.15, "median |delta_star - delta| = {g}");
    }

    #[test]
    fn report_shape() {
        assert!(lan_convergence_report(&[(5, 20)], 0).unwrap().is_empty());
        let rows = lan_convergence_report(&[(5, 20), (10, 40)], 8).unwrap();
        assert_eq!(rows.len(), 22);
        let gaps = rows.iter().filter(|r| r.median_abs_diff.is_some()).count();
        assert_eq!(gaps, 8);
        assert!(rows.iter().all(|r| r.seeds == 8 && r.variance.is_finite()));
        let again = lan_convergence_report_with(&LanDesign::default(), &[(5, 20), (10, 40)], 8, Some(2)).unwrap();
        assert_eq!(rows, again);
    }
}
