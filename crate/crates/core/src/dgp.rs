//! Simulation of factor-driven panels under the MP and PANIC
//! data-generating processes.
//!
//! Both frameworks are generated from the components form
//!
//! ```text
//! Z_it = m_i + sum_k lambda_ki F_kt + E_it
//! E_it = rho_i E_i,t-1 + eta_it,    F_kt = rho_k F_k,t-1 + f_kt
//! ```
//!
//! with zero starting values, `m_i = 0`, and `rho_k = rho` (MP) or `rho_k = 1`
//! (PANIC, `0` for stationary factors). Every random ingredient comes from its
//! own ChaCha stream keyed by the seed, so the draws do not depend on which
//! framework or alternative is requested: under `h = 0` an MP and a PANIC
//! config with the same seed give bit-identical panels.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    Mp,
    Panic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationKind {
    Iid,
    Ar1,
    Ma1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationLaw {
    Gaussian,
    StudentT5,
}

impl std::fmt::Display for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Framework::Mp => "mp",
            Framework::Panic => "panic",
        })
    }
}

impl std::fmt::Display for InnovationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InnovationKind::Iid => "iid",
            InnovationKind::Ar1 => "ar1",
            InnovationKind::Ma1 => "ma1",
        })
    }
}

impl std::fmt::Display for InnovationLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InnovationLaw::Gaussian => "gaussian",
            InnovationLaw::StudentT5 => "student_t5",
        })
    }
}

/// A stationary innovation process scaled to a target long-run variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnovationSpec {
    pub kind: InnovationKind,
    /// AR or MA coefficient; ignored for `iid`.
    pub parameter: f64,
    pub distribution: InnovationLaw,
    pub target_lrv: f64,
}

impl Default for InnovationSpec {
    fn default() -> Self {
        Self {
            kind: InnovationKind::Iid,
            parameter: 0.4,
            distribution: InnovationLaw::Gaussian,
            target_lrv: 1.0,
        }
    }
}

impl InnovationSpec {
    pub fn iid() -> Self {
        Self::default()
    }

    pub fn with_kind(kind: InnovationKind, parameter: f64) -> Self {
        Self { kind, parameter, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_lrv > 0.0 && self.target_lrv.is_finite()) {
            return Err(Error::Config(format!(
                "target_lrv must be positive, got {}",
                self.target_lrv
            )));
        }
        if self.kind != InnovationKind::Iid && !(self.parameter.abs() < 1.0) {
            return Err(Error::Config(format!(
                "{} parameter must lie in (-1, 1), got {}",
                self.kind, self.parameter
            )));
        }
        Ok(())
    }

    /// Generates `len` observations of the stationary process with innovation
    /// standard deviation `sigma`, started from its stationary law.
    pub fn generate<R: Rng + ?Sized>(&self, sigma: f64, len: usize, rng: &mut R) -> Vec<f64> {
        let mut draw = unit_draw(self.distribution);
        match self.kind {
            InnovationKind::Iid => (0..len).map(|_| sigma * draw(rng)).collect(),
            InnovationKind::Ar1 => {
                let phi = self.parameter;
                let mut out = Vec::with_capacity(len);
                let mut x = 0.0;
                for s in 0..len {
                    x = if s == 0 {
                        sigma / (1.0 - phi * phi).sqrt() * draw(rng)
                    } else {
                        phi * x + sigma * draw(rng)
                    };
                    out.push(x);
                }
                out
            }
            InnovationKind::Ma1 => {
                let theta = self.parameter;
                let mut prev = draw(rng);
                (0..len)
                    .map(|_| {
                        let cur = draw(rng);
                        let v = sigma * (cur + theta * prev);
                        prev = cur;
                        v
                    })
                    .collect()
            }
        }
    }
}

/// Unit-variance draws from the requested law; t(5) is rescaled by sqrt(3/5).
fn unit_draw<R: Rng + ?Sized>(law: InnovationLaw) -> impl FnMut(&mut R) -> f64 {
    let t5 = StudentT::new(5.0).expect("5 degrees of freedom");
    let t5_scale = (3.0f64 / 5.0).sqrt();
    move |rng: &mut R| match law {
        InnovationLaw::Gaussian => StandardNormal.sample(rng),
        InnovationLaw::StudentT5 => t5_scale * t5.sample(rng),
    }
}

/// Full description of one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub framework: Framework,
    pub n: usize,
    #[serde(rename = "T", alias = "t")]
    pub t: usize,
    /// Local-to-unity parameter; `rho = 1 + h / (sqrt(n) T)`.
    pub h: f64,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    pub factor_spec: InnovationSpec,
    /// Shape of the idiosyncratic innovations. Unit long-run variances are
    /// `target_lrv` times a mean-one lognormal draw.
    pub idio_spec: InnovationSpec,
    /// Target `sqrt(omega^4 / phi^4)` of the idiosyncratic long-run variances.
    pub lrv_ratio: f64,
    pub heterogeneous_alternatives: bool,
    /// PANIC only: generate stationary factor levels (`rho_k = 0`).
    pub panic_stationary_factors: bool,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            framework: Framework::Panic,
            n: 25,
            t: 100,
            h: 0.0,
            k: 1,
            factor_spec: InnovationSpec::iid(),
            idio_spec: InnovationSpec::iid(),
            lrv_ratio: 1.0,
            heterogeneous_alternatives: false,
            panic_stationary_factors: false,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.t < 2 {
            return Err(Error::Config(format!("T must be at least 2, got {}", self.t)));
        }
        if !(self.h <= 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("h must be finite and nonpositive, got {}", self.h)));
        }
        if !(self.lrv_ratio > 0.0 && self.lrv_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "lrv_ratio must lie in (0, 1], got {}",
                self.lrv_ratio
            )));
        }
        self.factor_spec
            .validate()
            .map_err(|e| Error::Config(format!("factor_spec: {e}")))?;
        self.idio_spec
            .validate()
            .map_err(|e| Error::Config(format!("idio_spec: {e}")))?;
        Ok(())
    }
}

/// A simulated panel together with the ground truth used to generate it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: Panel,
    /// `n x K` loadings.
    pub true_loadings: DMatrix<f64>,
    /// Long-run variances of the idiosyncratic innovations.
    pub true_lrvs: Vec<f64>,
    /// Autoregressive root used for each unit.
    pub rho_used: Vec<f64>,
}

pub fn local_rho(n: usize, t: usize, h: f64) -> f64 {
    1.0 + h / ((n as f64).sqrt() * t as f64)
}

/// Lognormal `(mu, sigma^2)` with mean one and `sqrt(E[X]^2 / E[X^2]) = ratio`.
pub fn lognormal_heterogeneity_params(ratio: f64) -> Result<(f64, f64)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    let mu = ratio.ln();
    Ok((mu, -2.0 * mu))
}

/// Innovation standard deviation giving the process long-run variance `target_lrv`.
pub fn innovation_scale(spec: &InnovationSpec) -> f64 {
    let root = spec.target_lrv.sqrt();
    match spec.kind {
        InnovationKind::Iid => root,
        InnovationKind::Ar1 => root * (1.0 - spec.parameter),
        InnovationKind::Ma1 => root / (1.0 + spec.parameter),
    }
}

// Independent generator streams; the order is part of the reproducibility contract.
const STREAM_LOADINGS: u64 = 1;
const STREAM_LRVS: u64 = 2;
const STREAM_ALTERNATIVES: u64 = 3;
const STREAM_FACTORS: u64 = 4;
const STREAM_IDIOSYNCRATIC: u64 = 5;

/// Stable 64-bit seed for a tuple of coordinates (splitmix64 finalizer chain).
pub fn derive_seed(base: u64, coordinates: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    coordinates.iter().fold(mix(base), |acc, &c| mix(acc ^ mix(c)))
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws `n x K` loadings with rows `N(K^{-1/2} 1, K^{-1} I_K)`.
pub fn draw_loadings(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, STREAM_LOADINGS);
    let s = if k == 0 { 0.0 } else { 1.0 / (k as f64).sqrt() };
    let mut out = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            out[(i, j)] = s * (1.0 + z);
        }
    }
    out
}

/// Draws `n` mean-one lognormal long-run variances matching `ratio`.
pub fn draw_lrvs(n: usize, ratio: f64, seed: u64) -> Result<Vec<f64>> {
    let (mu, sigma2) = lognormal_heterogeneity_params(ratio)?;
    let mut rng = stream(seed, STREAM_LRVS);
    let sd = sigma2.sqrt();
    Ok((0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (mu + sd * z).exp()
        })
        .collect())
}

pub fn simulate(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let (n, t, k) = (cfg.n, cfg.t, cfg.k);

    let loadings = draw_loadings(n, k, cfg.seed);
    let lrvs: Vec<f64> = draw_lrvs(n, cfg.lrv_ratio, cfg.seed)?
        .into_iter()
        .map(|w| w * cfg.idio_spec.target_lrv)
        .collect();

    let scale_n_t = (n as f64).sqrt() * t as f64;
    let rho_used: Vec<f64> = if cfg.heterogeneous_alternatives {
        let mut rng = stream(cfg.seed, STREAM_ALTERNATIVES);
        (0..n)
            .map(|_| 1.0 + cfg.h * rng.random_range(0.2..1.8) / scale_n_t)
            .collect()
    } else {
        vec![local_rho(n, t, cfg.h); n]
    };

    let mut factor_rng = stream(cfg.seed, STREAM_FACTORS);
    let factor_sigma = innovation_scale(&cfg.factor_spec);
    let factor_innov: Vec<Vec<f64>> = (0..k)
        .map(|_| cfg.factor_spec.generate(factor_sigma, t, &mut factor_rng))
        .collect();

    let mut idio_rng = stream(cfg.seed, STREAM_IDIOSYNCRATIC);
    let idio_innov: Vec<Vec<f64>> = lrvs
        .iter()
        .map(|&w| {
            let spec = InnovationSpec { target_lrv: w, ..cfg.idio_spec };
            spec.generate(innovation_scale(&spec), t, &mut idio_rng)
        })
        .collect();

    let mut values = vec![0.0; n * t];
    if cfg.framework == Framework::Mp && cfg.heterogeneous_alternatives {
        // Y_it = rho_i Y_i,t-1 + sum_k lambda_ki f_kt + eta_it
        for i in 0..n {
            let mut y = 0.0;
            for s in 0..t {
                let common: f64 = (0..k).map(|j| loadings[(i, j)] * factor_innov[j][s]).sum();
                y = rho_used[i] * y + common + idio_innov[i][s];
                values[i * t + s] = y;
            }
        }
    } else {
        let rho_factor = match cfg.framework {
            Framework::Mp => local_rho(n, t, cfg.h),
            Framework::Panic if cfg.panic_stationary_factors => 0.0,
            Framework::Panic => 1.0,
        };
        let factors: Vec<Vec<f64>> = factor_innov
            .iter()
            .map(|f| ar_recursion(rho_factor, f))
            .collect();
        for i in 0..n {
            let e = ar_recursion(rho_used[i], &idio_innov[i]);
            for s in 0..t {
                let common: f64 = (0..k).map(|j| loadings[(i, j)] * factors[j][s]).sum();
                values[i * t + s] = common + e[s];
            }
        }
    }

    Ok(SimulatedPanel {
        panel: Panel::from_row_major(n, t, values)?,
        true_loadings: loadings,
        true_lrvs: lrvs,
        rho_used,
    })
}

/// `x_t = rho x_{t-1} + u_t` with `x_0 = 0`.
fn ar_recursion(rho: f64, innovations: &[f64]) -> Vec<f64> {
    let mut x = 0.0;
    innovations
        .iter()
        .map(|u| {
            x = rho * x + u;
            x
        })
        .collect()
}
