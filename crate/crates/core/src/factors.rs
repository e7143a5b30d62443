//! Principal-components factor estimation on differenced panels.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::panel::DiffPanel;

/// Principal-components fit of `k` factors to a differenced panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    /// `sqrt(n)` times the leading orthonormal eigenvectors (`n x k`).
    pub loadings_bar: DMatrix<f64>,
    /// `S * loadings_bar` (`n x k`).
    pub loadings_hat: DMatrix<f64>,
    /// Estimated factor differences (`T' x k`).
    pub factor_diffs: DMatrix<f64>,
    /// Idiosyncratic residuals of the differenced panel.
    pub residuals: DiffPanel,
    /// Leading eigenvalues of `S`, in decreasing order.
    pub eigenvalues: Vec<f64>,
    pub k: usize,
}

/// Cross-sectional second-moment matrix `S = D D' / (n T')` of a difference panel.
fn second_moment(d: &DiffPanel) -> DMatrix<f64> {
    let m = d.to_matrix();
    let scale = 1.0 / (d.n() * d.t()) as f64;
    (&m * m.transpose()) * scale
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
fn sorted_eigen(s: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn check_rank(d: &DiffPanel, k: usize) -> Result<()> {
    let max = d.n().min(d.t());
    if k > max {
        return Err(Error::Dimension(format!(
            "requested {k} factors but min(n, T') = {max}"
        )));
    }
    Ok(())
}

pub fn estimate_factors(d: &DiffPanel, k: usize) -> Result<FactorFit> {
    check_rank(d, k)?;
    let n = d.n();
    let s = second_moment(d);
    let (values, vectors) = sorted_eigen(s.clone());

    let root_n = (n as f64).sqrt();
    let mut bar = DMatrix::zeros(n, k);
    for j in 0..k {
        let col = vectors.column(j);
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            bar[(i, j)] = sign * root_n * col[i];
        }
    }

    let data = d.to_matrix();
    let hat = &s * &bar;
    let factor_diffs = data.transpose() * &bar / n as f64;
    let projector = DMatrix::identity(n, n) - &bar * bar.transpose() / n as f64;
    let residuals = DiffPanel::from_matrix(&(projector * data))?;

    Ok(FactorFit {
        loadings_bar: bar,
        loadings_hat: hat,
        factor_diffs,
        residuals,
        eigenvalues: values.into_iter().take(k).collect(),
        k,
    })
}

/// Mean squared residual `V(k)` for every `k` in `0..=k_max`.
///
/// Uses `V(k) = tr(S) - sum_{j <= k} mu_j`, the residual energy after removing
/// the `k` leading principal components.
pub fn residual_variances(d: &DiffPanel, k_max: usize) -> Result<Vec<f64>> {
    check_rank(d, k_max)?;
    let s = second_moment(d);
    let total = s.trace();
    let (values, _) = sorted_eigen(s);
    let mut out = Vec::with_capacity(k_max + 1);
    let mut removed = 0.0;
    out.push(total);
    for v in values.iter().take(k_max) {
        removed += v;
        out.push((total - removed).max(0.0));
    }
    Ok(out)
}

/// Number of factors minimizing the IC_p2 information criterion.
pub fn select_num_factors(d: &DiffPanel, k_max: usize) -> Result<usize> {
    let v = residual_variances(d, k_max)?;
    let (n, t) = (d.n() as f64, d.t() as f64);
    let penalty = (n + t) / (n * t) * n.min(t).ln();
    let mut best = (0, f64::INFINITY);
    for (k, vk) in v.iter().enumerate() {
        let ic = vk.max(f64::MIN_POSITIVE).ln() + k as f64 * penalty;
        if ic < best.1 {
            best = (k, ic);
        }
    }
    Ok(best.0)
}
