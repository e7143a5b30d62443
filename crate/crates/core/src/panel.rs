//! Balanced panel containers and the cumulative-sum / differencing transforms.
//!
//! Panels are stored unit-major: row `i` holds the time series of unit `i`,
//! contiguous in memory, so per-unit work (long-run variances, prewhitening)
//! reads a plain slice.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An `n x T` balanced panel of observations with unit and time labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n: usize,
    t: usize,
    values: Vec<f64>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
}

/// First differences of a panel, `n x (T - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffPanel {
    n: usize,
    t: usize,
    values: Vec<f64>,
}

/// A single finite time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(Vec<f64>);

fn check_shape(n: usize, t: usize, values: &[f64]) -> Result<()> {
    if n == 0 || t == 0 {
        return Err(Error::Dimension(format!("panel must be non-empty, got {n} x {t}")));
    }
    if values.len() != n * t {
        return Err(Error::Dimension(format!(
            "expected {} values for a {n} x {t} panel, got {}",
            n * t,
            values.len()
        )));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value at unit {}, period {}",
            pos / t + 1,
            pos % t + 1
        )));
    }
    Ok(())
}

fn rows_to_vec(rows: &[Vec<f64>]) -> Result<(usize, usize, Vec<f64>)> {
    let n = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != t) {
        return Err(Error::Dimension(format!(
            "ragged rows: unit {} has {} periods, expected {t}",
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok((n, t, rows.concat()))
}

fn default_labels(count: usize) -> Vec<String> {
    (1..=count).map(|i| i.to_string()).collect()
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(Error::Data(format!("duplicate {what} label {label:?}")));
        }
    }
    Ok(())
}

impl Panel {
    /// Builds a panel from row-major values (`values[i * t + s]` is unit `i`, period `s`).
    pub fn from_row_major(n: usize, t: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(n, t, &values)?;
        Ok(Self { n, t, values, unit_ids: default_labels(n), time_ids: default_labels(t) })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (n, t, values) = rows_to_vec(rows)?;
        Self::from_row_major(n, t, values)
    }

    /// Replaces the default `1..n` / `1..T` labels.
    pub fn with_labels(mut self, unit_ids: Vec<String>, time_ids: Vec<String>) -> Result<Self> {
        if unit_ids.len() != self.n || time_ids.len() != self.t {
            return Err(Error::Dimension(format!(
                "labels ({} units, {} periods) do not match a {} x {} panel",
                unit_ids.len(),
                time_ids.len(),
                self.n,
                self.t
            )));
        }
        check_unique(&unit_ids, "unit")?;
        check_unique(&time_ids, "time")?;
        self.unit_ids = unit_ids;
        self.time_ids = time_ids;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self, i: usize) -> &[f64] {
        &self.values[i * self.t..(i + 1) * self.t]
    }

    pub fn get(&self, i: usize, s: usize) -> f64 {
        self.values[i * self.t + s]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// `n x T` matrix copy.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.t, &self.values)
    }

    /// Adds the constant `shifts[i]` to every observation of unit `i`.
    pub fn shift_units(&self, shifts: &[f64]) -> Result<Self> {
        if shifts.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} shifts for {} units",
                shifts.len(),
                self.n
            )));
        }
        let mut out = self.clone();
        for (row, m) in out.values.chunks_mut(self.t).zip(shifts) {
            row.iter_mut().for_each(|v| *v += m);
        }
        check_shape(out.n, out.t, &out.values)?;
        Ok(out)
    }
}

impl DiffPanel {
    pub fn from_row_major(n: usize, t: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(n, t, &values)?;
        Ok(Self { n, t, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (n, t, values) = rows_to_vec(rows)?;
        Self::from_row_major(n, t, values)
    }

    /// Builds from an `n x T'` matrix (unit per row).
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, t) = m.shape();
        let values = (0..n).flat_map(|i| (0..t).map(move |s| m[(i, s)])).collect();
        Self::from_row_major(n, t, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of difference periods.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self, i: usize) -> &[f64] {
        &self.values[i * self.t..(i + 1) * self.t]
    }

    pub fn get(&self, i: usize, s: usize) -> f64 {
        self.values[i * self.t + s]
    }

    pub fn units(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.t)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.t, &self.values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, t: self.t, values: self.values.iter().map(|v| v * c).collect() }
    }

    /// Drops the first `k` periods.
    pub fn skip_periods(&self, k: usize) -> Result<Self> {
        if k >= self.t {
            return Err(Error::Dimension(format!(
                "cannot drop {k} of {} periods",
                self.t
            )));
        }
        let values = self.units().flat_map(|row| row[k..].iter().copied()).collect();
        Ok(Self { n: self.n, t: self.t - k, values })
    }
}

impl Series {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dimension("series must have at least one observation".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("series contains non-finite values".into()));
        }
        Ok(Self(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// First differences along time: `out[i][s] = p[i][s + 1] - p[i][s]`.
pub fn difference(p: &Panel) -> Result<DiffPanel> {
    if p.t < 2 {
        return Err(Error::Dimension(format!(
            "differencing needs at least 2 periods, got {}",
            p.t
        )));
    }
    let t = p.t - 1;
    let mut values = Vec::with_capacity(p.n * t);
    for i in 0..p.n {
        values.extend(p.unit(i).windows(2).map(|w| w[1] - w[0]));
    }
    Ok(DiffPanel { n: p.n, t, values })
}

/// The strictly lower-triangular ones matrix: `A[s][t] = 1` iff `s > t`.
pub fn cumsum_matrix(t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |s, u| if s > u { 1.0 } else { 0.0 })
}

/// Lagged partial sums with zero starting value: `out[i][s] = sum_{u < s} d[i][u]`.
pub fn apply_cumsum(d: &DiffPanel) -> Panel {
    let mut values = Vec::with_capacity(d.values.len());
    for row in d.units() {
        let mut acc = 0.0;
        for &v in row {
            values.push(acc);
            acc += v;
        }
    }
    Panel {
        n: d.n,
        t: d.t,
        values,
        unit_ids: default_labels(d.n),
        time_ids: default_labels(d.t),
    }
}

/// Lagged partial sums of one series (the action of [`cumsum_matrix`]).
pub(crate) fn lagged_cumsum(x: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|v| {
            let out = acc;
            acc += v;
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn difference_of_single_unit() {
        let p = Panel::from_rows(&[vec![1.0, 3.0, 6.0]]).unwrap();
        assert_eq!(difference(&p).unwrap().values(), &[2.0, 3.0]);
    }

    #[test]
    fn constant_panel_differences_vanish() {
        let p = Panel::from_rows(&[vec![4.5; 5], vec![-2.0; 5]]).unwrap();
        assert!(difference(&p).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_needs_two_periods() {
        let p = Panel::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(difference(&p), Err(Error::Dimension(_))));
    }

    #[test]
    fn cumsum_matrix_small_cases() {
        let a = cumsum_matrix(3);
        let expected = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 1., 0., 0., 1., 1., 0.]);
        assert_eq!(a, expected);
        assert_eq!(cumsum_matrix(1), DMatrix::zeros(1, 1));
    }

    #[test]
    fn cumsum_matrix_plus_transpose_is_ones_minus_identity() {
        for t in 2..=8 {
            let a = cumsum_matrix(t);
            let lhs = &a + a.transpose();
            let rhs = DMatrix::from_element(t, t, 1.0) - DMatrix::identity(t, t);
            assert_eq!(lhs, rhs, "T = {t}");
        }
    }

    #[test]
    fn apply_cumsum_definition() {
        let d = DiffPanel::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(apply_cumsum(&d).values(), &[0.0, 2.0]);
        let z = DiffPanel::from_rows(&[vec![0.0; 4], vec![0.0; 4]]).unwrap();
        assert!(apply_cumsum(&z).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_cumsum_matches_matrix_product() {
        let d = DiffPanel::from_rows(&[
            vec![0.3, -1.2, 2.5, 0.7],
            vec![-0.4, 0.9, 1.1, -2.2],
        ])
        .unwrap();
        let via_matrix = d.to_matrix() * cumsum_matrix(4).transpose();
        let direct = apply_cumsum(&d).to_matrix();
        assert!((via_matrix - direct).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_duplicate_labels() {
        assert!(matches!(
            Panel::from_rows(&[vec![1.0, f64::NAN]]),
            Err(Error::Data(_))
        ));
        let p = Panel::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let dup = p.with_labels(vec!["a".into(), "a".into()], vec!["1".into(), "2".into()]);
        assert!(matches!(dup, Err(Error::Data(_))));
    }

    fn panel_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..5, 2usize..9).prop_flat_map(|(n, t)| {
            (Just(n), Just(t), proptest::collection::vec(-100.0..100.0f64, n * t))
        })
    }

    proptest! {
        #[test]
        fn difference_then_cumsum_recovers_levels((n, t, vals) in panel_strategy()) {
            let p = Panel::from_row_major(n, t, vals).unwrap();
            let d = difference(&p).unwrap();
            // Cumulating with start value p[i][0] recovers p.
            for i in 0..n {
                let mut level = p.get(i, 0);
                for s in 0..d.t() {
                    level += d.get(i, s);
                    prop_assert!((level - p.get(i, s + 1)).abs() < 1e-9);
                }
            }
            // apply_cumsum . difference is p up to the lost per-unit level.
            let c = apply_cumsum(&d);
            for i in 0..n {
                let shift = p.get(i, 0);
                for s in 0..d.t() {
                    prop_assert!((c.get(i, s) + shift - p.get(i, s)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn difference_inverts_apply_cumsum((n, t, vals) in panel_strategy()) {
            let d = DiffPanel::from_row_major(n, t, vals).unwrap();
            let mut rows: Vec<Vec<f64>> = (0..n).map(|i| apply_cumsum(&d).unit(i).to_vec()).collect();
            // Append the final level so that differencing returns all T' columns.
            for (i, row) in rows.iter_mut().enumerate() {
                let last = row[t - 1] + d.get(i, t - 1);
                row.push(last);
            }
            let back = difference(&Panel::from_rows(&rows).unwrap()).unwrap();
            for (a, b) in back.values().iter().zip(d.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
