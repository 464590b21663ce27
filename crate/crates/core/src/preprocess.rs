//! Preparation of raw daily series: Fourier smoothing onto a coarse time
//! grid and per-cell linear detrending across replicates.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::sample::SampleSet;

/// Raw daily observations, laid out replicate-major, then location, then day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    replicate_ids: Vec<i64>,
    n_locations: usize,
    n_days: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl RawSeries {
    pub fn new(replicate_ids: Vec<i64>, n_locations: usize, n_days: usize, values: Vec<f64>) -> Result<Self> {
        let labels = (0..n_locations).map(|s| s.to_string()).collect();
        Self::with_labels(replicate_ids, n_days, values, labels)
    }

    pub fn with_labels(replicate_ids: Vec<i64>, n_days: usize, values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let n_locations = labels.len();
        if n_locations == 0 || n_days == 0 {
            return Err(Error::domain("raw series needs at least one location and one day"));
        }
        let expected = replicate_ids.len() * n_locations * n_days;
        if values.len() != expected {
            return Err(Error::domain(format!(
                "raw series has {} values, expected {} replicates × {} locations × {} days = {expected}",
                values.len(),
                replicate_ids.len(),
                n_locations,
                n_days
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite raw value at position {k}")));
        }
        Ok(RawSeries {
            replicate_ids,
            n_locations,
            n_days,
            values,
            labels,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.replicate_ids.len()
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn replicate_ids(&self) -> &[i64] {
        &self.replicate_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Daily values of replicate `i` at location `s`.
    pub fn series(&self, i: usize, s: usize) -> &[f64] {
        let start = (i * self.n_locations + s) * self.n_days;
        &self.values[start..start + self.n_days]
    }
}

fn fourier_row(t: f64, n_coeff: usize) -> impl Iterator<Item = f64> {
    (0..n_coeff).map(move |j| {
        if j == 0 {
            1.0
        } else {
            let k = j.div_ceil(2) as f64;
            if j % 2 == 1 {
                (TAU * k * t).cos()
            } else {
                (TAU * k * t).sin()
            }
        }
    })
}

/// Basis `{1, cos 2πkt, sin 2πkt}` evaluated at `points`, one row per point.
pub fn fourier_basis(points: &[f64], n_coeff: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(points.len(), n_coeff);
    for (r, &t) in points.iter().enumerate() {
        for (c, v) in fourier_row(t, n_coeff).enumerate() {
            b[(r, c)] = v;
        }
    }
    b
}

/// Output time grid `j/(T_out − 1)`.
pub fn output_points(t_out: usize) -> Vec<f64> {
    if t_out == 1 {
        return vec![0.0];
    }
    (0..t_out).map(|j| j as f64 / (t_out - 1) as f64).collect()
}

/// The `T_out × D` linear map taking a daily series (days at `d/D`) to its
/// least-squares Fourier projection evaluated at the output points.
pub fn smoothing_matrix(n_days: usize, n_coeff: usize, t_out: usize) -> Result<DMatrix<f64>> {
    if n_coeff.is_multiple_of(2) {
        return Err(Error::domain(format!("n_coeff = {n_coeff} must be odd")));
    }
    if n_coeff > n_days {
        return Err(Error::domain(format!("n_coeff = {n_coeff} exceeds the {n_days} days available")));
    }
    if t_out == 0 {
        return Err(Error::domain("T_out must be positive"));
    }
    let days: Vec<f64> = (0..n_days).map(|d| d as f64 / n_days as f64).collect();
    let b = fourier_basis(&days, n_coeff);
    let gram = b.tr_mul(&b);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::degenerate("Fourier design matrix is rank deficient"))?;
    let coef = chol.solve(&b.transpose());
    Ok(fourier_basis(&output_points(t_out), n_coeff) * coef)
}

/// Projects every daily series onto the first `n_coeff` Fourier basis
/// functions and evaluates the fit at `T_out` equispaced points of `[0, 1]`.
pub fn fourier_smooth(raw: &RawSeries, n_coeff: usize, t_out: usize) -> Result<SampleSet> {
    let h = smoothing_matrix(raw.n_days, n_coeff, t_out)?;
    let n = raw.n_replicates();
    let ns = raw.n_locations;
    // Columns are (replicate, location) series.
    let y = DMatrix::from_fn(raw.n_days, n * ns, |d, col| raw.values[col * raw.n_days + d]);
    let smooth = h * y;
    let mut values = Vec::with_capacity(n * ns * t_out);
    for col in 0..n * ns {
        values.extend(smooth.column(col).iter());
    }
    let grid = GridSpec::new(ns, t_out)?;
    SampleSet::with_ids(grid, values, raw.replicate_ids.clone())
}

/// Removes, for every cell, the least-squares line in the replicate id.
/// Gaps in the ids are respected since the ids themselves are the regressor.
pub fn linear_detrend(samples: &SampleSet) -> Result<SampleSet> {
    let n = samples.n();
    if n < 2 {
        return Err(Error::domain(format!("linear detrending needs n ≥ 2, got {n}")));
    }
    let x: Vec<f64> = samples.replicate_ids().iter().map(|&i| i as f64).collect();
    let x_bar = x.iter().sum::<f64>() / n as f64;
    let dx: Vec<f64> = x.iter().map(|v| v - x_bar).collect();
    let sxx: f64 = dx.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::degenerate("all replicate ids are equal; the trend is not identifiable"));
    }
    let d = samples.grid().dim();
    let vals = samples.values();
    let mut out = vec![0.0; vals.len()];
    for cell in 0..d {
        let y_bar = (0..n).map(|i| vals[i * d + cell]).sum::<f64>() / n as f64;
        let slope = (0..n).map(|i| dx[i] * (vals[i * d + cell] - y_bar)).sum::<f64>() / sxx;
        for i in 0..n {
            out[i * d + cell] = vals[i * d + cell] - y_bar - slope * dx[i];
        }
    }
    Ok(samples.with_values(out, true, true))
}
