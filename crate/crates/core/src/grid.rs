//! Discretized space-time domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `S` spatial sites and `T` time points, each carrying a coordinate and a
/// positive measure weight. Weights enter every inner product, trace and
/// partial trace as multiplicative factors; the default is counting measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "T")]
    t: usize,
    space_coords: Vec<f64>,
    time_coords: Vec<f64>,
    space_weights: Vec<f64>,
    time_weights: Vec<f64>,
}

fn equispaced(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn check_axis(name: &str, n: usize, coords: &[f64], weights: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::domain(format!("{name}: need at least one point")));
    }
    if coords.len() != n || weights.len() != n {
        return Err(Error::domain(format!(
            "{name}: expected {n} coordinates and weights, got {} and {}",
            coords.len(),
            weights.len()
        )));
    }
    if coords.iter().any(|c| !c.is_finite()) || coords.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain(format!(
            "{name}: coordinates must be finite and strictly increasing"
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::domain(format!("{name}: weights must be strictly positive")));
    }
    Ok(())
}

impl GridSpec {
    /// Equispaced coordinates on `[0, 1]` with unit weights.
    pub fn new(s: usize, t: usize) -> Result<Self> {
        Self::with_coords(s, t, equispaced(s), equispaced(t))
    }

    pub fn with_coords(s: usize, t: usize, space: Vec<f64>, time: Vec<f64>) -> Result<Self> {
        Self::from_parts(s, t, space, time, vec![1.0; s], vec![1.0; t])
    }

    pub fn from_parts(
        s: usize,
        t: usize,
        space_coords: Vec<f64>,
        time_coords: Vec<f64>,
        space_weights: Vec<f64>,
        time_weights: Vec<f64>,
    ) -> Result<Self> {
        let grid = GridSpec {
            s,
            t,
            space_coords,
            time_coords,
            space_weights,
            time_weights,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Replaces the weights by the uniform probability measures `1/S`, `1/T`.
    pub fn with_uniform_probability_weights(mut self) -> Self {
        self.space_weights = vec![1.0 / self.s as f64; self.s];
        self.time_weights = vec![1.0 / self.t as f64; self.t];
        self
    }

    pub fn with_weights(mut self, space: Vec<f64>, time: Vec<f64>) -> Result<Self> {
        self.space_weights = space;
        self.time_weights = time;
        self.validate()?;
        Ok(self)
    }

    /// Re-checks the invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_axis("space", self.s, &self.space_coords, &self.space_weights)?;
        check_axis("time", self.t, &self.time_coords, &self.time_weights)
    }

    pub fn n_space(&self) -> usize {
        self.s
    }

    pub fn n_time(&self) -> usize {
        self.t
    }

    /// `S·T`, the dimension of the product space.
    pub fn dim(&self) -> usize {
        self.s * self.t
    }

    pub fn space_coords(&self) -> &[f64] {
        &self.space_coords
    }

    pub fn time_coords(&self) -> &[f64] {
        &self.time_coords
    }

    pub fn space_weights(&self) -> &[f64] {
        &self.space_weights
    }

    pub fn time_weights(&self) -> &[f64] {
        &self.time_weights
    }

    /// Flat index of `(s, t)`: space outer, time inner.
    #[inline]
    pub fn flat(&self, s: usize, t: usize) -> usize {
        s * self.t + t
    }

    /// Product weight `w₁(s)·w₂(t)` for every flat index.
    pub fn point_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.dim());
        for ws in &self.space_weights {
            for wt in &self.time_weights {
                w.push(ws * wt);
            }
        }
        w
    }

    pub fn has_unit_weights(&self) -> bool {
        self.space_weights.iter().chain(&self.time_weights).all(|w| *w == 1.0)
    }

    /// Same grid with the spatial sites reordered by `perm` (new site `i` is
    /// old site `perm[i]`). Coordinates are replaced by indices since the
    /// permuted coordinates need not be increasing.
    pub fn permute_space(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.s {
            return Err(Error::domain("permutation length must equal S"));
        }
        let weights = perm.iter().map(|&p| self.space_weights[p]).collect();
        Self::from_parts(
            self.s,
            self.t,
            (0..self.s).map(|i| i as f64).collect(),
            self.time_coords.clone(),
            weights,
            self.time_weights.clone(),
        )
    }

    /// True when both grids have the same shape and weights; coordinates are
    /// labels and do not affect the algebra.
    pub fn compatible(&self, other: &GridSpec) -> bool {
        self.s == other.s
            && self.t == other.t
            && self.space_weights == other.space_weights
            && self.time_weights == other.time_weights
    }

    pub(crate) fn ensure_compatible(&self, other: &GridSpec) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "grid mismatch: {}x{} vs {}x{} (or differing weights)",
                self.s, self.t, other.s, other.t
            )))
        }
    }
}
