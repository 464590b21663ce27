//! Replicated space-time observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// `n` observations of a function on the grid, stored replicate-major with
/// the same `(s, t)` flattening as [`GridSpec::flat`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    grid: GridSpec,
    n: usize,
    values: Vec<f64>,
    /// External replicate labels (e.g. years). Used as the regressor when
    /// detrending; defaults to `0..n`.
    replicate_ids: Vec<i64>,
    centered: bool,
    detrended: bool,
}

impl SampleSet {
    pub fn new(grid: GridSpec, n: usize, values: Vec<f64>) -> Result<Self> {
        let ids = (0..n as i64).collect();
        Self::with_ids(grid, values, ids)
    }

    /// Builds a sample set whose replicate count is `ids.len()`.
    pub fn with_ids(grid: GridSpec, values: Vec<f64>, replicate_ids: Vec<i64>) -> Result<Self> {
        let n = replicate_ids.len();
        if values.len() != n * grid.dim() {
            return Err(Error::domain(format!(
                "expected {} values for n={n} on a {}x{} grid, got {}",
                n * grid.dim(),
                grid.n_space(),
                grid.n_time(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at flat position {pos}")));
        }
        Ok(SampleSet {
            grid,
            n,
            values,
            replicate_ids,
            centered: false,
            detrended: false,
        })
    }

    /// Builds from a closure `f(i, s, t)`.
    pub fn from_fn(grid: GridSpec, n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n * grid.dim());
        for i in 0..n {
            for s in 0..grid.n_space() {
                for t in 0..grid.n_time() {
                    values.push(f(i, s, t));
                }
            }
        }
        Self::new(grid, n, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn replicate_ids(&self) -> &[i64] {
        &self.replicate_ids
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_detrended(&self) -> bool {
        self.detrended
    }

    /// The `i`-th observation as a flat vector of length `S·T`.
    pub fn replicate(&self, i: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn replicates(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.dim().max(1))
    }

    pub fn get(&self, i: usize, s: usize, t: usize) -> f64 {
        self.values[i * self.grid.dim() + self.grid.flat(s, t)]
    }

    /// Marks the set as centered and/or detrended after checking the
    /// centering invariant.
    pub fn with_flags(mut self, centered: bool, detrended: bool) -> Result<Self> {
        if centered || detrended {
            self.check_centered()?;
        }
        self.centered = centered || detrended;
        self.detrended = detrended;
        Ok(self)
    }

    fn check_centered(&self) -> Result<()> {
        let d = self.grid.dim();
        for cell in 0..d {
            let (mean, sd) = self.cell_moments(cell);
            // The floor admits round-off left by centering nearly constant cells.
            if mean.abs() > 1e-12 * sd.max(1.0) {
                return Err(Error::domain(format!(
                    "cell {cell} has mean {mean:e} but the set is flagged centered"
                )));
            }
        }
        Ok(())
    }

    fn cell_moments(&self, cell: usize) -> (f64, f64) {
        let d = self.grid.dim();
        let n = self.n as f64;
        let mean = (0..self.n).map(|i| self.values[i * d + cell]).sum::<f64>() / n;
        let var = (0..self.n)
            .map(|i| (self.values[i * d + cell] - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// Per-cell mean over replicates.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut m = vec![0.0; d];
        for x in self.replicates() {
            for (a, b) in m.iter_mut().zip(x) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Subtracts the per-cell mean over replicates.
    pub fn center(&self) -> Result<SampleSet> {
        if self.n == 0 {
            return Err(Error::degenerate("cannot center an empty sample set"));
        }
        let mean = self.mean();
        let d = self.grid.dim();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v - mean[k % d])
            .collect();
        Ok(SampleSet {
            values,
            centered: true,
            ..self.clone()
        })
    }

    /// Multiplies every value by `alpha`.
    pub fn scaled(&self, alpha: f64) -> SampleSet {
        SampleSet {
            values: self.values.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    /// Replaces the values in place, keeping grid and labels. Flags are
    /// supplied by the caller.
    pub(crate) fn with_values(&self, values: Vec<f64>, centered: bool, detrended: bool) -> SampleSet {
        debug_assert_eq!(values.len(), self.values.len());
        SampleSet {
            values,
            centered,
            detrended,
            ..self.clone()
        }
    }

    /// The first `k` replicates.
    pub fn head(&self, k: usize) -> Result<SampleSet> {
        if k > self.n {
            return Err(Error::domain(format!("head({k}) of a set with n={}", self.n)));
        }
        let d = self.grid.dim();
        Ok(SampleSet {
            n: k,
            values: self.values[..k * d].to_vec(),
            replicate_ids: self.replicate_ids[..k].to_vec(),
            centered: false,
            detrended: false,
            grid: self.grid.clone(),
        })
    }
}
