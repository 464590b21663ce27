//! Monte Carlo tables for the pivotal limit
//!
//! ```text
//! W = B(1) / { Σ_l ν_l λ_l² (B(λ_l) − λ_l B(1))² }^{1/2}
//! ```
//!
//! where `B` is a standard Brownian motion and `ν` the uniform measure on
//! `{l/K}`. Paths are simulated on an equispaced step grid that contains every
//! `λ_l`, with one counter-based RNG stream per path so tables do not depend
//! on the number of worker threads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selfnorm::NuGrid;

pub const DEFAULT_N_PATHS: usize = 200_000;
pub const DEFAULT_N_STEPS: usize = 1000;
pub const MIN_TABULATION_PATHS: usize = 10_000;
const MAX_RESAMPLES: usize = 64;

/// Probabilities tabulated by default. Lower-tail quantiles are obtained from
/// the upper ones by symmetry.
pub const DEFAULT_PROBS: [f64; 8] = [0.5, 0.75, 0.8, 0.9, 0.95, 0.975, 0.99, 0.995];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub p: f64,
    pub q: f64,
}

/// Empirical quantiles of `W` for a given `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotTable {
    #[serde(rename = "K")]
    pub k: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Sorted by `p`.
    pub quantiles: Vec<QuantilePoint>,
}

impl PivotTable {
    /// A table from externally supplied quantiles (e.g. published values).
    pub fn from_quantiles(k: usize, points: &[(f64, f64)]) -> Result<Self> {
        let mut quantiles: Vec<QuantilePoint> = points.iter().map(|&(p, q)| QuantilePoint { p, q }).collect();
        if quantiles.iter().any(|x| !(x.p > 0.0 && x.p < 1.0)) {
            return Err(Error::domain("quantile probabilities must lie in (0, 1)"));
        }
        quantiles.sort_by(|a, b| a.p.total_cmp(&b.p));
        Ok(PivotTable {
            k,
            n_paths: 0,
            n_steps: 0,
            seed: 0,
            quantiles,
        })
    }

    /// The stored quantile at `p`, if tabulated.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.quantiles.iter().find(|x| (x.p - p).abs() < 1e-12).map(|x| x.q)
    }

    /// `q_p` using the symmetry `q_p = −q_{1−p}` for lower-tail probabilities,
    /// so that intervals are exactly symmetric.
    pub fn symmetric_quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("probability {p} outside (0, 1)")));
        }
        let found = if p < 0.5 {
            self.quantile(1.0 - p).map(|q| -q)
        } else {
            self.quantile(p)
        };
        found.ok_or_else(|| {
            Error::Config(format!(
                "pivot table for K={} has no quantile at p={}",
                self.k,
                if p < 0.5 { 1.0 - p } else { p }
            ))
        })
    }
}

/// Smallest multiple of `k` that is at least `n_steps`.
pub fn round_steps(n_steps: usize, k: usize) -> usize {
    n_steps.max(1).div_ceil(k) * k
}

/// `W` for one path given its `n_steps` Brownian increments; `None` when the
/// denominator vanishes.
pub fn w_from_increments(increments: &[f64], nu: &NuGrid) -> Result<Option<f64>> {
    let k = nu.k();
    let n_steps = increments.len();
    if n_steps == 0 || !n_steps.is_multiple_of(k) {
        return Err(Error::domain(format!("n_steps = {n_steps} must be a positive multiple of K = {k}")));
    }
    let stride = n_steps / k;
    let mut grid_values = Vec::with_capacity(k);
    let mut b = 0.0;
    for (i, dx) in increments.iter().enumerate() {
        b += dx;
        if (i + 1) % stride == 0 {
            grid_values.push(b);
        }
    }
    Ok(w_from_grid(&grid_values, nu))
}

/// `W` from `B(l/K)` for `l = 1..K` (last entry is `B(1)`).
fn w_from_grid(values: &[f64], nu: &NuGrid) -> Option<f64> {
    let k = nu.k() as f64;
    let b1 = *values.last()?;
    let mut denom = 0.0;
    for (l, (lambda, weight)) in nu.points().enumerate() {
        // (K·B(l/K) − l·B(1))/K avoids rounding in l/K for exact paths.
        let bridge = (k * values[l] - (l + 1) as f64 * b1) / k;
        denom += weight * lambda * lambda * bridge * bridge;
    }
    (denom > 0.0).then(|| b1 / denom.sqrt())
}

/// One draw of `W` with increments from `next_increment`, resampling if a
/// path has a vanishing denominator. Returns the value and the number of
/// paths consumed.
pub fn simulate_w_with(
    nu: &NuGrid,
    n_steps: usize,
    mut next_increment: impl FnMut() -> f64,
) -> Result<(f64, usize)> {
    let mut buf = vec![0.0; n_steps];
    for attempt in 1..=MAX_RESAMPLES {
        buf.iter_mut().for_each(|x| *x = next_increment());
        if let Some(w) = w_from_increments(&buf, nu)? {
            return Ok((w, attempt));
        }
    }
    Err(Error::degenerate(format!(
        "{MAX_RESAMPLES} consecutive Brownian paths had a vanishing bridge functional"
    )))
}

/// One draw of `W` from standard normal increments of variance `1/n_steps`.
pub fn simulate_w<R: Rng + ?Sized>(nu: &NuGrid, n_steps: usize, rng: &mut R) -> Result<f64> {
    let scale = (1.0 / n_steps as f64).sqrt();
    simulate_w_with(nu, n_steps, || scale * rng.sample::<f64, _>(StandardNormal)).map(|(w, _)| w)
}

/// RNG for path `index` of a table seeded by `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates `n_paths` draws of `W`, in path order.
pub fn simulate_paths(nu: &NuGrid, n_paths: usize, n_steps: usize, seed: u64) -> Result<Vec<f64>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_w(nu, n_steps, &mut path_rng(seed, i)))
        .collect()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    Ok(())
}

/// Order-statistic quantile interpolating linearly at (1-based) rank
/// `p·(n−1) + 1`.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    check_prob(p)?;
    if samples.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(quantile_sorted(&sorted, p))
}

/// Tabulates quantiles of `W`. `n_steps` is rounded up to a multiple of `K`.
pub fn quantile_table(k: usize, n_paths: usize, n_steps: usize, probs: &[f64], seed: u64) -> Result<PivotTable> {
    for &p in probs {
        check_prob(p)?;
    }
    if n_paths < MIN_TABULATION_PATHS {
        return Err(Error::domain(format!(
            "tabulation needs at least {MIN_TABULATION_PATHS} paths, got {n_paths}"
        )));
    }
    let nu = NuGrid::new(k)?;
    let n_steps = round_steps(n_steps, k);
    let mut draws = simulate_paths(&nu, n_paths, n_steps, seed)?;
    draws.sort_by(|a, b| a.total_cmp(b));
    let mut ps = probs.to_vec();
    ps.sort_by(|a, b| a.total_cmp(b));
    ps.dedup();
    let quantiles = ps
        .into_iter()
        .map(|p| QuantilePoint {
            p,
            q: quantile_sorted(&draws, p),
        })
        .collect();
    Ok(PivotTable {
        k,
        n_paths,
        n_steps,
        seed,
        quantiles,
    })
}

/// Cache file for a table with the given key.
pub fn cache_path(dir: &Path, k: usize, n_paths: usize, n_steps: usize, seed: u64) -> PathBuf {
    let n_steps = round_steps(n_steps, k);
    dir.join(format!("pivot_K{k}_paths{n_paths}_steps{n_steps}_seed{seed}.json"))
}

/// Loads a cached table when one with the same key covering `probs` exists,
/// otherwise computes and stores it.
pub fn cached_quantile_table(
    dir: &Path,
    k: usize,
    n_paths: usize,
    n_steps: usize,
    probs: &[f64],
    seed: u64,
) -> Result<PivotTable> {
    let path = cache_path(dir, k, n_paths, n_steps, seed);
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<PivotTable>(&text) {
            Ok(t) if probs.iter().all(|p| t.quantile(*p).is_some()) => return Ok(t),
            Ok(_) => log::info!("cached table {} lacks requested probabilities", path.display()),
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let mut all: Vec<f64> = DEFAULT_PROBS.to_vec();
    all.extend_from_slice(probs);
    let table = quantile_table(k, n_paths, n_steps, &all, seed)?;
    fs::create_dir_all(dir)?;
    fs::write(&path, serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
