//! Self-normalization factors built from the sequential covariance process.
//!
//! For a measure `M` and the uniform measure `ν` on `{l/K : l = 1..K-1}`:
//!
//! ```text
//! V̂     = { Σ_l ν_l (M[Ĉ(λ_l)] − λ_l² M[Ĉ])² }^{1/2}
//! V̂_rel = { Σ_l ν_l λ_l⁴ (M_rel[Ĉ(λ_l)] − M_rel[Ĉ])² }^{1/2}
//! Ṽ     =   Σ_l ν_l |M[Ĉ(λ_l)] − λ_l² M[Ĉ]|
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::sequential_covariances;
use crate::sample::SampleSet;
use crate::separability::{measure_values, MeasureKind, MeasureValues, PowerIteration, ProductOrientation};

pub const DEFAULT_K: usize = 20;

/// Uniform probability measure on `{l/K : l = 1, …, K−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuGrid {
    k: usize,
    lambdas: Vec<f64>,
    weights: Vec<f64>,
}

impl NuGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::domain(format!("K must be at least 2, got {k}")));
        }
        let lambdas = (1..k).map(|l| l as f64 / k as f64).collect();
        let weights = vec![1.0 / (k - 1) as f64; k - 1];
        Ok(NuGrid { k, lambdas, weights })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambdas.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Measures of the full-sample covariance and of every sequential slice on
/// the ν-grid, shared by all normalizer kinds.
#[derive(Debug, Clone)]
pub struct SequentialMeasures {
    nu: NuGrid,
    full: MeasureValues,
    slices: Vec<MeasureValues>,
}

impl SequentialMeasures {
    pub fn compute(
        samples: &SampleSet,
        nu: &NuGrid,
        orientation: ProductOrientation,
        opts: PowerIteration,
    ) -> Result<Self> {
        if samples.n() < nu.k() {
            return Err(Error::domain(format!(
                "need n ≥ K for nonempty sequential slices (n = {}, K = {})",
                samples.n(),
                nu.k()
            )));
        }
        let mut lambdas = nu.lambdas().to_vec();
        lambdas.push(1.0);
        let ops = sequential_covariances(samples, &lambdas)?;
        let values: Vec<MeasureValues> = ops
            .par_iter()
            .zip(lambdas.par_iter())
            .map(|(c, &l)| {
                measure_values(c, orientation, opts).map_err(|e| {
                    if l == 1.0 {
                        e.context("full-sample covariance")
                    } else {
                        e.context(&format!("sequential slice λ = {l}"))
                    }
                })
            })
            .collect::<Result<_>>()?;
        let mut slices = values;
        let full = slices.pop().expect("full sample appended");
        if !(full.hs_norm_sq > 0.0) {
            return Err(Error::degenerate("empirical covariance is zero"));
        }
        Ok(SequentialMeasures {
            nu: nu.clone(),
            full,
            slices,
        })
    }

    pub fn full(&self) -> &MeasureValues {
        &self.full
    }

    pub fn slices(&self) -> &[MeasureValues] {
        &self.slices
    }

    pub fn nu(&self) -> &NuGrid {
        &self.nu
    }

    fn deviations(&self, kind: MeasureKind) -> impl Iterator<Item = (f64, f64)> + '_ {
        let full = self.full.absolute(kind);
        self.nu
            .points()
            .zip(&self.slices)
            .map(move |((l, w), m)| (w, m.absolute(kind) - l * l * full))
    }

    pub fn v_hat(&self, kind: MeasureKind) -> f64 {
        self.deviations(kind).map(|(w, d)| w * d * d).sum::<f64>().sqrt()
    }

    pub fn v_tilde(&self, kind: MeasureKind) -> f64 {
        self.deviations(kind).map(|(w, d)| w * d.abs()).sum()
    }

    pub fn v_hat_rel(&self, kind: MeasureKind) -> Result<f64> {
        let full = self.full.relative(kind);
        let mut acc = 0.0;
        for ((l, w), m) in self.nu.points().zip(&self.slices) {
            if !(m.hs_norm_sq > 0.0) {
                return Err(Error::degenerate(format!(
                    "sequential slice λ = {l} has zero norm; relative measure undefined"
                )));
            }
            let d = l * l * (m.relative(kind) - full);
            acc += w * d * d;
        }
        Ok(acc.sqrt())
    }

    /// `V̂` or `V̂_rel`.
    pub fn normalizer(&self, kind: MeasureKind, relative: bool) -> Result<f64> {
        if relative {
            self.v_hat_rel(kind)
        } else {
            Ok(self.v_hat(kind))
        }
    }
}

pub fn v_hat(
    samples: &SampleSet,
    kind: MeasureKind,
    nu: &NuGrid,
    orientation: ProductOrientation,
    opts: PowerIteration,
) -> Result<f64> {
    Ok(SequentialMeasures::compute(samples, nu, orientation, opts)?.v_hat(kind))
}

pub fn v_hat_rel(
    samples: &SampleSet,
    kind: MeasureKind,
    nu: &NuGrid,
    orientation: ProductOrientation,
    opts: PowerIteration,
) -> Result<f64> {
    SequentialMeasures::compute(samples, nu, orientation, opts)?.v_hat_rel(kind)
}

pub fn v_tilde(
    samples: &SampleSet,
    kind: MeasureKind,
    nu: &NuGrid,
    orientation: ProductOrientation,
    opts: PowerIteration,
) -> Result<f64> {
    Ok(SequentialMeasures::compute(samples, nu, orientation, opts)?.v_tilde(kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::operator::{empirical_covariance, sequential_covariance};
    use crate::separability::measure;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(seed: u64, n: usize) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GridSpec::new(2, 3).unwrap();
        SampleSet::from_fn(g, n, |_, s, t| rng.random_range(-1.0..1.0) + 0.3 * (s * t) as f64).unwrap()
    }

    fn opts() -> PowerIteration {
        PowerIteration::default()
    }

    #[test]
    fn nu_grid_shape() {
        let nu = NuGrid::new(20).unwrap();
        assert_eq!(nu.lambdas().len(), 19);
        assert_eq!(nu.lambdas()[0], 0.05);
        assert!((nu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(nu.lambdas().windows(2).all(|w| w[0] < w[1]));
        assert!(NuGrid::new(1).is_err());
    }

    #[test]
    fn identical_replicates_give_zero_normalizers() {
        // Ĉ(λ) = λ·Ĉ for identical replicates, for every n (the interpolation
        // term makes the sequential estimator exactly linear then).
        let g = GridSpec::new(2, 3).unwrap();
        let base = [1.0, 0.5, -0.2, 0.3, 2.0, -1.0];
        let nu = NuGrid::new(5).unwrap();
        for n in [10, 12] {
            let s = SampleSet::from_fn(g.clone(), n, |_, a, b| base[a * 3 + b]).unwrap();
            let seq = SequentialMeasures::compute(&s, &nu, ProductOrientation::Delta2Identity, opts()).unwrap();
            for k in MeasureKind::ALL {
                let scale = seq.full().hs_norm_sq;
                assert!(seq.v_hat(k) <= 1e-12 * scale, "{k} n={n} {}", seq.v_hat(k));
                assert!(seq.v_tilde(k) <= 1e-12 * scale);
                assert!(seq.v_hat_rel(k).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn scaling_behaviour() {
        let s = random_samples(7, 40);
        let nu = NuGrid::new(20).unwrap();
        let a = SequentialMeasures::compute(&s, &nu, ProductOrientation::Delta2Identity, opts()).unwrap();
        let b = SequentialMeasures::compute(&s.scaled(2.0), &nu, ProductOrientation::Delta2Identity, opts()).unwrap();
        for k in MeasureKind::ALL {
            let (va, vb) = (a.v_hat(k), b.v_hat(k));
            assert!((vb - 16.0 * va).abs() <= 1e-8 * vb.max(1e-300), "{k}");
            let (ra, rb) = (a.v_hat_rel(k).unwrap(), b.v_hat_rel(k).unwrap());
            assert!((ra - rb).abs() <= 1e-8 * ra.max(1e-300));
            assert!(a.v_tilde(k) <= a.v_hat(k) + 1e-12);
        }
    }

    #[test]
    fn zero_data_is_degenerate() {
        let g = GridSpec::new(2, 2).unwrap();
        let s = SampleSet::from_fn(g, 30, |_, _, _| 0.0).unwrap();
        let nu = NuGrid::new(20).unwrap();
        for k in MeasureKind::ALL {
            let o = ProductOrientation::Delta2Identity;
            assert!(matches!(v_hat(&s, k, &nu, o, opts()), Err(Error::Degenerate(_))));
            assert!(matches!(v_hat_rel(&s, k, &nu, o, opts()), Err(Error::Degenerate(_))));
            assert!(matches!(v_tilde(&s, k, &nu, o, opts()), Err(Error::Degenerate(_))));
        }
    }

    #[test]
    fn too_few_replicates() {
        let s = random_samples(3, 10);
        let nu = NuGrid::new(20).unwrap();
        assert!(v_hat(&s, MeasureKind::Tr, &nu, ProductOrientation::Delta2Identity, opts()).is_err());
    }

    #[test]
    fn matches_naive_per_lambda_formulas() {
        let s = random_samples(11, 37);
        let nu = NuGrid::new(6).unwrap();
        let o = ProductOrientation::Delta1Identity;
        let seq = SequentialMeasures::compute(&s, &nu, o, opts()).unwrap();
        let full = empirical_covariance(&s).unwrap();
        for k in MeasureKind::ALL {
            let m_full = measure(&full, k, o, opts()).unwrap();
            let rel_full = m_full / full.hs_norm_sq();
            let (mut abs_acc, mut rel_acc, mut l1) = (0.0, 0.0, 0.0);
            for (l, w) in nu.points() {
                let c = sequential_covariance(&s, l).unwrap();
                let m = measure(&c, k, o, opts()).unwrap();
                abs_acc += w * (m - l * l * m_full).powi(2);
                l1 += w * (m - l * l * m_full).abs();
                // Literal λ²M_rel[Ĉ(λ)] − λ²M_rel[Ĉ].
                let d = l * l * (m / c.hs_norm_sq()) - l * l * rel_full;
                rel_acc += w * d * d;
            }
            let tol = |x: f64| 1e-10 * x.abs().max(1e-300);
            assert!((seq.v_hat(k) - abs_acc.sqrt()).abs() <= tol(abs_acc.sqrt()));
            assert!((seq.v_tilde(k) - l1).abs() <= tol(l1));
            assert!((seq.v_hat_rel(k).unwrap() - rel_acc.sqrt()).abs() <= tol(rel_acc.sqrt()));
        }
    }
}
