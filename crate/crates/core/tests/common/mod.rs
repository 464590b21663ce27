#![allow(dead_code)]

use kronsep::{GridSpec, SpaceTimeOperator};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_grid<R: Rng>(rng: &mut R, s: usize, t: usize, weighted: bool) -> GridSpec {
    let g = GridSpec::new(s, t).unwrap();
    if !weighted {
        return g;
    }
    let ws = (0..s).map(|_| rng.random_range(0.2..2.0)).collect();
    let wt = (0..t).map(|_| rng.random_range(0.2..2.0)).collect();
    g.with_weights(ws, wt).unwrap()
}

pub fn random_general<R: Rng>(rng: &mut R, grid: &GridSpec) -> SpaceTimeOperator {
    let d = grid.dim();
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SpaceTimeOperator::from_matrix(grid, m).unwrap()
}

/// `X Xᵀ` with Gaussian `X`, so symmetric positive semidefinite.
pub fn random_psd<R: Rng>(rng: &mut R, grid: &GridSpec) -> SpaceTimeOperator {
    let d = grid.dim();
    let x = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &x * x.transpose();
    let m = (&m + m.transpose()) * 0.5;
    SpaceTimeOperator::from_matrix(grid, m).unwrap()
}
