//! Discretized operator algebra on the weighted product space.
//!
//! A [`SpaceTimeOperator`] is stored as its `(S·T) × (S·T)` kernel matrix
//! with row `(s, t)` and column `(s', t')` flattened space-outer, time-inner.
//! The operator acts as `(Cf)(s,t) = Σ w(s',t') C[s,t,s',t'] f(s',t')`, so the
//! Hilbert–Schmidt inner product carries the weights of both index pairs and
//! the trace those of the diagonal.
//!
//! Restacking maps `C[s,t,s',t']` to `R[(s,s'),(t,t')]` with row `s·S + s'`
//! and column `t·T + t'`. It is a pure index permutation and, with row weights
//! `w₁(s)w₁(s')` and column weights `w₂(t)w₂(t')`, an isometry.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::sample::SampleSet;

/// Which factor of `H = H₁ ⊗ H₂` a factor operator lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Space,
    Time,
}

/// Kernel of an operator on `H₁ ⊗ H₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeOperator {
    grid: GridSpec,
    entries: DMatrix<f64>,
}

/// Kernel of an operator on one factor (`S×S` for space, `T×T` for time),
/// together with the axis weights of its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorOperator {
    axis: Axis,
    entries: DMatrix<f64>,
    weights: Vec<f64>,
}

/// The restacked kernel `R[(s,s'),(t,t')] = C[s,t,s',t']`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestackedOperator {
    grid: GridSpec,
    entries: DMatrix<f64>,
}

/// Squared weighted Frobenius norm of a matrix with separate row and
/// column weights.
fn weighted_norm_sq(m: &DMatrix<f64>, row_w: &[f64], col_w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, col) in m.column_iter().enumerate() {
        let mut c = 0.0;
        for (i, v) in col.iter().enumerate() {
            c += row_w[i] * v * v;
        }
        acc += col_w[j] * c;
    }
    acc
}

fn weighted_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, row_w: &[f64], col_w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, (ca, cb)) in a.column_iter().zip(b.column_iter()).enumerate() {
        let mut c = 0.0;
        for (i, (x, y)) in ca.iter().zip(cb.iter()).enumerate() {
            c += row_w[i] * x * y;
        }
        acc += col_w[j] * c;
    }
    acc
}

impl SpaceTimeOperator {
    pub fn zeros(grid: &GridSpec) -> Self {
        let d = grid.dim();
        SpaceTimeOperator {
            grid: grid.clone(),
            entries: DMatrix::zeros(d, d),
        }
    }

    /// The identity operator, whose kernel is `δ / w` under the grid measure.
    pub fn identity(grid: &GridSpec) -> Self {
        let w = grid.point_weights();
        let entries = DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().map(|x| 1.0 / x)));
        SpaceTimeOperator {
            grid: grid.clone(),
            entries,
        }
    }

    /// Wraps an `(S·T) × (S·T)` kernel matrix.
    pub fn from_matrix(grid: &GridSpec, entries: DMatrix<f64>) -> Result<Self> {
        let d = grid.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::domain(format!(
                "operator matrix must be {d}x{d}, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("operator entries must be finite"));
        }
        Ok(SpaceTimeOperator {
            grid: grid.clone(),
            entries,
        })
    }

    /// Builds from `f(s, t, s', t')`.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let (ns, nt) = (grid.n_space(), grid.n_time());
        let d = grid.dim();
        let entries = DMatrix::from_fn(d, d, |r, c| f(r / nt, r % nt, c / nt, c % nt));
        debug_assert_eq!(ns * nt, d);
        SpaceTimeOperator {
            grid: grid.clone(),
            entries,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// The kernel as a flat `(S·T) × (S·T)` matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, s2: usize, t2: usize) -> f64 {
        self.entries[(self.grid.flat(s, t), self.grid.flat(s2, t2))]
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        SpaceTimeOperator {
            grid: self.grid.clone(),
            entries: &self.entries * alpha,
        }
    }

    pub fn sub(&self, other: &SpaceTimeOperator) -> Result<Self> {
        self.grid.ensure_compatible(&other.grid)?;
        Ok(SpaceTimeOperator {
            grid: self.grid.clone(),
            entries: &self.entries - &other.entries,
        })
    }

    pub fn add(&self, other: &SpaceTimeOperator) -> Result<Self> {
        self.grid.ensure_compatible(&other.grid)?;
        Ok(SpaceTimeOperator {
            grid: self.grid.clone(),
            entries: &self.entries + &other.entries,
        })
    }

    pub fn hs_norm_sq(&self) -> f64 {
        let w = self.grid.point_weights();
        weighted_norm_sq(&self.entries, &w, &w)
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_sq().sqrt()
    }

    /// The symmetric matrix `W^{1/2} C W^{1/2}`, whose ordinary spectrum is the
    /// spectrum of the operator.
    pub fn weighted_matrix(&self) -> DMatrix<f64> {
        let w: Vec<f64> = self.grid.point_weights().iter().map(|x| x.sqrt()).collect();
        DMatrix::from_fn(self.entries.nrows(), self.entries.ncols(), |i, j| {
            w[i] * self.entries[(i, j)] * w[j]
        })
    }

    /// True when `C[s,t,s',t'] = C[s',t',s,t]` to within `tol` relative.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.entries.amax().max(f64::MIN_POSITIVE);
        let d = self.entries.nrows();
        (0..d).all(|i| (0..i).all(|j| (self.entries[(i, j)] - self.entries[(j, i)]).abs() <= tol * scale))
    }

    /// Applies `perm` to both spatial indices (new site `i` is old site `perm[i]`).
    pub fn permute_space(&self, perm: &[usize]) -> Result<Self> {
        let grid = self.grid.permute_space(perm)?;
        Ok(Self::from_fn(&grid, |s, t, s2, t2| self.get(perm[s], t, perm[s2], t2)))
    }
}

impl FactorOperator {
    pub fn new(axis: Axis, entries: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() != weights.len() {
            return Err(Error::domain(format!(
                "{axis:?} factor must be square of size {}, got {}x{}",
                weights.len(),
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("factor entries must be finite"));
        }
        Ok(FactorOperator { axis, entries, weights })
    }

    /// A factor on the given axis of `grid`.
    pub fn on_grid(grid: &GridSpec, axis: Axis, entries: DMatrix<f64>) -> Result<Self> {
        let w = match axis {
            Axis::Space => grid.space_weights(),
            Axis::Time => grid.time_weights(),
        };
        Self::new(axis, entries, w.to_vec())
    }

    /// Identity operator on the given axis (kernel `δ / w`).
    pub fn identity(grid: &GridSpec, axis: Axis) -> Self {
        let w = match axis {
            Axis::Space => grid.space_weights(),
            Axis::Time => grid.time_weights(),
        };
        let diag = DVector::from_iterator(w.len(), w.iter().map(|x| 1.0 / x));
        FactorOperator {
            axis,
            entries: DMatrix::from_diagonal(&diag),
            weights: w.to_vec(),
        }
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        FactorOperator {
            entries: &self.entries * alpha,
            ..self.clone()
        }
    }

    fn ensure_same_space(&self, other: &FactorOperator) -> Result<()> {
        if self.axis != other.axis || self.weights != other.weights {
            return Err(Error::domain(format!(
                "factor mismatch: {:?}[{}] vs {:?}[{}]",
                self.axis,
                self.dim(),
                other.axis,
                other.dim()
            )));
        }
        Ok(())
    }

    /// Weighted Hilbert–Schmidt inner product on the factor space.
    pub fn hs_inner(&self, other: &FactorOperator) -> Result<f64> {
        self.ensure_same_space(other)?;
        Ok(weighted_inner(&self.entries, &other.entries, &self.weights, &self.weights))
    }

    pub fn hs_norm_sq(&self) -> f64 {
        weighted_norm_sq(&self.entries, &self.weights, &self.weights)
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.entries[(i, i)])
            .sum()
    }

    /// `vec(A)` in row-major order, index `s·S + s'`.
    pub fn vec_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                v.push(self.entries[(i, j)]);
            }
        }
        v
    }
}

impl RestackedOperator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// The `S² × T²` matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Row weights `w₁(s)w₁(s')`, index `s·S + s'`.
    pub fn row_weights(&self) -> Vec<f64> {
        pair_weights(self.grid.space_weights())
    }

    /// Column weights `w₂(t)w₂(t')`, index `t·T + t'`.
    pub fn col_weights(&self) -> Vec<f64> {
        pair_weights(self.grid.time_weights())
    }

    pub fn hs_norm_sq(&self) -> f64 {
        weighted_norm_sq(&self.entries, &self.row_weights(), &self.col_weights())
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_sq().sqrt()
    }

    /// `D₁^{1/2} R D₂^{1/2}`: the weighted restacking as an ordinary matrix,
    /// whose Euclidean singular values are those of the isometric map.
    pub fn weighted_matrix(&self) -> DMatrix<f64> {
        let rw: Vec<f64> = self.row_weights().iter().map(|w| w.sqrt()).collect();
        let cw: Vec<f64> = self.col_weights().iter().map(|w| w.sqrt()).collect();
        DMatrix::from_fn(self.entries.nrows(), self.entries.ncols(), |i, j| {
            rw[i] * self.entries[(i, j)] * cw[j]
        })
    }

    /// Wraps an `S² × T²` matrix.
    pub fn from_matrix(grid: &GridSpec, entries: DMatrix<f64>) -> Result<Self> {
        let (ns, nt) = (grid.n_space(), grid.n_time());
        if entries.nrows() != ns * ns || entries.ncols() != nt * nt {
            return Err(Error::domain(format!(
                "restacked matrix must be {}x{}, got {}x{}",
                ns * ns,
                nt * nt,
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(RestackedOperator {
            grid: grid.clone(),
            entries,
        })
    }
}

pub(crate) fn pair_weights(w: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len() * w.len());
    for a in w {
        for b in w {
            out.push(a * b);
        }
    }
    out
}

/// `(1/n) Σᵢ Xᵢ ⊗ Xᵢ`, the empirical (second-moment) covariance operator.
pub fn empirical_covariance(samples: &SampleSet) -> Result<SpaceTimeOperator> {
    let n = samples.n();
    if n == 0 {
        return Err(Error::degenerate("empirical covariance of an empty sample set"));
    }
    let grid = samples.grid();
    let d = grid.dim();
    let x = DMatrix::from_column_slice(d, n, samples.values());
    let mut c = &x * x.transpose();
    c /= n as f64;
    symmetrize(&mut c);
    Ok(SpaceTimeOperator {
        grid: grid.clone(),
        entries: c,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Split of `nλ` into the number of fully counted replicates and the
/// interpolation weight of the next one. At integer `nλ` the weight is 0.
pub(crate) fn sequential_split(n: usize, lambda: f64) -> (usize, f64) {
    let mut m = n as f64 * lambda;
    if (m - m.round()).abs() < 1e-9 * (1.0 + m) {
        m = m.round();
    }
    let k = m.floor() as usize;
    let frac = m - k as f64;
    if k >= n {
        (n, 0.0)
    } else {
        (k, frac)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(format!("lambda = {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `(1/n)[Σ_{i ≤ ⌊nλ⌋} Xᵢ⊗Xᵢ + frac(nλ)·X_{⌊nλ⌋+1}⊗X_{⌊nλ⌋+1}]`, continuous and
/// piecewise linear in `λ`.
pub fn sequential_covariance(samples: &SampleSet, lambda: f64) -> Result<SpaceTimeOperator> {
    check_lambda(lambda)?;
    let n = samples.n();
    if n == 0 {
        return Err(Error::degenerate("sequential covariance of an empty sample set"));
    }
    let (k, frac) = sequential_split(n, lambda);
    let d = samples.grid().dim();
    let mut c = if k > 0 {
        let x = DMatrix::from_column_slice(d, k, &samples.values()[..k * d]);
        &x * x.transpose()
    } else {
        DMatrix::zeros(d, d)
    };
    if frac > 0.0 {
        let x = DVector::from_column_slice(samples.replicate(k));
        c.ger(frac, &x, &x, 1.0);
    }
    c /= n as f64;
    symmetrize(&mut c);
    Ok(SpaceTimeOperator {
        grid: samples.grid().clone(),
        entries: c,
    })
}

/// Sequential covariances at several `λ` by one cumulative pass over the
/// replicates. Output order matches `lambdas`.
pub fn sequential_covariances(samples: &SampleSet, lambdas: &[f64]) -> Result<Vec<SpaceTimeOperator>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let n = samples.n();
    if n == 0 {
        return Err(Error::degenerate("sequential covariance of an empty sample set"));
    }
    let d = samples.grid().dim();
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));

    let mut running = DMatrix::<f64>::zeros(d, d);
    let mut counted = 0usize;
    let mut out: Vec<Option<SpaceTimeOperator>> = vec![None; lambdas.len()];
    for idx in order {
        let (k, frac) = sequential_split(n, lambdas[idx]);
        if k > counted {
            let x = DMatrix::from_column_slice(d, k - counted, &samples.values()[counted * d..k * d]);
            running.gemm(1.0, &x, &x.transpose(), 1.0);
            counted = k;
        }
        let mut c = running.clone();
        if frac > 0.0 {
            let x = DVector::from_column_slice(samples.replicate(k));
            c.ger(frac, &x, &x, 1.0);
        }
        c /= n as f64;
        symmetrize(&mut c);
        out[idx] = Some(SpaceTimeOperator {
            grid: samples.grid().clone(),
            entries: c,
        });
    }
    Ok(out.into_iter().map(|c| c.expect("every lambda visited")).collect())
}

/// Weighted Hilbert–Schmidt inner product
/// `Σ w₁(s)w₂(t)w₁(s')w₂(t') a[s,t,s',t'] b[s,t,s',t']`.
pub fn hs_inner(a: &SpaceTimeOperator, b: &SpaceTimeOperator) -> Result<f64> {
    a.grid.ensure_compatible(&b.grid)?;
    let w = a.grid.point_weights();
    Ok(weighted_inner(&a.entries, &b.entries, &w, &w))
}

/// `Σ w₁(s)w₂(t) C[s,t,s,t]`.
pub fn trace(c: &SpaceTimeOperator) -> f64 {
    c.grid
        .point_weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * c.entries[(i, i)])
        .sum()
}

/// `(A ⊗ B)[s,t,s',t'] = A[s,s']·B[t,t']`.
pub fn kron(space: &FactorOperator, time: &FactorOperator) -> Result<SpaceTimeOperator> {
    if space.axis != Axis::Space || time.axis != Axis::Time {
        return Err(Error::domain("kron expects (space, time) factors"));
    }
    let grid = GridSpec::from_parts(
        space.dim(),
        time.dim(),
        (0..space.dim()).map(|i| i as f64).collect(),
        (0..time.dim()).map(|i| i as f64).collect(),
        space.weights.clone(),
        time.weights.clone(),
    )?;
    Ok(SpaceTimeOperator {
        grid,
        entries: space.entries.kronecker(&time.entries),
    })
}

/// Like [`kron`], but attaches the result to an existing grid (keeping its
/// coordinates).
pub fn kron_on(grid: &GridSpec, space: &FactorOperator, time: &FactorOperator) -> Result<SpaceTimeOperator> {
    let k = kron(space, time)?;
    grid.ensure_compatible(&k.grid)?;
    Ok(SpaceTimeOperator {
        grid: grid.clone(),
        entries: k.entries,
    })
}

/// `R[(s,s'),(t,t')] = C[s,t,s',t']`.
pub fn restack(c: &SpaceTimeOperator) -> RestackedOperator {
    let (ns, nt) = (c.grid.n_space(), c.grid.n_time());
    let entries = DMatrix::from_fn(ns * ns, nt * nt, |r, col| {
        let (s, s2) = (r / ns, r % ns);
        let (t, t2) = (col / nt, col % nt);
        c.entries[(s * nt + t, s2 * nt + t2)]
    });
    RestackedOperator {
        grid: c.grid.clone(),
        entries,
    }
}

/// Inverse of [`restack`].
pub fn unstack(r: &RestackedOperator) -> SpaceTimeOperator {
    let (ns, nt) = (r.grid.n_space(), r.grid.n_time());
    let d = ns * nt;
    let entries = DMatrix::from_fn(d, d, |row, col| {
        let (s, t) = (row / nt, row % nt);
        let (s2, t2) = (col / nt, col % nt);
        r.entries[(s * ns + s2, t * nt + t2)]
    });
    SpaceTimeOperator {
        grid: r.grid.clone(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut impl Rng, s: usize, t: usize) -> GridSpec {
        GridSpec::new(s, t)
            .unwrap()
            .with_weights(
                (0..s).map(|_| rng.random_range(0.2..2.0)).collect(),
                (0..t).map(|_| rng.random_range(0.2..2.0)).collect(),
            )
            .unwrap()
    }

    fn random_op(rng: &mut impl Rng, grid: &GridSpec) -> SpaceTimeOperator {
        SpaceTimeOperator::from_fn(grid, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_samples(rng: &mut impl Rng, grid: GridSpec, n: usize) -> SampleSet {
        SampleSet::from_fn(grid, n, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn single_constant_replicate() {
        let g = GridSpec::new(2, 2).unwrap();
        let s = SampleSet::from_fn(g, 1, |_, _, _| 1.0).unwrap();
        let c = empirical_covariance(&s).unwrap();
        assert!(c.matrix().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn zero_samples_give_zero_operator() {
        let g = GridSpec::new(2, 3).unwrap();
        let s = SampleSet::from_fn(g, 5, |_, _, _| 0.0).unwrap();
        assert_eq!(empirical_covariance(&s).unwrap().hs_norm_sq(), 0.0);
        let empty = SampleSet::new(GridSpec::new(2, 3).unwrap(), 0, vec![]).unwrap();
        assert!(matches!(empirical_covariance(&empty), Err(Error::Degenerate(_))));
    }

    #[test]
    fn empirical_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GridSpec::new(2, 3).unwrap();
        let s = random_samples(&mut rng, g.clone(), 50);
        let c = empirical_covariance(&s).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                for a2 in 0..2 {
                    for b2 in 0..3 {
                        let mut acc = 0.0;
                        for i in 0..50 {
                            acc += s.get(i, a, b) * s.get(i, a2, b2);
                        }
                        assert_abs_diff_eq!(c.get(a, b, a2, b2), acc / 50.0, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sequential_endpoints_and_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GridSpec::new(2, 2).unwrap();
        let s = random_samples(&mut rng, g, 4);
        assert_eq!(sequential_covariance(&s, 0.0).unwrap().hs_norm_sq(), 0.0);
        let full = empirical_covariance(&s).unwrap();
        let one = sequential_covariance(&s, 1.0).unwrap();
        assert!((full.matrix() - one.matrix()).amax() < 1e-15);

        let c = sequential_covariance(&s, 0.375).unwrap();
        for r in 0..4 {
            for k in 0..4 {
                let x1 = s.replicate(0);
                let x2 = s.replicate(1);
                let expect = 0.25 * (x1[r] * x1[k] + 0.5 * x2[r] * x2[k]);
                assert_abs_diff_eq!(c.matrix()[(r, k)], expect, epsilon = 1e-15);
            }
        }
        assert!(sequential_covariance(&s, 1.5).is_err());
        assert!(sequential_covariance(&s, -0.1).is_err());
    }

    #[test]
    fn sequential_integer_points_and_continuity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GridSpec::new(2, 2).unwrap();
        let s = random_samples(&mut rng, g, 6);
        // Ĉ(k/n) counts exactly the first k replicates.
        let c = sequential_covariance(&s, 3.0 / 6.0).unwrap();
        let head = empirical_covariance(&s.head(3).unwrap()).unwrap().scaled(3.0 / 6.0);
        assert!((c.matrix() - head.matrix()).amax() < 1e-15);
        // Approaching the integer point from below.
        let below = sequential_covariance(&s, 0.5 - 1e-10).unwrap();
        assert!((below.matrix() - c.matrix()).amax() < 1e-8);
    }

    #[test]
    fn incremental_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = GridSpec::new(3, 2).unwrap();
        let s = random_samples(&mut rng, g, 23);
        let lambdas = [0.9, 0.05, 0.5, 0.33, 1.0, 0.0];
        let inc = sequential_covariances(&s, &lambdas).unwrap();
        for (l, c) in lambdas.iter().zip(&inc) {
            let direct = sequential_covariance(&s, *l).unwrap();
            let scale = direct.matrix().amax().max(1e-300);
            assert!((c.matrix() - direct.matrix()).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hs_inner_against_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_grid(&mut rng, 2, 2);
        let a = random_op(&mut rng, &g);
        let b = random_op(&mut rng, &g);
        let (ws, wt) = (g.space_weights(), g.time_weights());
        let mut naive = 0.0;
        for s in 0..2 {
            for t in 0..2 {
                for s2 in 0..2 {
                    for t2 in 0..2 {
                        naive += ws[s] * wt[t] * ws[s2] * wt[t2] * a.get(s, t, s2, t2) * b.get(s, t, s2, t2);
                    }
                }
            }
        }
        assert_abs_diff_eq!(hs_inner(&a, &b).unwrap(), naive, epsilon = 1e-14);
        assert_eq!(hs_inner(&a, &SpaceTimeOperator::zeros(&g)).unwrap(), 0.0);
        let other = GridSpec::new(2, 3).unwrap();
        assert!(hs_inner(&a, &SpaceTimeOperator::zeros(&other)).is_err());
    }

    #[test]
    fn trace_of_identity_and_spectrum() {
        let g = GridSpec::new(2, 2).unwrap();
        assert_eq!(trace(&SpaceTimeOperator::identity(&g)), 4.0);

        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let g = random_grid(&mut rng, 3, 2);
        let s = random_samples(&mut rng, g, 9);
        let c = empirical_covariance(&s).unwrap();
        let eig = c.weighted_matrix().symmetric_eigen();
        assert_abs_diff_eq!(trace(&c), eig.eigenvalues.sum(), epsilon = 1e-10);
        let max = eig.eigenvalues.max();
        assert!(eig.eigenvalues.min() >= -1e-10 * max);
    }

    #[test]
    fn kron_identity_and_norms() {
        let g = GridSpec::new(2, 2).unwrap();
        let id = kron(
            &FactorOperator::identity(&g, Axis::Space),
            &FactorOperator::identity(&g, Axis::Time),
        )
        .unwrap();
        assert_eq!(id.matrix(), &DMatrix::<f64>::identity(4, 4));

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = random_grid(&mut rng, 3, 4);
        let a = FactorOperator::on_grid(&g, Axis::Space, DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let b = FactorOperator::on_grid(&g, Axis::Time, DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let k = kron_on(&g, &a, &b).unwrap();
        assert_abs_diff_eq!(k.hs_norm(), a.hs_norm() * b.hs_norm(), epsilon = 1e-12);
        assert!(kron(&b, &a).is_err());
    }

    #[test]
    fn restack_separable_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = GridSpec::new(2, 3).unwrap();
        let a = FactorOperator::on_grid(&g, Axis::Space, DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let b = FactorOperator::on_grid(&g, Axis::Time, DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let r = restack(&kron_on(&g, &a, &b).unwrap());
        let va = a.vec_row_major();
        let vb = b.vec_row_major();
        for i in 0..4 {
            for j in 0..9 {
                assert_abs_diff_eq!(r.matrix()[(i, j)], va[i] * vb[j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn restack_round_trip_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (s, t) = (rng.random_range(1..4), rng.random_range(1..5));
            let g = random_grid(&mut rng, s, t);
            let c = random_op(&mut rng, &g);
            let r = restack(&c);
            assert_eq!(unstack(&r), c);
            assert!((r.hs_norm() - c.hs_norm()).abs() <= 1e-12 * c.hs_norm());
        }
    }
}
