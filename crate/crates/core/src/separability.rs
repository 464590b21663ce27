//! Separable approximations and the separability measures.
//!
//! Three approximations of a space-time operator `C` are provided: the
//! product of its normalized marginals (partial traces), the partial-product
//! approximation with one factor fixed through an identity, and the optimal
//! approximation obtained from the leading singular triple of the restacked
//! kernel. Each measure is the squared Hilbert–Schmidt distance between `C`
//! and the corresponding approximation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    kron_on, restack, trace, unstack, Axis, FactorOperator, RestackedOperator, SpaceTimeOperator,
};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Relative spectral gap below which the optimal approximation is flagged
/// as possibly non-unique.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1e-8;

/// Approximation type of a separability measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Tr,
    Prod,
    Opt,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 3] = [MeasureKind::Tr, MeasureKind::Prod, MeasureKind::Opt];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Tr => "tr",
            MeasureKind::Prod => "prod",
            MeasureKind::Opt => "opt",
        }
    }
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tr" => Ok(MeasureKind::Tr),
            "prod" => Ok(MeasureKind::Prod),
            "opt" => Ok(MeasureKind::Opt),
            other => Err(Error::domain(format!("unknown measure kind '{other}'"))),
        }
    }
}

/// Which factor of the partial-product approximation is pinned through an
/// identity operator.
///
/// With `Delta2Identity` the space factor is `P₂(C, Id) = Tr₂[C]` and the time
/// factor is optimized; `Delta1Identity` mirrors this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductOrientation {
    #[default]
    Delta2Identity,
    Delta1Identity,
}

impl std::str::FromStr for ProductOrientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta2_identity" | "delta2" => Ok(ProductOrientation::Delta2Identity),
            "delta1_identity" | "delta1" => Ok(ProductOrientation::Delta1Identity),
            other => Err(Error::domain(format!("unknown orientation '{other}'"))),
        }
    }
}

/// Power-iteration settings for the leading singular triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Leading singular value of the (weighted) restacked kernel with its unit
/// singular vectors, plus the second singular value from one deflation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularTriple {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Left vector over `(s, s')`, unit norm under the weights `w₁(s)w₁(s')`.
    pub left: Vec<f64>,
    /// Right vector over `(t, t')`, unit norm under the weights `w₂(t)w₂(t')`.
    pub right: Vec<f64>,
    pub iterations: usize,
    /// `‖R·right − γ₁·left‖ / γ₁` in the weighted norm.
    pub residual: f64,
    pub gamma2_converged: bool,
}

/// All six measures together with spectral diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityMeasures {
    pub m_tr: f64,
    pub m_prod: f64,
    pub m_opt: f64,
    pub m_tr_rel: f64,
    pub m_prod_rel: f64,
    pub m_opt_rel: f64,
    pub hs_norm_sq: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub spectral_gap: f64,
    /// `‖C‖² − γ₁²` before clamping at zero.
    pub m_opt_raw: f64,
    pub orientation: ProductOrientation,
}

impl SeparabilityMeasures {
    pub fn absolute(&self, kind: MeasureKind) -> f64 {
        match kind {
            MeasureKind::Tr => self.m_tr,
            MeasureKind::Prod => self.m_prod,
            MeasureKind::Opt => self.m_opt,
        }
    }

    pub fn relative(&self, kind: MeasureKind) -> f64 {
        match kind {
            MeasureKind::Tr => self.m_tr_rel,
            MeasureKind::Prod => self.m_prod_rel,
            MeasureKind::Opt => self.m_opt_rel,
        }
    }

    pub fn get(&self, kind: MeasureKind, relative: bool) -> f64 {
        if relative {
            self.relative(kind)
        } else {
            self.absolute(kind)
        }
    }
}

/// Absolute measures and the squared norm, without the second singular value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureValues {
    pub m_tr: f64,
    pub m_prod: f64,
    pub m_opt: f64,
    pub hs_norm_sq: f64,
}

impl MeasureValues {
    pub fn absolute(&self, kind: MeasureKind) -> f64 {
        match kind {
            MeasureKind::Tr => self.m_tr,
            MeasureKind::Prod => self.m_prod,
            MeasureKind::Opt => self.m_opt,
        }
    }

    /// `M / ‖C‖²`; callers guarantee a nonzero norm.
    pub fn relative(&self, kind: MeasureKind) -> f64 {
        self.absolute(kind) / self.hs_norm_sq
    }
}

/// `Tr₁[C]`: the time marginal `B[t,t'] = Σ_s w₁(s) C[s,t,s,t']`.
pub fn partial_trace_time(c: &SpaceTimeOperator) -> FactorOperator {
    let g = c.grid();
    let (ns, nt) = (g.n_space(), g.n_time());
    let ws = g.space_weights();
    let mut b = DMatrix::zeros(nt, nt);
    for (s, w) in ws.iter().enumerate().take(ns) {
        for t in 0..nt {
            for t2 in 0..nt {
                b[(t, t2)] += w * c.get(s, t, s, t2);
            }
        }
    }
    FactorOperator::on_grid(g, Axis::Time, b).expect("shape follows grid")
}

/// `Tr₂[C]`: the space marginal `A[s,s'] = Σ_t w₂(t) C[s,t,s',t]`.
pub fn partial_trace_space(c: &SpaceTimeOperator) -> FactorOperator {
    let g = c.grid();
    let (ns, nt) = (g.n_space(), g.n_time());
    let wt = g.time_weights();
    let a = DMatrix::from_fn(ns, ns, |s, s2| (0..nt).map(|t| wt[t] * c.get(s, t, s2, t)).sum());
    FactorOperator::on_grid(g, Axis::Space, a).expect("shape follows grid")
}

fn ensure_factor(c: &SpaceTimeOperator, f: &FactorOperator, axis: Axis) -> Result<()> {
    let g = c.grid();
    let w = match axis {
        Axis::Space => g.space_weights(),
        Axis::Time => g.time_weights(),
    };
    if f.axis() != axis || f.weights() != w {
        return Err(Error::domain(format!(
            "expected a {axis:?} factor of size {}, got {:?} of size {}",
            w.len(),
            f.axis(),
            f.dim()
        )));
    }
    Ok(())
}

fn contract_rows(r: &RestackedOperator, space: &FactorOperator) -> FactorOperator {
    // P₁[(t,t')] = Σ_{(s,s')} w₁(s)w₁(s') R[(s,s'),(t,t')] C₁[s,s']
    let rw = r.row_weights();
    let v = space.vec_row_major();
    let x = DVector::from_iterator(v.len(), v.iter().zip(&rw).map(|(a, w)| a * w));
    let p = r.matrix().tr_mul(&x);
    let nt = r.grid().n_time();
    let b = DMatrix::from_fn(nt, nt, |t, t2| p[t * nt + t2]);
    FactorOperator::on_grid(r.grid(), Axis::Time, b).expect("shape follows grid")
}

fn contract_cols(r: &RestackedOperator, time: &FactorOperator) -> FactorOperator {
    // P₂[(s,s')] = Σ_{(t,t')} w₂(t)w₂(t') R[(s,s'),(t,t')] C₂[t,t']
    let cw = r.col_weights();
    let v = time.vec_row_major();
    let x = DVector::from_iterator(v.len(), v.iter().zip(&cw).map(|(a, w)| a * w));
    let p = r.matrix() * x;
    let ns = r.grid().n_space();
    let a = DMatrix::from_fn(ns, ns, |s, s2| p[s * ns + s2]);
    FactorOperator::on_grid(r.grid(), Axis::Space, a).expect("shape follows grid")
}

/// `P₁(C, C₁)`, the time operator with `P₁(A ⊗ B, C₁) = ⟨A, C₁⟩ B`.
pub fn partial_product_1(c: &SpaceTimeOperator, c1: &FactorOperator) -> Result<FactorOperator> {
    ensure_factor(c, c1, Axis::Space)?;
    Ok(contract_rows(&restack(c), c1))
}

/// `P₂(C, C₂)`, the space operator with `P₂(A ⊗ B, C₂) = ⟨B, C₂⟩ A`.
pub fn partial_product_2(c: &SpaceTimeOperator, c2: &FactorOperator) -> Result<FactorOperator> {
    ensure_factor(c, c2, Axis::Time)?;
    Ok(contract_cols(&restack(c), c2))
}

/// `Tr₂[C]/Tr[C] ⊗ Tr₁[C]`.
pub fn marginal_approx(c: &SpaceTimeOperator) -> Result<SpaceTimeOperator> {
    let tr = trace(c);
    let eps = 1e-12 * c.hs_norm();
    if !(tr.abs() > eps) {
        return Err(Error::degenerate(format!(
            "trace {tr:e} is numerically zero; the marginal approximation needs non-deterministic data"
        )));
    }
    let a = partial_trace_space(c).scaled(1.0 / tr);
    let b = partial_trace_time(c);
    kron_on(c.grid(), &a, &b)
}

/// The partial-product approximation for the given orientation.
pub fn product_approx(c: &SpaceTimeOperator, orientation: ProductOrientation) -> Result<SpaceTimeOperator> {
    let r = restack(c);
    let g = c.grid();
    let eps = 1e-12 * c.hs_norm();
    let (a, b) = match orientation {
        ProductOrientation::Delta2Identity => {
            let a = contract_cols(&r, &FactorOperator::identity(g, Axis::Time));
            let norm_sq = a.hs_norm_sq();
            if !(norm_sq.sqrt() > eps) {
                return Err(Error::degenerate("first partial-product factor P₂(C, Id) vanishes"));
            }
            let b = contract_rows(&r, &a).scaled(1.0 / norm_sq);
            (a, b)
        }
        ProductOrientation::Delta1Identity => {
            let b = contract_rows(&r, &FactorOperator::identity(g, Axis::Space));
            let norm_sq = b.hs_norm_sq();
            if !(norm_sq.sqrt() > eps) {
                return Err(Error::degenerate("first partial-product factor P₁(C, Id) vanishes"));
            }
            let a = contract_cols(&r, &b).scaled(1.0 / norm_sq);
            (a, b)
        }
    };
    kron_on(g, &a, &b)
}

struct PowerResult {
    vector: DVector<f64>,
    value: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
    rate: f64,
}

fn power_iterate(
    gram: &DMatrix<f64>,
    start: DVector<f64>,
    tol_scale: Option<f64>,
    opts: PowerIteration,
) -> PowerResult {
    let mut v = start;
    let mut value = 0.0;
    let mut residual = f64::INFINITY;
    let mut prev_residual = f64::INFINITY;
    let mut rate = 0.0;
    for it in 1..=opts.max_iter {
        let w = gram * &v;
        value = v.dot(&w);
        let r = (&w - &v * value).norm();
        if prev_residual.is_finite() && prev_residual > 0.0 {
            rate = r / prev_residual;
        }
        prev_residual = r;
        residual = r;
        let scale = tol_scale.unwrap_or(value.abs());
        let wn = w.norm();
        if r <= opts.tol * scale || wn == 0.0 {
            return PowerResult {
                vector: v,
                value,
                iterations: it,
                residual,
                converged: true,
                rate,
            };
        }
        v = w / wn;
    }
    PowerResult {
        vector: v,
        value,
        iterations: opts.max_iter,
        residual,
        converged: false,
        rate,
    }
}

fn random_unit(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let n = v.norm();
    v / n
}

/// Leading singular triple of the restacked kernel by power iteration on the
/// smaller Gram matrix, starting from the normalized all-ones vector.
pub fn leading_singular_triple(r: &RestackedOperator, tol: f64, max_iter: usize) -> Result<SingularTriple> {
    if !(tol > 0.0) {
        return Err(Error::domain("power-iteration tolerance must be positive"));
    }
    let opts = PowerIteration { tol, max_iter };
    let rt = r.weighted_matrix();
    let rows_smaller = rt.nrows() <= rt.ncols();
    let gram = if rows_smaller { &rt * rt.transpose() } else { rt.tr_mul(&rt) };
    let m = gram.nrows();
    let gram_norm = gram.norm();

    let row_sqrt: Vec<f64> = r.row_weights().iter().map(|w| w.sqrt()).collect();
    let col_sqrt: Vec<f64> = r.col_weights().iter().map(|w| w.sqrt()).collect();

    if gram_norm == 0.0 {
        let left = DVector::from_element(rt.nrows(), 1.0 / (rt.nrows() as f64).sqrt());
        let right = DVector::from_element(rt.ncols(), 1.0 / (rt.ncols() as f64).sqrt());
        return Ok(SingularTriple {
            gamma1: 0.0,
            gamma2: 0.0,
            left: left.iter().zip(&row_sqrt).map(|(u, w)| u / w).collect(),
            right: right.iter().zip(&col_sqrt).map(|(u, w)| u / w).collect(),
            iterations: 0,
            residual: 0.0,
            gamma2_converged: true,
        });
    }

    let ones = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut top = power_iterate(&gram, ones, None, opts);
    // All-ones start orthogonal to the dominant space: retry from a seeded
    // random vector.
    if top.value <= 1e-10 * gram_norm {
        top = power_iterate(&gram, random_unit(m, 0x5eed_5eed), None, opts);
    }
    let mu1 = top.value.max(0.0);
    if !top.converged {
        let ratio = top.rate.clamp(0.0, 1.0);
        return Err(Error::Convergence {
            iterations: top.iterations,
            residual: top.residual / mu1.max(f64::MIN_POSITIVE),
            gap: mu1.sqrt() * (1.0 - ratio.sqrt()),
        });
    }
    let gamma1 = mu1.sqrt();

    // Hotelling deflation for the second singular value.
    let v1 = &top.vector;
    let deflated = &gram - v1 * v1.transpose() * mu1;
    let mut gamma2 = 0.0;
    let mut gamma2_converged = true;
    if m > 1 {
        let mut start = DVector::from_element(m, 1.0);
        start -= v1 * v1.dot(&start);
        if start.norm() < 1e-8 {
            start = random_unit(m, 0x5eed_0002);
            start -= v1 * v1.dot(&start);
        }
        let n = start.norm();
        start /= n;
        let second = power_iterate(&deflated, start, Some(mu1), opts);
        gamma2_converged = second.converged;
        gamma2 = second.value.max(0.0).sqrt().min(gamma1);
    }

    // Singular vectors in the Euclidean representation, then unweighted.
    let (u, v) = if rows_smaller {
        let u = top.vector.clone();
        let v = if gamma1 > 0.0 { rt.tr_mul(&u) / gamma1 } else { DVector::zeros(rt.ncols()) };
        (u, v)
    } else {
        let v = top.vector.clone();
        let u = if gamma1 > 0.0 { &rt * &v / gamma1 } else { DVector::zeros(rt.nrows()) };
        (u, v)
    };
    let residual = if gamma1 > 0.0 { (&rt * &v - &u * gamma1).norm() / gamma1 } else { 0.0 };
    Ok(SingularTriple {
        gamma1,
        gamma2,
        left: u.iter().zip(&row_sqrt).map(|(x, w)| x / w).collect(),
        right: v.iter().zip(&col_sqrt).map(|(x, w)| x / w).collect(),
        iterations: top.iterations,
        residual,
        gamma2_converged,
    })
}

/// Optimal separable approximation with its singular triple.
#[derive(Debug, Clone)]
pub struct OptimalApprox {
    pub operator: SpaceTimeOperator,
    pub triple: SingularTriple,
    /// Set when `γ₁ − γ₂` falls below the uniqueness threshold; the
    /// approximation is still computed from the converged vector.
    pub warning: Option<String>,
}

/// `Π⁻¹[γ₁ · e₁ ⊗ f₁]`.
pub fn optimal_approx(c: &SpaceTimeOperator, tol: f64, max_iter: usize) -> Result<OptimalApprox> {
    let r = restack(c);
    let triple = leading_singular_triple(&r, tol, max_iter)?;
    let (rows, cols) = (r.matrix().nrows(), r.matrix().ncols());
    let rank_one = DMatrix::from_fn(rows, cols, |i, j| triple.gamma1 * triple.left[i] * triple.right[j]);
    let operator = unstack(&RestackedOperator::from_matrix(c.grid(), rank_one)?);
    let gap = triple.gamma1 - triple.gamma2;
    let warning = (triple.gamma1 > 0.0 && gap <= DEFAULT_GAP_THRESHOLD * triple.gamma1).then(|| {
        format!(
            "spectral gap {gap:e} below {DEFAULT_GAP_THRESHOLD:e}·γ₁; optimal approximation may be non-unique"
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(OptimalApprox {
        operator,
        triple,
        warning,
    })
}

/// The first `k` singular values of the weighted restacked kernel, from a
/// dense SVD.
pub fn singular_spectrum(r: &RestackedOperator, k: usize) -> Result<Vec<f64>> {
    let rt = r.weighted_matrix();
    let limit = rt.nrows().min(rt.ncols());
    if k > limit {
        return Err(Error::domain(format!("requested {k} singular values, at most {limit} exist")));
    }
    let mut values: Vec<f64> = rt.svd(false, false).singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values.truncate(k);
    Ok(values)
}

fn clamp_opt(norm_sq: f64, gamma1: f64) -> (f64, f64) {
    let raw = norm_sq - gamma1 * gamma1;
    (raw.max(0.0), raw)
}

/// Value of a single measure; cheaper than [`measures`] for `Opt` since the
/// second singular value is not needed.
pub fn measure(
    c: &SpaceTimeOperator,
    kind: MeasureKind,
    orientation: ProductOrientation,
    opts: PowerIteration,
) -> Result<f64> {
    match kind {
        MeasureKind::Tr => Ok(c.sub(&marginal_approx(c)?)?.hs_norm_sq()),
        MeasureKind::Prod => Ok(c.sub(&product_approx(c, orientation)?)?.hs_norm_sq()),
        MeasureKind::Opt => {
            let t = leading_singular_triple(&restack(c), opts.tol, opts.max_iter)?;
            Ok(clamp_opt(c.hs_norm_sq(), t.gamma1).0)
        }
    }
}

/// Absolute measures of all three kinds and `‖C‖²`.
pub fn measure_values(
    c: &SpaceTimeOperator,
    orientation: ProductOrientation,
    opts: PowerIteration,
) -> Result<MeasureValues> {
    let m_tr = measure(c, MeasureKind::Tr, orientation, opts).map_err(|e| e.context("tr"))?;
    let m_prod = measure(c, MeasureKind::Prod, orientation, opts).map_err(|e| e.context("prod"))?;
    let m_opt = measure(c, MeasureKind::Opt, orientation, opts)?;
    Ok(MeasureValues {
        m_tr,
        m_prod,
        m_opt,
        hs_norm_sq: c.hs_norm_sq(),
    })
}

/// All six measures and the spectral diagnostics of `C`.
pub fn measures(
    c: &SpaceTimeOperator,
    orientation: ProductOrientation,
    tol: f64,
    max_iter: usize,
) -> Result<SeparabilityMeasures> {
    let hs_norm_sq = c.hs_norm_sq();
    if !(hs_norm_sq > 0.0) {
        return Err(Error::degenerate("zero operator: relative measures are undefined"));
    }
    let m_tr = c.sub(&marginal_approx(c).map_err(|e| e.context("tr"))?)?.hs_norm_sq();
    let m_prod = c
        .sub(&product_approx(c, orientation).map_err(|e| e.context("prod"))?)?
        .hs_norm_sq();
    let triple = leading_singular_triple(&restack(c), tol, max_iter)?;
    let (m_opt, m_opt_raw) = clamp_opt(hs_norm_sq, triple.gamma1);
    Ok(SeparabilityMeasures {
        m_tr,
        m_prod,
        m_opt,
        m_tr_rel: m_tr / hs_norm_sq,
        m_prod_rel: m_prod / hs_norm_sq,
        m_opt_rel: m_opt / hs_norm_sq,
        hs_norm_sq,
        gamma1: triple.gamma1,
        gamma2: triple.gamma2,
        spectral_gap: triple.gamma1 - triple.gamma2,
        m_opt_raw,
        orientation,
    })
}
