//! Confidence intervals and relevance tests for the separability measures,
//! and the end-to-end analysis of a sample set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{empirical_covariance, restack, SpaceTimeOperator};
use crate::pivot::PivotTable;
use crate::sample::SampleSet;
use crate::selfnorm::{NuGrid, SequentialMeasures, DEFAULT_K};
use crate::separability::{
    measures, singular_spectrum, MeasureKind, PowerIteration, ProductOrientation, SeparabilityMeasures,
    DEFAULT_GAP_THRESHOLD, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

/// A measure together with whether it is taken relative to `‖C‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasureTarget {
    pub kind: MeasureKind,
    pub relative: bool,
}

impl MeasureTarget {
    pub fn new(kind: MeasureKind, relative: bool) -> Self {
        MeasureTarget { kind, relative }
    }

    /// The six variants, absolute first.
    pub fn all() -> [MeasureTarget; 6] {
        let mut out = [MeasureTarget::new(MeasureKind::Tr, false); 6];
        for (i, rel) in [false, true].into_iter().enumerate() {
            for (j, k) in MeasureKind::ALL.into_iter().enumerate() {
                out[3 * i + j] = MeasureTarget::new(k, rel);
            }
        }
        out
    }

    pub fn label(&self) -> String {
        if self.relative {
            format!("{}_rel", self.kind)
        } else {
            self.kind.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub kind: MeasureKind,
    pub relative: bool,
    /// Nominal coverage `1 − α`.
    pub level: f64,
    /// Reported lower endpoint, clamped at 0.
    pub lower: f64,
    pub upper: f64,
    pub raw_lower: f64,
    pub raw_upper: f64,
    pub point: f64,
    pub v: f64,
}

impl ConfidenceInterval {
    /// Membership in the raw (unclamped) interval.
    pub fn contains(&self, value: f64) -> bool {
        self.raw_lower <= value && value <= self.raw_upper
    }

    pub fn width(&self) -> f64 {
        self.raw_upper - self.raw_lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestDirection {
    /// `H₀: M ≤ Δ` against a relevant deviation `M > Δ`.
    RejectIfLarge,
    /// `H₀: M > Δ` against approximate separability `M ≤ Δ`.
    RejectIfSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTestResult {
    pub kind: MeasureKind,
    pub relative: bool,
    pub direction: TestDirection,
    pub delta: f64,
    pub alpha: f64,
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn check_v(v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::domain(format!("normalizer must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// `[M + q_{α/2} V, M + q_{1−α/2} V]` with `q_{α/2} = −q_{1−α/2}`.
pub fn confidence_interval(
    target: MeasureTarget,
    point: f64,
    v: f64,
    table: &PivotTable,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    check_v(v)?;
    let q_hi = table.symmetric_quantile(1.0 - alpha / 2.0)?;
    let q_lo = -q_hi;
    let raw_lower = point + q_lo * v;
    let raw_upper = point + q_hi * v;
    Ok(ConfidenceInterval {
        kind: target.kind,
        relative: target.relative,
        level: 1.0 - alpha,
        lower: raw_lower.max(0.0),
        upper: raw_upper,
        raw_lower,
        raw_upper,
        point,
        v,
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::domain(format!("relevance threshold must be positive, got {delta}")));
    }
    Ok(())
}

/// Rejects `H₀: M ≤ Δ` when `M̂ + q_α V̂ > Δ`.
pub fn test_relevant_deviation(
    target: MeasureTarget,
    point: f64,
    v: f64,
    delta: f64,
    table: &PivotTable,
    alpha: f64,
) -> Result<RelevanceTestResult> {
    check_alpha(alpha)?;
    check_v(v)?;
    check_delta(delta)?;
    let q_alpha = -table.symmetric_quantile(1.0 - alpha)?;
    let statistic = point + q_alpha * v;
    Ok(RelevanceTestResult {
        kind: target.kind,
        relative: target.relative,
        direction: TestDirection::RejectIfLarge,
        delta,
        alpha,
        statistic,
        critical: delta,
        reject: statistic > delta,
    })
}

/// Rejects `H₀: M > Δ` (deciding for approximate separability) when
/// `M̂ + q_{1−α} V̂ ≤ Δ`.
pub fn test_approximate_separability(
    target: MeasureTarget,
    point: f64,
    v: f64,
    delta: f64,
    table: &PivotTable,
    alpha: f64,
) -> Result<RelevanceTestResult> {
    check_alpha(alpha)?;
    check_v(v)?;
    check_delta(delta)?;
    let q = table.symmetric_quantile(1.0 - alpha)?;
    let statistic = point + q * v;
    Ok(RelevanceTestResult {
        kind: target.kind,
        relative: target.relative,
        direction: TestDirection::RejectIfSmall,
        delta,
        alpha,
        statistic,
        critical: delta,
        reject: statistic <= delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub orientation: ProductOrientation,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Threshold for the absolute relevance tests; no tests when unset.
    pub delta: Option<f64>,
    /// Threshold for the relative relevance tests.
    pub delta_rel: Option<f64>,
    pub include_absolute: bool,
    pub include_relative: bool,
    /// Number of leading singular values reported.
    pub spectrum_len: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            k: DEFAULT_K,
            orientation: ProductOrientation::default(),
            alpha: 0.05,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            delta: None,
            delta_rel: None,
            include_absolute: true,
            include_relative: true,
            spectrum_len: 15,
        }
    }
}

impl AnalysisConfig {
    pub fn power(&self) -> PowerIteration {
        PowerIteration {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    fn targets(&self) -> Vec<MeasureTarget> {
        MeasureTarget::all()
            .into_iter()
            .filter(|t| if t.relative { self.include_relative } else { self.include_absolute })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub tr: f64,
    pub prod: f64,
    pub opt: f64,
    pub tr_rel: f64,
    pub prod_rel: f64,
    pub opt_rel: f64,
}

impl Normalizers {
    pub fn get(&self, target: MeasureTarget) -> f64 {
        match (target.kind, target.relative) {
            (MeasureKind::Tr, false) => self.tr,
            (MeasureKind::Prod, false) => self.prod,
            (MeasureKind::Opt, false) => self.opt,
            (MeasureKind::Tr, true) => self.tr_rel,
            (MeasureKind::Prod, true) => self.prod_rel,
            (MeasureKind::Opt, true) => self.opt_rel,
        }
    }

    pub fn from_sequential(seq: &SequentialMeasures) -> Result<Self> {
        let rel = |k: MeasureKind| seq.v_hat_rel(k).map_err(|e| e.context(&format!("{k}_rel")));
        Ok(Normalizers {
            tr: seq.v_hat(MeasureKind::Tr),
            prod: seq.v_hat(MeasureKind::Prod),
            opt: seq.v_hat(MeasureKind::Opt),
            tr_rel: rel(MeasureKind::Tr)?,
            prod_rel: rel(MeasureKind::Prod)?,
            opt_rel: rel(MeasureKind::Opt)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub gamma1: f64,
    pub gamma2: f64,
    pub spectrum: Vec<f64>,
    /// Present when the optimal approximation may be non-unique.
    pub gap_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub orientation: ProductOrientation,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub measures: SeparabilityMeasures,
    /// Absent when the report was computed from an operator rather than data.
    pub normalizers: Option<Normalizers>,
    pub intervals: Vec<ConfidenceInterval>,
    pub tests: Vec<RelevanceTestResult>,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

impl SeparabilityReport {
    pub fn interval(&self, target: MeasureTarget) -> Option<&ConfidenceInterval> {
        self.intervals
            .iter()
            .find(|i| i.kind == target.kind && i.relative == target.relative)
    }
}

fn diagnostics(c: &SpaceTimeOperator, m: &SeparabilityMeasures, spectrum_len: usize) -> Result<Diagnostics> {
    let r = restack(c);
    let limit = r.matrix().nrows().min(r.matrix().ncols());
    let spectrum = singular_spectrum(&r, spectrum_len.min(limit))?;
    let gap_warning = (m.gamma1 > 0.0 && m.spectral_gap <= DEFAULT_GAP_THRESHOLD * m.gamma1)
        .then(|| "spectral gap below threshold; optimal approximation may be non-unique".to_string());
    Ok(Diagnostics {
        gamma1: m.gamma1,
        gamma2: m.gamma2,
        spectrum,
        gap_warning,
    })
}

/// Measures and diagnostics of a given operator, with no inference.
pub fn report_for_operator(c: &SpaceTimeOperator, config: &AnalysisConfig) -> Result<SeparabilityReport> {
    let m = measures(c, config.orientation, config.tol, config.max_iter)?;
    let diagnostics = diagnostics(c, &m, config.spectrum_len)?;
    let g = c.grid();
    Ok(SeparabilityReport {
        measures: m,
        normalizers: None,
        intervals: Vec::new(),
        tests: Vec::new(),
        diagnostics,
        provenance: Provenance {
            seed: 0,
            k: config.k,
            n: 0,
            s: g.n_space(),
            t: g.n_time(),
            n_paths: 0,
            n_steps: 0,
            orientation: config.orientation,
            alpha: config.alpha,
        },
    })
}

/// Full analysis: centering (unless already centered), the six measures,
/// their self-normalizers, two-sided intervals at level `1 − α`, and the
/// relevance tests for every configured threshold.
pub fn analyze(samples: &SampleSet, config: &AnalysisConfig, table: &PivotTable) -> Result<SeparabilityReport> {
    if table.k != config.k {
        return Err(Error::Config(format!(
            "pivot table was simulated for K={} but the analysis uses K={}",
            table.k, config.k
        )));
    }
    let centered;
    let data = if samples.is_centered() {
        samples
    } else {
        centered = samples.center()?;
        &centered
    };
    let nu = NuGrid::new(config.k)?;
    let seq = SequentialMeasures::compute(data, &nu, config.orientation, config.power())?;
    let normalizers = Normalizers::from_sequential(&seq)?;
    let c = empirical_covariance(data)?;
    let m = measures(&c, config.orientation, config.tol, config.max_iter)?;

    let mut intervals = Vec::new();
    let mut tests = Vec::new();
    for target in config.targets() {
        let point = m.get(target.kind, target.relative);
        let v = normalizers.get(target);
        intervals.push(confidence_interval(target, point, v, table, config.alpha)?);
        let delta = if target.relative { config.delta_rel } else { config.delta };
        if let Some(delta) = delta {
            tests.push(test_relevant_deviation(target, point, v, delta, table, config.alpha)?);
            tests.push(test_approximate_separability(target, point, v, delta, table, config.alpha)?);
        }
    }
    let diagnostics = diagnostics(&c, &m, config.spectrum_len)?;
    let g = data.grid();
    Ok(SeparabilityReport {
        measures: m,
        normalizers: Some(normalizers),
        intervals,
        tests,
        diagnostics,
        provenance: Provenance {
            seed: table.seed,
            k: config.k,
            n: data.n(),
            s: g.n_space(),
            t: g.n_time(),
            n_paths: table.n_paths,
            n_steps: table.n_steps,
            orientation: config.orientation,
            alpha: config.alpha,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn paper_table() -> PivotTable {
        PivotTable::from_quantiles(20, &[(0.9, 7.097), (0.95, 9.895), (0.99, 16.479)]).unwrap()
    }

    fn tr() -> MeasureTarget {
        MeasureTarget::new(MeasureKind::Tr, false)
    }

    #[test]
    fn interval_arithmetic() {
        let t = paper_table();
        let ci = confidence_interval(tr(), 2.8, 0.1, &t, 0.10).unwrap();
        assert_abs_diff_eq!(ci.raw_lower, 1.8105, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.raw_upper, 3.7895, epsilon = 1e-12);
        assert!(ci.lower <= ci.point && ci.point <= ci.upper);
        let ci2 = confidence_interval(tr(), 2.8, 0.2, &t, 0.10).unwrap();
        assert_abs_diff_eq!(ci2.width(), 2.0 * ci.width(), epsilon = 1e-12);
        let zero = confidence_interval(tr(), 2.8, 0.0, &t, 0.10).unwrap();
        assert_eq!((zero.lower, zero.upper), (2.8, 2.8));
        assert!(matches!(confidence_interval(tr(), 2.8, 0.1, &t, 0.05), Err(Error::Config(_))));
        assert!(confidence_interval(tr(), 2.8, -1.0, &t, 0.10).is_err());
    }

    #[test]
    fn lower_endpoint_clamped_but_raw_kept() {
        let ci = confidence_interval(tr(), 0.1, 0.1, &paper_table(), 0.10).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!(ci.raw_lower < 0.0);
        assert!(ci.contains(ci.raw_lower));
    }

    #[test]
    fn relevance_test_examples() {
        let t = paper_table();
        let r = test_relevant_deviation(tr(), 3.25, 0.05, 2.5, &t, 0.05).unwrap();
        assert_abs_diff_eq!(r.statistic, 2.75525, epsilon = 1e-12);
        assert!(r.reject);
        let r0 = test_relevant_deviation(tr(), 2.0, 0.0, 1.9, &t, 0.05).unwrap();
        assert!(r0.reject);
        assert!(!test_relevant_deviation(tr(), 2.0, 0.0, 2.0, &t, 0.05).unwrap().reject);
        assert!(test_relevant_deviation(tr(), 2.0, 0.0, 0.0, &t, 0.05).is_err());

        let a = test_approximate_separability(tr(), 0.1, 0.01, 0.3, &t, 0.05).unwrap();
        assert_abs_diff_eq!(a.statistic, 0.19895, epsilon = 1e-12);
        assert!(a.reject);
        assert!(test_approximate_separability(tr(), 0.3, 0.0, 0.3, &t, 0.05).unwrap().reject);
        assert!(!test_approximate_separability(tr(), 0.3, 0.01, 0.3, &t, 0.05).unwrap().reject);
    }

    proptest! {
        #[test]
        fn separable_point_never_rejects(v in 0.0f64..10.0, delta in 1e-6f64..10.0) {
            let r = test_relevant_deviation(tr(), 0.0, v, delta, &paper_table(), 0.05).unwrap();
            prop_assert!(!r.reject);
        }

        #[test]
        fn test_interval_duality(point in 0.0f64..5.0, v in 0.0f64..1.0, delta in 1e-3f64..6.0) {
            let t = paper_table();
            let r = test_relevant_deviation(tr(), point, v, delta, &t, 0.05).unwrap();
            // One-sided interval [M̂ + q_α V̂, ∞) misses [0, Δ].
            let lower = point - t.symmetric_quantile(0.95).unwrap() * v;
            prop_assert_eq!(r.reject, delta < lower);
        }

        #[test]
        fn monotone_in_delta(point in 0.0f64..5.0, v in 0.0f64..1.0, d1 in 1e-3f64..6.0, d2 in 1e-3f64..6.0) {
            let t = paper_table();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let large = |d| test_relevant_deviation(tr(), point, v, d, &t, 0.05).unwrap().reject;
            let small = |d| test_approximate_separability(tr(), point, v, d, &t, 0.05).unwrap().reject;
            prop_assert!(large(lo) >= large(hi));
            prop_assert!(small(lo) <= small(hi));
        }
    }
}
