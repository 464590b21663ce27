//! Synthetic space-time data: a spatial moving average of Gaussian
//! innovations with a tunable non-separable covariance, its exact lag-0
//! covariance, the 2×2 matrix family used as a closed-form fixture, and a
//! coverage-study harness for the confidence intervals.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::inference::{confidence_interval, MeasureTarget, Normalizers};
use crate::operator::SpaceTimeOperator;
use crate::pivot::{path_rng, PivotTable};
use crate::sample::SampleSet;
use crate::selfnorm::{NuGrid, SequentialMeasures};
use crate::separability::{measures, PowerIteration, ProductOrientation, SeparabilityMeasures};

/// How `s` and `t` enter the kernel and the innovation covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    /// Grid coordinates (equispaced in `[0, 1]` by default).
    #[default]
    GridCoords,
    /// Integer indices `1..=S` and `1..=T`.
    IndexCoords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub grid: GridSpec,
    pub a: f64,
    pub b: f64,
    /// Separability parameter; the covariance is separable at `c = 0`.
    pub c: f64,
    pub coordinate_mode: CoordinateMode,
}

impl SyntheticModel {
    /// Model with `a = 10`, `b = 5` on an `S × T` grid.
    pub fn new(s: usize, t: usize, c: f64) -> Result<Self> {
        let m = SyntheticModel {
            grid: GridSpec::new(s, t)?,
            a: 10.0,
            b: 5.0,
            c,
            coordinate_mode: CoordinateMode::GridCoords,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.a >= 0.0 && self.b >= 0.0) {
            return Err(Error::domain("model parameters a and b must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::domain(format!("separability parameter c = {} outside [0, 1]", self.c)));
        }
        Ok(())
    }

    fn coords(&self) -> (Vec<f64>, Vec<f64>) {
        match self.coordinate_mode {
            CoordinateMode::GridCoords => (self.grid.space_coords().to_vec(), self.grid.time_coords().to_vec()),
            CoordinateMode::IndexCoords => (
                (1..=self.grid.n_space()).map(|i| i as f64).collect(),
                (1..=self.grid.n_time()).map(|i| i as f64).collect(),
            ),
        }
    }

    /// The innovation covariance function as written. The positive-part
    /// term uses the signed lag, so this is not symmetric under swapping
    /// both pairs; [`sigma_e`] symmetrizes the assembled matrix.
    pub fn sigma(&self, s: f64, s2: f64, t: f64, t2: f64) -> f64 {
        let tau = t - t2;
        let psi = self.a * tau.abs() + 1.0;
        let first = psi.powf(-0.5) * (-(self.b * self.b) * (s - s2).powi(2) / psi.powf(self.c)).exp();
        let d = (s * s - s2 * s2).abs() / 2.0;
        first + self.c * (1.0 - d - tau).max(0.0)
    }

    /// Spatial moving-average kernel `Κ[s,s'] = exp(−b²(s−s')²)`.
    pub fn kernel(&self) -> DMatrix<f64> {
        let (sc, _) = self.coords();
        let n = sc.len();
        DMatrix::from_fn(n, n, |i, j| (-(self.b * self.b) * (sc[i] - sc[j]).powi(2)).exp())
    }
}

/// Record of the repairs applied to make the innovation covariance factorable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PsdRepair {
    pub min_eigenvalue: f64,
    /// Number of negative eigenvalues clipped to zero.
    pub clipped: usize,
    /// Diagonal jitter added before the Cholesky factorization.
    pub jitter: f64,
}

/// The innovation covariance over flattened `(s, t)` pairs.
#[derive(Debug, Clone)]
pub struct SigmaE {
    pub matrix: DMatrix<f64>,
    pub repair: PsdRepair,
}

const PSD_TOL: f64 = 1e-8;

/// Builds the innovation covariance `(Σ + Σᵀ)/2`, clipping eigenvalues
/// below `−1e-8·λ_max` to zero.
pub fn sigma_e(model: &SyntheticModel) -> Result<SigmaE> {
    model.validate()?;
    let (sc, tc) = model.coords();
    let g = &model.grid;
    let nt = g.n_time();
    let d = g.dim();
    let raw = DMatrix::from_fn(d, d, |r, c| model.sigma(sc[r / nt], sc[c / nt], tc[r % nt], tc[c % nt]));
    let mut m = (&raw + raw.transpose()) * 0.5;
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let mut repair = PsdRepair {
        min_eigenvalue: min,
        ..Default::default()
    };
    if min < -PSD_TOL * max {
        let clipped = eig.eigenvalues.iter().filter(|v| **v < 0.0).count();
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        m = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        m = (&m + m.transpose()) * 0.5;
        repair.clipped = clipped;
        log::info!("innovation covariance: clipped {clipped} negative eigenvalues (min {min:e})");
    }
    Ok(SigmaE { matrix: m, repair })
}

/// A model with its innovation factor, ready to draw samples.
#[derive(Debug, Clone)]
pub struct Generator {
    model: SyntheticModel,
    kernel: DMatrix<f64>,
    /// `L` with `L Lᵀ` the covariance actually sampled from.
    factor: DMatrix<f64>,
    repair: PsdRepair,
}

const JITTERS: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

impl Generator {
    pub fn new(model: &SyntheticModel) -> Result<Self> {
        let SigmaE { matrix, mut repair } = sigma_e(model)?;
        let d = matrix.nrows();
        let mean_diag = matrix.diagonal().mean();
        for jitter in JITTERS {
            let jittered = &matrix + DMatrix::identity(d, d) * (jitter * mean_diag);
            if let Some(ch) = jittered.cholesky() {
                if jitter > 0.0 {
                    log::info!("innovation covariance: added jitter {jitter:e}·mean(diag)");
                }
                repair.jitter = jitter * mean_diag;
                return Ok(Generator {
                    model: model.clone(),
                    kernel: model.kernel(),
                    factor: ch.l(),
                    repair,
                });
            }
        }
        Err(Error::Model(format!(
            "innovation covariance not factorable even with jitter {:e}",
            JITTERS[JITTERS.len() - 1]
        )))
    }

    pub fn model(&self) -> &SyntheticModel {
        &self.model
    }

    pub fn repair(&self) -> &PsdRepair {
        &self.repair
    }

    /// `Κ ⊗ Id_T` applied to a flat field.
    fn smooth(&self, e: &DVector<f64>) -> DVector<f64> {
        let (ns, nt) = (self.model.grid.n_space(), self.model.grid.n_time());
        let mut out = DVector::zeros(ns * nt);
        for s in 0..ns {
            for s2 in 0..ns {
                let k = self.kernel[(s, s2)];
                for t in 0..nt {
                    out[s * nt + t] += k * e[s2 * nt + t];
                }
            }
        }
        out
    }

    /// `n` consecutive observations `X_k = (Κ ⊗ Id)(e_k + e_{k−1})`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::domain("need at least one replicate"));
        }
        let d = self.model.grid.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            &self.factor * z
        };
        let mut prev = draw();
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            let cur = draw();
            let x = self.smooth(&(&cur + &prev));
            values.extend(x.iter());
            prev = cur;
        }
        SampleSet::new(self.model.grid.clone(), n, values)
    }

    /// Exact lag-0 covariance `2 (Κ⊗Id) Σ_e (Κ⊗Id)ᵀ`.
    pub fn true_covariance(&self) -> SpaceTimeOperator {
        let nt = self.model.grid.n_time();
        let kt = self.kernel.kronecker(&DMatrix::<f64>::identity(nt, nt));
        let sigma = &self.factor * self.factor.transpose();
        let mut c = &kt * sigma * kt.transpose() * 2.0;
        c = (&c + c.transpose()) * 0.5;
        SpaceTimeOperator::from_matrix(&self.model.grid, c).expect("shape follows grid")
    }

    /// Lag-`h` cross covariance `E[X_{k+h} ⊗ X_k]`, nonzero only for `h ≤ 1`.
    pub fn lag_covariance(&self, h: usize) -> DMatrix<f64> {
        let d = self.model.grid.dim();
        match h {
            0 => self.true_covariance().into_matrix(),
            1 => {
                let nt = self.model.grid.n_time();
                let kt = self.kernel.kronecker(&DMatrix::<f64>::identity(nt, nt));
                &kt * (&self.factor * self.factor.transpose()) * kt.transpose()
            }
            _ => DMatrix::zeros(d, d),
        }
    }
}

pub fn sample(model: &SyntheticModel, n: usize, seed: u64) -> Result<SampleSet> {
    Generator::new(model)?.sample(n, seed)
}

pub fn true_covariance(model: &SyntheticModel) -> Result<SpaceTimeOperator> {
    Ok(Generator::new(model)?.true_covariance())
}

/// The 4×4 matrix family on a 2×2 grid with unit weights, separable at
/// `q = 0`.
pub fn example_matrix(q: f64) -> Result<SpaceTimeOperator> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("q = {q} outside [0, 1]")));
    }
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        2.0, 0.0, 1.0, q,
        0.0, 2.0, q,   1.0,
        1.0, q,   2.0, q,
        q,   1.0, q,   2.0,
    ]);
    SpaceTimeOperator::from_matrix(&GridSpec::new(2, 2)?, m)
}

/// One point of the measure-versus-`c` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub c: f64,
    pub measures: SeparabilityMeasures,
}

/// Oracle measures of the true covariance for each `c`, other model
/// parameters taken from `base`.
pub fn measure_curve(
    base: &SyntheticModel,
    cs: &[f64],
    orientation: ProductOrientation,
    opts: PowerIteration,
) -> Result<Vec<CurvePoint>> {
    cs.par_iter()
        .map(|&c| {
            let model = SyntheticModel { c, ..base.clone() };
            let cov = true_covariance(&model)?;
            Ok(CurvePoint {
                c,
                measures: measures(&cov, orientation, opts.tol, opts.max_iter)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudyConfig {
    pub model: SyntheticModel,
    pub n: usize,
    pub runs: usize,
    pub alphas: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub targets: Vec<MeasureTarget>,
    pub orientation: ProductOrientation,
    pub power: PowerIteration,
}

impl CoverageStudyConfig {
    /// Defaults at desk scale: `runs = 500`, `K = 20`, α ∈ {0.05, 0.10}, all
    /// six measures, space factor optimized against `Tr₁[C]`.
    pub fn new(model: SyntheticModel, n: usize) -> Self {
        CoverageStudyConfig {
            model,
            n,
            runs: 500,
            alphas: vec![0.05, 0.10],
            k: 20,
            seed: 2024,
            targets: MeasureTarget::all().to_vec(),
            orientation: ProductOrientation::Delta1Identity,
            power: PowerIteration::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.runs == 0 {
            return Err(Error::domain("coverage study needs at least one run"));
        }
        if self.n < self.k {
            return Err(Error::domain(format!("n = {} must be at least K = {}", self.n, self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub kind: crate::separability::MeasureKind,
    pub relative: bool,
    pub alpha: f64,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    pub coverage: f64,
    pub runs: usize,
    /// Runs whose normalizer was exactly zero.
    pub degenerate_runs: usize,
    pub mean_width: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub config: CoverageStudyConfig,
    pub truth: SeparabilityMeasures,
    pub rows: Vec<CoverageRow>,
}

impl CoverageTable {
    pub fn row(&self, target: MeasureTarget, alpha: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| {
            r.kind == target.kind && r.relative == target.relative && (r.alpha - alpha).abs() < 1e-12
        })
    }
}

/// Seed of run `index` in a study seeded by `seed`.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    path_rng(seed, index as u64).next_u64()
}

struct RunOutcome {
    // [target][alpha] -> (covered, width, degenerate)
    hits: Vec<Vec<(bool, f64, bool)>>,
}

/// Empirical coverage of the raw two-sided intervals for the true
/// measures of the model.
pub fn coverage_study(config: &CoverageStudyConfig, table: &PivotTable) -> Result<CoverageTable> {
    config.validate()?;
    if table.k != config.k {
        return Err(Error::Config(format!("pivot table K={} but study K={}", table.k, config.k)));
    }
    let generator = Generator::new(&config.model)?;
    let truth = measures(
        &generator.true_covariance(),
        config.orientation,
        config.power.tol,
        config.power.max_iter,
    )?;
    let nu = NuGrid::new(config.k)?;

    let outcomes: Vec<RunOutcome> = (0..config.runs)
        .into_par_iter()
        .map(|run| -> Result<RunOutcome> {
            let data = generator.sample(config.n, run_seed(config.seed, run))?.center()?;
            let seq = SequentialMeasures::compute(&data, &nu, config.orientation, config.power)
                .map_err(|e| e.context(&format!("run {run}")))?;
            let norms = Normalizers::from_sequential(&seq)?;
            let full = seq.full();
            let mut hits = Vec::with_capacity(config.targets.len());
            for target in &config.targets {
                let point = if target.relative { full.relative(target.kind) } else { full.absolute(target.kind) };
                let v = norms.get(*target);
                let mut per_alpha = Vec::with_capacity(config.alphas.len());
                for &alpha in &config.alphas {
                    let ci = confidence_interval(*target, point, v, table, alpha)?;
                    per_alpha.push((ci.contains(truth.get(target.kind, target.relative)), ci.width(), v == 0.0));
                }
                hits.push(per_alpha);
            }
            Ok(RunOutcome { hits })
        })
        .collect::<Result<_>>()?;

    let g = &config.model.grid;
    let mut rows = Vec::new();
    for (ti, target) in config.targets.iter().enumerate() {
        for (ai, &alpha) in config.alphas.iter().enumerate() {
            let covered = outcomes.iter().filter(|o| o.hits[ti][ai].0).count();
            let degenerate = outcomes.iter().filter(|o| o.hits[ti][ai].2).count();
            let width = outcomes.iter().map(|o| o.hits[ti][ai].1).sum::<f64>() / config.runs as f64;
            rows.push(CoverageRow {
                kind: target.kind,
                relative: target.relative,
                alpha,
                s: g.n_space(),
                t: g.n_time(),
                n: config.n,
                coverage: covered as f64 / config.runs as f64,
                runs: config.runs,
                degenerate_runs: degenerate,
                mean_width: width,
                truth: truth.get(target.kind, target.relative),
            });
        }
    }
    Ok(CoverageTable {
        config: config.clone(),
        truth,
        rows,
    })
}
