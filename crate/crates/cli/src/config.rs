//! Resolved run configurations. Each starts from defaults, is overlaid with
//! the `--config` file, then with explicit flags.

use std::path::{Path, PathBuf};

use kronsep::synthetic::CoordinateMode;
use kronsep::{AnalysisConfig, Error, ProductOrientation, Result, SyntheticModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => kronsep::io::read_json(p),
    }
}

pub fn announce<T: Serialize>(what: &str, config: &T) -> Result<()> {
    eprintln!("{what} config: {}", serde_json::to_string(config)?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PivotSettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub pivot_seed: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for PivotSettings {
    fn default() -> Self {
        PivotSettings {
            n_paths: kronsep::pivot::DEFAULT_N_PATHS,
            n_steps: kronsep::pivot::DEFAULT_N_STEPS,
            pivot_seed: 7,
            cache_dir: None,
        }
    }
}

impl PivotSettings {
    pub fn apply(&mut self, flags: &crate::PivotFlags) {
        if let Some(v) = flags.paths {
            self.n_paths = v;
        }
        if let Some(v) = flags.steps {
            self.n_steps = v;
        }
        if let Some(v) = flags.seed {
            self.pivot_seed = v;
        }
        if let Some(v) = &flags.cache_dir {
            self.cache_dir = Some(v.clone());
        }
    }

    /// Loads or simulates a table covering the quantiles needed at `alphas`.
    pub fn table(&self, k: usize, alphas: &[f64]) -> Result<kronsep::PivotTable> {
        let probs: Vec<f64> = alphas.iter().flat_map(|a| [1.0 - a / 2.0, 1.0 - a]).collect();
        match &self.cache_dir {
            Some(dir) => kronsep::pivot::cached_quantile_table(dir, k, self.n_paths, self.n_steps, &probs, self.pivot_seed),
            None => kronsep::quantile_table(k, self.n_paths, self.n_steps, &probs, self.pivot_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MeasureConfig {
    pub data: Option<PathBuf>,
    pub operator: Option<PathBuf>,
    #[serde(flatten)]
    pub analysis: AnalysisConfig,
    #[serde(flatten)]
    pub pivot: PivotSettings,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PivotConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub probs: Vec<f64>,
    pub out: Option<PathBuf>,
}

impl Default for PivotConfig {
    fn default() -> Self {
        PivotConfig {
            k: kronsep::selfnorm::DEFAULT_K,
            n_paths: kronsep::pivot::DEFAULT_N_PATHS,
            n_steps: kronsep::pivot::DEFAULT_N_STEPS,
            seed: 7,
            probs: kronsep::pivot::DEFAULT_PROBS.to_vec(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub c: f64,
    pub a: f64,
    pub b: f64,
    pub coordinate_mode: CoordinateMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            s: 5,
            t: 50,
            c: 0.6,
            a: 10.0,
            b: 5.0,
            coordinate_mode: CoordinateMode::GridCoords,
        }
    }
}

impl ModelConfig {
    pub fn apply(&mut self, f: &crate::ModelFlags) -> Result<()> {
        if let Some(v) = f.s {
            self.s = v;
        }
        if let Some(v) = f.t {
            self.t = v;
        }
        if let Some(v) = f.c {
            self.c = v;
        }
        if let Some(v) = f.a {
            self.a = v;
        }
        if let Some(v) = f.b {
            self.b = v;
        }
        if let Some(v) = &f.coords {
            self.coordinate_mode = match v.as_str() {
                "grid_coords" | "grid" => CoordinateMode::GridCoords,
                "index_coords" | "index" => CoordinateMode::IndexCoords,
                other => return Err(Error::Config(format!("unknown coordinate mode '{other}'"))),
            };
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SyntheticModel> {
        let m = SyntheticModel {
            grid: kronsep::GridSpec::new(self.s, self.t)?,
            a: self.a,
            b: self.b,
            c: self.c,
            coordinate_mode: self.coordinate_mode,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub n: usize,
    pub seed: u64,
    pub curve: Option<Vec<f64>>,
    pub orientation: ProductOrientation,
    pub out: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            model: ModelConfig::default(),
            n: 200,
            seed: 1,
            curve: None,
            orientation: ProductOrientation::Delta1Identity,
            out: PathBuf::from("simulated.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub n: usize,
    pub runs: usize,
    pub alphas: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub orientation: ProductOrientation,
    #[serde(flatten)]
    pub pivot: PivotSettings,
    pub out: Option<PathBuf>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            model: ModelConfig::default(),
            n: 200,
            runs: 500,
            alphas: vec![0.05, 0.10],
            k: kronsep::selfnorm::DEFAULT_K,
            seed: 2024,
            orientation: ProductOrientation::Delta1Identity,
            pivot: PivotSettings::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n_coeff: usize,
    pub t_out: usize,
    pub detrend: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            input: None,
            out: None,
            n_coeff: 41,
            t_out: 50,
            detrend: true,
        }
    }
}
