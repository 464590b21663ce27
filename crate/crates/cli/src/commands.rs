use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use kronsep::io::{read_operator, read_raw_series, read_samples, write_coverage_csv, write_curve_csv, write_samples};
use kronsep::preprocess::{fourier_smooth, linear_detrend};
use kronsep::synthetic::{coverage_study, measure_curve, CoverageStudyConfig, Generator};
use kronsep::{analyze, report_for_operator, Error, PowerIteration, Result};
use serde::Serialize;

use crate::config::{self, CoverageConfig, MeasureConfig, PivotConfig, PreprocessConfig, SimulateConfig};
use crate::{CoverageArgs, MeasureArgs, PivotArgs, PreprocessArgs, SimulateArgs};

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct WithConfig<'a, C, T> {
    config: &'a C,
    #[serde(flatten)]
    body: &'a T,
}

fn emit_json<C: Serialize, T: Serialize>(path: Option<&Path>, config: &C, body: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, &WithConfig { config, body })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn measure(args: MeasureArgs) -> Result<()> {
    let mut cfg: MeasureConfig = config::load(args.config.as_deref())?;
    if let Some(p) = args.data {
        cfg.data = Some(p);
        cfg.operator = None;
    }
    if let Some(p) = args.operator {
        cfg.operator = Some(p);
        cfg.data = None;
    }
    let a = &mut cfg.analysis;
    if args.relative_only {
        a.include_absolute = false;
        a.include_relative = true;
    }
    if args.absolute_only {
        a.include_absolute = true;
        a.include_relative = false;
    }
    if let Some(v) = args.delta {
        a.delta = Some(v);
    }
    if let Some(v) = args.delta_rel {
        a.delta_rel = Some(v);
    }
    if let Some(v) = args.k {
        a.k = v;
    }
    if let Some(v) = args.alpha {
        a.alpha = v;
    }
    if let Some(v) = args.orientation {
        a.orientation = v;
    }
    cfg.pivot.apply(&args.pivot);
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    config::announce("measure", &cfg)?;

    let report = match (&cfg.data, &cfg.operator) {
        (Some(data), _) => {
            let (samples, _) = read_samples(data)?;
            let table = cfg.pivot.table(cfg.analysis.k, &[cfg.analysis.alpha])?;
            analyze(&samples, &cfg.analysis, &table)?
        }
        (None, Some(op)) => report_for_operator(&read_operator(op)?, &cfg.analysis)?,
        (None, None) => return Err(Error::Config("one of --data or --operator is required".into())),
    };
    if let Some(w) = &report.diagnostics.gap_warning {
        log::warn!("{w}");
    }
    emit_json(cfg.out.as_deref(), &cfg, &report)
}

pub fn pivot(args: PivotArgs) -> Result<()> {
    let mut cfg: PivotConfig = config::load(args.config.as_deref())?;
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.paths {
        cfg.n_paths = v;
    }
    if let Some(v) = args.steps {
        cfg.n_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.probs {
        cfg.probs = v;
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    config::announce("pivot", &cfg)?;
    let table = kronsep::quantile_table(cfg.k, cfg.n_paths, cfg.n_steps, &cfg.probs, cfg.seed)?;
    emit_json(cfg.out.as_deref(), &cfg, &table)
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = config::load(args.config.as_deref())?;
    cfg.model.apply(&args.model)?;
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.curve {
        cfg.curve = Some(v);
    }
    if let Some(v) = args.orientation {
        cfg.orientation = v;
    }
    cfg.out = args.out;
    config::announce("simulate", &cfg)?;
    let model = cfg.model.model()?;
    let provenance = serde_json::to_value(&cfg)?;
    match &cfg.curve {
        Some(cs) => {
            let points = measure_curve(&model, cs, cfg.orientation, PowerIteration::default())?;
            let mut w = output(Some(&cfg.out))?;
            write_curve_csv(&mut w, &points, Some(&provenance))?;
            w.flush()?;
        }
        None => {
            let generator = Generator::new(&model)?;
            let repair = generator.repair();
            if repair.clipped > 0 || repair.jitter > 0.0 {
                log::warn!("innovation covariance repaired: {repair:?}");
            }
            let samples = generator.sample(cfg.n, cfg.seed)?;
            write_samples(&cfg.out, &samples, Some(provenance))?;
        }
    }
    Ok(())
}

pub fn coverage(args: CoverageArgs) -> Result<()> {
    let mut cfg: CoverageConfig = config::load(args.config.as_deref())?;
    cfg.model.apply(&args.model)?;
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.runs {
        cfg.runs = v;
    }
    if let Some(v) = args.alphas {
        cfg.alphas = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.orientation {
        cfg.orientation = v;
    }
    cfg.pivot.apply(&args.pivot);
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    config::announce("coverage", &cfg)?;
    let table = cfg.pivot.table(cfg.k, &cfg.alphas)?;
    let mut study = CoverageStudyConfig::new(cfg.model.model()?, cfg.n);
    study.runs = cfg.runs;
    study.alphas = cfg.alphas.clone();
    study.k = cfg.k;
    study.seed = cfg.seed;
    study.orientation = cfg.orientation;
    let result = coverage_study(&study, &table)?;
    let mut w = output(cfg.out.as_deref())?;
    writeln!(w, "# run: {}", serde_json::to_string(&cfg)?)?;
    write_coverage_csv(&mut w, &result)?;
    w.flush()?;
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let mut cfg: PreprocessConfig = config::load(args.config.as_deref())?;
    if let Some(v) = args.input {
        cfg.input = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.n_coeff {
        cfg.n_coeff = v;
    }
    if let Some(v) = args.t_out {
        cfg.t_out = v;
    }
    if args.no_detrend {
        cfg.detrend = false;
    }
    config::announce("preprocess", &cfg)?;
    let input = cfg.input.as_deref().ok_or_else(|| Error::Config("--in is required".into()))?;
    let out = cfg.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
    let file = File::open(input)
        .map_err(|e| io::Error::new(e.kind(), format!("cannot open {}: {e}", input.display())))?;
    let raw = read_raw_series(io::BufReader::new(file))?;
    let smoothed = fourier_smooth(&raw, cfg.n_coeff, cfg.t_out)?;
    let prepared = if cfg.detrend { linear_detrend(&smoothed)? } else { smoothed.center()? };
    write_samples(out, &prepared, Some(serde_json::to_value(&cfg)?))
}
