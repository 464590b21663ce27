//! File formats.
//!
//! Sample sets are stored as long-form CSV with columns
//! `replicate,space_index,time_index,value` next to a `<stem>.grid.json`
//! sidecar holding the grid, the preprocessing flags and free-form
//! provenance. Operators are stored as `s,t,s2,t2,value` rows preceded by a
//! `# {grid json}` line. Lines starting with `#` are otherwise ignored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::operator::SpaceTimeOperator;
use crate::preprocess::RawSeries;
use crate::sample::SampleSet;
use crate::synthetic::{CoverageTable, CurvePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub grid: GridSpec,
    #[serde(default)]
    pub centered: bool,
    #[serde(default)]
    pub detrended: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// `data.csv` → `data.grid.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.grid.json"))
}

#[derive(Debug, Serialize, Deserialize)]
struct LongRecord {
    replicate: i64,
    space_index: usize,
    time_index: usize,
    value: f64,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

fn parse_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

/// `replicate → (space, time) → value`.
type LongTable = BTreeMap<i64, BTreeMap<(usize, usize), f64>>;

/// Deserializes every row, pairing it with its 1-based line number.
fn records<R: Read, T: serde::de::DeserializeOwned>(rdr: &mut csv::Reader<R>) -> Result<Vec<(u64, Result<T>)>> {
    let headers = rdr.headers().map_err(parse_error)?.clone();
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                let parsed = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
                    line,
                    message: match e.kind() {
                        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                        _ => e.to_string(),
                    },
                });
                let failed = parsed.is_err();
                out.push((line, parsed));
                if failed {
                    break;
                }
            }
            Err(e) => return Err(parse_error(e)),
        }
    }
    Ok(out)
}

/// Reads long-form rows into a map `replicate → (space, time) → value`,
/// checking every index against the given bounds.
fn read_long<R: Read>(
    r: R,
    bounds: Option<(usize, usize)>,
) -> Result<(LongTable, usize, usize)> {
    let mut rdr = reader(r);
    let mut map = LongTable::new();
    let (mut max_s, mut max_t) = (0, 0);
    for (pos_line, rec) in records::<_, LongRecord>(&mut rdr)? {
        let rec = rec?;
        if !rec.value.is_finite() {
            return Err(Error::Parse {
                line: pos_line,
                message: format!("non-finite value {}", rec.value),
            });
        }
        if let Some((s, t)) = bounds {
            if rec.space_index >= s || rec.time_index >= t {
                return Err(Error::Parse {
                    line: pos_line,
                    message: format!(
                        "index (space {}, time {}) outside the {s}×{t} grid",
                        rec.space_index, rec.time_index
                    ),
                });
            }
        }
        max_s = max_s.max(rec.space_index + 1);
        max_t = max_t.max(rec.time_index + 1);
        if map
            .entry(rec.replicate)
            .or_default()
            .insert((rec.space_index, rec.time_index), rec.value)
            .is_some()
        {
            return Err(Error::Parse {
                line: pos_line,
                message: format!(
                    "duplicate entry for replicate {} at (space {}, time {})",
                    rec.replicate, rec.space_index, rec.time_index
                ),
            });
        }
    }
    Ok((map, max_s, max_t))
}

fn flatten(map: LongTable, s: usize, t: usize) -> Result<(Vec<i64>, Vec<f64>)> {
    let mut ids = Vec::with_capacity(map.len());
    let mut values = Vec::with_capacity(map.len() * s * t);
    for (id, cells) in map {
        if cells.len() != s * t {
            return Err(Error::Parse {
                line: 0,
                message: format!("replicate {id} has {} of {} cells", cells.len(), s * t),
            });
        }
        ids.push(id);
        // BTreeMap iterates (space, time) in the flat order.
        values.extend(cells.into_values());
    }
    Ok((ids, values))
}

pub fn read_sidecar(csv_path: &Path) -> Result<Sidecar> {
    let path = sidecar_path(csv_path);
    let file = File::open(&path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("cannot open grid sidecar {}: {e}", path.display()))
    })?;
    let side: Sidecar = serde_json::from_reader(BufReader::new(file))?;
    side.grid.validate()?;
    Ok(side)
}

/// Reads a sample set and its sidecar.
pub fn read_samples(csv_path: &Path) -> Result<(SampleSet, Sidecar)> {
    let side = read_sidecar(csv_path)?;
    let file = File::open(csv_path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("cannot open {}: {e}", csv_path.display())))?;
    let samples = read_samples_from(BufReader::new(file), &side)?;
    Ok((samples, side))
}

pub fn read_samples_from<R: Read>(r: R, side: &Sidecar) -> Result<SampleSet> {
    let (s, t) = (side.grid.n_space(), side.grid.n_time());
    let (map, _, _) = read_long(r, Some((s, t)))?;
    let (ids, values) = flatten(map, s, t)?;
    SampleSet::with_ids(side.grid.clone(), values, ids)?.with_flags(side.centered, side.detrended)
}

pub fn write_samples_to<W: Write>(w: W, samples: &SampleSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let g = samples.grid();
    for (i, x) in samples.replicates().enumerate() {
        let replicate = samples.replicate_ids()[i];
        for s in 0..g.n_space() {
            for t in 0..g.n_time() {
                wtr.serialize(LongRecord {
                    replicate,
                    space_index: s,
                    time_index: t,
                    value: x[g.flat(s, t)],
                })?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the CSV and its sidecar.
pub fn write_samples(csv_path: &Path, samples: &SampleSet, provenance: Option<serde_json::Value>) -> Result<()> {
    write_samples_to(File::create(csv_path)?, samples)?;
    let side = Sidecar {
        grid: samples.grid().clone(),
        centered: samples.is_centered(),
        detrended: samples.is_detrended(),
        provenance,
    };
    write_json(&sidecar_path(csv_path), &side)
}

/// Reads raw daily series in the long form, `time_index` being the day.
/// Dimensions are inferred from the largest indices.
pub fn read_raw_series<R: Read>(r: R) -> Result<RawSeries> {
    let (map, s, d) = read_long(r, None)?;
    if map.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let (ids, values) = flatten(map, s, d)?;
    RawSeries::new(ids, s, d, values)
}

#[derive(Debug, Serialize, Deserialize)]
struct OperatorRecord {
    s: usize,
    t: usize,
    s2: usize,
    t2: usize,
    value: f64,
}

pub fn write_operator_to<W: Write>(mut w: W, c: &SpaceTimeOperator) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(c.grid())?)?;
    let mut wtr = csv::Writer::from_writer(w);
    let g = c.grid();
    let (ns, nt) = (g.n_space(), g.n_time());
    for s in 0..ns {
        for t in 0..nt {
            for s2 in 0..ns {
                for t2 in 0..nt {
                    wtr.serialize(OperatorRecord {
                        s,
                        t,
                        s2,
                        t2,
                        value: c.get(s, t, s2, t2),
                    })?;
                }
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_operator(path: &Path, c: &SpaceTimeOperator) -> Result<()> {
    write_operator_to(File::create(path)?, c)
}

/// Reads an operator file. Missing entries are an error; the kernel need
/// not be symmetric.
pub fn read_operator_from<R: Read>(r: R) -> Result<SpaceTimeOperator> {
    let mut buf = BufReader::new(r);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let header = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "operator file must start with a '# {grid json}' line".into(),
        })?;
    let grid: GridSpec = serde_json::from_str(header.trim()).map_err(|e| Error::Parse {
        line: 1,
        message: format!("invalid grid header: {e}"),
    })?;
    grid.validate()?;
    let (ns, nt) = (grid.n_space(), grid.n_time());
    let d = grid.dim();
    let mut m = nalgebra::DMatrix::from_element(d, d, f64::NAN);
    let mut rdr = reader(buf);
    for (line, rec) in records::<_, OperatorRecord>(&mut rdr)? {
        let line = line + 1;
        let rec = rec.map_err(bump_line)?;
        if rec.s >= ns || rec.s2 >= ns || rec.t >= nt || rec.t2 >= nt {
            return Err(Error::Parse {
                line,
                message: format!("index outside the {ns}×{nt} grid"),
            });
        }
        if !rec.value.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite value {}", rec.value),
            });
        }
        m[(grid.flat(rec.s, rec.t), grid.flat(rec.s2, rec.t2))] = rec.value;
    }
    if let Some(k) = m.iter().position(|v| v.is_nan()) {
        return Err(Error::Parse {
            line: 0,
            message: format!("operator entry {} × {} missing", k % d, k / d),
        });
    }
    SpaceTimeOperator::from_matrix(&grid, m)
}

// The grid header is consumed before the CSV reader starts counting.
fn bump_line(e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse { line: line + 1, message },
        other => other,
    }
}

pub fn read_operator(path: &Path) -> Result<SpaceTimeOperator> {
    let file =
        File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display())))?;
    read_operator_from(file)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file =
        File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[derive(Serialize)]
struct CoverageRecord<'a> {
    kind: &'a str,
    relative: bool,
    alpha: f64,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "T")]
    t: usize,
    n: usize,
    coverage: f64,
    runs: usize,
    degenerate_runs: usize,
    mean_width: f64,
    truth: f64,
}

/// Coverage rows as CSV, preceded by `#` lines holding the study config.
pub fn write_coverage_csv<W: Write>(mut w: W, table: &CoverageTable) -> Result<()> {
    writeln!(w, "# config: {}", serde_json::to_string(&table.config)?)?;
    let mut wtr = csv::Writer::from_writer(w);
    for r in &table.rows {
        wtr.serialize(CoverageRecord {
            kind: r.kind.name(),
            relative: r.relative,
            alpha: r.alpha,
            s: r.s,
            t: r.t,
            n: r.n,
            coverage: r.coverage,
            runs: r.runs,
            degenerate_runs: r.degenerate_runs,
            mean_width: r.mean_width,
            truth: r.truth,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// `c,m_tr,m_prod,m_opt,m_tr_rel,m_prod_rel,m_opt_rel` per curve point.
pub fn write_curve_csv<W: Write>(mut w: W, points: &[CurvePoint], header: Option<&serde_json::Value>) -> Result<()> {
    if let Some(h) = header {
        writeln!(w, "# config: {}", serde_json::to_string(h)?)?;
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["c", "m_tr", "m_prod", "m_opt", "m_tr_rel", "m_prod_rel", "m_opt_rel"])?;
    for p in points {
        let m = &p.measures;
        wtr.write_record(
            [p.c, m.m_tr, m.m_prod, m.m_opt, m.m_tr_rel, m.m_prod_rel, m.m_opt_rel].map(|v| v.to_string()),
        )?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::example_matrix;

    #[test]
    fn sample_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let g = GridSpec::new(2, 3).unwrap();
        let s = SampleSet::with_ids(g, (0..12).map(|v| v as f64 * 0.1).collect(), vec![1990, 1995]).unwrap();
        write_samples(&path, &s, Some(serde_json::json!({"seed": 1}))).unwrap();
        assert!(dir.path().join("data.grid.json").exists());
        let (back, side) = read_samples(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(side.provenance.unwrap()["seed"], 1);
    }

    #[test]
    fn missing_sidecar_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lonely.csv");
        std::fs::write(&path, "replicate,space_index,time_index,value\n").unwrap();
        let err = read_samples(&path).unwrap_err().to_string();
        assert!(err.contains("lonely.grid.json"), "{err}");
    }

    #[test]
    fn parse_errors_report_lines() {
        let side = Sidecar {
            grid: GridSpec::new(1, 2).unwrap(),
            centered: false,
            detrended: false,
            provenance: None,
        };
        let text = "replicate,space_index,time_index,value\n# note\n0,0,0,1.0\n0,0,1,abc\n";
        match read_samples_from(text.as_bytes(), &side) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let text = "replicate,space_index,time_index,value\n0,0,0,1.0\n0,0,5,2.0\n";
        match read_samples_from(text.as_bytes(), &side) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "replicate,space_index,time_index,value\n0,0,0,1.0\n";
        assert!(matches!(read_samples_from(text.as_bytes(), &side), Err(Error::Parse { .. })));
    }

    #[test]
    fn operator_round_trip() {
        let c = example_matrix(0.5).unwrap();
        let mut buf = Vec::new();
        write_operator_to(&mut buf, &c).unwrap();
        let back = read_operator_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let bad = "# {\"S\":1,\"T\":1}\ns,t,s2,t2,value\n0,0,0,x\n";
        assert!(read_operator_from(bad.as_bytes()).is_err());
    }

    #[test]
    fn raw_series_dimensions_inferred() {
        let text = "replicate,space_index,time_index,value\n2001,0,0,1\n2001,0,1,2\n2003,0,0,3\n2003,0,1,4\n";
        let raw = read_raw_series(text.as_bytes()).unwrap();
        assert_eq!((raw.n_replicates(), raw.n_locations(), raw.n_days()), (2, 1, 2));
        assert_eq!(raw.replicate_ids(), &[2001, 2003]);
    }
}
