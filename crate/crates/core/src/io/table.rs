//! CSV ingestion and the tabular output files.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Observation, SpatioTemporalDataset};
use crate::error::{Error, Result};
use crate::graph::Location;
use crate::io::config::Columns;
use crate::io::{create, fmt, open};
use crate::laplace::FitResult;
use crate::model::Model;
use crate::predict::PredictionRecord;
use crate::process::Effect;

/// One parsed input row with its user time label.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub location: Location,
    pub time: i64,
    /// `None` when the response is missing.
    pub response: Option<f64>,
    pub covariates: Vec<f64>,
}

/// A dataset plus the number of rows dropped for a missing response.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub data: SpatioTemporalDataset,
    pub dropped: usize,
}

pub(crate) fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null")
}

pub(crate) fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    s.parse::<i64>().ok().or_else(|| {
        let v = s.parse::<f64>().ok()?;
        (v.is_finite() && v.fract() == 0.0 && v.abs() < 9e15).then_some(v as i64)
    })
}

/// Rows sorted into a dataset with consecutive time labels; gaps become unobserved times.
pub fn assemble_dataset(rows: Vec<RawRow>, covariate_names: Vec<String>) -> Result<Ingested> {
    let total = rows.len();
    let kept: Vec<RawRow> = rows.into_iter().filter(|r| r.response.is_some()).collect();
    let dropped = total - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with a missing response");
    }
    if kept.is_empty() {
        return Err(Error::invalid("no rows with an observed response"));
    }
    let (lo, hi) = kept
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), r| (lo.min(r.time), hi.max(r.time)));
    let observations = kept
        .into_iter()
        .map(|r| Observation {
            location: r.location,
            time: (r.time - lo) as usize,
            response: r.response.expect("missing responses were dropped"),
            covariates: r.covariates,
        })
        .collect();
    Ok(Ingested {
        data: SpatioTemporalDataset {
            observations,
            covariate_names,
            time_labels: (lo..=hi).collect(),
        },
        dropped,
    })
}

struct Header {
    names: Vec<String>,
}

impl Header {
    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data {
                row: 1,
                column: name.to_string(),
                message: format!("column not found; header has {:?}", self.names),
            })
    }
}

fn cell_f64(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let s = rec.get(idx).unwrap_or("").trim();
    if is_missing(s) {
        return Err(Error::Data {
            row: line,
            column: name.to_string(),
            message: "missing value".into(),
        });
    }
    s.parse::<f64>().map_err(|_| Error::Data {
        row: line,
        column: name.to_string(),
        message: format!("'{s}' is not a number"),
    })
}

/// Parses observations; `row` in errors is the 1-based line number in the file.
pub fn parse_dataset_csv<R: Read>(reader: R, cols: &Columns) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = Header {
        names: rdr.headers()?.iter().map(str::to_string).collect(),
    };
    let coord_idx = cols.coords.iter().map(|c| header.index(c)).collect::<Result<Vec<_>>>()?;
    let time_idx = header.index(&cols.time)?;
    let resp_idx = header.index(&cols.response)?;
    let cov_idx = cols.covariates.iter().map(|c| header.index(c)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let coords = coord_idx
            .iter()
            .zip(&cols.coords)
            .map(|(&i, n)| cell_f64(&rec, i, n, line))
            .collect::<Result<Vec<_>>>()?;
        let ts = rec.get(time_idx).unwrap_or("");
        let time = parse_time(ts).ok_or_else(|| Error::Data {
            row: line,
            column: cols.time.clone(),
            message: format!("'{ts}' is not an integer time"),
        })?;
        let rs = rec.get(resp_idx).unwrap_or("");
        let response = if is_missing(rs) {
            None
        } else {
            Some(cell_f64(&rec, resp_idx, &cols.response, line)?)
        };
        let covariates = cov_idx
            .iter()
            .zip(&cols.covariates)
            .map(|(&i, n)| cell_f64(&rec, i, n, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(RawRow {
            location: Location::new(coords),
            time,
            response,
            covariates,
        });
    }
    assemble_dataset(rows, cols.covariates.clone())
}

pub fn read_dataset_csv(path: &Path, cols: &Columns) -> Result<Ingested> {
    parse_dataset_csv(open(path)?, cols)
}

/// Locations from the coordinate columns of a CSV file.
pub fn read_locations_csv(path: &Path, coords: &[String]) -> Result<Vec<Location>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = Header {
        names: rdr.headers()?.iter().map(str::to_string).collect(),
    };
    let idx = coords.iter().map(|c| header.index(c)).collect::<Result<Vec<_>>>()?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let c = idx
                .iter()
                .zip(coords)
                .map(|(&i, n)| cell_f64(&rec, i, n, line))
                .collect::<Result<Vec<_>>>()?;
            Ok(Location::new(c))
        })
        .collect()
}

/// Prediction points: coordinates, a time label, and covariates when the model has any.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRow {
    pub location: Location,
    pub time: i64,
    pub covariates: Vec<f64>,
}

pub fn read_points_csv(path: &Path, coords: &[String], time: &str, covariates: &[String]) -> Result<Vec<PointRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = Header {
        names: rdr.headers()?.iter().map(str::to_string).collect(),
    };
    let idx = coords.iter().map(|c| header.index(c)).collect::<Result<Vec<_>>>()?;
    let t_idx = header.index(time)?;
    let c_idx = covariates.iter().map(|c| header.index(c)).collect::<Result<Vec<_>>>()?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let loc = idx
                .iter()
                .zip(coords)
                .map(|(&i, n)| cell_f64(&rec, i, n, line))
                .collect::<Result<Vec<_>>>()?;
            let ts = rec.get(t_idx).unwrap_or("");
            let t = parse_time(ts).ok_or_else(|| Error::Data {
                row: line,
                column: time.to_string(),
                message: format!("'{ts}' is not an integer time"),
            })?;
            let cov = c_idx
                .iter()
                .zip(covariates)
                .map(|(&i, n)| cell_f64(&rec, i, n, line))
                .collect::<Result<Vec<_>>>()?;
            Ok(PointRow {
                location: Location::new(loc),
                time: t,
                covariates: cov,
            })
        })
        .collect()
}

/// `x, y` for planar data, `x1 .. xd` otherwise.
pub fn coord_names(dim: usize) -> Vec<String> {
    if dim == 2 {
        vec!["x".into(), "y".into()]
    } else {
        (1..=dim).map(|i| format!("x{i}")).collect()
    }
}

fn write_rows<W: Write>(w: W, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(&r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Observations with the configured column names and user time labels.
pub fn write_dataset_csv<W: Write>(w: W, data: &SpatioTemporalDataset, cols: &Columns) -> Result<()> {
    let mut header = cols.coords.clone();
    header.push(cols.time.clone());
    header.push(cols.response.clone());
    header.extend(data.covariate_names.iter().cloned());
    let rows = data.observations.iter().map(|o| {
        let mut row: Vec<String> = o.location.coords.iter().map(|&c| fmt(c)).collect();
        row.push(data.time_label(o.time).to_string());
        row.push(fmt(o.response));
        row.extend(o.covariates.iter().map(|&c| fmt(c)));
        row
    });
    write_rows(w, &header, rows)
}

/// Columns `x, y, t, w, w_se, linear, linear_se, response, response_se`.
pub fn write_predictions<W: Write>(w: W, records: &[PredictionRecord], dim: usize, label: impl Fn(usize) -> i64) -> Result<()> {
    let mut header = coord_names(dim);
    header.extend(["t", "w", "w_se", "linear", "linear_se", "response", "response_se"].map(String::from));
    let rows = records.iter().map(|r| {
        let mut row: Vec<String> = r.point.location.coords.iter().map(|&c| fmt(c)).collect();
        row.push(label(r.point.time).to_string());
        row.extend([r.w, r.w_se, r.linear, r.linear_se, r.response, r.response_se].map(fmt));
        row
    });
    write_rows(w, &header, rows)
}

/// Columns `name, par, se, fixed`.
pub fn write_parameters<W: Write>(w: W, fit: &FitResult) -> Result<()> {
    let header = ["name", "par", "se", "fixed"].map(String::from);
    let rows = fit
        .params
        .params
        .iter()
        .zip(&fit.se)
        .map(|(p, &se)| vec![p.name.clone(), fmt(p.value), fmt(se), p.fixed.to_string()]);
    write_rows(w, &header, rows)
}

/// One row per random effect: `kind, x, y, t, mode, se`; temporal effects have empty coordinates.
pub fn write_random_effects<W: Write>(w: W, model: &Model, fit: &FitResult, label: impl Fn(usize) -> i64) -> Result<()> {
    let dim = model.refs.dim();
    let mut header = vec!["kind".to_string()];
    header.extend(coord_names(dim));
    header.extend(["t", "mode", "se"].map(String::from));
    let layout = model.layout();
    let rows = (0..model.n_effects()).map(|idx| {
        let (kind, t, loc) = match layout.effect(idx) {
            Effect::Eps(t) => ("eps", t, None),
            Effect::Node { t, i } => ("w", t, Some(model.refs.get(i))),
            Effect::Site { t, k } => ("site", t, Some(&model.process.transient[t][k].location)),
        };
        let mut row = vec![kind.to_string()];
        match loc {
            Some(l) => row.extend(l.coords.iter().map(|&c| fmt(c))),
            None => row.extend(std::iter::repeat_n(String::new(), dim)),
        }
        row.push(label(t).to_string());
        row.push(fmt(fit.modes[idx]));
        row.push(fmt(fit.mode_se[idx]));
        row
    });
    write_rows(w, &header, rows)
}

fn observation_columns(model: &Model, k: usize, label: &impl Fn(usize) -> i64) -> Vec<String> {
    let layout = model.layout();
    let (t, loc) = match layout.effect(model.obs_slot[k]) {
        Effect::Node { t, i } => (t, model.refs.get(i)),
        Effect::Site { t, k } => (t, &model.process.transient[t][k].location),
        Effect::Eps(_) => unreachable!("observations never map to temporal effects"),
    };
    let mut row: Vec<String> = loc.coords.iter().map(|&c| fmt(c)).collect();
    row.push(label(t).to_string());
    row
}

/// Long format: `sim, x, y, t, response` per replicate and observation.
pub fn write_simulations<W: Write>(w: W, model: &Model, sims: &[Vec<f64>], label: impl Fn(usize) -> i64) -> Result<()> {
    let mut header = vec!["sim".to_string()];
    header.extend(coord_names(model.refs.dim()));
    header.extend(["t", "response"].map(String::from));
    let rows = sims.iter().enumerate().flat_map(|(s, y)| {
        let label = &label;
        y.iter().enumerate().map(move |(k, &v)| {
            let mut row = vec![(s + 1).to_string()];
            row.extend(observation_columns(model, k, label));
            row.push(fmt(v));
            row
        })
    });
    write_rows(w, &header, rows)
}

/// `x, y, t, response, pit` per observation.
pub fn write_pit<W: Write>(w: W, model: &Model, pit: &[f64], label: impl Fn(usize) -> i64) -> Result<()> {
    let mut header = coord_names(model.refs.dim());
    header.extend(["t", "response", "pit"].map(String::from));
    let rows = pit.iter().enumerate().map(|(k, &p)| {
        let mut row = observation_columns(model, k, &label);
        row.push(fmt(model.y[k]));
        row.push(fmt(p));
        row
    });
    write_rows(w, &header, rows)
}

/// Writes a CSV file through one of the writers above.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut file = std::io::BufWriter::new(create(path)?);
    f(&mut file)?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Rows of a CSV written by this module, as strings keyed by header.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> Columns {
        Columns {
            coords: vec!["x".into(), "y".into()],
            time: "year".into(),
            response: "cnt".into(),
            covariates: vec![],
        }
    }

    #[test]
    fn toy_file() {
        let text = "x,y,year,cnt\n0.1,0.2,1,3\n0.5,0.5,2,0\n0.9,0.1,3,7\n";
        let ing = parse_dataset_csv(text.as_bytes(), &cols()).unwrap();
        assert_eq!(ing.data.len(), 3);
        assert_eq!(ing.data.n_times(), 3);
        assert_eq!(ing.dropped, 0);
    }

    #[test]
    fn year_gap_becomes_unobserved_time() {
        let text = "x,y,year,cnt\n0.1,0.2,1994,3\n0.5,0.5,1996,0\n";
        let ing = parse_dataset_csv(text.as_bytes(), &cols()).unwrap();
        assert_eq!(ing.data.time_labels, vec![1994, 1995, 1996]);
        assert_eq!(ing.data.observations[1].time, 2);
        assert_eq!(ing.data.time_index(1995), Some(1));
    }

    #[test]
    fn missing_responses_are_dropped() {
        let text = "x,y,year,cnt\n0.1,0.2,1,NA\n0.5,0.5,2,4\n0.3,0.3,2,\n";
        let ing = parse_dataset_csv(text.as_bytes(), &cols()).unwrap();
        assert_eq!(ing.data.len(), 1);
        assert_eq!(ing.dropped, 2);
        assert_eq!(ing.data.time_labels, vec![2]);
    }

    #[test]
    fn bad_cells_report_row_and_column() {
        let text = "x,y,year,cnt\n0.1,0.2,1,3\n0.5,abc,2,0\n";
        match parse_dataset_csv(text.as_bytes(), &cols()) {
            Err(Error::Data { row, column, .. }) => assert_eq!((row, column.as_str()), (3, "y")),
            other => panic!("{other:?}"),
        }
        match parse_dataset_csv("x,y,year,cnt\n0.1,0.2,1.5,3\n".as_bytes(), &cols()) {
            Err(Error::Data { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "year")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dataset_csv("x,year,cnt\n1,1,1\n".as_bytes(), &cols()), Err(Error::Data { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let mut c = cols();
        c.covariates = vec!["elev".into()];
        let text = "x,y,year,cnt,elev\n0.1,0.2,1994,3,0.3333333333333333\n1e-300,0.5,1996,0,2\n";
        let a = parse_dataset_csv(text.as_bytes(), &c).unwrap().data;
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &a, &c).unwrap();
        assert_eq!(parse_dataset_csv(buf.as_slice(), &c).unwrap().data, a);
    }

    #[test]
    fn coordinate_headers() {
        assert_eq!(coord_names(2), vec!["x", "y"]);
        assert_eq!(coord_names(3), vec!["x1", "x2", "x3"]);
    }
}
