//! GeoJSON point features.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::data::SpatioTemporalDataset;
use crate::error::{Error, Result};
use crate::graph::Location;
use crate::io::config::Columns;
use crate::io::table::{assemble_dataset, Ingested, RawRow};
use crate::io::{create, open};

fn number(props: &Map<String, Value>, key: &str, row: usize) -> Result<Option<f64>> {
    match props.get(key) {
        None => Err(Error::Data {
            row,
            column: key.to_string(),
            message: "property missing".into(),
        }),
        Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(Value::String(s)) => s.trim().parse::<f64>().map(Some).map_err(|_| Error::Data {
            row,
            column: key.to_string(),
            message: format!("'{s}' is not a number"),
        }),
        Some(other) => Err(Error::Data {
            row,
            column: key.to_string(),
            message: format!("expected a number, got {other}"),
        }),
    }
}

/// Parses a FeatureCollection; `row` in errors is the 0-based feature index.
pub fn parse_dataset_geojson(text: &str, cols: &Columns) -> Result<Ingested> {
    let root: Value = serde_json::from_str(text)?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("expected a GeoJSON FeatureCollection"))?;
    let mut rows = Vec::with_capacity(features.len());
    for (row, f) in features.iter().enumerate() {
        let data_err = |column: &str, message: String| Error::Data {
            row,
            column: column.to_string(),
            message,
        };
        let geom = f.get("geometry").ok_or_else(|| data_err("geometry", "feature has no geometry".into()))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or("");
        if kind != "Point" {
            return Err(data_err("geometry", format!("only Point geometries are supported, got '{kind}'")));
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| data_err("geometry", "point coordinates must be numbers".into()))?;
        if coords.len() != cols.coords.len() {
            return Err(data_err("geometry", format!("expected {} coordinates, got {}", cols.coords.len(), coords.len())));
        }
        let empty = Map::new();
        let props = f.get("properties").and_then(Value::as_object).unwrap_or(&empty);
        let time = match props.get(&cols.time) {
            Some(Value::Number(n)) => n.as_i64().or_else(|| n.as_f64().and_then(|v| crate::io::table::parse_time(&v.to_string()))),
            Some(Value::String(s)) => crate::io::table::parse_time(s),
            None => return Err(data_err(&cols.time, "property missing".into())),
            _ => None,
        }
        .ok_or_else(|| data_err(&cols.time, "time must be an integer".into()))?;
        let response = number(props, &cols.response, row)?;
        let covariates = cols
            .covariates
            .iter()
            .map(|c| number(props, c, row)?.ok_or_else(|| data_err(c, "missing value".into())))
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

pub fn read_dataset_geojson(path: &Path, cols: &Columns) -> Result<Ingested> {
    let mut text = String::new();
    std::io::Read::read_to_string(&mut open(path)?, &mut text).map_err(|e| Error::io(path, e))?;
    parse_dataset_geojson(&text, cols)
}

/// One point feature per observation, with time labels and named properties.
pub fn dataset_to_geojson(data: &SpatioTemporalDataset, cols: &Columns) -> Value {
    let features: Vec<Value> = data
        .observations
        .iter()
        .map(|o| {
            let mut props = Map::new();
            props.insert(cols.time.clone(), json!(data.time_label(o.time)));
            props.insert(cols.response.clone(), json!(o.response));
            for (name, v) in data.covariate_names.iter().zip(&o.covariates) {
                props.insert(name.clone(), json!(v));
            }
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": o.location.coords},
                "properties": props,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_dataset_geojson(path: &Path, data: &SpatioTemporalDataset, cols: &Columns) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut f, &dataset_to_geojson(data, cols))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::table::parse_dataset_csv;

    fn cols() -> Columns {
        Columns {
            coords: vec!["x".into(), "y".into()],
            time: "year".into(),
            response: "cnt".into(),
            covariates: vec!["elev".into()],
        }
    }

    #[test]
    fn single_point() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1.5,2.5]},"properties":{"year":2001,"cnt":4,"elev":0.3}}]}"#;
        let ing = parse_dataset_geojson(text, &cols()).unwrap();
        assert_eq!(ing.data.len(), 1);
        assert_eq!(ing.data.observations[0].location, Location::xy(1.5, 2.5));
        assert_eq!(ing.data.time_labels, vec![2001]);
    }

    #[test]
    fn missing_time_and_non_points_are_errors() {
        let no_time = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1,2]},"properties":{"cnt":4,"elev":0.3}}]}"#;
        assert!(matches!(parse_dataset_geojson(no_time, &cols()), Err(Error::Data { column, .. }) if column == "year"));
        let line = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"LineString","coordinates":[[1,2],[3,4]]},"properties":{"year":1,"cnt":4,"elev":0.3}}]}"#;
        assert!(matches!(parse_dataset_geojson(line, &cols()), Err(Error::Data { column, .. }) if column == "geometry"));
    }

    #[test]
    fn round_trip_with_csv() {
        let csv = "x,y,year,cnt,elev\n0.1,0.2,1994,3,0.25\n0.123456789012345,0.5,1996,0,-1e-7\n0.9,0.1,1996,7,3.5\n";
        let a = parse_dataset_csv(csv.as_bytes(), &cols()).unwrap().data;
        let text = serde_json::to_string(&dataset_to_geojson(&a, &cols())).unwrap();
        let b = parse_dataset_geojson(&text, &cols()).unwrap().data;
        assert_eq!(a, b);
    }
}
