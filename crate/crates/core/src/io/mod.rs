//! Configuration, input formats, the fit artifact and output files.

pub mod artifact;
pub mod config;
pub mod geojson;
pub mod grid;
pub mod table;

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

/// Shortest text that parses back to the same `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Reads observations from CSV, or GeoJSON when the extension is `.geojson` or `.json`.
pub fn read_dataset(path: &Path, cols: &config::Columns) -> Result<table::Ingested> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("geojson" | "json") => geojson::read_dataset_geojson(path, cols),
        _ => table::read_dataset_csv(path, cols),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn formatting_round_trips(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(fmt(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
