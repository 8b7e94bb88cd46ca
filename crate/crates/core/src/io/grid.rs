//! ESRI ASCII grids: prediction masks in, one raster per layer and time out.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Location;
use crate::io::{create, fmt, open};

pub const NODATA: f64 = -9999.0;

/// Regular raster with an active-cell mask, stored top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrid {
    pub xll: f64,
    pub yll: f64,
    pub dx: f64,
    pub dy: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub active: Vec<bool>,
}

impl PredictionGrid {
    pub fn new(xll: f64, yll: f64, dx: f64, dy: f64, n_rows: usize, n_cols: usize, active: Vec<bool>) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::invalid("grid cells must have positive size"));
        }
        if n_rows == 0 || n_cols == 0 || active.len() != n_rows * n_cols {
            return Err(Error::invalid("grid mask does not match its dimensions"));
        }
        Ok(PredictionGrid { xll, yll, dx, dy, n_rows, n_cols, active })
    }

    /// Centroids of the active cells, row by row from the top.
    pub fn centroids(&self) -> Vec<Location> {
        (0..self.n_rows * self.n_cols)
            .filter(|&k| self.active[k])
            .map(|k| {
                let (r, c) = (k / self.n_cols, k % self.n_cols);
                Location::xy(
                    self.xll + (c as f64 + 0.5) * self.dx,
                    self.yll + ((self.n_rows - r) as f64 - 0.5) * self.dy,
                )
            })
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Raster text with one value per active cell, in [`centroids`](Self::centroids) order.
    pub fn to_ascii(&self, values: &[f64]) -> Result<String> {
        if values.len() != self.n_active() {
            return Err(Error::invalid(format!("{} values for {} active cells", values.len(), self.n_active())));
        }
        let mut out = String::new();
        out.push_str(&format!("ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\n", self.n_cols, self.n_rows, fmt(self.xll), fmt(self.yll)));
        if self.dx == self.dy {
            out.push_str(&format!("cellsize {}\n", fmt(self.dx)));
        } else {
            out.push_str(&format!("dx {}\ndy {}\n", fmt(self.dx), fmt(self.dy)));
        }
        out.push_str(&format!("NODATA_value {}\n", fmt(NODATA)));
        let mut it = values.iter();
        for r in 0..self.n_rows {
            let row: Vec<String> = (0..self.n_cols)
                .map(|c| {
                    if self.active[r * self.n_cols + c] {
                        let v = *it.next().expect("length checked");
                        if v.is_finite() { fmt(v) } else { fmt(NODATA) }
                    } else {
                        fmt(NODATA)
                    }
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        Ok(out)
    }
}

/// Parses a raster; cells equal to the NODATA value are inactive.
pub fn parse_ascii_grid(text: &str) -> Result<(PredictionGrid, Vec<f64>)> {
    let mut tokens = text.split_whitespace().peekable();
    let mut header = std::collections::HashMap::new();
    while let Some(tok) = tokens.peek() {
        if tok.parse::<f64>().is_ok() {
            break;
        }
        let key = tokens.next().expect("peeked").to_ascii_lowercase();
        let val = tokens
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::invalid(format!("grid header '{key}' has no numeric value")))?;
        header.insert(key, val);
    }
    let get = |k: &str| header.get(k).copied();
    let need = |k: &str| get(k).ok_or_else(|| Error::invalid(format!("grid header is missing '{k}'")));
    let count = |k: &str| -> Result<usize> {
        let v = need(k)?;
        if v.fract() != 0.0 || v < 1.0 {
            return Err(Error::invalid(format!("'{k}' must be a positive integer")));
        }
        Ok(v as usize)
    };
    let n_cols = count("ncols")?;
    let n_rows = count("nrows")?;
    let (dx, dy) = match (get("cellsize"), get("dx"), get("dy")) {
        (Some(s), _, _) => (s, s),
        (None, Some(dx), Some(dy)) => (dx, dy),
        _ => return Err(Error::invalid("grid header needs 'cellsize' or 'dx' and 'dy'")),
    };
    let xll = match (get("xllcorner"), get("xllcenter")) {
        (Some(x), _) => x,
        (None, Some(x)) => x - 0.5 * dx,
        _ => return Err(Error::invalid("grid header needs 'xllcorner' or 'xllcenter'")),
    };
    let yll = match (get("yllcorner"), get("yllcenter")) {
        (Some(y), _) => y,
        (None, Some(y)) => y - 0.5 * dy,
        _ => return Err(Error::invalid("grid header needs 'yllcorner' or 'yllcenter'")),
    };
    let nodata = get("nodata_value").unwrap_or(NODATA);
    let cells = tokens
        .map(|t| t.parse::<f64>().map_err(|_| Error::invalid(format!("grid cell '{t}' is not a number"))))
        .collect::<Result<Vec<f64>>>()?;
    if cells.len() != n_rows * n_cols {
        return Err(Error::invalid(format!("grid has {} cells, header says {}", cells.len(), n_rows * n_cols)));
    }
    let active: Vec<bool> = cells.iter().map(|&v| v != nodata).collect();
    let values = cells.into_iter().filter(|&v| v != nodata).collect();
    Ok((PredictionGrid::new(xll, yll, dx, dy, n_rows, n_cols, active)?, values))
}

pub fn read_ascii_grid(path: &Path) -> Result<(PredictionGrid, Vec<f64>)> {
    let mut text = String::new();
    std::io::Read::read_to_string(&mut open(path)?, &mut text).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text)
}

pub fn write_ascii_grid(path: &Path, grid: &PredictionGrid, values: &[f64]) -> Result<()> {
    let text = grid.to_ascii(values)?;
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MASK: &str = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 10\ncellsize 2\nNODATA_value -9999\n1 -9999 1\n1 1 -9999\n";

    #[test]
    fn mask_centroids() {
        let (g, v) = parse_ascii_grid(MASK).unwrap();
        assert_eq!(g.n_active(), 4);
        assert_eq!(v, vec![1.0; 4]);
        let c = g.centroids();
        assert_eq!(c[0], Location::xy(1.0, 13.0));
        assert_eq!(c[1], Location::xy(5.0, 13.0));
        assert_eq!(c[3], Location::xy(3.0, 11.0));
    }

    #[test]
    fn layer_round_trip() {
        let (g, _) = parse_ascii_grid(MASK).unwrap();
        let vals = [0.1, -2.5, 1e-9, 123.456];
        let (g2, back) = parse_ascii_grid(&g.to_ascii(&vals).unwrap()).unwrap();
        assert_eq!(g2, g);
        assert_eq!(back, vals);
    }

    #[test]
    fn malformed_headers() {
        assert!(parse_ascii_grid("ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\n1 1\n").is_err());
        assert!(parse_ascii_grid("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 1 1\n").is_err());
        assert!(parse_ascii_grid("ncols 2\nnrows 1\nxllcenter 0.5\nyllcenter 0.5\ncellsize 1\n1 1\n").unwrap().0.xll == 0.0);
    }
}
