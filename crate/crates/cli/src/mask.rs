//! Polygon masks for prediction grids, read as `lon,lat` vertex lists.

use std::path::Path;

use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct Vertex {
    lon: f64,
    lat: f64,
}

impl Polygon {
    pub fn new(mut vertices: Vec<(f64, f64)>) -> CliResult<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(CliError::schema("mask polygon needs at least three vertices"));
        }
        if vertices.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(CliError::schema("mask polygon has non-finite vertices"));
        }
        Ok(Self { vertices })
    }

    pub fn read_path(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let vertices = rdr
            .deserialize::<Vertex>()
            .map(|v| {
                v.map(|v| (v.lon, v.lat))
                    .map_err(|e| CliError::schema(format!("{}: {e}", path.display())))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Self::new(vertices)
    }

    /// Even-odd ray casting.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (xi, yi) = v[i];
            let (xj, yj) = v[j];
            if (yi > lat) != (yj > lat) && lon < (xj - xi) * (lat - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}
