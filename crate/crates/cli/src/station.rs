//! Station files: CSV with `station_id, lon, lat` followed by one column
//! per variable.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use cnr::geo::{Location, LocationSet, Metric};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct StationTable {
    pub ids: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    pub variables: Vec<String>,
    /// One row per station, one column per variable.
    pub values: DMatrix<f64>,
}

const KEY_COLUMNS: [&str; 3] = ["station_id", "lon", "lat"];

fn parse_number(cell: &str, id: &str, column: &str, source: &str) -> CliResult<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(CliError::schema(format!("{source}: station {id}: missing value in column {column}")));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| CliError::schema(format!("{source}: station {id}: column {column}: not a number: {cell:?}")))?;
    if !v.is_finite() {
        return Err(CliError::schema(format!("{source}: station {id}: column {column}: non-finite value")));
    }
    Ok(v)
}

impl StationTable {
    pub fn read<R: Read>(reader: R, source: &str) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::schema(format!("{source}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[..3] != KEY_COLUMNS {
            return Err(CliError::schema(format!(
                "{source}: header must start with station_id,lon,lat; found {}",
                header.join(",")
            )));
        }
        let variables = header[3..].to_vec();
        let mut seen_vars = HashSet::new();
        for v in &variables {
            if !seen_vars.insert(v) {
                return Err(CliError::schema(format!("{source}: duplicate column {v}")));
            }
        }
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut flat = Vec::new();
        let mut seen = HashSet::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::schema(format!("{source}: {e}")))?;
            if rec.len() != header.len() {
                return Err(CliError::schema(format!(
                    "{source}: row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    header.len()
                )));
            }
            let id = rec[0].to_string();
            if id.is_empty() {
                return Err(CliError::schema(format!("{source}: row {}: empty station_id", line + 2)));
            }
            if !seen.insert(id.clone()) {
                return Err(CliError::schema(format!("{source}: duplicate station_id {id}")));
            }
            let lon = parse_number(&rec[1], &id, "lon", source)?;
            let lat = parse_number(&rec[2], &id, "lat", source)?;
            for (j, v) in variables.iter().enumerate() {
                flat.push(parse_number(&rec[3 + j], &id, v, source)?);
            }
            ids.push(id);
            coords.push((lon, lat));
        }
        if ids.is_empty() {
            return Err(CliError::schema(format!("{source}: no stations")));
        }
        let values = DMatrix::from_row_slice(ids.len(), variables.len(), &flat);
        Ok(Self {
            ids,
            coords,
            variables,
            values,
        })
    }

    pub fn read_path(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::read(file, &path.display().to_string())
    }

    /// Writes numbers in shortest round-trip form, so reading back is lossless.
    pub fn write<W: Write>(&self, writer: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
        header.extend(self.variables.iter().map(String::as_str));
        let csv_err = |e: csv::Error| CliError::schema(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone(), self.coords[i].0.to_string(), self.coords[i].1.to_string()];
            row.extend((0..self.variables.len()).map(|j| self.values[(i, j)].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::schema(e.to_string()))?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> CliResult<()> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| CliError::schema(format!("no column named {name}; available: {}", self.variables.join(", "))))
    }

    /// The named columns as a stations × columns matrix.
    pub fn select(&self, names: &[String]) -> CliResult<DMatrix<f64>> {
        let idx = names.iter().map(|n| self.column(n)).collect::<CliResult<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.ids.len(), idx.len(), |i, j| self.values[(i, idx[j])]))
    }

    pub fn locations(&self, metric: Metric) -> CliResult<LocationSet<f64>> {
        let locs = self.coords.iter().map(|&(a, b)| Location::new(a, b)).collect();
        LocationSet::new(locs, metric).map_err(|e| match e {
            cnr::CnrError::DuplicateLocation(i) => {
                CliError::schema(format!("station {} repeats the coordinates of an earlier station", self.ids[i]))
            }
            other => other.into(),
        })
    }

    /// Appends columns; `extra` rows follow this table's station order.
    pub fn with_columns(mut self, names: &[String], extra: &DMatrix<f64>) -> CliResult<Self> {
        for n in names {
            if self.variables.contains(n) {
                return Err(CliError::schema(format!("column {n} already present")));
            }
        }
        let (rows, old) = (self.ids.len(), self.variables.len());
        let mut values = DMatrix::zeros(rows, old + names.len());
        values.view_mut((0, 0), (rows, old)).copy_from(&self.values);
        values.view_mut((0, old), (rows, names.len())).copy_from(extra);
        self.values = values;
        self.variables.extend(names.iter().cloned());
        Ok(self)
    }
}
