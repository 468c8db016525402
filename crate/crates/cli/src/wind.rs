//! Hourly wind records aggregated into mean speed per direction sector.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sector {
    Ne,
    Se,
    Sw,
    Nw,
}

impl Sector {
    pub const ALL: [Sector; 4] = [Sector::Ne, Sector::Se, Sector::Sw, Sector::Nw];

    pub fn name(self) -> &'static str {
        match self {
            Sector::Ne => "wind_ne",
            Sector::Se => "wind_se",
            Sector::Sw => "wind_sw",
            Sector::Nw => "wind_nw",
        }
    }

    /// NE [0,90), SE [90,180), SW [180,270), NW [270,360].
    pub fn of(direction_deg: f64) -> CliResult<Self> {
        if !(0.0..=360.0).contains(&direction_deg) {
            return Err(CliError::schema(format!("wind direction {direction_deg} outside [0, 360]")));
        }
        Ok(match direction_deg {
            d if d < 90.0 => Sector::Ne,
            d if d < 180.0 => Sector::Se,
            d if d < 270.0 => Sector::Sw,
            _ => Sector::Nw,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WindRecord {
    pub station_id: String,
    pub hour: i64,
    pub wind_speed: f64,
    pub wind_direction_deg: f64,
}

/// Per-station sector means; `None` marks a sector with no hours.
pub type SectorMeans = [Option<f64>; 4];

pub fn read_records<R: Read>(reader: R, source: &str) -> CliResult<Vec<WindRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::schema(format!("{source}: row {}: {e}", i + 2))))
        .collect()
}

pub fn read_records_path(path: &Path) -> CliResult<Vec<WindRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_records(file, &path.display().to_string())
}

pub fn aggregate_wind(records: &[WindRecord]) -> CliResult<BTreeMap<String, SectorMeans>> {
    let mut acc: BTreeMap<String, [(f64, usize); 4]> = BTreeMap::new();
    for r in records {
        if !r.wind_speed.is_finite() || r.wind_speed < 0.0 {
            return Err(CliError::schema(format!(
                "station {} hour {}: invalid wind speed {}",
                r.station_id, r.hour, r.wind_speed
            )));
        }
        let s = Sector::of(r.wind_direction_deg)
            .map_err(|e| CliError::schema(format!("station {} hour {}: {e}", r.station_id, r.hour)))?;
        let slot = &mut acc.entry(r.station_id.clone()).or_default()[s as usize];
        slot.0 += r.wind_speed;
        slot.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, sums)| (id, sums.map(|(s, n)| (n > 0).then(|| s / n as f64))))
        .collect())
}

/// Sector means in the order of `ids`. Errors when a station has no
/// records or a sector is empty.
pub fn wind_columns(records: &[WindRecord], ids: &[String]) -> CliResult<nalgebra::DMatrix<f64>> {
    let means = aggregate_wind(records)?;
    let mut out = nalgebra::DMatrix::zeros(ids.len(), 4);
    for (i, id) in ids.iter().enumerate() {
        let m = means
            .get(id)
            .ok_or_else(|| CliError::schema(format!("station {id} has no hourly wind records")))?;
        for s in Sector::ALL {
            out[(i, s as usize)] = m[s as usize].ok_or_else(|| {
                CliError::schema(format!("station {id}: no hours in sector {}; missing values are not supported", s.name()))
            })?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, hour: i64, speed: f64, dir: f64) -> WindRecord {
        WindRecord {
            station_id: id.into(),
            hour,
            wind_speed: speed,
            wind_direction_deg: dir,
        }
    }

    #[test]
    fn sector_boundaries() {
        assert_eq!(Sector::of(0.0).unwrap(), Sector::Ne);
        assert_eq!(Sector::of(89.999).unwrap(), Sector::Ne);
        assert_eq!(Sector::of(90.0).unwrap(), Sector::Se);
        assert_eq!(Sector::of(180.0).unwrap(), Sector::Sw);
        assert_eq!(Sector::of(270.0).unwrap(), Sector::Nw);
        assert_eq!(Sector::of(360.0).unwrap(), Sector::Nw);
        assert!(Sector::of(-1.0).is_err());
        assert!(Sector::of(360.5).is_err());
        assert!(Sector::of(f64::NAN).is_err());
    }

    #[test]
    fn all_northwest() {
        let recs: Vec<_> = (0..5).map(|h| rec("A", h, 3.0, 300.0)).collect();
        let m = aggregate_wind(&recs).unwrap();
        assert_eq!(m["A"], [None, None, None, Some(3.0)]);
    }

    #[test]
    fn two_hours() {
        let m = aggregate_wind(&[rec("A", 0, 2.0, 45.0), rec("A", 1, 4.0, 315.0)]).unwrap();
        assert_eq!(m["A"], [Some(2.0), None, None, Some(4.0)]);
    }

    #[test]
    fn full_month() {
        let recs: Vec<_> = (0..744).map(|h| rec("A", h, (h % 7) as f64, (h * 37 % 360) as f64)).collect();
        let cols = wind_columns(&recs, &["A".into()]).unwrap();
        assert!(cols.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_station_or_sector() {
        let recs = [rec("A", 0, 2.0, 45.0)];
        assert!(wind_columns(&recs, &["B".into()]).unwrap_err().to_string().contains("no hourly"));
        assert!(wind_columns(&recs, &["A".into()]).unwrap_err().to_string().contains("wind_se"));
    }

    #[test]
    fn parses_csv() {
        let text = "station_id,hour,wind_speed,wind_direction_deg\nA,0,2.5,10\nA,1,1.5,200\n";
        let recs = read_records(text.as_bytes(), "w").unwrap();
        assert_eq!(recs[1], rec("A", 1, 1.5, 200.0));
        assert!(read_records("station_id,hour,wind_speed,wind_direction_deg\nA,0,x,10\n".as_bytes(), "w").is_err());
    }
}
