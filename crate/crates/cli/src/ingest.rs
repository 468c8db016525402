//! Builds a misaligned dataset from a response station file and a
//! covariate station file.

use cnr::geo::{LocationSet, Metric};
use cnr::pipeline::MisalignedDataset;
use nalgebra::{DMatrix, DVector};

use crate::config::DataConfig;
use crate::error::{CliError, CliResult};
use crate::station::StationTable;
use crate::wind::{read_records_path, wind_columns, Sector};

/// Covariate stations with the selected columns.
#[derive(Debug, Clone)]
pub struct CovariateData {
    pub table: StationTable,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
    pub locs: LocationSet<f64>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub response: StationTable,
    pub covariates: CovariateData,
    pub dataset: MisalignedDataset<f64>,
}

pub fn ingest_covariates(data: &DataConfig, metric: Metric) -> CliResult<CovariateData> {
    let mut table = StationTable::read_path(&data.covariates)?;
    if let Some(path) = &data.hourly_wind {
        let records = read_records_path(path)?;
        let cols = wind_columns(&records, &table.ids)?;
        let names: Vec<String> = Sector::ALL.iter().map(|s| s.name().to_string()).collect();
        table = table.with_columns(&names, &cols)?;
    }
    let names = if data.covariate_columns.is_empty() {
        table.variables.clone()
    } else {
        data.covariate_columns.clone()
    };
    if names.is_empty() {
        return Err(CliError::schema(format!("{}: no covariate columns", data.covariates.display())));
    }
    let values = table.select(&names)?;
    let locs = table.locations(metric)?;
    Ok(CovariateData {
        table,
        names,
        values,
        locs,
    })
}

pub fn ingest(data: &DataConfig, metric: Metric) -> CliResult<Ingested> {
    let response = StationTable::read_path(&data.response)?;
    let col = response.column(&data.response_column)?;
    let mut y = DVector::from_iterator(response.ids.len(), response.values.column(col).iter().copied());
    if data.log_response {
        if let Some(i) = y.iter().position(|&v| v <= 0.0) {
            return Err(CliError::schema(format!(
                "station {}: {} = {} cannot be log-transformed",
                response.ids[i], data.response_column, y[i]
            )));
        }
        y.apply(|v| *v = v.ln());
    }
    let covariates = ingest_covariates(data, metric)?;
    let dataset = MisalignedDataset::new(
        y,
        response.locations(metric)?,
        covariates.values.clone(),
        covariates.locs.clone(),
        covariates.names.clone(),
    )?;
    let shared = dataset.shared_locations();
    if shared > 0 {
        log::warn!("{shared} response locations coincide with covariate stations");
    }
    log::info!("ingested N = {}, M = {}, K = {}", dataset.y.len(), dataset.x_tilde.nrows(), dataset.k());
    Ok(Ingested {
        response,
        covariates,
        dataset,
    })
}
