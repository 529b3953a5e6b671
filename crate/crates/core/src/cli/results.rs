//! Result rows and the files they are streamed to.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::ShadowingModel;
use crate::mc_eval::SeReport;
use crate::{Error, Result};

use super::config::{ExperimentConfig, RowScheme, SweepPoint};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSONL: &str = "results.jsonl";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const GEOMETRY_JSON: &str = "geometry.json";
pub const ALLOCATIONS_JSONL: &str = "allocations.jsonl";
pub const CONFIG_JSON: &str = "config.json";

/// Per-user SE quantiles reported in every row.
pub const SE_QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Infeasible,
}

/// One (sweep point, drop, scheme) outcome. SE fields are empty for
/// infeasible rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    pub point: usize,
    pub drop: usize,
    pub drop_seed: u64,
    pub scheme: String,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users_per_cell: usize,
    pub beta: usize,
    pub beta_f: f64,
    #[serde(rename = "B")]
    pub pilot_length: usize,
    #[serde(rename = "S")]
    pub coherence_symbols: usize,
    pub r: f64,
    pub kappa: f64,
    pub sigma_sf_sq: f64,
    pub shadowing: ShadowingModel,
    pub rho_ul_db: f64,
    pub edge_snr_db: f64,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub status: RowStatus,
    pub prelog: f64,
    /// Sum SE per cell averaged over the 19 cells.
    pub sum_se: Option<f64>,
    pub sum_se_center: Option<f64>,
    pub se_p05: Option<f64>,
    pub se_p50: Option<f64>,
    pub se_p95: Option<f64>,
}

impl ResultRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &ExperimentConfig,
        pt: &SweepPoint,
        drop: usize,
        drop_seed: u64,
        scheme: RowScheme,
        pilot_length: usize,
        prelog: f64,
        report: Option<&SeReport>,
    ) -> Self {
        let q = report.map(|r| r.user_se_quantiles(&SE_QUANTILES));
        Self {
            name: cfg.name.clone(),
            point: pt.index,
            drop,
            drop_seed,
            scheme: scheme.to_string(),
            antennas: pt.antennas,
            users_per_cell: pt.users_per_cell,
            beta: pt.beta,
            beta_f: pt.beta_f,
            pilot_length,
            coherence_symbols: cfg.coherence_symbols,
            r: cfg.radius_m,
            kappa: cfg.kappa,
            sigma_sf_sq: cfg.sigma_sf_sq,
            shadowing: cfg.shadowing,
            rho_ul_db: cfg.rho_ul_db,
            edge_snr_db: cfg.edge_snr_db,
            n_realizations: if scheme == RowScheme::De {
                0
            } else {
                cfg.n_realizations
            },
            master_seed: cfg.master_seed,
            status: if report.is_some() {
                RowStatus::Ok
            } else {
                RowStatus::Infeasible
            },
            prelog,
            sum_se: report.map(SeReport::mean_sum_se),
            sum_se_center: report.map(SeReport::center_sum_se),
            se_p05: q.as_ref().map(|q| q[0]),
            se_p50: q.as_ref().map(|q| q[1]),
            se_p95: q.as_ref().map(|q| q[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub point: usize,
    pub drop: usize,
    pub wall_time_s: f64,
}

/// Single writer for all row outputs of a run. Files are truncated on
/// creation and rows are flushed as they arrive.
pub struct RowSink {
    csv: csv::Writer<File>,
    jsonl: BufWriter<File>,
    timings: csv::Writer<File>,
    allocations: BufWriter<File>,
    rows: usize,
}

impl RowSink {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            csv: csv::Writer::from_path(dir.join(RESULTS_CSV))?,
            jsonl: BufWriter::new(File::create(dir.join(RESULTS_JSONL))?),
            timings: csv::Writer::from_path(dir.join(TIMINGS_CSV))?,
            allocations: BufWriter::new(File::create(dir.join(ALLOCATIONS_JSONL))?),
            rows: 0,
        })
    }

    pub fn write_row(&mut self, row: &ResultRow) -> Result<()> {
        self.csv.serialize(row)?;
        self.csv.flush()?;
        serde_json::to_writer(&mut self.jsonl, row)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        self.rows += 1;
        Ok(())
    }

    pub fn write_timing(&mut self, t: &TimingRow) -> Result<()> {
        self.timings.serialize(t)?;
        self.timings.flush()?;
        Ok(())
    }

    pub fn write_allocation(
        &mut self,
        point: usize,
        drop: usize,
        alloc: serde_json::Value,
    ) -> Result<()> {
        let v = serde_json::json!({ "point": point, "drop": drop, "allocation": alloc });
        serde_json::to_writer(&mut self.allocations, &v)?;
        self.allocations.write_all(b"\n")?;
        self.allocations.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Paths written by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub rows: usize,
}

impl RunOutputs {
    pub fn results_csv(&self) -> PathBuf {
        self.dir.join(RESULTS_CSV)
    }

    pub fn results_jsonl(&self) -> PathBuf {
        self.dir.join(RESULTS_JSONL)
    }
}
