//! Sweep execution: every (point, drop) is an independent job; rows are
//! written in sweep order by a single writer.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::geometry::build_hex_network;
use crate::mc_eval::{evaluate, McConfig, SeReport};
use crate::rmt::{large_scale_sinr, DePath, FixedPointConfig};
use crate::scenario::Scenario;
use crate::{Error, Result};

use super::config::{drop_seed, fading_seed, ExperimentConfig, RowScheme, SweepPoint};
use super::results::{
    write_json, ResultRow, RowSink, RunOutputs, TimingRow, CONFIG_JSON, GEOMETRY_JSON,
};

struct DropOutcome {
    rows: Vec<ResultRow>,
    timing: TimingRow,
    allocation: serde_json::Value,
}

/// Runs the sweep into the configured output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    run_in(cfg, &cfg.output_dir())
}

pub fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutputs> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| sweep(cfg, dir))
}

fn sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutputs> {
    let mut sink = RowSink::create(dir)?;
    write_json(&dir.join(CONFIG_JSON), cfg)?;
    let net = build_hex_network(cfg.radius_m)?;
    std::fs::write(dir.join(GEOMETRY_JSON), net.to_json()? + "\n")?;
    let points = cfg.points();
    for pt in &points {
        log::info!(
            "point {}/{}: M={} K={} beta={} beta_f={}",
            pt.index + 1,
            points.len(),
            pt.antennas,
            pt.users_per_cell,
            pt.beta,
            pt.beta_f
        );
        let outcomes: Vec<Result<DropOutcome>> = (0..cfg.n_drops)
            .into_par_iter()
            .map(|d| run_drop(cfg, pt, d))
            .collect();
        for o in outcomes {
            let o = o?;
            for row in &o.rows {
                sink.write_row(row)?;
            }
            sink.write_timing(&o.timing)?;
            sink.write_allocation(o.timing.point, o.timing.drop, o.allocation)?;
        }
    }
    Ok(RunOutputs {
        dir: dir.to_path_buf(),
        rows: sink.rows(),
    })
}

fn run_drop(cfg: &ExperimentConfig, pt: &SweepPoint, d: usize) -> Result<DropOutcome> {
    let start = Instant::now();
    let seed = drop_seed(cfg.master_seed, pt.index, d);
    let sc = Scenario::generate(&cfg.params(pt), seed)?;
    let (b, prelog) = (sc.pilot_length(), sc.prelog());
    let feasible: Vec<_> = cfg
        .mc_schemes()
        .into_iter()
        .filter(|s| s.feasible(pt.antennas, b))
        .collect();
    let mc = if feasible.is_empty() {
        Vec::new()
    } else {
        evaluate(
            &sc,
            &feasible,
            &McConfig::new(cfg.n_realizations, fading_seed(seed)),
        )?
    };
    let mut rows = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let report: Option<SeReport> = match scheme {
            RowScheme::Mc(s) => feasible.iter().position(|&f| f == s).map(|i| mc[i].clone()),
            RowScheme::De => Some(
                large_scale_sinr(&sc, DePath::Scalar, &FixedPointConfig::default())?
                    .se_report(prelog)?,
            ),
        };
        if report.is_none() {
            log::warn!(
                "point {} drop {d}: {scheme} infeasible (M = {}, B = {b})",
                pt.index,
                pt.antennas
            );
        }
        rows.push(ResultRow::new(
            cfg,
            pt,
            d,
            seed,
            scheme,
            b,
            prelog,
            report.as_ref(),
        ));
    }
    let allocation = serde_json::from_str(&sc.alloc.to_json()?)?;
    Ok(DropOutcome {
        rows,
        timing: TimingRow {
            point: pt.index,
            drop: d,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        allocation,
    })
}
