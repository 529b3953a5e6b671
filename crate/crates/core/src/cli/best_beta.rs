//! Reuse-factor selection from a results file.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::mc_eval::quantile_sorted;
use crate::{Error, Result};

use super::results::{ResultRow, RowStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestBeta {
    pub scheme: String,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users_per_cell: usize,
    pub beta_f: f64,
    /// `None` when no reuse factor was feasible.
    pub best_beta: Option<usize>,
    /// Median over drops of the sum SE per cell at `best_beta`.
    pub sum_se: Option<f64>,
    /// Median sum SE for every reuse factor in the grid.
    pub per_beta: Vec<(usize, Option<f64>)>,
}

type GroupKey = (String, usize, usize, u64);

/// Argmax over `beta` of the median (over drops) sum SE per cell, for each
/// `(scheme, M, K, beta_f)`. Ties go to the smaller `beta`; infeasible rows
/// are excluded. Every group must cover every `beta` present in the file.
pub fn best_beta(rows: &[ResultRow]) -> Result<Vec<BestBeta>> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("results file has no rows".into()));
    }
    let grid: BTreeSet<usize> = rows.iter().map(|r| r.beta).collect();
    let mut groups: BTreeMap<GroupKey, BTreeMap<usize, Vec<&ResultRow>>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.scheme.clone(),
            r.antennas,
            r.users_per_cell,
            r.beta_f.to_bits(),
        );
        groups
            .entry(key)
            .or_default()
            .entry(r.beta)
            .or_default()
            .push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((scheme, m, k, bf), by_beta) in groups {
        let mut per_beta = Vec::with_capacity(grid.len());
        for &beta in &grid {
            let Some(rs) = by_beta.get(&beta) else {
                return Err(Error::InvalidConfig(format!(
                    "missing grid point: scheme {scheme}, M = {m}, K = {k}, beta_f = {}, beta = {beta}",
                    f64::from_bits(bf)
                )));
            };
            let mut v = Vec::with_capacity(rs.len());
            for r in rs.iter().filter(|r| r.status == RowStatus::Ok) {
                match r.sum_se {
                    Some(x) if x.is_finite() => v.push(x),
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "row (point {}, drop {}) is ok but has no finite sum_se",
                            r.point, r.drop
                        )))
                    }
                }
            }
            v.sort_by(f64::total_cmp);
            per_beta.push((beta, (!v.is_empty()).then(|| quantile_sorted(&v, 0.5))));
        }
        let mut best: Option<(usize, f64)> = None;
        for &(beta, se) in &per_beta {
            if let Some(se) = se {
                if best.is_none_or(|(_, b)| se > b) {
                    best = Some((beta, se));
                }
            }
        }
        out.push(BestBeta {
            scheme,
            antennas: m,
            users_per_cell: k,
            beta_f: f64::from_bits(bf),
            best_beta: best.map(|b| b.0),
            sum_se: best.map(|b| b.1),
            per_beta,
        });
    }
    Ok(out)
}

/// CSV table of the selections (`best_beta` empty when nothing is feasible).
pub fn format_table(sel: &[BestBeta]) -> String {
    let mut s = String::from("scheme,M,K,beta_f,best_beta,sum_se\n");
    for b in sel {
        let best = b.best_beta.map(|x| x.to_string()).unwrap_or_default();
        let se = b.sum_se.map(|x| format!("{x:.6}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{best},{se}\n",
            b.scheme, b.antennas, b.users_per_cell, b.beta_f
        ));
    }
    s
}
