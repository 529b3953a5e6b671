//! Experiment configuration: a single JSON document whose omitted fields
//! fall back to the reference network setup.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::ShadowingModel;
use crate::pilots::{center_pilot_count, refined_pilot_length, SUPPORTED_REUSE};
use crate::precoding::{Scheme, SmmseRegularizer};
use crate::scenario::SystemParams;
use crate::{Error, Result};

/// Environment variable that overrides `output_path`.
pub const OUTPUT_DIR_ENV: &str = "MIMO_SIM_OUTPUT_DIR";

/// A scheme column in the result files: a Monte Carlo precoder or the
/// deterministic equivalent of M-MMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowScheme {
    Mc(Scheme),
    De,
}

impl RowScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            RowScheme::Mc(s) => s.as_str(),
            RowScheme::De => "m-mmse-de",
        }
    }
}

impl fmt::Display for RowScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RowScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "m-mmse-de" {
            Ok(RowScheme::De)
        } else {
            s.parse().map(RowScheme::Mc)
        }
    }
}

impl Serialize for RowScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RowScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What to do with sweep points where M-ZF needs `M > B` and does not get it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfeasiblePolicy {
    /// Reject the config before any compute.
    #[default]
    Error,
    /// Emit a row with status `infeasible` and no SE values.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label copied into every row (e.g. a figure name).
    pub name: String,
    #[serde(rename = "M")]
    pub antennas: Vec<usize>,
    #[serde(rename = "K")]
    pub users_per_cell: Vec<usize>,
    pub beta: Vec<usize>,
    pub beta_f: Vec<f64>,
    pub schemes: Vec<RowScheme>,
    #[serde(rename = "S")]
    pub coherence_symbols: usize,
    #[serde(rename = "r")]
    pub radius_m: f64,
    pub kappa: f64,
    pub sigma_sf_sq: f64,
    pub shadowing: ShadowingModel,
    pub rho_ul_db: f64,
    pub edge_snr_db: f64,
    pub sigma2: f64,
    pub smmse_regularizer: SmmseRegularizer,
    pub n_drops: usize,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub output_path: PathBuf,
    pub infeasible: InfeasiblePolicy,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = SystemParams::default();
        Self {
            name: "experiment".into(),
            antennas: vec![p.antennas],
            users_per_cell: vec![p.users_per_cell],
            beta: vec![p.beta],
            beta_f: vec![0.0],
            schemes: vec![RowScheme::Mc(Scheme::MMmse), RowScheme::De],
            coherence_symbols: p.coherence_symbols,
            radius_m: p.radius_m,
            kappa: p.kappa,
            sigma_sf_sq: p.sigma_sf_sq,
            shadowing: p.shadowing,
            rho_ul_db: p.rho_ul_db,
            edge_snr_db: p.edge_snr_db,
            sigma2: p.sigma2,
            smmse_regularizer: p.smmse_regularizer,
            n_drops: 50,
            n_realizations: 1000,
            master_seed: 0,
            output_path: PathBuf::from("results"),
            infeasible: InfeasiblePolicy::Error,
            workers: None,
        }
    }
}

/// One combination of the swept parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users_per_cell: usize,
    pub beta: usize,
    pub beta_f: f64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Output directory, honoring [`OUTPUT_DIR_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_path.clone(),
        }
    }

    pub fn mc_schemes(&self) -> Vec<Scheme> {
        self.schemes
            .iter()
            .filter_map(|s| match s {
                RowScheme::Mc(x) => Some(*x),
                RowScheme::De => None,
            })
            .collect()
    }

    /// Sweep points in file order: `M` varies fastest, then `beta_f`,
    /// `beta`, and `K` slowest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &k in &self.users_per_cell {
            for &beta in &self.beta {
                for &beta_f in &self.beta_f {
                    for &m in &self.antennas {
                        out.push(SweepPoint {
                            index: out.len(),
                            antennas: m,
                            users_per_cell: k,
                            beta,
                            beta_f,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn params(&self, pt: &SweepPoint) -> SystemParams {
        SystemParams {
            antennas: pt.antennas,
            users_per_cell: pt.users_per_cell,
            beta: pt.beta,
            beta_f: pt.beta_f,
            coherence_symbols: self.coherence_symbols,
            radius_m: self.radius_m,
            kappa: self.kappa,
            sigma_sf_sq: self.sigma_sf_sq,
            shadowing: self.shadowing,
            rho_ul_db: self.rho_ul_db,
            edge_snr_db: self.edge_snr_db,
            sigma2: self.sigma2,
            smmse_regularizer: self.smmse_regularizer,
        }
    }

    /// Checks every invariant before any compute.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, empty) in [
            ("M", self.antennas.is_empty()),
            ("K", self.users_per_cell.is_empty()),
            ("beta", self.beta.is_empty()),
            ("beta_f", self.beta_f.is_empty()),
            ("schemes", self.schemes.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} list is empty"));
            }
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return bad("schemes list has duplicates".into());
        }
        if self.n_drops == 0 {
            return bad("n_drops must be at least 1".into());
        }
        if !self.mc_schemes().is_empty() && self.n_realizations == 0 {
            return bad("n_realizations must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(&m) = self.antennas.iter().find(|&&m| m == 0) {
            return bad(format!("M = {m} is not allowed"));
        }
        if let Some(&b) = self.beta.iter().find(|b| !SUPPORTED_REUSE.contains(b)) {
            return bad(format!(
                "unsupported reuse factor beta = {b} (expected one of {SUPPORTED_REUSE:?})"
            ));
        }
        for &k in &self.users_per_cell {
            if k == 0 {
                return bad("K must be at least 1".into());
            }
            for &bf in &self.beta_f {
                center_pilot_count(k, bf).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                for &beta in &self.beta {
                    let b = refined_pilot_length(k, beta, bf)
                        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    if b > self.coherence_symbols {
                        return bad(format!(
                            "K = {k}, beta = {beta}, beta_f = {bf}: pilot length B = {b} exceeds S = {}",
                            self.coherence_symbols
                        ));
                    }
                    if self.infeasible == InfeasiblePolicy::Error
                        && self.schemes.contains(&RowScheme::Mc(Scheme::MZf))
                    {
                        if let Some(&m) = self.antennas.iter().find(|&&m| m <= b) {
                            return bad(format!(
                                "m-zf needs M > B but M = {m}, B = {b} (K = {k}, beta = {beta}); \
                                 set \"infeasible\": \"skip\" to emit placeholder rows"
                            ));
                        }
                    }
                }
            }
        }
        for p in self.points() {
            self.params(&p)
                .validate()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of drop `drop` at sweep point `point`:
/// `h(h(h(master) ^ point) ^ drop)` with `h` = SplitMix64.
pub fn drop_seed(master: u64, point: usize, drop: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ point as u64) ^ drop as u64)
}

/// Seed of the fading realizations of a drop, derived from its drop seed.
pub fn fading_seed(drop_seed: u64) -> u64 {
    splitmix64(drop_seed ^ 0x6661_6469_6e67)
}
