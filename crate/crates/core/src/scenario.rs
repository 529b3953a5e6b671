//! System parameters and the large-scale state of one user drop.
//!
//! A [`Scenario`] holds everything that does not change across small-scale
//! fading realizations: positions and gains, pilot allocation, powers, the
//! MMSE estimation coefficients and the precoder combining weights. Both
//! the Monte Carlo evaluation and the deterministic equivalent consume it.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::estimation_coefficients;
use crate::geometry::{
    build_hex_network, generate_drop, NetworkGeometry, Propagation, ShadowingModel, UserDrop,
};
use crate::pilots::{
    allocate_refined, center_pilot_count, reuse_coloring, PilotAllocation, SUPPORTED_REUSE,
};
use crate::power::{calibrate_pmax, db_to_linear, PowerProfile};
use crate::precoding::{combiner_weights, CombinerWeights, SmmseRegularizer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemParams {
    /// BS antennas `M`.
    pub antennas: usize,
    /// Users per cell `K`.
    pub users_per_cell: usize,
    pub beta: usize,
    pub beta_f: f64,
    /// Coherence block length `S` in symbols.
    pub coherence_symbols: usize,
    pub radius_m: f64,
    pub kappa: f64,
    pub sigma_sf_sq: f64,
    pub shadowing: ShadowingModel,
    /// Uplink design SNR `rho / sigma2` in dB.
    pub rho_ul_db: f64,
    /// Downlink cell-edge SNR without shadowing, in dB.
    pub edge_snr_db: f64,
    pub sigma2: f64,
    pub smmse_regularizer: SmmseRegularizer,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            antennas: 100,
            users_per_cell: 10,
            beta: 4,
            beta_f: 0.0,
            coherence_symbols: 500,
            radius_m: 500.0,
            kappa: 3.7,
            sigma_sf_sq: 5.0,
            shadowing: ShadowingModel::PerLink,
            rho_ul_db: 0.0,
            edge_snr_db: -3.0,
            sigma2: 1.0,
            smmse_regularizer: SmmseRegularizer::default(),
        }
    }
}

impl SystemParams {
    pub fn propagation(&self) -> Propagation {
        Propagation {
            kappa: self.kappa,
            sigma_sf_sq: self.sigma_sf_sq,
            shadowing: self.shadowing,
        }
    }

    pub fn pilot_length(&self) -> Result<usize> {
        crate::pilots::refined_pilot_length(self.users_per_cell, self.beta, self.beta_f)
    }

    pub fn rho_ul(&self) -> f64 {
        db_to_linear(self.rho_ul_db) * self.sigma2
    }

    pub fn p_max(&self) -> f64 {
        calibrate_pmax(self.radius_m, self.kappa, self.edge_snr_db, self.sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.antennas == 0 {
            return bad("antennas must be at least 1".into());
        }
        if self.users_per_cell == 0 {
            return bad("users_per_cell must be at least 1".into());
        }
        if !SUPPORTED_REUSE.contains(&self.beta) {
            return Err(Error::UnsupportedReuse(self.beta));
        }
        center_pilot_count(self.users_per_cell, self.beta_f)?;
        if !(self.kappa > 2.0) {
            return bad(format!("kappa must exceed 2, got {}", self.kappa));
        }
        if !(self.sigma2 > 0.0) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.radius_m > 0.0) {
            return bad(format!("radius_m must be positive, got {}", self.radius_m));
        }
        let b = self.pilot_length()?;
        if b > self.coherence_symbols {
            return bad(format!(
                "pilot length {b} exceeds coherence block {}",
                self.coherence_symbols
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: SystemParams,
    pub net: Option<NetworkGeometry>,
    pub drop: UserDrop,
    pub alloc: PilotAllocation,
    pub powers: PowerProfile,
    /// MMSE estimation coefficients `alpha[[j, b]]`.
    pub alpha: Array2<f64>,
    pub weights: CombinerWeights,
}

impl Scenario {
    /// Draws one drop of the 19-cell network: positions and shadowing, then
    /// pilot permutations, all from a single stream seeded with `seed`.
    pub fn generate(params: &SystemParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = build_hex_network(params.radius_m)?;
        let drop = generate_drop(&net, params.users_per_cell, params.propagation(), &mut rng)?;
        Self::from_drop(params, net, drop, &mut rng)
    }

    /// Pilot allocation and powers for an existing drop.
    pub fn from_drop(
        params: &SystemParams,
        net: NetworkGeometry,
        drop: UserDrop,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        params.validate()?;
        let coloring = reuse_coloring(&net, params.beta)?;
        let alloc = allocate_refined(
            &coloring,
            &net,
            &drop,
            params.users_per_cell,
            params.beta,
            params.beta_f,
            rng,
        )?;
        let powers = PowerProfile::build(&drop, params.sigma2, params.rho_ul(), params.p_max())?;
        let mut s = Self::assemble(params.clone(), drop, alloc, powers)?;
        s.net = Some(net);
        Ok(s)
    }

    /// Builds a scenario from explicit parts (any number of cells).
    pub fn assemble(
        params: SystemParams,
        drop: UserDrop,
        alloc: PilotAllocation,
        powers: PowerProfile,
    ) -> Result<Self> {
        if alloc.users_per_cell != drop.users_per_cell || alloc.cells() != drop.cells {
            return Err(Error::Dimension("allocation does not match drop".into()));
        }
        if powers.p.dim() != (drop.cells, drop.users_per_cell) {
            return Err(Error::Dimension("power profile does not match drop".into()));
        }
        let alpha = estimation_coefficients(&drop, &alloc, &powers)?;
        let weights = combiner_weights(&drop, &alloc, &powers, &alpha)?;
        Ok(Self {
            params,
            net: None,
            drop,
            alloc,
            powers,
            alpha,
            weights,
        })
    }

    pub fn cells(&self) -> usize {
        self.drop.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.drop.users_per_cell
    }

    pub fn antennas(&self) -> usize {
        self.params.antennas
    }

    pub fn pilot_length(&self) -> usize {
        self.alloc.pilot_length
    }

    pub fn prelog(&self) -> f64 {
        self.alloc.prelog(self.params.coherence_symbols)
    }

    /// `sqrt(p_lk) d_j(z_lk)`: scale of user `(l, k)`'s estimate at BS `j`
    /// relative to the pilot direction.
    #[inline]
    pub fn estimate_scale(&self, j: usize, l: usize, k: usize) -> f64 {
        self.powers.p[[l, k]].sqrt() * self.drop.gain(j, l, k)
    }
}
