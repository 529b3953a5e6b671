//! Uplink statistical channel inversion, equal downlink power and the
//! downlink power calibration against a target cell-edge SNR.

use ndarray::Array2;
use serde::Serialize;

use crate::geometry::UserDrop;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerProfile {
    /// Pilot powers `p_lk`, shape `(L, K)`.
    pub p: Array2<f64>,
    /// Virtual uplink payload powers `tau_lk` used to build the MMSE precoders.
    pub tau: Array2<f64>,
    /// Downlink powers `rho_lk`.
    pub rho_dl: Array2<f64>,
    pub sigma2: f64,
    /// Uplink receive power target `rho` (design SNR times `sigma2`).
    pub rho_ul: f64,
    pub p_max: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `p_lk = tau_lk = rho_ul / d_l(z_lk)`.
pub fn channel_inversion(drop: &UserDrop, rho_ul: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(rho_ul > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho_ul must be positive, got {rho_ul}"
        )));
    }
    let mut p = Array2::zeros((drop.cells, drop.users_per_cell));
    for l in 0..drop.cells {
        for k in 0..drop.users_per_cell {
            let d = drop.gain(l, l, k);
            if !(d > 0.0) {
                return Err(Error::ZeroGain { cell: l, user: k });
            }
            p[[l, k]] = rho_ul / d;
        }
    }
    Ok((p.clone(), p))
}

/// Downlink per-user power giving `target_edge_snr_db` at the cell corner
/// (distance `radius_m`, no shadowing).
pub fn calibrate_pmax(radius_m: f64, kappa: f64, target_edge_snr_db: f64, sigma2: f64) -> f64 {
    let edge_gain = radius_m.powf(-kappa);
    db_to_linear(target_edge_snr_db) * sigma2 / edge_gain
}

impl PowerProfile {
    /// Channel inversion on the uplink and equal power `p_max` on the downlink.
    pub fn build(drop: &UserDrop, sigma2: f64, rho_ul: f64, p_max: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        let (p, tau) = channel_inversion(drop, rho_ul)?;
        let rho_dl = Array2::from_elem(p.raw_dim(), p_max);
        Ok(Self {
            p,
            tau,
            rho_dl,
            sigma2,
            rho_ul,
            p_max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_hex_network, generate_drop, Propagation};
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_drop(gain: f64) -> UserDrop {
        UserDrop {
            cells: 1,
            users_per_cell: 1,
            positions: vec![[1.0, 0.0]],
            gains: Array3::from_elem((1, 1, 1), gain),
            shadowing_db: Array3::zeros((1, 1, 1)),
        }
    }

    #[test]
    fn inversion_examples() {
        let (p, tau) = channel_inversion(&unit_drop(1.0), 1.0).unwrap();
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(tau, p);
        let (p2, _) = channel_inversion(&unit_drop(0.5), 1.0).unwrap();
        assert_eq!(p2[[0, 0]], 2.0);
        assert!(matches!(
            channel_inversion(&unit_drop(0.0), 1.0),
            Err(Error::ZeroGain { .. })
        ));
    }

    #[test]
    fn inversion_equalizes_uplink_snr() {
        let net = build_hex_network(500.0).unwrap();
        let drop = generate_drop(
            &net,
            8,
            Propagation::default(),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let prof = PowerProfile::build(&drop, 1.0, 1.0, 3.0).unwrap();
        for l in 0..19 {
            for k in 0..8 {
                let snr_db = 10.0 * (prof.p[[l, k]] * drop.gain(l, l, k) / prof.sigma2).log10();
                assert!(snr_db.abs() < 1e-12);
                assert_eq!(prof.rho_dl[[l, k]], 3.0);
                assert_eq!(prof.tau[[l, k]], prof.p[[l, k]]);
            }
        }
    }

    #[test]
    fn pmax_calibration() {
        let r: f64 = 500.0;
        let kappa = 3.7;
        let p = calibrate_pmax(r, kappa, -3.0, 1.0);
        assert!((p / (10f64.powf(-0.3) * r.powf(kappa)) - 1.0).abs() < 1e-14);
        // edge SNR is exactly the target
        assert!((10.0 * (p * r.powf(-kappa)).log10() + 3.0).abs() < 1e-12);
        let ratio = calibrate_pmax(r, kappa, 0.0, 1.0) / p;
        assert!((ratio - 1.995_262_314_968_879_5).abs() < 1e-12);
        // 500^3.7 = exp(3.7 ln 500) ~ 9.6716e9, times 10^-0.3
        let expected = (3.7 * 500f64.ln()).exp() * 0.501_187_233_627_272_3;
        assert!((p / expected - 1.0).abs() < 1e-12);
        assert!((p / 4.854_997_560_7e9 - 1.0).abs() < 1e-10);
    }
}
