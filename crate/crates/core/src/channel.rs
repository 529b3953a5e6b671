//! Small-scale fading and uplink MMSE channel estimation.
//!
//! Estimation runs in the pilot-projected domain: for every BS `j` and
//! pilot `b` the simulator draws `y_jb = Y_j v_b^*` directly,
//!
//! ```text
//! y_jb = B * sum_{(l,m) on b} sqrt(p_lm) h_jlm + n_jb,   n_jb ~ CN(0, B sigma2 I_M)
//! ```
//!
//! which is exact because the pilot book is orthogonal with `v^H v = B`.
//! The estimated direction is `h_V,jb = alpha_jb y_jb` and every user on
//! pilot `b` has estimate `sqrt(p_lk) d_j(z_lk) h_V,jb`.

use ndarray::{Array1, Array2, Array3, ArrayView2, Zip};
use rand::Rng;

use crate::geometry::UserDrop;
use crate::linalg::fill_cn;
use crate::pilots::PilotAllocation;
use crate::power::PowerProfile;
use crate::{Error, Result, C64};

/// Channel vectors of every user towards every BS.
#[derive(Debug, Clone)]
pub struct ChannelTensor {
    pub antennas: usize,
    /// `per_bs[j]` has shape `(L*K, M)`; row `l*K + k` is `h_jlk^T`.
    pub per_bs: Vec<Array2<C64>>,
}

impl ChannelTensor {
    pub fn channel(&self, j: usize, user: usize) -> ndarray::ArrayView1<'_, C64> {
        self.per_bs[j].row(user)
    }
}

/// Draws `h_jlk ~ CN(0, d_j(z_lk) I_M)` for one BS `j` and every user.
pub fn draw_bs_channels<R: Rng + ?Sized>(
    drop: &UserDrop,
    j: usize,
    antennas: usize,
    rng: &mut R,
) -> Array2<C64> {
    let users = drop.user_count();
    let mut h = Array2::zeros((users, antennas));
    for (u, mut row) in h.rows_mut().into_iter().enumerate() {
        let d = drop.gains[[j, u / drop.users_per_cell, u % drop.users_per_cell]];
        fill_cn(rng, row.as_slice_mut().expect("standard layout"), d);
    }
    h
}

pub fn draw_channels<R: Rng + ?Sized>(
    drop: &UserDrop,
    antennas: usize,
    rng: &mut R,
) -> Result<ChannelTensor> {
    if antennas == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let per_bs = (0..drop.cells)
        .map(|j| draw_bs_channels(drop, j, antennas, rng))
        .collect();
    Ok(ChannelTensor { antennas, per_bs })
}

/// `alpha[[j, b]] = 1 / (B * sum_{(l,m) on b} p_lm d_j(z_lm) + sigma2)`.
pub fn estimation_coefficients(
    drop: &UserDrop,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
) -> Result<Array2<f64>> {
    let b_len = alloc.pilot_length;
    let bf = b_len as f64;
    let mut alpha = Array2::zeros((drop.cells, b_len));
    for j in 0..drop.cells {
        for b in 0..b_len {
            let load: f64 = alloc
                .users_on_pilot(b)
                .iter()
                .map(|&(l, m)| powers.p[[l, m]] * drop.gain(j, l, m))
                .sum();
            alpha[[j, b]] = 1.0 / (bf * load + powers.sigma2);
        }
    }
    Ok(alpha)
}

/// Scalar of `Phi_jlk = p_lk d_j^2(z_lk) alpha_{j,i_lk} B I_M`.
pub fn estimate_variance(
    drop: &UserDrop,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
    alpha: &Array2<f64>,
    j: usize,
    l: usize,
    k: usize,
) -> f64 {
    let d = drop.gain(j, l, k);
    powers.p[[l, k]] * d * d * alpha[[j, alloc.pilot(l, k)]] * alloc.pilot_length as f64
}

/// Scalar of the error covariance `C_jlk = d_j (1 - p_lk d_j alpha B) I_M`.
pub fn error_variance(
    drop: &UserDrop,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
    alpha: &Array2<f64>,
    j: usize,
    l: usize,
    k: usize,
) -> Result<f64> {
    if j >= drop.cells || l >= drop.cells {
        return Err(Error::InvalidIndex {
            index: j.max(l),
            len: drop.cells,
        });
    }
    if k >= drop.users_per_cell {
        return Err(Error::InvalidIndex {
            index: k,
            len: drop.users_per_cell,
        });
    }
    let d = drop.gain(j, l, k);
    let shrink = powers.p[[l, k]] * d * alpha[[j, alloc.pilot(l, k)]] * alloc.pilot_length as f64;
    let v = d * (1.0 - shrink);
    if v < -1e-12 * d {
        return Err(Error::NegativeVariance(v));
    }
    Ok(v.max(0.0))
}

/// Estimated pilot directions at BS `j`: row `b` is `h_V,jb^T`.
///
/// `channels` are this BS's channels (`(L*K, M)`, see [`draw_bs_channels`]).
pub fn observe_bs<R: Rng + ?Sized>(
    j: usize,
    channels: ArrayView2<C64>,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
    alpha: &Array2<f64>,
    rng: &mut R,
) -> Result<Array2<C64>> {
    let k = alloc.users_per_cell;
    if channels.nrows() != alloc.index.len() {
        return Err(Error::Dimension(format!(
            "channels have {} rows, allocation has {} users",
            channels.nrows(),
            alloc.index.len()
        )));
    }
    let m = channels.ncols();
    let b_len = alloc.pilot_length;
    let bf = b_len as f64;
    let mut dirs = Array2::zeros((b_len, m));
    for (b, mut row) in dirs.rows_mut().into_iter().enumerate() {
        let out = row.as_slice_mut().expect("standard layout");
        fill_cn(rng, out, bf * powers.sigma2);
        for &(l, u) in alloc.users_on_pilot(b) {
            let w = bf * powers.p[[l, u]].sqrt();
            for (o, h) in out.iter_mut().zip(channels.row(l * k + u)) {
                *o += h * w;
            }
        }
        let a = alpha[[j, b]];
        out.iter_mut().for_each(|z| *z *= a);
    }
    Ok(dirs)
}

/// Estimated directions at every BS plus the per-link variance split.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    /// `directions[j]` has shape `(B, M)`.
    pub directions: Vec<Array2<C64>>,
    pub alpha: Array2<f64>,
    /// `est_var[[j, l, k]]` is the scalar of `Phi_jlk`.
    pub est_var: Array3<f64>,
    /// `err_var[[j, l, k]]` is the scalar of `C_jlk`.
    pub err_var: Array3<f64>,
}

impl EstimateSet {
    /// `h_hat_jlk = sqrt(p_lk) d_j(z_lk) h_V,j,i_lk`.
    pub fn user_estimate(
        &self,
        drop: &UserDrop,
        alloc: &PilotAllocation,
        powers: &PowerProfile,
        j: usize,
        l: usize,
        k: usize,
    ) -> Array1<C64> {
        let s = powers.p[[l, k]].sqrt() * drop.gain(j, l, k);
        self.directions[j].row(alloc.pilot(l, k)).mapv(|z| z * s)
    }
}

pub fn observe_and_estimate<R: Rng + ?Sized>(
    channels: &ChannelTensor,
    drop: &UserDrop,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
    alpha: &Array2<f64>,
    rng: &mut R,
) -> Result<EstimateSet> {
    if channels.per_bs.len() != drop.cells || alpha.dim() != (drop.cells, alloc.pilot_length) {
        return Err(Error::Dimension(
            "channels / alpha do not match the drop".into(),
        ));
    }
    let directions = channels
        .per_bs
        .iter()
        .enumerate()
        .map(|(j, h)| observe_bs(j, h.view(), alloc, powers, alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    estimate_set(directions, drop, alloc, powers, alpha)
}

/// Attaches the variance tables to already observed directions.
pub fn estimate_set(
    directions: Vec<Array2<C64>>,
    drop: &UserDrop,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
    alpha: &Array2<f64>,
) -> Result<EstimateSet> {
    let shape = drop.gains.raw_dim();
    let mut est_var = Array3::zeros(shape);
    let mut err_var = Array3::zeros(shape);
    let mut failure = None;
    Zip::indexed(&mut est_var)
        .and(&mut err_var)
        .for_each(|(j, l, k), e, c| {
            *e = estimate_variance(drop, alloc, powers, alpha, j, l, k);
            match error_variance(drop, alloc, powers, alpha, j, l, k) {
                Ok(v) => *c = v,
                Err(err) => failure = Some(err),
            }
        });
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(EstimateSet {
        directions,
        alpha: alpha.clone(),
        est_var,
        err_var,
    })
}
