//! Downlink precoders: multi-cell MMSE, single-cell MMSE, multi-cell ZF and
//! matched filtering, plus the average-power normalization.
//!
//! Every scheme lies in the span of the estimated pilot directions at its
//! BS, so a precoder is stored as `g = H_V,j x` with a coefficient vector
//! `x` of length `B`. The `*_direction` functions build a single precoder
//! from its textbook `M x M` form; [`bs_coefficients`] builds all `K`
//! precoders of a BS from the `B x B` Gram matrix of the directions, which
//! is what the Monte Carlo loop uses.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::channel::{error_variance, EstimateSet};
use crate::geometry::UserDrop;
use crate::linalg::{hpd_solve, hpd_solve_vec, row_gram};
use crate::pilots::PilotAllocation;
use crate::power::PowerProfile;
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "s-mmse")]
    SMmse,
    #[serde(rename = "m-zf")]
    MZf,
    #[serde(rename = "m-mmse")]
    MMmse,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Mf, Scheme::SMmse, Scheme::MZf, Scheme::MMmse];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Mf => "mf",
            Scheme::SMmse => "s-mmse",
            Scheme::MZf => "m-zf",
            Scheme::MMmse => "m-mmse",
        }
    }

    /// M-ZF needs more antennas than pilot directions.
    pub fn feasible(self, antennas: usize, pilot_length: usize) -> bool {
        self != Scheme::MZf || antennas > pilot_length
    }

    fn needs_gram(self) -> bool {
        !matches!(self, Scheme::Mf)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// Error-variance term used in the S-MMSE regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmmseRegularizer {
    /// Same `sigma2 + phi_j` as M-MMSE.
    #[default]
    Full,
    /// Only the BS's own users' error variances.
    IntraCell,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinerWeights {
    /// `gamma[[l, b]] = sum over users on b of tau p d_l^2`.
    pub gamma: Array2<f64>,
    /// `phi[l] = sum over all users of tau * err_var(l, .)`.
    pub phi: Vec<f64>,
    /// Same sum restricted to cell `l`'s own users.
    pub phi_intra: Vec<f64>,
}

pub fn combiner_weights(
    drop: &UserDrop,
    alloc: &PilotAllocation,
    powers: &PowerProfile,
    alpha: &Array2<f64>,
) -> Result<CombinerWeights> {
    let (cells, k) = (drop.cells, drop.users_per_cell);
    let mut gamma = Array2::zeros((cells, alloc.pilot_length));
    let mut phi = vec![0.0; cells];
    let mut phi_intra = vec![0.0; cells];
    for j in 0..cells {
        for l in 0..cells {
            for m in 0..k {
                let tau = powers.tau[[l, m]];
                let d = drop.gain(j, l, m);
                gamma[[j, alloc.pilot(l, m)]] += tau * powers.p[[l, m]] * d * d;
                let e = tau * error_variance(drop, alloc, powers, alpha, j, l, m)?;
                phi[j] += e;
                if l == j {
                    phi_intra[j] += e;
                }
            }
        }
    }
    Ok(CombinerWeights {
        gamma,
        phi,
        phi_intra,
    })
}

impl Scenario {
    /// `sigma2 + phi_j`.
    pub fn mmse_regularizer(&self, j: usize) -> f64 {
        self.powers.sigma2 + self.weights.phi[j]
    }

    pub fn smmse_regularizer(&self, j: usize) -> f64 {
        match self.params.smmse_regularizer {
            SmmseRegularizer::Full => self.mmse_regularizer(j),
            SmmseRegularizer::IntraCell => self.powers.sigma2 + self.weights.phi_intra[j],
        }
    }
}

fn check_user(sc: &Scenario, j: usize, k: usize) -> Result<()> {
    if j >= sc.cells() {
        return Err(Error::InvalidIndex {
            index: j,
            len: sc.cells(),
        });
    }
    if k >= sc.users_per_cell() {
        return Err(Error::InvalidIndex {
            index: k,
            len: sc.users_per_cell(),
        });
    }
    Ok(())
}

/// `sum_i w_i v_i v_i^H + c I` for row vectors `v_i`.
fn weighted_outer(rows: ArrayView2<C64>, w: &[f64], c: f64) -> Array2<C64> {
    let m = rows.ncols();
    let mut a = Array2::<C64>::zeros((m, m));
    for (row, &wi) in rows.rows().into_iter().zip(w) {
        if wi == 0.0 {
            continue;
        }
        for r in 0..m {
            let x = row[r] * wi;
            for (c_idx, y) in row.iter().enumerate() {
                a[[r, c_idx]] += x * y.conj();
            }
        }
    }
    for i in 0..m {
        a[[i, i]] += c;
    }
    a
}

/// `(H_V,j Lambda_j H_V,j^H + (sigma2 + phi_j) I)^{-1} h_hat_jjk`, solved in `M x M`.
pub fn m_mmse_direction(
    est: &EstimateSet,
    sc: &Scenario,
    j: usize,
    k: usize,
) -> Result<Array1<C64>> {
    check_user(sc, j, k)?;
    let gamma = sc.weights.gamma.row(j).to_vec();
    let a = weighted_outer(est.directions[j].view(), &gamma, sc.mmse_regularizer(j));
    let h = est.user_estimate(&sc.drop, &sc.alloc, &sc.powers, j, j, k);
    hpd_solve_vec(a.view(), &h)
}

/// Same structure as M-MMSE over the `K` intra-cell estimates only.
pub fn s_mmse_direction(
    est: &EstimateSet,
    sc: &Scenario,
    j: usize,
    k: usize,
) -> Result<Array1<C64>> {
    check_user(sc, j, k)?;
    let kk = sc.users_per_cell();
    let mut rows = Array2::zeros((kk, sc.antennas()));
    let mut w = vec![0.0; kk];
    for m in 0..kk {
        rows.row_mut(m)
            .assign(&est.user_estimate(&sc.drop, &sc.alloc, &sc.powers, j, j, m));
        w[m] = sc.powers.tau[[j, m]];
    }
    let a = weighted_outer(rows.view(), &w, sc.smmse_regularizer(j));
    hpd_solve_vec(a.view(), &rows.row(k).to_owned())
}

/// `H_V,j (H_V,j^H H_V,j)^{-1} e_{i_jk}`.
pub fn m_zf_direction(
    est: &EstimateSet,
    alloc: &PilotAllocation,
    j: usize,
    k: usize,
) -> Result<Array1<C64>> {
    let dirs = est.directions.get(j).ok_or(Error::InvalidIndex {
        index: j,
        len: est.directions.len(),
    })?;
    if k >= alloc.users_per_cell {
        return Err(Error::InvalidIndex {
            index: k,
            len: alloc.users_per_cell,
        });
    }
    let (b_len, m) = dirs.dim();
    if m <= b_len {
        return Err(Error::Infeasible(format!(
            "M-ZF needs M > B (M = {m}, B = {b_len})"
        )));
    }
    let gram = row_gram(dirs.view());
    let mut e = Array1::zeros(b_len);
    e[alloc.pilot(j, k)] = C64::new(1.0, 0.0);
    let x = hpd_solve_vec(gram.view(), &e).map_err(rank_error)?;
    Ok(dirs.t().dot(&x))
}

pub fn mf_direction(est: &EstimateSet, sc: &Scenario, j: usize, k: usize) -> Result<Array1<C64>> {
    check_user(sc, j, k)?;
    Ok(est.user_estimate(&sc.drop, &sc.alloc, &sc.powers, j, j, k))
}

fn rank_error(e: Error) -> Error {
    match e {
        Error::Singular(msg) => {
            Error::Infeasible(format!("estimated directions are rank deficient: {msg}"))
        }
        other => other,
    }
}

/// Coefficients for `(F^H F + c I)`-type problems on a weighted subset of
/// pilot directions. Returns `x` (`B x targets`) with
/// `H_V x[:, t] = (sum_i w_i h_i h_i^H + c I)^{-1} s_t h_{pos_t}`.
fn weighted_subspace(
    gram: &Array2<C64>,
    cols: &[usize],
    w: &[f64],
    c: f64,
    targets: &[(usize, f64)],
) -> Result<Array2<C64>> {
    let n = cols.len();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let mut a = Array2::<C64>::zeros((n, n));
    for r in 0..n {
        for q in 0..n {
            a[[r, q]] = gram[[cols[r], cols[q]]] * (sw[r] * sw[q]);
        }
        a[[r, r]] += c;
    }
    let mut rhs = Array2::<C64>::zeros((n, targets.len()));
    for (t, &(pos, _)) in targets.iter().enumerate() {
        rhs[[pos, t]] = C64::new(1.0, 0.0);
    }
    let y = hpd_solve(a.view(), rhs.view())?;
    let mut x = Array2::zeros((gram.nrows(), targets.len()));
    for (t, &(pos, s)) in targets.iter().enumerate() {
        let scale = s / sw[pos];
        for r in 0..n {
            x[[cols[r], t]] = y[[r, t]] * (sw[r] * scale);
        }
    }
    Ok(x)
}

/// Coefficients `X` (`B x K`) of the `K` precoders at BS `j`:
/// `G_j = H_V,j X`. `gram` is `H_V,j^H H_V,j` (ignored by MF).
pub fn bs_coefficients(
    scheme: Scheme,
    sc: &Scenario,
    j: usize,
    gram: Option<&Array2<C64>>,
) -> Result<Array2<C64>> {
    let b_len = sc.pilot_length();
    let kk = sc.users_per_cell();
    let own = |k: usize| sc.alloc.pilot(j, k);
    let gram = match (scheme.needs_gram(), gram) {
        (false, _) => None,
        (true, Some(g)) if g.dim() == (b_len, b_len) => Some(g),
        (true, _) => {
            return Err(Error::Dimension(format!(
                "{scheme} needs a {b_len}x{b_len} Gram matrix"
            )))
        }
    };
    match scheme {
        Scheme::Mf => {
            let mut x = Array2::zeros((b_len, kk));
            for k in 0..kk {
                x[[own(k), k]] = C64::new(sc.estimate_scale(j, j, k), 0.0);
            }
            Ok(x)
        }
        Scheme::MMmse => {
            let gamma = sc.weights.gamma.row(j);
            let cols: Vec<usize> = (0..b_len).filter(|&b| gamma[b] > 0.0).collect();
            let w: Vec<f64> = cols.iter().map(|&b| gamma[b]).collect();
            let mut pos = vec![usize::MAX; b_len];
            for (i, &b) in cols.iter().enumerate() {
                pos[b] = i;
            }
            let targets: Vec<(usize, f64)> = (0..kk)
                .map(|k| (pos[own(k)], sc.estimate_scale(j, j, k)))
                .collect();
            weighted_subspace(gram.unwrap(), &cols, &w, sc.mmse_regularizer(j), &targets)
        }
        Scheme::SMmse => {
            let cols: Vec<usize> = (0..kk).map(own).collect();
            let w: Vec<f64> = (0..kk)
                .map(|k| sc.powers.tau[[j, k]] * sc.estimate_scale(j, j, k).powi(2))
                .collect();
            let targets: Vec<(usize, f64)> =
                (0..kk).map(|k| (k, sc.estimate_scale(j, j, k))).collect();
            weighted_subspace(gram.unwrap(), &cols, &w, sc.smmse_regularizer(j), &targets)
        }
        Scheme::MZf => {
            if !scheme.feasible(sc.antennas(), b_len) {
                return Err(Error::Infeasible(format!(
                    "M-ZF needs M > B (M = {}, B = {b_len})",
                    sc.antennas()
                )));
            }
            let mut e = Array2::zeros((b_len, kk));
            for k in 0..kk {
                e[[own(k), k]] = C64::new(1.0, 0.0);
            }
            hpd_solve(gram.unwrap().view(), e.view()).map_err(rank_error)
        }
    }
}

/// Unnormalized precoders of BS `j` as columns of an `M x K` matrix.
pub fn bs_precoders(
    scheme: Scheme,
    sc: &Scenario,
    j: usize,
    directions: ArrayView2<C64>,
    gram: Option<&Array2<C64>>,
) -> Result<Array2<C64>> {
    let x = bs_coefficients(scheme, sc, j, gram)?;
    Ok(directions.t().dot(&x))
}

/// Precoders of one scheme normalized over a stored realization set.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub scheme: Scheme,
    /// `lambda_norm[[j, k]]`: sample mean of `||g_jk||^2`.
    pub lambda_norm: Array2<f64>,
    /// `w[r][j]` is the `M x K` matrix of normalized precoders of BS `j`
    /// in realization `r`.
    pub w: Vec<Vec<Array2<C64>>>,
}

/// Divides each `g_jk` by the square root of its sample-mean squared norm
/// over `samples` (indexed `[realization][bs]`, each `M x K`).
pub fn normalize(scheme: Scheme, samples: Vec<Vec<Array2<C64>>>) -> Result<PrecoderSet> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidParameter(
            "normalization needs at least one realization".into(),
        ));
    }
    let cells = samples[0].len();
    let kk = samples[0].first().map_or(0, |g| g.ncols());
    let mut lambda = Array2::<f64>::zeros((cells, kk));
    for real in &samples {
        if real.len() != cells {
            return Err(Error::Dimension("inconsistent realization shapes".into()));
        }
        for (j, g) in real.iter().enumerate() {
            for (k, col) in g.columns().into_iter().enumerate() {
                lambda[[j, k]] += col.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
    }
    lambda /= n as f64;
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::ZeroDirection);
    }
    let inv = lambda.mapv(|l| 1.0 / l.sqrt());
    let w = samples
        .into_iter()
        .map(|real| {
            real.into_iter()
                .enumerate()
                .map(|(j, mut g)| {
                    for (k, mut col) in g.columns_mut().into_iter().enumerate() {
                        col *= C64::new(inv[[j, k]], 0.0);
                    }
                    g
                })
                .collect()
        })
        .collect();
    Ok(PrecoderSet {
        scheme,
        lambda_norm: lambda,
        w,
    })
}
