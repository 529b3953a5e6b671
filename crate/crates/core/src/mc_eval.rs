//! Monte Carlo evaluation of the downlink SINR and ergodic spectral
//! efficiency.
//!
//! Precoders are normalized by `lambda_jk`, the sample mean of `||g_jk||^2`
//! over the same realizations used for the SINR expectations. Since every
//! statistic is linear or quadratic in `g_jk`, the accumulator stores sums
//! for the unnormalized `g` and divides by `lambda` in [`SinrAccumulator::finalize`];
//! this is the same number a two-pass "normalize, then accumulate" run
//! produces, without a second pass.

use ndarray::{Array2, Array3, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{draw_bs_channels, estimate_set, observe_bs, ChannelTensor, EstimateSet};
use crate::linalg::row_gram;
use crate::power::PowerProfile;
use crate::precoding::{bs_precoders, Scheme};
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

/// Which `lambda` [`SinrAccumulator::finalize`] divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Sample mean of the accumulated `||g||^2`.
    SameSet,
    /// Precoders were already normalized: `lambda = 1`.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrAccumulator {
    pub cells: usize,
    pub users_per_cell: usize,
    pub n: usize,
    /// `signal[[j, k]]`: sum of `h_jjk^H g_jk`.
    pub signal: Array2<C64>,
    /// `cross_sq[[l, m, u]]`: sum of `|h_l,u^H g_lm|^2`, with user
    /// `u = j * K + k`.
    pub cross_sq: Array3<f64>,
    /// `norm_sq[[l, m]]`: sum of `||g_lm||^2`.
    pub norm_sq: Array2<f64>,
}

impl SinrAccumulator {
    pub fn new(cells: usize, users_per_cell: usize) -> Self {
        let users = cells * users_per_cell;
        Self {
            cells,
            users_per_cell,
            n: 0,
            signal: Array2::zeros((cells, users_per_cell)),
            cross_sq: Array3::zeros((cells, users_per_cell, users)),
            norm_sq: Array2::zeros((cells, users_per_cell)),
        }
    }

    /// Adds BS `l`'s precoders (`M x K` columns) against all users'
    /// channels to BS `l` (`L*K x M` rows). Does not advance `n`.
    pub fn accumulate_bs(
        &mut self,
        l: usize,
        channels: ArrayView2<C64>,
        precoders: ArrayView2<C64>,
    ) -> Result<()> {
        let kk = self.users_per_cell;
        let users = self.cells * kk;
        if l >= self.cells {
            return Err(Error::InvalidIndex {
                index: l,
                len: self.cells,
            });
        }
        if channels.nrows() != users
            || precoders.ncols() != kk
            || channels.ncols() != precoders.nrows()
        {
            return Err(Error::Dimension(format!(
                "channels {:?} and precoders {:?} do not fit {} cells x {kk} users",
                channels.dim(),
                precoders.dim(),
                self.cells
            )));
        }
        // ip[[u, m]] = conj(h_u^H g_m)
        let ip = channels.dot(&precoders.mapv(|z| z.conj()));
        for m in 0..kk {
            let mut row = self.cross_sq.slice_mut(ndarray::s![l, m, ..]);
            Zip::from(&mut row)
                .and(ip.column(m))
                .for_each(|acc, z| *acc += z.norm_sqr());
            self.norm_sq[[l, m]] += precoders
                .column(m)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>();
            self.signal[[l, m]] += ip[[l * kk + m, m]].conj();
        }
        Ok(())
    }

    pub fn end_realization(&mut self) {
        self.n += 1;
    }

    /// Adds one full realization: `precoders[l]` is BS `l`'s `M x K` matrix.
    pub fn accumulate(
        &mut self,
        channels: &ChannelTensor,
        precoders: &[Array2<C64>],
    ) -> Result<()> {
        if channels.per_bs.len() != self.cells || precoders.len() != self.cells {
            return Err(Error::Dimension(
                "realization does not match the accumulator".into(),
            ));
        }
        for (l, (h, g)) in channels.per_bs.iter().zip(precoders).enumerate() {
            self.accumulate_bs(l, h.view(), g.view())?;
        }
        self.end_realization();
        Ok(())
    }

    pub fn merge(&mut self, other: &SinrAccumulator) -> Result<()> {
        if (self.cells, self.users_per_cell) != (other.cells, other.users_per_cell) {
            return Err(Error::Dimension(
                "cannot merge accumulators of different shapes".into(),
            ));
        }
        self.n += other.n;
        self.signal += &other.signal;
        self.cross_sq += &other.cross_sq;
        self.norm_sq += &other.norm_sq;
        Ok(())
    }

    fn lambda(&self, norm: Normalization) -> Result<Array2<f64>> {
        if self.n == 0 {
            return Err(Error::InvalidParameter(
                "no realizations accumulated".into(),
            ));
        }
        match norm {
            Normalization::Unit => Ok(Array2::ones(self.norm_sq.raw_dim())),
            Normalization::SameSet => {
                let lam = &self.norm_sq / self.n as f64;
                if lam.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::ZeroDirection);
                }
                Ok(lam)
            }
        }
    }

    /// Per user: `(rho |E h^H w|^2, sum_lm rho_lm E|h^H w_lm|^2, rho E|h^H w|^2)`.
    fn moments(&self, powers: &PowerProfile, norm: Normalization) -> Result<Array3<f64>> {
        let lam = self.lambda(norm)?;
        let nf = self.n as f64;
        let kk = self.users_per_cell;
        let rho = &powers.rho_dl;
        if rho.dim() != (self.cells, kk) {
            return Err(Error::Dimension(
                "power profile does not match the accumulator".into(),
            ));
        }
        let mut out = Array3::zeros((self.cells, kk, 3));
        for j in 0..self.cells {
            for k in 0..kk {
                let u = j * kk + k;
                let s = self.signal[[j, k]] / nf;
                let coherent = rho[[j, k]] * s.norm_sqr() / lam[[j, k]];
                let mut total = 0.0;
                for l in 0..self.cells {
                    for m in 0..kk {
                        total += rho[[l, m]] * self.cross_sq[[l, m, u]] / (nf * lam[[l, m]]);
                    }
                }
                out[[j, k, 0]] = coherent;
                out[[j, k, 1]] = total;
                out[[j, k, 2]] = rho[[j, k]] * self.cross_sq[[j, k, u]] / (nf * lam[[j, k]]);
            }
        }
        Ok(out)
    }

    /// `eta_jk = rho |E h^H w|^2 / (sum_lm rho E|h^H w_lm|^2 - rho |E h^H w|^2 + sigma2)`.
    pub fn sinr(&self, powers: &PowerProfile, norm: Normalization) -> Result<Array2<f64>> {
        let mom = self.moments(powers, norm)?;
        let mut sinr = Array2::zeros((self.cells, self.users_per_cell));
        for ((j, k), eta) in sinr.indexed_iter_mut() {
            let den = mom[[j, k, 1]] - mom[[j, k, 0]] + powers.sigma2;
            if !(den > 0.0) {
                return Err(Error::NegativeDenominator { cell: j, user: k });
            }
            *eta = mom[[j, k, 0]] / den;
        }
        Ok(sinr)
    }

    pub fn finalize(
        &self,
        powers: &PowerProfile,
        prelog: f64,
        norm: Normalization,
    ) -> Result<SeReport> {
        let sinr = self.sinr(powers, norm)?;
        let mut report = SeReport::from_sinr(sinr, prelog)?;
        report.lambda = Some(self.lambda(norm)?);
        Ok(report)
    }

    /// SINR with the full signal power `E|h^H w|^2` known at the user and
    /// no self-interference term. Upper-bounds [`Self::sinr`] on any sample.
    pub fn genie_sinr(&self, powers: &PowerProfile, norm: Normalization) -> Result<Array2<f64>> {
        let mom = self.moments(powers, norm)?;
        Ok(Array2::from_shape_fn(
            (self.cells, self.users_per_cell),
            |(j, k)| mom[[j, k, 2]] / (mom[[j, k, 1]] - mom[[j, k, 2]] + powers.sigma2),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeReport {
    pub sinr: Array2<f64>,
    /// `prelog * log2(1 + sinr)` in bit/s/Hz.
    pub se: Array2<f64>,
    pub sum_se_per_cell: Vec<f64>,
    pub prelog: f64,
    #[serde(skip)]
    pub lambda: Option<Array2<f64>>,
}

impl SeReport {
    pub fn from_sinr(sinr: Array2<f64>, prelog: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prelog) {
            return Err(Error::InvalidParameter(format!(
                "prelog must lie in [0, 1], got {prelog}"
            )));
        }
        if sinr.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::NonPositive("SINR must be nonnegative".into()));
        }
        let se = sinr.mapv(|x| prelog * (1.0 + x).log2());
        let sum_se_per_cell = se.rows().into_iter().map(|r| r.sum()).collect();
        Ok(Self {
            sinr,
            se,
            sum_se_per_cell,
            prelog,
            lambda: None,
        })
    }

    /// Sum SE per cell averaged over all cells.
    pub fn mean_sum_se(&self) -> f64 {
        self.sum_se_per_cell.iter().sum::<f64>() / self.sum_se_per_cell.len() as f64
    }

    pub fn center_sum_se(&self) -> f64 {
        self.sum_se_per_cell[0]
    }

    /// Linear-interpolated quantiles of the per-user SE.
    pub fn user_se_quantiles(&self, qs: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = self.se.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        qs.iter().map(|&q| quantile_sorted(&v, q)).collect()
    }
}

pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub realizations: usize,
    pub seed: u64,
    /// Realizations summed per work item before merging.
    pub chunk: usize,
}

impl McConfig {
    pub fn new(realizations: usize, seed: u64) -> Self {
        Self {
            realizations,
            seed,
            chunk: 8,
        }
    }
}

fn realization_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Channels and estimates of realization `r`, drawn in the same order as
/// [`simulate`] uses.
pub fn draw_realization(
    sc: &Scenario,
    seed: u64,
    r: usize,
) -> Result<(ChannelTensor, EstimateSet)> {
    let mut rng = realization_rng(seed, r);
    let m = sc.antennas();
    let mut per_bs = Vec::with_capacity(sc.cells());
    let mut dirs = Vec::with_capacity(sc.cells());
    for l in 0..sc.cells() {
        let h = draw_bs_channels(&sc.drop, l, m, &mut rng);
        dirs.push(observe_bs(
            l,
            h.view(),
            &sc.alloc,
            &sc.powers,
            &sc.alpha,
            &mut rng,
        )?);
        per_bs.push(h);
    }
    let est = estimate_set(dirs, &sc.drop, &sc.alloc, &sc.powers, &sc.alpha)?;
    Ok((
        ChannelTensor {
            antennas: m,
            per_bs,
        },
        est,
    ))
}

fn run_realization(
    sc: &Scenario,
    schemes: &[Scheme],
    seed: u64,
    r: usize,
    accs: &mut [SinrAccumulator],
) -> Result<()> {
    let mut rng = realization_rng(seed, r);
    let m = sc.antennas();
    let needs_gram = schemes.iter().any(|s| *s != Scheme::Mf);
    for l in 0..sc.cells() {
        let h = draw_bs_channels(&sc.drop, l, m, &mut rng);
        let dirs = observe_bs(l, h.view(), &sc.alloc, &sc.powers, &sc.alpha, &mut rng)?;
        let gram = needs_gram.then(|| row_gram(dirs.view()));
        for (scheme, acc) in schemes.iter().zip(accs.iter_mut()) {
            let g = bs_precoders(*scheme, sc, l, dirs.view(), gram.as_ref())?;
            acc.accumulate_bs(l, h.view(), g.view())?;
        }
    }
    accs.iter_mut().for_each(SinrAccumulator::end_realization);
    Ok(())
}

/// Accumulates SINR statistics for every scheme on one shared set of
/// realizations. Results are independent of the thread count.
pub fn simulate(sc: &Scenario, schemes: &[Scheme], cfg: &McConfig) -> Result<Vec<SinrAccumulator>> {
    if cfg.realizations == 0 {
        return Err(Error::InvalidParameter(
            "realizations must be at least 1".into(),
        ));
    }
    for s in schemes {
        if !s.feasible(sc.antennas(), sc.pilot_length()) {
            return Err(Error::Infeasible(format!(
                "{s} needs M > B (M = {}, B = {})",
                sc.antennas(),
                sc.pilot_length()
            )));
        }
    }
    let fresh = || vec![SinrAccumulator::new(sc.cells(), sc.users_per_cell()); schemes.len()];
    let chunk = cfg.chunk.max(1);
    let n_chunks = cfg.realizations.div_ceil(chunk);
    let batch = rayon::current_num_threads().max(1) * 2;
    let mut total = fresh();
    for first in (0..n_chunks).step_by(batch) {
        let parts: Vec<Result<Vec<SinrAccumulator>>> = (first..(first + batch).min(n_chunks))
            .into_par_iter()
            .map(|c| {
                let mut accs = fresh();
                for r in c * chunk..((c + 1) * chunk).min(cfg.realizations) {
                    run_realization(sc, schemes, cfg.seed, r, &mut accs)?;
                }
                Ok(accs)
            })
            .collect();
        for part in parts {
            for (t, p) in total.iter_mut().zip(&part?) {
                t.merge(p)?;
            }
        }
    }
    Ok(total)
}

/// Monte Carlo SE reports, one per scheme, on shared realizations.
pub fn evaluate(sc: &Scenario, schemes: &[Scheme], cfg: &McConfig) -> Result<Vec<SeReport>> {
    simulate(sc, schemes, cfg)?
        .iter()
        .map(|acc| acc.finalize(&sc.powers, sc.prelog(), Normalization::SameSet))
        .collect()
}
