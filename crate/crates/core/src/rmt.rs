//! Deterministic equivalents and the large-scale SINR of the multi-cell
//! MMSE precoder.
//!
//! [`solve_fixed_point`] and [`fixed_point_derivative`] solve the fixed-point
//! equations for arbitrary Hermitian covariances `R_b`:
//!
//! ```text
//! T = ((1/M) sum_b R_b / (1 + delta_b) + rho I)^{-1},   delta_b = (1/M) tr(R_b T)
//! delta' = (I - J)^{-1} v
//! T' = T Theta T + T ((1/M) sum_b R_b delta'_b / (1 + delta_b)^2) T
//! ```
//!
//! In the simulated network every covariance is a scaled identity
//! (`R_b = c_b I`), so [`scalar_fast_path`] reduces both to scalar
//! recursions. [`large_scale_sinr`] can run on either path; the general one
//! exists to cross-check the scalar one.
//!
//! The regularizer of the precoder, `(sigma2 + phi_l) / M`, is called
//! `rho_reg` here to keep it apart from the estimation coefficients.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::linalg::{hpd_inverse, normalized_trace, normalized_trace_product, real_solve};
use crate::mc_eval::SeReport;
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "bad fixed-point config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Largest relative change between two iterates.
fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - b).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Tracks residuals and complains once if they stop decreasing.
struct Monotonicity {
    last: f64,
    warned: bool,
}

impl Monotonicity {
    const GRACE: usize = 5;

    fn new() -> Self {
        Self {
            last: f64::INFINITY,
            warned: false,
        }
    }

    fn observe(&mut self, iter: usize, residual: f64) {
        if iter > Self::GRACE && residual > self.last && residual > 0.0 && !self.warned {
            warn!(
                "fixed point residual rose from {:.3e} to {residual:.3e} at iteration {iter}",
                self.last
            );
            self.warned = true;
        }
        self.last = residual;
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub delta: Vec<f64>,
    pub t: Array2<C64>,
    pub iterations: usize,
    pub residual: f64,
    pub scalar_path: bool,
}

fn check_square(mats: &[Array2<C64>], m: usize) -> Result<()> {
    if mats.iter().any(|r| r.dim() != (m, m)) {
        return Err(Error::Dimension(format!("all matrices must be {m}x{m}")));
    }
    Ok(())
}

/// Solves the first fixed point with a general Hermitian regularizer `q`
/// in place of `rho I`.
fn fixed_point_with(
    r: &[Array2<C64>],
    q: ArrayView2<C64>,
    init: f64,
    cfg: &FixedPointConfig,
) -> Result<FixedPoint> {
    cfg.validate()?;
    let m = q.nrows();
    check_square(r, m)?;
    let mf = m as f64;
    let mut delta = vec![init; r.len()];
    let mut mono = Monotonicity::new();
    for iter in 1..=cfg.max_iter {
        let mut a = q.to_owned();
        for (rb, d) in r.iter().zip(&delta) {
            a.scaled_add(C64::new(1.0 / (mf * (1.0 + d)), 0.0), rb);
        }
        let t = hpd_inverse(a.view())?;
        let next: Vec<f64> = r
            .iter()
            .map(|rb| normalized_trace_product(rb.view(), t.view()))
            .collect();
        let residual = rel_change(&next, &delta);
        mono.observe(iter, residual);
        delta = next;
        if residual < cfg.rel_tol {
            let mut a = q.to_owned();
            for (rb, d) in r.iter().zip(&delta) {
                a.scaled_add(C64::new(1.0 / (mf * (1.0 + d)), 0.0), rb);
            }
            let t = hpd_inverse(a.view())?;
            return Ok(FixedPoint {
                delta,
                t,
                iterations: iter,
                residual,
                scalar_path: false,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual: mono.last,
    })
}

/// `delta_b` and `T(rho)` for covariances `r` (each `M x M`), iterating
/// from `delta^(0) = 1 / rho`.
pub fn solve_fixed_point(
    r: &[Array2<C64>],
    rho: f64,
    m: usize,
    cfg: &FixedPointConfig,
) -> Result<FixedPoint> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let q = Array2::from_diag_elem(m, C64::new(rho, 0.0));
    fixed_point_with(r, q.view(), 1.0 / rho, cfg)
}

#[derive(Debug, Clone)]
pub struct FixedPointDerivative {
    pub delta_prime: Vec<f64>,
    pub t_prime: Array2<C64>,
    pub j: Array2<f64>,
    pub v: Vec<f64>,
}

/// `delta'` and `T'` for a Hermitian nonnegative `theta`.
pub fn fixed_point_derivative(
    r: &[Array2<C64>],
    theta: ArrayView2<C64>,
    eq: &FixedPoint,
) -> Result<FixedPointDerivative> {
    let m = eq.t.nrows();
    check_square(r, m)?;
    if theta.dim() != (m, m) || eq.delta.len() != r.len() {
        return Err(Error::Dimension(
            "theta / equivalent do not match the covariances".into(),
        ));
    }
    let mf = m as f64;
    let b_len = r.len();
    let t = &eq.t;
    let rt: Vec<Array2<C64>> = r.iter().map(|rb| rb.dot(t)).collect();
    let t_theta_t = t.dot(&theta).dot(t);
    let mut j = Array2::zeros((b_len, b_len));
    for b in 0..b_len {
        for l in 0..b_len {
            let d = 1.0 + eq.delta[l];
            j[[b, l]] = normalized_trace_product(rt[b].view(), rt[l].view()) / (mf * d * d);
        }
    }
    let v: Vec<f64> = r
        .iter()
        .map(|rb| normalized_trace_product(rb.view(), t_theta_t.view()))
        .collect();
    let mut i_minus_j = -&j;
    i_minus_j.diag_mut().iter_mut().for_each(|x| *x += 1.0);
    let delta_prime = real_solve(&i_minus_j, &v)?;
    let mut s = Array2::<C64>::zeros((m, m));
    for ((rb, dp), d) in r.iter().zip(&delta_prime).zip(&eq.delta) {
        s.scaled_add(C64::new(dp / (mf * (1.0 + d) * (1.0 + d)), 0.0), rb);
    }
    let t_prime = t_theta_t + t.dot(&s).dot(t);
    Ok(FixedPointDerivative {
        delta_prime,
        t_prime,
        j,
        v,
    })
}

/// Both fixed points for `R_b = c_b I` and `Theta = theta I`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarPath {
    pub delta: Vec<f64>,
    /// `T = t I`.
    pub t: f64,
    pub delta_prime: Vec<f64>,
    /// `T' = t_prime I`.
    pub t_prime: f64,
    pub iterations: usize,
}

/// First fixed point for `R_b = c_b I`: returns `(delta, t, iterations)`.
pub fn scalar_fixed_point(
    c: &[f64],
    rho: f64,
    m: usize,
    cfg: &FixedPointConfig,
) -> Result<(Vec<f64>, f64, usize)> {
    cfg.validate()?;
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    if m == 0 || c.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter(
            "need M >= 1 and nonnegative c".into(),
        ));
    }
    let mf = m as f64;
    let mut delta = vec![1.0 / rho; c.len()];
    let mut mono = Monotonicity::new();
    for iter in 1..=cfg.max_iter {
        let t = 1.0
            / (c.iter()
                .zip(&delta)
                .map(|(cb, d)| cb / (1.0 + d))
                .sum::<f64>()
                / mf
                + rho);
        let next: Vec<f64> = c.iter().map(|cb| cb * t).collect();
        let residual = rel_change(&next, &delta);
        mono.observe(iter, residual);
        delta = next;
        if residual < cfg.rel_tol {
            let t = 1.0
                / (c.iter()
                    .zip(&delta)
                    .map(|(cb, d)| cb / (1.0 + d))
                    .sum::<f64>()
                    / mf
                    + rho);
            return Ok((delta, t, iter));
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual: mono.last,
    })
}

/// Second fixed point for `R_b = c_b I`, `Theta = theta I`. `J` is rank
/// one, so `(I - J)^{-1}` follows from Sherman-Morrison.
pub fn scalar_prime(
    c: &[f64],
    delta: &[f64],
    t: f64,
    m: usize,
    theta: f64,
) -> Result<(Vec<f64>, f64)> {
    let mf = m as f64;
    // J = u w^T, v = theta M u
    let u: Vec<f64> = c.iter().map(|cb| cb * t * t / mf).collect();
    let wu: f64 = c
        .iter()
        .zip(delta)
        .zip(&u)
        .map(|((cb, d), ub)| cb / ((1.0 + d) * (1.0 + d)) * ub)
        .sum();
    let denom = 1.0 - wu;
    if !(denom.abs() > 1e-300) {
        return Err(Error::Singular("I - J is singular".into()));
    }
    let delta_prime: Vec<f64> = u.iter().map(|ub| theta * mf * ub / denom).collect();
    let s: f64 = c
        .iter()
        .zip(delta)
        .zip(&delta_prime)
        .map(|((cb, d), dp)| cb * dp / ((1.0 + d) * (1.0 + d)))
        .sum::<f64>()
        / mf;
    Ok((delta_prime, t * t * theta + t * t * s))
}

pub fn scalar_fast_path(
    c: &[f64],
    rho: f64,
    m: usize,
    theta: f64,
    cfg: &FixedPointConfig,
) -> Result<ScalarPath> {
    let (delta, t, iterations) = scalar_fixed_point(c, rho, m, cfg)?;
    let (delta_prime, t_prime) = scalar_prime(c, &delta, t, m, theta)?;
    Ok(ScalarPath {
        delta,
        t,
        delta_prime,
        t_prime,
        iterations,
    })
}

/// Which fixed-point implementation [`large_scale_sinr`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DePath {
    #[default]
    Scalar,
    General,
}

/// Normalized traces of BS `l` against the scaled-identity estimate
/// covariances `Phi_b = alpha_lb B I`.
#[derive(Debug, Clone)]
pub enum BsTraces {
    Scalar {
        /// `(1/M) tr T`.
        t1: f64,
        /// `(1/M) tr T''` (`Theta = I`).
        t3: f64,
        /// `alpha_lb B`.
        phi: Vec<f64>,
    },
    General {
        /// `(1/M) tr(Phi_b T)`.
        phi_t: Vec<f64>,
        /// `[[b, b']]`: `(1/M) tr(Phi_b T'_b')`, with `Theta = Phi_b'`.
        phi_tp: Array2<f64>,
        /// `(1/M) tr(T'_b')`.
        tp: Vec<f64>,
        /// `(1/M) tr(Phi_b T'')`.
        phi_tpp: Vec<f64>,
    },
}

impl BsTraces {
    pub fn phi_t(&self, b: usize) -> f64 {
        match self {
            BsTraces::Scalar { t1, phi, .. } => phi[b] * t1,
            BsTraces::General { phi_t, .. } => phi_t[b],
        }
    }

    pub fn phi_tp(&self, b: usize, b2: usize) -> f64 {
        match self {
            BsTraces::Scalar { t3, phi, .. } => phi[b] * phi[b2] * t3,
            BsTraces::General { phi_tp, .. } => phi_tp[[b, b2]],
        }
    }

    pub fn tp(&self, b2: usize) -> f64 {
        match self {
            BsTraces::Scalar { t3, phi, .. } => phi[b2] * t3,
            BsTraces::General { tp, .. } => tp[b2],
        }
    }

    pub fn phi_tpp(&self, b: usize) -> f64 {
        match self {
            BsTraces::Scalar { t3, phi, .. } => phi[b] * t3,
            BsTraces::General { phi_tpp, .. } => phi_tpp[b],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BsEquivalent {
    pub rho_reg: f64,
    /// `delta_b` per pilot.
    pub delta: Vec<f64>,
    pub traces: BsTraces,
    pub iterations: usize,
}

fn bs_equivalent(
    sc: &Scenario,
    l: usize,
    path: DePath,
    cfg: &FixedPointConfig,
) -> Result<BsEquivalent> {
    let m = sc.antennas();
    let mf = m as f64;
    let bf = sc.pilot_length() as f64;
    let rho_reg = sc.mmse_regularizer(l) / mf;
    let phi: Vec<f64> = sc.alpha.row(l).iter().map(|a| a * bf).collect();
    let c: Vec<f64> = phi
        .iter()
        .zip(sc.weights.gamma.row(l))
        .map(|(p, g)| p * g)
        .collect();
    match path {
        DePath::Scalar => {
            let (delta, t1, iterations) = scalar_fixed_point(&c, rho_reg, m, cfg)?;
            let (_, t3) = scalar_prime(&c, &delta, t1, m, 1.0)?;
            Ok(BsEquivalent {
                rho_reg,
                delta,
                traces: BsTraces::Scalar { t1, t3, phi },
                iterations,
            })
        }
        DePath::General => {
            let eye = |s: f64| Array2::from_diag_elem(m, C64::new(s, 0.0));
            let r: Vec<Array2<C64>> = c.iter().map(|&x| eye(x)).collect();
            let phis: Vec<Array2<C64>> = phi.iter().map(|&x| eye(x)).collect();
            let fp = solve_fixed_point(&r, rho_reg, m, cfg)?;
            let phi_t: Vec<f64> = phis
                .iter()
                .map(|p| normalized_trace_product(p.view(), fp.t.view()))
                .collect();
            let b_len = phi.len();
            // one T' per distinct pilot
            let mut phi_tp = Array2::zeros((b_len, b_len));
            let mut tp = vec![0.0; b_len];
            for b2 in 0..b_len {
                let t_prime = fixed_point_derivative(&r, phis[b2].view(), &fp)?.t_prime;
                tp[b2] = normalized_trace(t_prime.view());
                for b in 0..b_len {
                    phi_tp[[b, b2]] = normalized_trace_product(phis[b].view(), t_prime.view());
                }
            }
            let tpp = fixed_point_derivative(&r, eye(1.0).view(), &fp)?.t_prime;
            let phi_tpp = phis
                .iter()
                .map(|p| normalized_trace_product(p.view(), tpp.view()))
                .collect();
            Ok(BsEquivalent {
                rho_reg,
                delta: fp.delta,
                traces: BsTraces::General {
                    phi_t,
                    phi_tp,
                    tp,
                    phi_tpp,
                },
                iterations: fp.iterations,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeterministicEquivalent {
    pub antennas: usize,
    pub per_bs: Vec<BsEquivalent>,
    /// Large-scale SINR `eta_bar[[j, k]]`.
    pub eta: Array2<f64>,
    /// `(coherent, non-coherent)` interference terms per user, before the
    /// `sigma2 / M` noise term.
    pub interference: Array2<(f64, f64)>,
}

impl DeterministicEquivalent {
    pub fn se_report(&self, prelog: f64) -> Result<SeReport> {
        SeReport::from_sinr(self.eta.clone(), prelog)
    }
}

/// Per-user quantities reused across the interference sums.
struct UserTerms {
    pilot: usize,
    /// `rho_lm delta_lm^2 / theta''_lm`.
    coherent_weight: f64,
    /// `rho_lm / (M theta''_lm)`.
    noncoherent_weight: f64,
}

/// Large-scale approximation of the M-MMSE downlink SINR for every user.
pub fn large_scale_sinr(
    sc: &Scenario,
    path: DePath,
    cfg: &FixedPointConfig,
) -> Result<DeterministicEquivalent> {
    large_scale_sinr_with(
        sc,
        &DeOptions {
            path,
            cfg: *cfg,
            same_pilot_errors: false,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeOptions {
    pub path: DePath,
    pub cfg: FixedPointConfig,
    /// Adds `sum rho_lm c_l(z_jk) / M` over users `(l, m)` on the user's own
    /// pilot (itself included), where `c` is the estimation error variance.
    /// The closed form leaves these `O(1/M)` terms out; they dominate its
    /// finite-`M` error when many cells share a pilot.
    pub same_pilot_errors: bool,
}

pub fn large_scale_sinr_with(sc: &Scenario, opts: &DeOptions) -> Result<DeterministicEquivalent> {
    let (path, cfg) = (opts.path, &opts.cfg);
    let (cells, kk) = (sc.cells(), sc.users_per_cell());
    let mf = sc.antennas() as f64;
    let per_bs = (0..cells)
        .map(|l| bs_equivalent(sc, l, path, cfg))
        .collect::<Result<Vec<_>>>()?;
    let rho = &sc.powers.rho_dl;
    let mut users = Vec::with_capacity(cells * kk);
    for l in 0..cells {
        for m in 0..kk {
            let b = sc.alloc.pilot(l, m);
            let tr = &per_bs[l].traces;
            let theta2 = tr.phi_tpp(b);
            if !(theta2 > 0.0) {
                return Err(Error::NonPositive(format!(
                    "theta'' of user ({l}, {m}) is {theta2}"
                )));
            }
            let delta = tr.phi_t(b);
            users.push(UserTerms {
                pilot: b,
                coherent_weight: rho[[l, m]] * delta * delta / theta2,
                noncoherent_weight: rho[[l, m]] / (mf * theta2),
            });
        }
    }
    let mut eta = Array2::zeros((cells, kk));
    let mut interference = Array2::from_elem((cells, kk), (0.0, 0.0));
    for j in 0..cells {
        for k in 0..kk {
            let me = j * kk + k;
            let b = users[me].pilot;
            let p = sc.powers.p[[j, k]];
            let d_own = sc.drop.gain(j, j, k);
            let signal = p * d_own * d_own * users[me].coherent_weight;
            let mut coherent = 0.0;
            let mut noncoherent = 0.0;
            for l in 0..cells {
                let d = sc.drop.gain(l, j, k);
                let tr = &per_bs[l].traces;
                let gamma = sc.weights.gamma[[l, b]];
                let vt = tr.phi_t(b);
                let g_vt = gamma * vt;
                let shape = vt * (2.0 + g_vt) / ((1.0 + g_vt) * (1.0 + g_vt));
                let err = if opts.same_pilot_errors {
                    crate::channel::error_variance(
                        &sc.drop, &sc.alloc, &sc.powers, &sc.alpha, l, j, k,
                    )? / mf
                } else {
                    0.0
                };
                for (m, u) in users[l * kk..(l + 1) * kk].iter().enumerate() {
                    if u.pilot == b {
                        if l != j || m != k {
                            coherent += d * d * u.coherent_weight;
                        }
                        noncoherent += rho[[l, m]] * err;
                    } else {
                        let mu = tr.tp(u.pilot) - p * d * gamma * tr.phi_tp(b, u.pilot) * shape;
                        noncoherent += d * mu * u.noncoherent_weight;
                    }
                }
            }
            let coherent = p * coherent;
            let den = coherent + noncoherent + sc.powers.sigma2 / mf;
            if !(den > 0.0) {
                return Err(Error::NegativeDenominator { cell: j, user: k });
            }
            eta[[j, k]] = signal / den;
            interference[[j, k]] = (coherent, noncoherent);
        }
    }
    Ok(DeterministicEquivalent {
        antennas: sc.antennas(),
        per_bs,
        eta,
        interference,
    })
}

/// `eta_bar` on the scalar path with default tolerances.
pub fn large_scale_eta(sc: &Scenario) -> Result<Array2<f64>> {
    Ok(large_scale_sinr(sc, DePath::Scalar, &FixedPointConfig::default())?.eta)
}

/// Draws `n` columns `h_b ~ CN(0, R_b / M)` and returns
/// `(1/M) tr(D Q^{-1})` and `(1/M) tr(D Q^{-1} Theta Q^{-1})` averaged,
/// with `Q = H H^H + rho I`. Empirical reference for the fixed points.
pub fn empirical_resolvent_traces<R: rand::Rng + ?Sized>(
    r: &[Array2<C64>],
    rho: f64,
    d: ArrayView2<C64>,
    theta: ArrayView2<C64>,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let m = d.nrows();
    check_square(r, m)?;
    // R_b^{1/2} via Cholesky of R_b + tiny ridge
    let roots: Vec<nalgebra::DMatrix<C64>> = r
        .iter()
        .map(|rb| {
            let mut x = crate::linalg::to_nalgebra(rb.view());
            let ridge = 1e-14 * (0..m).map(|i| x[(i, i)].re).fold(0.0, f64::max).max(1e-300);
            for i in 0..m {
                x[(i, i)] += C64::new(ridge, 0.0);
            }
            x.cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::Singular("covariance is not PSD".into()))
        })
        .collect::<Result<_>>()?;
    let mut acc1 = 0.0;
    let mut acc2 = 0.0;
    let mut z = vec![C64::new(0.0, 0.0); m];
    for _ in 0..samples {
        let mut q = Array2::from_diag_elem(m, C64::new(rho, 0.0));
        for root in &roots {
            crate::linalg::fill_cn(rng, &mut z, 1.0 / m as f64);
            let h = root * nalgebra::DVector::from_column_slice(&z);
            for i in 0..m {
                for c in 0..m {
                    q[[i, c]] += h[i] * h[c].conj();
                }
            }
        }
        let qi = hpd_inverse(q.view())?;
        acc1 += normalized_trace_product(d, qi.view());
        let second = qi.dot(&theta).dot(&qi);
        acc2 += normalized_trace_product(d, second.view());
    }
    let n = samples as f64;
    Ok((acc1 / n, acc2 / n))
}

/// `(1/M) tr(D A)` for a deterministic `D` and `A = T` or `T'`.
pub fn trace_against(d: ArrayView2<C64>, a: ArrayView2<C64>) -> f64 {
    normalized_trace_product(d, a)
}

/// Per-user relative gaps `|a - b| / b`.
pub fn relative_gaps(a: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs())
        .collect()
}
