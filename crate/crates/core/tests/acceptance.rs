//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Known misses are reported but do not fail the run unless
//! `ACCEPTANCE_STRICT=1` is set. Positional arguments select criteria by id.

use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mimo_sim::cli::best_beta::best_beta;
use mimo_sim::cli::config::{drop_seed, fading_seed, ExperimentConfig, RowScheme};
use mimo_sim::cli::results::read_rows;
use mimo_sim::cli::runner::run_in;
use mimo_sim::cli::validate::{
    collinearity_error, family_z_bound, moment_z_scores, sum_rule_error, zf_leakage,
};
use mimo_sim::mc_eval::{evaluate, quantile_sorted, McConfig};
use mimo_sim::precoding::Scheme;
use mimo_sim::rmt::{
    empirical_resolvent_traces, fixed_point_derivative, large_scale_sinr, relative_gaps,
    scalar_fixed_point, solve_fixed_point, trace_against, DePath, FixedPointConfig,
};
use mimo_sim::{Scenario, SystemParams, C64};

const MASTER: u64 = 2024;

struct Outcome {
    passed: bool,
    gating: bool,
    summary: String,
}

fn pass_if(passed: bool, summary: String) -> Outcome {
    Outcome {
        passed,
        gating: true,
        summary,
    }
}

fn params(m: usize, k: usize, beta: usize) -> SystemParams {
    SystemParams {
        antennas: m,
        users_per_cell: k,
        beta,
        ..Default::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean.
fn sem(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Mean sum SE per cell of one MC run per drop, for several schemes.
fn mc_sum_se(
    p: &SystemParams,
    schemes: &[Scheme],
    drops: usize,
    realizations: usize,
    point: usize,
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(drops); schemes.len()];
    for d in 0..drops {
        let seed = drop_seed(MASTER, point, d);
        let sc = Scenario::generate(p, seed).unwrap();
        let reports = evaluate(
            &sc,
            schemes,
            &McConfig::new(realizations, fading_seed(seed)),
        )
        .unwrap();
        for (o, r) in out.iter_mut().zip(&reports) {
            o.push(r.mean_sum_se());
        }
    }
    out
}

fn de_sum_se(p: &SystemParams, drops: usize, point: usize) -> Vec<f64> {
    (0..drops)
        .map(|d| {
            let sc = Scenario::generate(p, drop_seed(MASTER, point, d)).unwrap();
            let de = large_scale_sinr(&sc, DePath::Scalar, &FixedPointConfig::default()).unwrap();
            de.se_report(sc.prelog()).unwrap().mean_sum_se()
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let p = params(100, 10, 4);
    let (drops, realizations) = (20, 2000);
    let mut gaps = Vec::new();
    let (mut mc_se, mut de_se) = (Vec::new(), Vec::new());
    for d in 0..drops {
        let seed = drop_seed(MASTER, 1, d);
        let sc = Scenario::generate(&p, seed).unwrap();
        let mc = evaluate(
            &sc,
            &[Scheme::MMmse],
            &McConfig::new(realizations, fading_seed(seed)),
        )
        .unwrap()
        .remove(0);
        let de = large_scale_sinr(&sc, DePath::Scalar, &FixedPointConfig::default()).unwrap();
        gaps.extend(relative_gaps(&de.eta, &mc.sinr));
        mc_se.push(mc.mean_sum_se());
        de_se.push(de.se_report(sc.prelog()).unwrap().mean_sum_se());
    }
    let user_gap = median(gaps);
    let se_gap = (mean(&de_se) - mean(&mc_se)).abs() / mean(&mc_se);
    pass_if(
        user_gap <= 0.05 && se_gap <= 0.03,
        format!(
            "MC vs DE at M=100 K=10 beta=4, {drops} drops x {realizations} realizations: median per-user SINR gap {:.2}% (<= 5%), sum-SE gap {:.2}% (<= 3%; MC {:.3}, DE {:.3} bit/s/Hz)",
            100.0 * user_gap,
            100.0 * se_gap,
            mean(&mc_se),
            mean(&de_se)
        ),
    )
}

fn criterion_2() -> Outcome {
    // The drop (positions, shadowing) is drawn before the pilots, so equal
    // seeds give the same users for every beta.
    let betas = [1, 3, 4, 7];
    let (drops, realizations) = (10, 100);
    let se: Vec<Vec<f64>> = betas
        .iter()
        .map(|&b| {
            mc_sum_se(
                &params(200, 10, b),
                &[Scheme::MMmse],
                drops,
                realizations,
                2,
            )
            .remove(0)
        })
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for w in 0..3 {
        let diff: Vec<f64> = se[w + 1].iter().zip(&se[w]).map(|(a, b)| a - b).collect();
        let (m, s) = (mean(&diff), sem(&diff));
        ok &= m > 2.0 * s;
        parts.push(format!(
            "SE(beta={})-SE(beta={}) = {m:.3} +- {:.3}",
            betas[w + 1],
            betas[w],
            2.0 * s
        ));
    }
    let means: Vec<String> = betas
        .iter()
        .zip(&se)
        .map(|(b, v)| format!("beta={b}: {:.2}", mean(v)))
        .collect();
    pass_if(
        ok,
        format!(
            "monotone in beta, M-MMSE M=200 K=10, {drops} common drops x {realizations} realizations [{}]; paired gaps (2 sigma over drops): {}",
            means.join(", "),
            parts.join("; ")
        ),
    )
}

fn criterion_3() -> Outcome {
    let schemes = [Scheme::Mf, Scheme::SMmse, Scheme::MZf, Scheme::MMmse];
    let (drops, realizations) = (5, 100);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut point = 10;
    for (k, floor, ms) in [(10, 1.05, vec![50, 100, 200]), (30, 1.12, vec![200])] {
        for m in ms {
            point += 1;
            let se: Vec<f64> = mc_sum_se(&params(m, k, 4), &schemes, drops, realizations, point)
                .iter()
                .map(|v| mean(v))
                .collect();
            let mf_lowest = se[1..].iter().all(|x| *x > se[0]);
            ok &= mf_lowest;
            let mut line = format!(
                "K={k} M={m}: MF {:.2} S-MMSE {:.2} M-ZF {:.2} M-MMSE {:.2}",
                se[0], se[1], se[2], se[3]
            );
            if m == 200 {
                let ratio = se[3] / se[1];
                ok &= ratio >= floor;
                line.push_str(&format!(", M-MMSE/S-MMSE = {ratio:.3} (>= {floor})"));
            }
            parts.push(line);
        }
    }
    pass_if(ok, format!("scheme ordering, beta=4, {drops} drops x {realizations} realizations, MF lowest everywhere: {}", parts.join("; ")))
}

fn criterion_4() -> Outcome {
    let (drops, realizations) = (3, 40);
    let best_mc = |k: usize, betas: &[usize], point: usize| -> (usize, f64) {
        betas
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                (
                    b,
                    median(
                        mc_sum_se(
                            &params(200, k, b),
                            &[Scheme::MZf],
                            drops,
                            realizations,
                            point + i,
                        )
                        .remove(0),
                    ),
                )
            })
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            )
    };
    let best_de = |k: usize, betas: &[usize], point: usize| -> (usize, f64) {
        betas
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, median(de_sum_se(&params(200, k, b), drops, point + i))))
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            )
    };
    // M-ZF needs M > beta K; M-MMSE needs beta K <= S
    let zf50 = best_mc(50, &[1, 3], 20);
    let zf90 = best_mc(90, &[1], 22);
    let mm50 = best_de(50, &[1, 3, 4, 7], 30);
    let mm90 = best_de(90, &[1, 3, 4], 34);
    pass_if(
        zf90.1 < zf50.1 && mm90.1 > mm50.1,
        format!(
            "M=200, best beta: M-ZF K=50 {:.2} (beta={}) -> K=90 {:.2} (beta={}) must drop; M-MMSE K=50 {:.2} (beta={}) -> K=90 {:.2} (beta={}) must rise",
            zf50.1, zf50.0, zf90.1, zf90.0, mm50.1, mm50.0, mm90.1, mm90.0
        ),
    )
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (k, betas) in [(10, vec![1, 3, 4, 7]), (120, vec![1, 3, 4])] {
        let cfg = ExperimentConfig {
            name: format!("best-beta-k{k}"),
            antennas: vec![200],
            users_per_cell: vec![k],
            beta: betas,
            schemes: vec![RowScheme::De],
            n_drops: 5,
            master_seed: MASTER,
            ..Default::default()
        };
        let sub = dir.path().join(format!("k{k}"));
        let out = run_in(&cfg, &sub).unwrap();
        rows.extend(read_rows(&out.results_csv()).unwrap());
    }
    // beta = 7 is not a valid grid point at K = 120 (B > S); select per K
    let pick = |k: usize| {
        let sub: Vec<_> = rows
            .iter()
            .filter(|r| r.users_per_cell == k)
            .cloned()
            .collect();
        best_beta(&sub).unwrap().remove(0)
    };
    let (b10, b120) = (pick(10), pick(120));
    let fmt = |b: &mimo_sim::cli::best_beta::BestBeta| {
        b.per_beta
            .iter()
            .map(|(beta, se)| format!("{beta}:{:.2}", se.unwrap_or(f64::NAN)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    pass_if(
        b10.best_beta == Some(7) && b120.best_beta == Some(1),
        format!(
            "best-beta table (DE, M=200, 5 drops): K=10 -> {:?} (want 7) [{}]; K=120 -> {:?} (want 1) [{}]",
            b10.best_beta.unwrap_or(0),
            fmt(&b10),
            b120.best_beta.unwrap_or(0),
            fmt(&b120)
        ),
    )
}

/// Exponentially correlated covariance `scale * a^|i-j|` with a phase ramp.
fn correlated(m: usize, a: f64, phase: f64, scale: f64) -> Array2<C64> {
    Array2::from_shape_fn((m, m), |(i, j)| {
        let d = i as f64 - j as f64;
        C64::from_polar(scale * a.powf(d.abs()), phase * d)
    })
}

fn criterion_6() -> Outcome {
    let (m, b_len, samples) = (64, 16, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER);
    let r: Vec<Array2<C64>> = (0..b_len)
        .map(|b| {
            correlated(
                m,
                0.2 + 0.05 * b as f64,
                0.3 * b as f64,
                0.5 + 0.25 * b as f64,
            )
        })
        .collect();
    let rho = 0.5;
    let cfg = FixedPointConfig::default();
    let fp = solve_fixed_point(&r, rho, m, &cfg).unwrap();
    let d = &r[3];
    let theta = correlated(m, 0.6, -0.2, 1.0);
    let prime = fixed_point_derivative(&r, theta.view(), &fp).unwrap();
    let (e1, e2) =
        empirical_resolvent_traces(&r, rho, d.view(), theta.view(), samples, &mut rng).unwrap();
    let gap1 = (trace_against(d.view(), fp.t.view()) - e1).abs() / e1;
    let gap2 = (trace_against(d.view(), prime.t_prime.view()) - e2).abs() / e2;

    // scalar fast path vs general path on the same covariances c_b I
    let c: Vec<f64> = (0..b_len).map(|b| 0.3 + 0.1 * b as f64).collect();
    let (sd, st, _) = scalar_fixed_point(&c, rho, m, &cfg).unwrap();
    let eye = |s: f64| Array2::from_diag_elem(m, C64::new(s, 0.0));
    let gen =
        solve_fixed_point(&c.iter().map(|&x| eye(x)).collect::<Vec<_>>(), rho, m, &cfg).unwrap();
    let dual = sd
        .iter()
        .zip(&gen.delta)
        .map(|(a, b)| (a - b).abs() / b)
        .chain(std::iter::once((st - gen.t[[0, 0]].re).abs() / st))
        .fold(0.0, f64::max);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let (g, _, _) = scalar_fixed_point(&[1.0], 1.0, 1, &cfg).unwrap();
    let golden_err = (g[0] - golden).abs();
    pass_if(
        gap1 < 0.02 && gap2 < 0.03 && dual <= 1e-9 && golden_err <= 1e-10,
        format!(
            "RMT oracles at M={m} B={b_len}, {samples} samples: (a) first fixed point gap {:.3}% (< 2%), (b) derivative gap {:.3}% (< 3%), (c) scalar vs general {dual:.1e} (<= 1e-9), (d) golden ratio error {golden_err:.1e} (<= 1e-10)",
            100.0 * gap1,
            100.0 * gap2
        ),
    )
}

fn criterion_7() -> Outcome {
    let sc = Scenario::generate(&params(8, 2, 3), MASTER).unwrap();
    let z = moment_z_scores(&sc, MASTER, 10_000).unwrap();
    let zmax = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let bound = family_z_bound(3.0, z.len());
    let mut col: f64 = 0.0;
    for r in 0..20 {
        col = col.max(collinearity_error(&sc, MASTER + r).unwrap());
    }
    let sum_rule = sum_rule_error(&sc).unwrap();
    pass_if(
        zmax <= bound && col <= 1e-12 && sum_rule <= 1e-12,
        format!(
            "estimation: max |z| {zmax:.2} over {} moment statistics, 1e4 samples (<= {bound:.2}, 3 sigma family-wise); same-pilot 1-|cos|^2 {col:.1e} over 20 realizations (<= 1e-12); sum rule {sum_rule:.1e} (<= 1e-12)",
            z.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, k, beta) in [(32, 2, 3), (50, 4, 7), (120, 10, 4)] {
        let sc = Scenario::generate(&params(m, k, beta), MASTER).unwrap();
        worst = worst.max(zf_leakage(&sc, MASTER, 5).unwrap());
    }
    pass_if(worst <= 1e-9, format!("ZF nulling: max relative leakage {worst:.1e} (<= 1e-9) over 3 scenarios x 5 realizations x 19 BSs"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        name: "determinism".into(),
        antennas: vec![30],
        users_per_cell: vec![3],
        beta: vec![1, 3],
        schemes: vec![
            RowScheme::Mc(Scheme::Mf),
            RowScheme::Mc(Scheme::SMmse),
            RowScheme::Mc(Scheme::MZf),
            RowScheme::Mc(Scheme::MMmse),
            RowScheme::De,
        ],
        n_drops: 3,
        n_realizations: 30,
        master_seed: MASTER,
        workers: Some(1),
        ..Default::default()
    };
    let a = run_in(&cfg, &dir.path().join("a")).unwrap();
    cfg.workers = Some(3);
    let b = run_in(&cfg, &dir.path().join("b")).unwrap();
    let (x, y) = (
        std::fs::read(a.results_csv()).unwrap(),
        std::fs::read(b.results_csv()).unwrap(),
    );
    let (xj, yj) = (
        std::fs::read(a.results_jsonl()).unwrap(),
        std::fs::read(b.results_jsonl()).unwrap(),
    );
    let expected_rows = 2 * 3 * 5;
    pass_if(
        x == y && xj == yj && a.rows == expected_rows,
        format!(
            "determinism: two runs (1 and 3 workers) give byte-identical CSV ({} bytes) and JSON rows; {} rows (want {expected_rows})",
            x.len(),
            a.rows
        ),
    )
}

fn fractional_reuse() -> Outcome {
    let betas_f = [0.0, 0.2, 0.4, 0.6];
    let drops = 10;
    let mut best = Vec::new();
    let mut parts = Vec::new();
    for (i, k) in [10usize, 90].into_iter().enumerate() {
        let mut row = Vec::new();
        for (f, &bf) in betas_f.iter().enumerate() {
            let mut top = f64::NEG_INFINITY;
            for (bi, beta) in [1usize, 3, 4, 7].into_iter().enumerate() {
                let p = SystemParams {
                    beta_f: bf,
                    ..params(200, k, beta)
                };
                if p.validate().is_err() {
                    continue;
                }
                top = top.max(median(de_sum_se(&p, drops, 100 + 100 * i + 10 * f + bi)));
            }
            row.push(top);
        }
        let arg = row
            .iter()
            .enumerate()
            .fold(0, |a, (j, x)| if *x > row[a] { j } else { a });
        best.push(betas_f[arg]);
        parts.push(format!(
            "K={k}: {}",
            betas_f
                .iter()
                .zip(&row)
                .map(|(f, s)| format!("{f}:{s:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    Outcome {
        passed: best[0] == 0.0 && best[1] > 0.0,
        gating: false,
        summary: format!(
            "fractional reuse (qualitative, not gating; DE, M=200, {drops} drops, best beta per beta_f): best beta_f K=10 -> {}, K=90 -> {} [{}]",
            best[0],
            best[1],
            parts.join("; ")
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("beta-f", fractional_reuse),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = match (o.passed, o.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "MISS",
        };
        if !o.passed && o.gating {
            failed += 1;
        }
        println!(
            "{verdict} criterion {id:<4} {}  [{:.1}s]",
            o.summary,
            start.elapsed().as_secs_f64()
        );
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 {
        println!("{failed} gating acceptance criteria failed");
        if strict {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    } else {
        println!("all gating acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
