//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero on any failure not listed in `KNOWN_FAILURES`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use asip_core::coupling::{
    asip_discrepancy, build_z, default_levels, schedule, synthetic_harness, verify_schedule, BlockSet,
};
use asip_core::fit;
use asip_core::grid::BinGrid;
use asip_core::maps::IntervalMap;
use asip_core::martingale::{
    class_size, constants, decomposition_context, martingale_check, pinelis_bound_relaxed, pinelis_h, Constants,
};
use asip_core::observables::{
    builtin, decompose_h, decompose_l2, lil_condition_integral, log_log, variation_norm, BinMeasure, LilIntegral,
    MonotonePiece, Observable, TailFunction,
};
use asip_core::rng::stream;
use asip_core::statistics::{
    birkhoff_ensemble, clt_ks, estimate_variance, ks_normal, lil_statistic, normalization_scan, sigma2, wip_marginals,
    EnsembleConfig, LagRule, NormalizationModel, Sampler, VarianceEstimator,
};
use asip_core::transfer::{
    build_ulam, conditional_deviation, conditional_pair_deviation, gordin_sum, nu_product, phi_coefficients,
    phi_finite_chain, phi_oracle, state_norm, FiniteChain, KernelPowers, MixingOptions, UlamOperator, UlamOptions,
};
use rand::Rng;

/// Criteria that are implemented faithfully but do not hold; see the README.
const KNOWN_FAILURES: &[u32] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn ulam(map: &IntervalMap, grid: BinGrid) -> UlamOperator {
    build_ulam(map, &grid, &UlamOptions::for_map(map)).expect("operator")
}

fn doubling(bins: usize) -> UlamOperator {
    ulam(&IntervalMap::doubling(), BinGrid::uniform(bins).unwrap())
}

fn c1_doubling_transfer() -> Outcome {
    let op = doubling(4096);
    let f = builtin::centered_linear().unwrap();
    let mut kp = KernelPowers::new(&op, &f);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for n in 1..=10 {
        // K(x − 1/2) = (x − 1/2)/2 exactly, so the cell averages of K^n f are 2^{-n}(c_j − 1/2).
        let scale = 0.5f64.powi(n as i32);
        let v = kp.get(n);
        let err = (0..op.bins())
            .map(|j| {
                let exact = scale * (op.grid.center(j) - 0.5);
                op.pi[j] * (v[j] - exact).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err / scale);
        ok &= err <= 1e-2 * scale;
    }
    let g = gordin_sum(&op, &f, 60);
    let target = 2.0 / 12f64.sqrt();
    let rel = (g.partial_sum - target).abs() / target;
    outcome(ok && rel <= 0.01, format!("max err·2^n = {worst:.2e}, gordin {:.8} vs {target:.8}", g.partial_sum))
}

fn cosine_ensemble(op: &UlamOperator) -> asip_core::statistics::TrajectoryEnsemble {
    let f = builtin::cosine(1).unwrap();
    let cfg = EnsembleConfig { extra_checkpoints: vec![1024, 2048, 4096], ..EnsembleConfig::new(4096, 10_000, 2024) };
    birkhoff_ensemble(op, &f, &cfg).unwrap()
}

fn c2_variance() -> Outcome {
    let op = doubling(4096);
    let f = builtin::cosine(1).unwrap();
    // ν(cos²(2πx)) = 1/2 and cos(2πx)·cos(2π·2^k x) integrates to 0 for k ≥ 1.
    let exact = 0.5;
    let est = sigma2(&op, &f, LagRule::Adaptive { threshold: 1e-12, max_lag: 500 }).unwrap();
    let ens = cosine_ensemble(&op);
    let v = estimate_variance(&ens.finals(), VarianceEstimator::Sample) / ens.n as f64;
    let pass = (est.sigma2_hat - exact).abs() <= 0.02 && (v - exact).abs() <= 0.03;
    outcome(pass, format!("operator σ² = {:.6}, ensemble Var/n = {v:.4}", est.sigma2_hat))
}

fn c3_clt_wip() -> Outcome {
    let op = doubling(4096);
    let f = builtin::cosine(1).unwrap();
    let s2 = sigma2(&op, &f, LagRule::Adaptive { threshold: 1e-12, max_lag: 500 }).unwrap().sigma2_hat;
    let ens = cosine_ensemble(&op);
    let clt = clt_ks(&ens, s2.sqrt(), 0.02).unwrap();
    let wip = wip_marginals(&ens, s2.sqrt(), &[0.25, 0.5, 1.0]).unwrap();
    let pass = clt.pass && wip.cov_error <= 0.05 * s2;
    outcome(pass, format!("KS = {:.4}, WIP cov error = {:.4} (limit {:.4})", clt.ks_distance, wip.cov_error, 0.05 * s2))
}

fn c4_bounded_lil() -> Outcome {
    let op = doubling(4096);
    let f = builtin::cosine(1).unwrap();
    let m = nu_product(&op, &f, &f).sqrt();
    let n = 100_000;
    let prof = phi_coefficients(&op, &MixingOptions::default()).unwrap();
    let (c, _) = constants(&prof, m, n as u64).unwrap();
    let a = 3.0 * c.c * m;
    let ens = birkhoff_ensemble(&op, &f, &EnsembleConfig::new(n, 1000, 77)).unwrap();
    let stat = lil_statistic(&ens, &[a, 1.0]).unwrap();
    let main = &stat.series[0];
    let unit = &stat.series[1];
    let non_increasing = |t: &[(usize, f64)]| t.windows(2).all(|w| w[1].1 <= w[0].1);
    let strictly = unit.terms.windows(2).all(|w| w[1].1 < w[0].1);
    let pass = main.exceedance_rate <= 0.01 && non_increasing(&main.terms) && strictly;
    outcome(
        pass,
        format!(
            "threshold 3CM = {a:.3} (C = {:.3}), exceedance {:.4}, A=1 terms strictly decreasing = {strictly}",
            c.c, main.exceedance_rate
        ),
    )
}

fn c5_normalization() -> Outcome {
    let map = IntervalMap::lsv(0.25).unwrap();
    let op = ulam(&map, BinGrid::geometric_near_zero(8192, 1e-8).unwrap());
    let ns: Vec<usize> = (10..=16).map(|e| 1 << e).collect();
    let mut detail = Vec::new();
    let mut pass = true;
    for (a, want) in [(0.15, NormalizationModel::Linear), (0.25, NormalizationModel::NLogN)] {
        let f = builtin::power_law(a, 0.0).unwrap();
        let s = normalization_scan(&op, &f, &ns, 2000, 42, Sampler::Auto, VarianceEstimator::Sample).unwrap();
        pass &= s.model == want && (want == NormalizationModel::Linear || s.residual_ratio >= 1.5);
        detail.push(format!("a={a}: {:?} (ratio {:.2}, slope {:.3})", s.model, s.residual_ratio, s.log_slope));
    }
    outcome(pass, detail.join("; "))
}

fn c6_tail_condition() -> Outcome {
    // γ = 1/4: exponent 2/3, ∫_0^1 x dx + ∫_1^∞ x^{1 − 2q/3} dx = 1/2 + 1/(2q/3 − 2).
    let closed = 0.5 + 1.0 / (2.0 * 6.0 / 3.0 - 2.0);
    let six = lil_condition_integral(&TailFunction::PowerLaw { q: 6.0 }, 0.25);
    let three = lil_condition_integral(&TailFunction::PowerLaw { q: 3.0 }, 0.25);
    let ok6 = matches!(six, LilIntegral::Finite { value, .. } if (value - closed).abs() <= 1e-6);
    let ok3 = matches!(three, LilIntegral::Divergent);
    outcome(ok6 && ok3, format!("q=6 → {six:?} (closed form {closed}), q=3 → {three:?}"))
}

/// Tanh–sinh quadrature on `[a, b]`; abscissae are placed by their distance
/// to the nearer endpoint so integrable endpoint singularities are resolved.
fn tanh_sinh(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let h = 1.0 / 64.0;
    let half = 0.5 * (b - a);
    let mut total = 0.0;
    for k in -256i32..=256 {
        let t = k as f64 * h;
        let u = std::f64::consts::FRAC_PI_2 * t.sinh();
        let w = std::f64::consts::FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
        let gap = (b - a) / ((2.0 * u.abs()).exp() + 1.0);
        let x = if k < 0 { a + gap } else { b - gap };
        if x <= a || x >= b {
            continue;
        }
        let v = f(x);
        if v.is_finite() {
            total += h * half * w * v;
        }
    }
    total
}

/// `∫ g² 1{|g| ≥ k} dx` for a constant-sign monotone piece: the set is an
/// interval at one end of the support, located by bisection.
fn tail_sq_oracle(p: &MonotonePiece, k: f64) -> f64 {
    let (lo, hi) = (p.support_lo, p.support_hi);
    let big = |x: f64| p.eval(x).abs() >= k;
    // Neighbouring doubles of the endpoints; bisection runs over bit patterns.
    let inner_lo = f64::from_bits(lo.to_bits() + 1);
    let inner_hi = f64::from_bits(hi.to_bits() - 1);
    let (left_big, right_big) = (big(inner_lo) || p.eval(inner_lo).is_infinite(), big(inner_hi));
    let sq = |x: f64| p.eval(x).powi(2);
    let crossing = |inside_left: bool| {
        let (mut a, mut b) = (inner_lo.to_bits(), inner_hi.to_bits());
        while b - a > 1 {
            let m = a + (b - a) / 2;
            if big(f64::from_bits(m)) == inside_left {
                a = m
            } else {
                b = m
            }
        }
        f64::from_bits(a)
    };
    match (left_big, right_big) {
        (true, true) => tanh_sinh(&sq, lo, hi),
        (false, false) => 0.0,
        (true, false) => tanh_sinh(&sq, lo, crossing(true)),
        (false, true) => tanh_sinh(&sq, crossing(false), hi),
    }
}

fn grid_scan_k(p: &MonotonePiece, eps: f64) -> (f64, f64) {
    let mut top = 1.0;
    while tail_sq_oracle(p, top) > eps * eps {
        top *= 2.0;
    }
    let steps = 2000;
    let dk = top / steps as f64;
    let k = (0..=steps).map(|i| i as f64 * dk).find(|&k| tail_sq_oracle(p, k) <= eps * eps).unwrap_or(top);
    (k, dk)
}

fn builtins() -> Vec<Observable> {
    vec![
        builtin::cosine(1).unwrap(),
        builtin::cosine(2).unwrap(),
        builtin::power_law(0.25, 0.0).unwrap(),
        builtin::power_law(0.45, 0.0).unwrap(),
        builtin::power_law(0.3, 0.1).unwrap(),
        builtin::log_damped_power(0.4, 1.0).unwrap(),
        builtin::indicator(0.2, 0.7).unwrap(),
        builtin::centered_linear().unwrap(),
        builtin::constant(2.0).unwrap(),
        builtin::table(vec![0.0, 0.5, 1.0], vec![-1.0, 0.2, 3.0]).unwrap(),
    ]
}

fn c7_decomposition() -> Outcome {
    let lebesgue = BinMeasure { edges: &[0.0, 1.0], density: &[1.0] };
    let mut worst_rec: f64 = 0.0;
    let mut var_ok = true;
    let mut k_ok = true;
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for f in builtins() {
        let mut xs: Vec<f64> = (1..=4000).map(|i| i as f64 / 4000.0).collect();
        for b in f.breakpoints() {
            xs.extend([b, b - 1e-12, b + 1e-12].into_iter().filter(|x| *x > 0.0 && *x <= 1.0));
        }
        for m in [1.0, 2.0, 5.0, 10.0, 100.0] {
            let (bv, rem) = decompose_h(&f, m).unwrap();
            for &x in &xs {
                let v = f.eval(x);
                if v.is_finite() {
                    worst_rec = worst_rec.max((v - bv.eval(x) - rem.eval(x)).abs());
                }
            }
            var_ok &= variation_norm(&bv).unwrap() <= 3.0 * m + 1e-9;
        }
        for eps in [0.1, 0.3] {
            let split = decompose_l2(&f, eps, &lebesgue).unwrap();
            for (t, &k) in f.terms.iter().zip(&split.thresholds) {
                if k == 0.0 {
                    continue;
                }
                let (ko, dk) = grid_scan_k(&t.piece, eps);
                if (k - ko).abs() > dk {
                    k_ok = false;
                    mismatches.push(format!("{} eps={eps}: K={k} grid={ko}±{dk}", f.name));
                }
                checked += 1;
            }
        }
    }
    outcome(
        worst_rec <= 1e-12 && var_ok && k_ok,
        format!(
            "max reconstruction error {worst_rec:e}, variation bounds {var_ok}, {checked} K(g) checks agree = {k_ok}{}",
            mismatches.iter().map(|m| format!("; {m}")).collect::<String>()
        ),
    )
}

fn random_chain(seed: u64, states: usize, sparse: bool) -> FiniteChain {
    let mut rng = stream(seed, 0);
    let r: Vec<Vec<f64>> = (0..states)
        .map(|i| {
            let mut row: Vec<f64> = (0..states)
                .map(|j| if sparse && j != i && rng.random::<f64>() < 0.4 { 0.0 } else { rng.random::<f64>() + 0.01 })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect();
    FiniteChain::with_stationary(r).unwrap()
}

fn monotone_functions(states: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for a in 0..states {
        for b in a..states {
            for shape in 0..4 {
                let f: Vec<f64> = (0..states)
                    .map(|s| {
                        if s < a || s > b {
                            return 0.0;
                        }
                        let r = (s - a + 1) as f64;
                        match shape {
                            0 => r,
                            1 => -r * r,
                            2 => 1.0 / r,
                            _ => r - 0.5 * (b - a + 2) as f64,
                        }
                    })
                    .collect();
                out.push(f);
            }
        }
    }
    out
}

fn c8_phi_oracle() -> Outcome {
    let (kmax, horizon, gap) = (10, 14, 4);
    let opts = MixingOptions { kmax, horizon: Some(horizon), pair_gap: Some(gap), ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut ineq_ok = true;
    let mut checks = 0usize;
    let mut chains: Vec<FiniteChain> = Vec::new();
    for (i, states) in [2, 3, 4, 5, 6, 6, 3, 5].into_iter().enumerate() {
        chains.push(random_chain(900 + i as u64, states, i % 2 == 1));
    }
    chains.push(
        FiniteChain::with_stationary(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.5, 0.0, 0.5]]).unwrap(),
    );
    for c in &chains {
        let prof = phi_finite_chain(c, &opts);
        let (p1, p2) = phi_oracle(c, kmax, horizon, gap);
        for k in 0..kmax {
            worst = worst.max((prof.phi1[k] - p1[k]).abs()).max((prof.phi2[k] - p2[k]).abs());
        }
        let fs = monotone_functions(c.len());
        for k in 1..=kmax {
            for f in &fs {
                for p in [2.0, 4.0] {
                    let lhs = conditional_deviation(c, f, k, p);
                    let rhs = 2.0 * (2.0 * prof.phi1[k - 1]).powf((p - 1.0) / p) * state_norm(c, f, p);
                    ineq_ok &= lhs <= rhs * (1.0 + 1e-12) + 1e-14;
                    checks += 1;
                }
            }
            for f in fs.iter().step_by(3) {
                for g in fs.iter().step_by(5) {
                    for j in k..=(k + 2).min(horizon) {
                        for i in j..=(j + gap).min(horizon) {
                            let lhs = conditional_pair_deviation(c, f, g, i, j, 4.0);
                            let rhs =
                                8.0 * (4.0 * prof.phi2[k - 1]).sqrt() * state_norm(c, f, 4.0) * state_norm(c, g, 4.0);
                            ineq_ok &= lhs <= rhs * (1.0 + 1e-12) + 1e-14;
                            checks += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-14 && ineq_ok,
        format!(
            "{} chains, max |fast − enumeration| = {worst:e}, {checks} inequality checks hold = {ineq_ok}",
            chains.len()
        ),
    )
}

fn c9_martingale() -> Outcome {
    let f = builtin::centered_linear().unwrap();
    let run = |bins: usize| {
        let op = doubling(bins);
        let m = class_size(&op, &f);
        let prof = phi_coefficients(&op, &MixingOptions::default()).unwrap();
        let ctx = decomposition_context(&op, &f, 1000, m, Some(&prof)).unwrap();
        martingale_check(&op, &ctx, 64, 5150, 32, 30)
    };
    let a = run(4096);
    let b = run(8192);
    let ratio = a.mean_residual / b.mean_residual;
    let mut ident: f64 = 0.0;
    for s in [0.5, 1.0, 2.0, 5.0, 10.0] {
        for m in [0.1, 1.0, 10.0, 100.0] {
            for n in [100u64, 10_000, 1_000_000, 100_000_000, 10_000_000_000] {
                let c = Constants::from_sum(s, m, n).unwrap();
                let (e1, e2) = c.identity_errors();
                ident = ident.max(e1).max(e2);
            }
        }
    }
    let pass = a.mean_residual <= 1e-2 && (1.4..=2.6).contains(&ratio) && a.conditional_means_ok && ident <= 1e-10;
    outcome(
        pass,
        format!(
            "mean residual {:.2e} (max {:.2e}) at B=4096, {:.2e} at B=8192, ratio {ratio:.2}; conditional means ok = {}; identities {ident:e}",
            a.mean_residual, a.max_residual, b.mean_residual, a.conditional_means_ok
        ),
    )
}

fn c10_pinelis() -> Outcome {
    let mut h_ok = true;
    for i in 0..10_000 {
        let u = 10f64.powf(-6.0 + 12.0 * i as f64 / 9999.0);
        h_ok &= pinelis_h(u) >= u * u.ln_1p() / 2.0;
    }
    let mut worst: f64 = 0.0;
    for (s, m, n) in [(1.0, 1.0, 1_000u64), (3.27, 0.7, 100_000), (10.0, 5.0, 1_000_000_000)] {
        let c = Constants::from_sum(s, m, n).unwrap();
        let v = pinelis_bound_relaxed(c.x_n, c.y_n, c.c_n);
        let target = 2.0 * (-log_log(n as f64) * 3f64.ln()).exp();
        worst = worst.max((v - target).abs());
    }
    outcome(
        h_ok && worst <= 1e-12,
        format!("h(u) ≥ u·ln(1+u)/2 on grid = {h_ok}, max deviation at (x_n, y_n, c_n) {worst:e}"),
    )
}

fn c11_coupling() -> Outcome {
    let (eps, sig) = default_levels(5, 1.0);
    let sched = schedule(&eps, &BlockSet::PowersOfTwo, 2.0, 16).unwrap();
    let reverified = verify_schedule(&eps, &sched.a);
    let input = synthetic_harness(1, &eps, &sig, 1.0, 100_000).unwrap();
    let z = build_z(&input, &sched, 1).z;
    let ks = ks_normal(&z);
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let num: f64 = z.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    let den: f64 = z.iter().map(|v| (v - mean).powi(2)).sum();
    let lag1 = num / den;
    let ns = [10_000, 100_000, 1_000_000];
    let mut per_n: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for seed in 0..100u64 {
        let inp = synthetic_harness(1000 + seed, &eps, &sig, 1.0, 1_000_000).unwrap();
        let zz = build_z(&inp, &sched, 1000 + seed).z;
        let d = asip_discrepancy(&inp.x, &zz, &ns).unwrap();
        for (i, p) in d.points.iter().enumerate() {
            per_n[i].push(p.1);
        }
    }
    let med: Vec<f64> = per_n.iter_mut().map(|v| fit::median(v)).collect();
    let decreasing = med.windows(2).all(|w| w[1] < w[0]);
    let pass = sched.verified && reverified && ks <= 0.02 && lag1.abs() <= 3.0 / (z.len() as f64).sqrt() && decreasing;
    outcome(
        pass,
        format!(
            "schedule {:?} verified; KS(Z) = {ks:.4}, lag-1 = {lag1:.4}; median D_n = {:.2e}, {:.2e}, {:.2e}",
            sched.a, med[0], med[1], med[2]
        ),
    )
}

fn scratch_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("asip-acceptance-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn asip(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_asip")).args(args).output().expect("run asip").status.code().unwrap_or(-1)
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let list = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    let (la, lb) = (list(a), list(b));
    la == lb && la.iter().all(|n| std::fs::read(a.join(n)).unwrap() == std::fs::read(b.join(n)).unwrap())
}

fn c12_reproducibility() -> Outcome {
    let dir = scratch_dir("repro");
    let cfg = dir.join("report.toml");
    std::fs::write(
        &cfg,
        "[map]\nkind = \"doubling\"\n\n[observable]\nkind = \"cosine\"\nk = 1\n\n[run]\nseed = 11\nn = 1024\ntrajectories = 2000\n\n\
         [analysis]\nscan_ns = [256, 512, 1024, 2048, 4096]\nscan_trajectories = 400\ncoupling_ns = [1000, 10000]\ncoupling_runs = 8\n\
         martingale_n = 500\nremainder_x = [1.0, 4.0]\n",
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    let mut codes = vec![asip(&["full-report", &s(&cfg), "--threads", "1", "--out", &s(&a)])];
    codes.push(asip(&["full-report", &s(&cfg), "--threads", "4", "--out", &s(&b)]));
    codes.push(asip(&["run", &s(&a.join("manifest.json")), "--threads", "2", "--out", &s(&c)]));
    let ok = codes.iter().all(|&c| c == 0) && same_tree(&a, &b) && same_tree(&a, &c);
    let files = std::fs::read_dir(&a).map(|d| d.count()).unwrap_or(0);
    let _ = std::fs::remove_dir_all(&dir);
    outcome(
        ok,
        format!("exit codes {codes:?}; {files} files identical across --threads 1/4 and manifest re-run = {ok}"),
    )
}

type Criterion = (u32, &'static str, f64, fn() -> Outcome);

fn main() {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 12] = [
        (1, "doubling transfer exactness", 5.0, c1_doubling_transfer),
        (2, "variance series", 60.0, c2_variance),
        (3, "CLT and WIP marginals", 120.0, c3_clt_wip),
        (4, "bounded LIL", 300.0, c4_bounded_lil),
        (5, "boundary vs interior normalization", 900.0, c5_normalization),
        (6, "tail-condition integral", 1.0, c6_tail_condition),
        (7, "decomposition", 10.0, c7_decomposition),
        (8, "φ-coefficient oracle and covariance bounds", 30.0, c8_phi_oracle),
        (9, "martingale decomposition", 120.0, c9_martingale),
        (10, "Pinelis bound", 1.0, c10_pinelis),
        (11, "diagonal coupling", 600.0, c11_coupling),
        (12, "reproducibility", 600.0, c12_reproducibility),
    ];
    let mut unexpected = Vec::new();
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let secs = t.elapsed().as_secs_f64();
        let pass = o.pass && secs < limit;
        let status = match (pass, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!("criterion {id:>2} {status}: {name}: {} [{secs:.1} s / {limit} s]", o.detail);
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
