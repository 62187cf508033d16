use asip_core::coupling::{asip_discrepancy, build_z, default_levels, schedule, synthetic_harness, BlockSet, Schedule};
use asip_core::fit;
use asip_core::maps::IntervalMap;
use asip_core::martingale::{
    class_size, constants, ddm_condition, decomposition_context, martingale_check, remainder_bound_check,
};
use asip_core::observables::{decompose_h, decompose_l2, variation_norm, BinMeasure, Observable};
use asip_core::rng::derive_seed;
use asip_core::statistics::{
    birkhoff_ensemble, clt_ks, estimate_variance, ks_normal, lil_statistic, normalization_scan, sigma2, wip_marginals,
    EnsembleConfig, TrajectoryEnsemble, VarianceEstimate, VarianceEstimator,
};
use asip_core::transfer::{
    build_ulam, gordin_sum, phi_coefficients, KernelPowers, MixingOptions, MixingProfile, UlamOperator, UlamOptions,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{expand, ExperimentConfig, Format, Manifest, Operation, MANIFEST_SCHEMA};
use crate::output::{Artifacts, Table};
use crate::RunError;

struct State<'a> {
    cfg: &'a ExperimentConfig,
    format: Format,
    map: Option<IntervalMap>,
    f: Option<Observable>,
    op: Option<UlamOperator>,
    variance: Option<VarianceEstimate>,
    profile: Option<MixingProfile>,
    ensemble: Option<TrajectoryEnsemble>,
    out: Artifacts,
}

fn missing(what: &str) -> RunError {
    RunError::Config(format!("runner: {what} is not available for this operation"))
}

impl State<'_> {
    fn op(&self) -> Result<&UlamOperator, RunError> {
        self.op.as_ref().ok_or_else(|| missing("the transfer operator"))
    }

    fn f(&self) -> Result<&Observable, RunError> {
        self.f.as_ref().ok_or_else(|| missing("the observable"))
    }

    fn class_m(&self) -> Result<f64, RunError> {
        Ok(match self.cfg.analysis.class_m {
            Some(m) => m,
            None => class_size(self.op()?, self.f()?),
        })
    }

    fn ensemble(&mut self) -> Result<&TrajectoryEnsemble, RunError> {
        if self.ensemble.is_none() {
            let r = &self.cfg.run;
            let mut extra = r.checkpoints.clone();
            extra.extend(self.cfg.analysis.wip_times.iter().map(|t| (r.n as f64 * t).floor() as usize));
            let cfg = EnsembleConfig {
                init: self.cfg.init(),
                sampler: r.sampler,
                extra_checkpoints: extra,
                ..EnsembleConfig::new(r.n, r.trajectories, r.seed)
            };
            let ens = birkhoff_ensemble(self.op()?, self.f()?, &cfg)?;
            let mut t = Table::new(&["k", "mean", "variance", "variance_over_k", "mean_running_max"]);
            let rr = ens.r as f64;
            for (c, &k) in ens.checkpoints.iter().enumerate() {
                let col: Vec<f64> = ens.sums.iter().map(|s| s[c]).collect();
                let mean = col.iter().sum::<f64>() / rr;
                let var = estimate_variance(&col, VarianceEstimator::Sample);
                let mx = ens.running_max.iter().map(|m| m[c]).sum::<f64>() / rr;
                t.push(vec![k.into(), mean.into(), var.into(), (var / k as f64).into(), mx.into()]);
            }
            self.out.table("ensemble", &t, self.format);
            self.ensemble = Some(ens);
        }
        Ok(self.ensemble.as_ref().expect("ensemble"))
    }

    fn sigma(&self) -> Result<f64, RunError> {
        let v = self.variance.as_ref().ok_or_else(|| missing("the variance estimate"))?;
        Ok(v.sigma2_hat.max(0.0).sqrt())
    }

    fn run(&mut self, op: Operation) -> Result<(), RunError> {
        match op {
            Operation::MapValidate => self.map_validate(),
            Operation::Density => self.density(),
            Operation::Correlations => self.correlations(),
            Operation::Gordin => self.gordin(),
            Operation::Variance => self.variance(),
            Operation::Mixing => self.mixing(),
            Operation::Decompose => self.decompose(),
            Operation::Clt => self.clt(),
            Operation::Wip => self.wip(),
            Operation::Lil => self.lil(),
            Operation::Martingale => self.martingale(),
            Operation::Ddm => self.ddm(),
            Operation::NormalizationScan => self.scan(),
            Operation::CouplingDemo => self.coupling(),
        }
    }

    fn map_validate(&mut self) -> Result<(), RunError> {
        let map = self.map.as_ref().ok_or_else(|| missing("the map"))?;
        let report = map.validate(self.cfg.analysis.validate_grid)?;
        self.out.note(format!("map-validate: {} ok={} issues={}", report.map, report.ok(), report.issues.len()));
        self.out.json("validation.json", &json!({ "ok": report.ok(), "report": report }))
    }

    fn density(&mut self) -> Result<(), RunError> {
        let map = self.map.as_ref().ok_or_else(|| missing("the map"))?;
        let grid = self.cfg.build_grid(map)?;
        let g = &self.cfg.grid;
        let opts =
            UlamOptions { tol: g.tol, max_iter: g.max_iter, exact_depth: g.exact_depth, ..UlamOptions::for_map(map) };
        let op = build_ulam(map, &grid, &opts)?;
        let mut t = Table::new(&["bin", "left", "right", "density", "mass"]);
        for i in 0..op.bins() {
            t.push(vec![i.into(), grid.edges[i].into(), grid.edges[i + 1].into(), op.h[i].into(), op.pi[i].into()]);
        }
        self.out.table("density", &t, self.format);
        self.out.json(
            "density.json",
            &json!({
                "bins": op.bins(),
                "iterations": op.iterations,
                "residual": op.residual,
                "stationarity_residual": op.stationarity_residual(),
                "exact_depth": op.exact_depth,
                "unsupported_bins": op.unsupported.len(),
            }),
        )?;
        self.out.note(format!(
            "density: {} bins, {} iterations, residual {:e}, exact depth {}",
            op.bins(),
            op.iterations,
            op.residual,
            op.exact_depth
        ));
        self.op = Some(op);
        Ok(())
    }

    fn correlations(&mut self) -> Result<(), RunError> {
        let (op, f) = (self.op()?, self.f()?);
        let lags = self.cfg.analysis.correlation_lags;
        let nf = asip_core::transfer::nu_integral(op, f);
        let gbar = asip_core::transfer::cell_averages(op, f);
        let c0 = asip_core::transfer::nu_product(op, f, f) - nf * nf;
        let mut kp = KernelPowers::new(op, f);
        let mut t = Table::new(&["lag", "correlation"]);
        t.push(vec![0usize.into(), c0.into()]);
        for k in 1..=lags {
            let v = asip_core::transfer::correlation_from(op, kp.get(k), nf, &gbar);
            t.push(vec![k.into(), v.into()]);
        }
        self.out.table("correlations", &t, self.format);
        self.out.note(format!("correlations: lags 0..={lags}, variance {c0:.6e}"));
        Ok(())
    }

    fn gordin(&mut self) -> Result<(), RunError> {
        let rep = gordin_sum(self.op()?, self.f()?, self.cfg.analysis.gordin_lags);
        let mut t = Table::new(&["n", "l2_norm"]);
        for (n, v) in rep.terms.iter().enumerate() {
            t.push(vec![n.into(), (*v).into()]);
        }
        self.out.table("gordin", &t, self.format);
        self.out.note(format!("gordin: partial sum {:.8}, tail estimate {:e}", rep.partial_sum, rep.tail_estimate));
        self.out.json("gordin.json", &rep)
    }

    fn variance(&mut self) -> Result<(), RunError> {
        let est = sigma2(self.op()?, self.f()?, self.cfg.lag_rule())?;
        let mut t = Table::new(&["lag", "correlation", "partial_sigma2"]);
        let mut acc = 0.0;
        for (k, &c) in est.correlations.iter().enumerate() {
            acc += if k == 0 { c } else { 2.0 * c };
            t.push(vec![k.into(), c.into(), acc.into()]);
        }
        self.out.table("variance", &t, self.format);
        self.out.note(format!(
            "variance: sigma2 = {:.8} ± {:.2e} over {} lags",
            est.sigma2_hat, est.standard_error, est.lags_used
        ));
        self.out.json("variance.json", &est)?;
        self.variance = Some(est);
        Ok(())
    }

    fn mixing(&mut self) -> Result<(), RunError> {
        let a = &self.cfg.analysis;
        let opts = MixingOptions {
            kmax: a.kmax,
            horizon: a.horizon,
            phi1_bins: a.phi1_bins,
            pair_bins: a.pair_bins,
            pair_gap: a.pair_gap,
            prefer: None,
        };
        let prof = phi_coefficients(self.op()?, &opts)?;
        let model = format!("{:?}", prof.decay_fit.model).to_lowercase();
        let param = prof.decay_fit.fitted_param();
        let mut t = Table::new(&["lag", "phi1", "phi2_lower", "model", "fitted_param"]);
        t.push(vec![0usize.into(), prof.phi1_zero.into(), f64::NAN.into(), model.clone().into(), param.into()]);
        for k in 0..prof.phi1.len() {
            t.push(vec![(k + 1).into(), prof.phi1[k].into(), prof.phi2[k].into(), model.clone().into(), param.into()]);
        }
        self.out.table("mixing", &t, self.format);
        let s = prof.sum_sqrt_phi1();
        self.out.note(format!(
            "mixing: {} fit, param {:.4}, sum sqrt(phi1) = {}",
            model,
            param,
            match &s {
                Ok((v, _)) => format!("{v:.6}"),
                Err(e) => e.to_string(),
            }
        ));
        self.out.json(
            "mixing.json",
            &json!({
                "profile": prof,
                "sum_sqrt_phi1": s.as_ref().ok().map(|v| v.0),
                "sum_error": s.as_ref().err().map(|e| e.to_string()),
            }),
        )?;
        self.profile = Some(prof);
        Ok(())
    }

    fn decompose(&mut self) -> Result<(), RunError> {
        let (op, f) = (self.op()?, self.f()?);
        let mut xs: Vec<f64> = (1..=2000).map(|i| i as f64 / 2000.0).collect();
        for b in f.breakpoints() {
            xs.extend([b - 1e-9, b + 1e-9].into_iter().filter(|x| *x > 0.0 && *x <= 1.0));
        }
        let mut t = Table::new(&["m", "reconstruction_error", "bv_variation", "bound_3m", "within_bound"]);
        let mut all_ok = true;
        for &m in &self.cfg.analysis.decompose_m {
            let (bv, rem) = decompose_h(f, m)?;
            let err = xs
                .iter()
                .filter(|&&x| f.eval(x).is_finite())
                .map(|&x| (f.eval(x) - bv.eval(x) - rem.eval(x)).abs())
                .fold(0.0, f64::max);
            let var = variation_norm(&bv)?;
            let ok = var <= 3.0 * m + 1e-9;
            all_ok &= ok;
            t.push(vec![m.into(), err.into(), var.into(), (3.0 * m).into(), ok.into()]);
        }
        let mu = BinMeasure { edges: &op.grid.edges, density: &op.h };
        let mut l2 = Table::new(&["eps", "cap", "remainder_m", "degenerate"]);
        for &eps in &self.cfg.analysis.l2_eps {
            let s = decompose_l2(f, eps, &mu)?;
            l2.push(vec![eps.into(), s.cap.into(), s.remainder_m.into(), s.degenerate.into()]);
        }
        self.out.table("decompose", &t, self.format);
        self.out.table("decompose_l2", &l2, self.format);
        self.out.note(format!("decompose: variation bounds hold = {all_ok}"));
        Ok(())
    }

    fn clt(&mut self) -> Result<(), RunError> {
        let sigma = self.sigma()?;
        let tol = self.cfg.analysis.ks_tolerance;
        let ens = self.ensemble()?;
        let res = clt_ks(ens, sigma, tol)?;
        let doc = json!({
            "n": ens.n,
            "trajectories": ens.r,
            "seed": ens.seed,
            "sampler": ens.sampler,
            "sigma": sigma,
            "ks_distance": res.ks_distance,
            "tolerance": res.tolerance,
            "pass": res.pass,
        });
        self.out.note(format!("clt: KS = {:.5} (tolerance {tol}), pass = {}", res.ks_distance, res.pass));
        self.out.json("clt.json", &doc)
    }

    fn wip(&mut self) -> Result<(), RunError> {
        let sigma = self.sigma()?;
        let times = self.cfg.analysis.wip_times.clone();
        let res = wip_marginals(self.ensemble()?, sigma, &times)?;
        let rel = res.cov_error / (sigma * sigma);
        self.out.note(format!("wip: covariance error {:.5} ({:.4} of sigma2)", res.cov_error, rel));
        self.out.json("wip.json", &json!({ "sigma2": sigma * sigma, "relative_error": rel, "result": res }))
    }

    fn lil(&mut self) -> Result<(), RunError> {
        let m = self.class_m()?;
        let n = self.cfg.run.n as u64;
        let prof = self.profile.as_ref().ok_or_else(|| missing("the mixing profile"))?;
        let (c, _) = constants(prof, m, n)?;
        let mut thresholds = vec![self.cfg.analysis.lil_multiplier * c.c * m];
        thresholds.extend(self.cfg.analysis.lil_thresholds.iter().copied());
        let stat = lil_statistic(self.ensemble()?, &thresholds)?;
        let mut t = Table::new(&["threshold", "checkpoint", "term", "partial_sum"]);
        for s in &stat.series {
            for ((k, term), ps) in s.terms.iter().zip(&s.partial_sums) {
                t.push(vec![s.threshold.into(), (*k).into(), (*term).into(), (*ps).into()]);
            }
        }
        self.out.table("lil_series", &t, self.format);
        let rates: Vec<(f64, f64)> = stat.series.iter().map(|s| (s.threshold, s.exceedance_rate)).collect();
        self.out.note(format!(
            "lil: threshold {:.4} (C = {:.4}, M = {:.4}), exceedance rate {}",
            thresholds[0], c.c, m, rates[0].1
        ));
        self.out.json("lil.json", &json!({ "constants": c, "m": m, "quantiles": stat.quantiles, "exceedance": rates }))
    }

    fn martingale(&mut self) -> Result<(), RunError> {
        let m = self.class_m()?;
        let a = &self.cfg.analysis;
        let n = a.martingale_n.unwrap_or(self.cfg.run.n) as u64;
        let seed = derive_seed(self.cfg.run.seed, 0x4D41);
        let (op, f) = (self.op()?, self.f()?);
        let ctx = decomposition_context(op, f, n, m, self.profile.as_ref())?;
        let check = martingale_check(op, &ctx, a.martingale_paths, seed, a.martingale_groups, a.min_visits);
        let remainder = remainder_bound_check(op, &ctx, &a.remainder_x, a.martingale_paths, seed);
        let mut t = Table::new(&["path", "identity_residual"]);
        for (i, r) in check.residuals.iter().enumerate() {
            t.push(vec![i.into(), (*r).into()]);
        }
        self.out.table("martingale", &t, self.format);
        let mut g = Table::new(&["group", "visits", "mean", "standard_error"]);
        for gm in &check.groups {
            g.push(vec![gm.group.into(), gm.visits.into(), gm.mean.into(), gm.standard_error.into()]);
        }
        self.out.table("martingale_groups", &g, self.format);
        self.out.note(format!(
            "martingale: mean identity residual {:.3e} (max {:.3e}), conditional means ok = {}",
            check.mean_residual, check.max_residual, check.conditional_means_ok
        ));
        #[derive(Serialize)]
        struct Doc<'a> {
            n: u64,
            m: f64,
            level: f64,
            paths: usize,
            mean_residual: f64,
            max_residual: f64,
            conditional_means_ok: bool,
            coboundary_certified: bool,
            coboundary_sup: f64,
            sup_bound: Option<f64>,
            constants: Option<asip_core::martingale::Constants>,
            remainder: &'a [asip_core::martingale::RemainderBound],
            warnings: &'a [String],
        }
        let doc = Doc {
            n,
            m,
            level: ctx.level,
            paths: check.paths,
            mean_residual: check.mean_residual,
            max_residual: check.max_residual,
            conditional_means_ok: check.conditional_means_ok,
            coboundary_certified: ctx.coboundary.certified,
            coboundary_sup: ctx.coboundary.sup_norm_h,
            sup_bound: ctx.sup_bound,
            constants: ctx.constants,
            remainder: &remainder,
            warnings: &ctx.coboundary.warnings,
        };
        self.out.json("martingale.json", &doc)
    }

    fn ddm(&mut self) -> Result<(), RunError> {
        let prof = self.profile.as_ref().ok_or_else(|| missing("the mixing profile"))?;
        let rep = ddm_condition(&prof.phi2, Some(&prof.phi1));
        let mut t = Table::new(&["lag", "phi2_lower", "partial_sum"]);
        for (k, (p, s)) in prof.phi2.iter().zip(&rep.partial_sums).enumerate() {
            t.push(vec![(k + 1).into(), (*p).into(), (*s).into()]);
        }
        self.out.table("ddm", &t, self.format);
        self.out.note(format!("ddm: verdict {:?} ({})", rep.verdict, rep.driven_by));
        self.out.json("ddm.json", &rep)
    }

    fn scan(&mut self) -> Result<(), RunError> {
        let a = &self.cfg.analysis;
        let scan = normalization_scan(
            self.op()?,
            self.f()?,
            &a.scan_ns,
            a.scan_trajectories,
            self.cfg.run.seed,
            self.cfg.run.sampler,
            a.scan_estimator,
        )?;
        let mut t = Table::new(&["n", "variance_over_n"]);
        for (n, v) in scan.ns.iter().zip(&scan.var_over_n) {
            t.push(vec![(*n).into(), (*v).into()]);
        }
        self.out.table("normalization", &t, self.format);
        self.out.note(format!(
            "normalization-scan: prefers {:?} (residual ratio {:.3}, slope {:.4})",
            scan.model, scan.residual_ratio, scan.log_slope
        ));
        self.out.json("normalization.json", &scan)
    }

    fn coupling(&mut self) -> Result<(), RunError> {
        let a = &self.cfg.analysis;
        let (eps, sig) = default_levels(a.coupling_levels, a.coupling_sigma);
        let sched: Schedule = schedule(&eps, &BlockSet::PowersOfTwo, a.coupling_safety, 16)?;
        let mut ns = a.coupling_ns.clone();
        ns.sort_unstable();
        ns.dedup();
        let nmax = *ns.last().expect("non-empty");
        let seed = self.cfg.run.seed;
        type RunOut = (Vec<(usize, f64)>, Option<(f64, f64)>, asip_core::coupling::AssumptionReport);
        let runs: Vec<Result<RunOut, RunError>> = (0..a.coupling_runs as u64)
            .into_par_iter()
            .map(|r| {
                let input = synthetic_harness(derive_seed(seed, r), &eps, &sig, a.coupling_sigma, nmax)?;
                let z = build_z(&input, &sched, derive_seed(seed, r));
                let d = asip_discrepancy(&input.x, &z.z, &ns)?;
                let stats = (r == 0).then(|| {
                    let scaled: Vec<f64> = z.z.iter().map(|v| v / a.coupling_sigma).collect();
                    let m = scaled.iter().sum::<f64>() / scaled.len() as f64;
                    let num: f64 = scaled.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
                    let den: f64 = scaled.iter().map(|v| (v - m) * (v - m)).sum();
                    (ks_normal(&scaled), num / den)
                });
                Ok((d.points, stats, input.check_assumptions()))
            })
            .collect();
        let runs: Vec<RunOut> = runs.into_iter().collect::<Result<_, _>>()?;
        let mut t = Table::new(&["run", "n", "d_n"]);
        for (r, (pts, _, _)) in runs.iter().enumerate() {
            for &(n, d) in pts {
                t.push(vec![r.into(), n.into(), d.into()]);
            }
        }
        self.out.table("coupling", &t, self.format);
        let medians: Vec<(usize, f64)> = ns
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut v: Vec<f64> = runs.iter().map(|r| r.0[i].1).collect();
                (n, fit::median(&mut v))
            })
            .collect();
        let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
        let (ks, lag1) = runs[0].1.expect("first run statistics");
        self.out.note(format!(
            "coupling-demo: schedule verified = {}, medians strictly decreasing = {decreasing}, KS(Z) = {ks:.4}",
            sched.verified
        ));
        self.out.json(
            "coupling.json",
            &json!({
                "schedule": sched.a.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                "safety": sched.safety,
                "verified": sched.verified,
                "eps": eps,
                "sigma_levels": sig,
                "assumptions": runs[0].2,
                "median_d": medians,
                "medians_decreasing": decreasing,
                "z_ks": ks,
                "z_lag1_autocorrelation": lag1,
                "z_lag1_limit": 3.0 / (nmax as f64).sqrt(),
            }),
        )
    }
}

/// Result of a completed run: the operations in execution order and the files to write.
pub struct Completed {
    pub operations: Vec<Operation>,
    pub artifacts: Artifacts,
}

/// Executes `requested` (plus prerequisites) for an already resolved config.
pub fn execute(cfg: &ExperimentConfig, requested: &[Operation], format: Format) -> Result<Completed, RunError> {
    let ops = expand(requested);
    let mut st = State {
        cfg,
        format,
        map: None,
        f: None,
        op: None,
        variance: None,
        profile: None,
        ensemble: None,
        out: Artifacts::default(),
    };
    if ops.iter().any(|o| o.needs_map()) {
        st.map = Some(cfg.build_map()?);
    }
    if ops.iter().any(|o| o.needs_observable()) {
        st.f = Some(cfg.build_observable()?);
    }
    for &op in &ops {
        st.run(op)?;
    }
    let mut manifest_cfg = cfg.clone();
    manifest_cfg.output.dir = None;
    manifest_cfg.analysis.operations = Vec::new();
    let mut files: Vec<String> = st.out.files.keys().cloned().collect();
    files.push("summary.txt".into());
    files.push("manifest.json".into());
    files.sort();
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        tool: "asip".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.run.seed,
        operations: requested.to_vec(),
        config: manifest_cfg,
        files,
    };
    let mut summary = format!("asip {} seed {}\n", env!("CARGO_PKG_VERSION"), cfg.run.seed);
    for line in &st.out.summary {
        summary.push_str(line);
        summary.push('\n');
    }
    st.out.files.insert("summary.txt".into(), summary.into_bytes());
    st.out.json("manifest.json", &manifest)?;
    Ok(Completed { operations: ops, artifacts: st.out })
}
