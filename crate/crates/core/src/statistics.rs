//! Monte Carlo ensembles of Birkhoff sums and the statistics built on them:
//! the variance series, CLT and invariance-principle marginals, the bounded
//! LIL statistic and the `n` vs `n ln n` normalization scan.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::fit;
use crate::observables::{log_log, Observable};
use crate::rng::{derive_seed, stream};
use crate::transfer::{
    cell_averages, correlation_from, nu_integral, nu_product, sample_stationary, InverseChain, KernelPowers,
    UlamOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Stationary,
    LebesgueBurnin { steps: usize },
}

/// How orbit segments are generated.
///
/// `InverseChain` draws the stationary orbit backwards through random inverse
/// branches, which avoids the floating-point collapse of forward iteration
/// for linear branches with integer slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Auto,
    Forward,
    InverseChain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub init: Init,
    pub sampler: Sampler,
    /// Extra checkpoints added to the geometric set.
    pub extra_checkpoints: Vec<usize>,
}

impl EnsembleConfig {
    pub fn new(n: usize, r: usize, seed: u64) -> Self {
        EnsembleConfig { n, r, seed, init: Init::Stationary, sampler: Sampler::Auto, extra_checkpoints: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryEnsemble {
    pub map: String,
    pub observable: String,
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub centering: f64,
    pub sampler: Sampler,
    pub checkpoints: Vec<usize>,
    /// `sums[r][c] = S_{checkpoints[c]}` for trajectory `r`.
    pub sums: Vec<Vec<f64>>,
    /// `running_max[r][c] = max_{k ≤ checkpoints[c]} |S_k|`.
    pub running_max: Vec<Vec<f64>>,
}

impl TrajectoryEnsemble {
    pub fn finals(&self) -> Vec<f64> {
        self.sums.iter().map(|s| *s.last().unwrap()).collect()
    }

    pub fn final_max(&self) -> Vec<f64> {
        self.running_max.iter().map(|s| *s.last().unwrap()).collect()
    }

    pub fn checkpoint_index(&self, k: usize) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == k)
    }
}

/// Checkpoints `n, n/2, n/4, …` down to 16, plus `n/4, n/2, 3n/4` and extras.
pub fn default_checkpoints(n: usize, extra: &[usize]) -> Vec<usize> {
    let mut c = vec![n, n / 4, n / 2, 3 * n / 4];
    let mut m = n;
    while m >= 16 {
        c.push(m);
        m /= 2;
    }
    c.extend(extra.iter().copied().filter(|&k| k <= n));
    c.retain(|&k| k >= 1);
    c.sort_unstable();
    c.dedup();
    c
}

fn resolve_sampler(op: &UlamOperator, s: Sampler) -> Sampler {
    match s {
        Sampler::Auto if op.map.is_piecewise_linear() => Sampler::InverseChain,
        Sampler::Auto => Sampler::Forward,
        other => other,
    }
}

fn start_point<R: Rng>(op: &UlamOperator, init: Init, rng: &mut R) -> f64 {
    match init {
        Init::Stationary => sample_stationary(op, rng, 1)[0],
        Init::LebesgueBurnin { .. } => rng.random::<f64>(),
    }
}

struct Trace {
    sums: Vec<f64>,
    maxes: Vec<f64>,
}

fn forward_trace<R: Rng>(
    op: &UlamOperator,
    f: &Observable,
    nf: f64,
    cfg: &EnsembleConfig,
    cps: &[usize],
    rng: &mut R,
) -> Trace {
    let map = &op.map;
    let floor = map.orbit_floor();
    let mut x = start_point(op, cfg.init, rng).max(floor);
    if let Init::LebesgueBurnin { steps } = cfg.init {
        for _ in 0..steps {
            x = map.eval_unchecked(x).max(floor);
        }
    }
    let mut sums = Vec::with_capacity(cps.len());
    let mut maxes = Vec::with_capacity(cps.len());
    let (mut s, mut mx) = (0.0f64, 0.0f64);
    let mut next = 0;
    for k in 1..=cfg.n {
        s += f.eval(x) - nf;
        mx = mx.max(s.abs());
        if next < cps.len() && cps[next] == k {
            sums.push(s);
            maxes.push(mx);
            next += 1;
        }
        x = map.eval_unchecked(x).max(floor);
    }
    Trace { sums, maxes }
}

/// Backward generation: `Y_0 ~ ν`, `Y_{j+1}` a preimage of `Y_j`. The forward
/// orbit of `Y_{n−1}` is `Y_{n−1}, …, Y_0`, so with `P_m = Σ_{j<m} X_j`,
/// `S_k = P_n − P_{n−k}`.
fn inverse_trace<R: Rng>(
    op: &UlamOperator,
    chain: &InverseChain,
    f: &Observable,
    nf: f64,
    cfg: &EnsembleConfig,
    cps: &[usize],
    rng: &mut R,
) -> Trace {
    let n = cfg.n;
    let mut y = start_point(op, cfg.init, rng);
    if let Init::LebesgueBurnin { steps } = cfg.init {
        for _ in 0..steps {
            y = chain.step(y, rng);
        }
    }
    // Segment boundaries m = n − c in increasing order.
    let bounds: Vec<usize> = cps.iter().rev().map(|&c| n - c).collect();
    let nb = bounds.len();
    let mut seg_min = vec![f64::INFINITY; nb];
    let mut seg_max = vec![f64::NEG_INFINITY; nb];
    let mut p_at = vec![0.0; nb];
    let mut seg = 0usize;
    let mut p = 0.0f64;
    for m in 0..=n {
        while seg + 1 < nb && m >= bounds[seg + 1] {
            seg += 1;
        }
        if m == bounds[seg] {
            p_at[seg] = p;
        }
        if m >= bounds[0] {
            seg_min[seg] = seg_min[seg].min(p);
            seg_max[seg] = seg_max[seg].max(p);
        }
        if m == n {
            break;
        }
        p += f.eval(y) - nf;
        if m + 1 < n {
            y = chain.step(y, rng);
        }
    }
    let total = p;
    let mut sums = vec![0.0; nb];
    let mut maxes = vec![0.0; nb];
    let (mut lo, mut hi) = (total, total);
    for s in (0..nb).rev() {
        lo = lo.min(seg_min[s]);
        hi = hi.max(seg_max[s]);
        // Checkpoint c = n − bounds[s] is cps[nb − 1 − s].
        sums[nb - 1 - s] = total - p_at[s];
        maxes[nb - 1 - s] = (total - lo).max(hi - total);
    }
    Trace { sums, maxes }
}

/// `R` independent trajectories of `S_k = Σ_{i<k} (f∘T^i − ν(f))`. Each
/// trajectory uses its own stream keyed by `(seed, index)`.
pub fn birkhoff_ensemble(op: &UlamOperator, f: &Observable, cfg: &EnsembleConfig) -> Result<TrajectoryEnsemble> {
    if cfg.n < 16 || cfg.r < 1 {
        return Err(Error::invalid("birkhoff_ensemble", "need n ≥ 16 and R ≥ 1"));
    }
    let nf = nu_integral(op, f);
    let cps = default_checkpoints(cfg.n, &cfg.extra_checkpoints);
    let sampler = resolve_sampler(op, cfg.sampler);
    let chain = InverseChain::from_operator(op);
    let traces: Vec<Trace> = (0..cfg.r)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, i as u64);
            match sampler {
                Sampler::InverseChain => inverse_trace(op, &chain, f, nf, cfg, &cps, &mut rng),
                _ => forward_trace(op, f, nf, cfg, &cps, &mut rng),
            }
        })
        .collect();
    let (sums, running_max) = traces.into_iter().map(|t| (t.sums, t.maxes)).unzip();
    Ok(TrajectoryEnsemble {
        map: op.map.name.clone(),
        observable: f.name.clone(),
        n: cfg.n,
        r: cfg.r,
        seed: cfg.seed,
        centering: nf,
        sampler,
        checkpoints: cps,
        sums,
        running_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LagRule {
    Fixed { lags: usize },
    Adaptive { threshold: f64, max_lag: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub sigma2_hat: f64,
    pub sigma2_raw: f64,
    pub lags_used: usize,
    /// `ν((f−νf)·f∘T^k)` for `k = 0..=lags_used`.
    pub correlations: Vec<f64>,
    pub rule: LagRule,
    pub tail_estimate: f64,
    /// Same series with the plain Ulam kernel.
    pub sigma2_ulam: f64,
    pub standard_error: f64,
    pub clamped: bool,
    pub warnings: Vec<String>,
}

fn series(kp: &mut KernelPowers, op: &UlamOperator, nf: f64, gbar: &[f64], c0: f64, rule: LagRule) -> Vec<f64> {
    let mut c = vec![c0];
    match rule {
        LagRule::Fixed { lags } => {
            for k in 1..=lags {
                c.push(correlation_from(op, kp.get(k), nf, gbar));
            }
        }
        LagRule::Adaptive { threshold, max_lag } => {
            let mut quiet = 0;
            for k in 1..=max_lag {
                let v = correlation_from(op, kp.get(k), nf, gbar);
                c.push(v);
                quiet = if v.abs() < threshold { quiet + 1 } else { 0 };
                if quiet >= 3 {
                    break;
                }
            }
        }
    }
    c
}

fn geometric_tail(c: &[f64]) -> (f64, Option<f64>) {
    let k = c.len() - 1;
    if k < 3 {
        return (0.0, None);
    }
    let lo = k.saturating_sub(9).max(1);
    let pts: Vec<(f64, f64)> = (lo..=k).filter(|&i| c[i].abs() > 1e-300).map(|i| (i as f64, c[i].abs().ln())).collect();
    if pts.len() < 3 {
        return (0.0, None);
    }
    let rho = fit::linear_fit(&pts).0.exp();
    if rho >= 1.0 {
        return (f64::INFINITY, Some(rho));
    }
    (c[k].abs() * rho / (1.0 - rho), Some(rho))
}

/// `σ² = ν((f−νf)²) + 2Σ_{k≥1} ν((f−νf)·f∘T^k)`.
///
/// The standard error combines the tail estimate with the gap between the
/// refined kernel and the plain Ulam kernel.
pub fn sigma2(op: &UlamOperator, f: &Observable, rule: LagRule) -> Result<VarianceEstimate> {
    let nf = nu_integral(op, f);
    let c0 = nu_product(op, f, f) - nf * nf;
    let gbar = cell_averages(op, f);
    let mut kp = KernelPowers::new(op, f);
    let c = series(&mut kp, op, nf, &gbar, c0, rule);
    let lags = c.len() - 1;
    let raw = c[0] + 2.0 * c[1..].iter().sum::<f64>();
    let mut ulam = KernelPowers::with_depth(op, f, 0);
    let cu = series(&mut ulam, op, nf, &gbar, c0, LagRule::Fixed { lags });
    let raw_ulam = cu[0] + 2.0 * cu[1..].iter().sum::<f64>();
    let (tail, rho) = geometric_tail(&c);
    let mut warnings = Vec::new();
    let tail2 = 2.0 * tail;
    if !tail2.is_finite() || tail2 > 0.5 * raw.abs().max(1e-12) {
        warnings.push(format!("tail estimate {tail2:e} dominates the partial sum (fitted ratio {rho:?})"));
    }
    if op.map.gamma().is_some() {
        warnings.push("polynomial decay: geometric tail estimate is heuristic".into());
    }
    let se = tail2.min(f64::MAX) + (raw - raw_ulam).abs();
    let clamped = raw < 0.0;
    if raw < -2.0 * se {
        warnings.push(format!("negative estimate {raw:e} beyond two standard errors"));
    }
    Ok(VarianceEstimate {
        sigma2_hat: raw.max(0.0),
        sigma2_raw: raw,
        lags_used: lags,
        correlations: c,
        rule,
        tail_estimate: tail2,
        sigma2_ulam: raw_ulam,
        standard_error: se,
        clamped,
        warnings,
    })
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov–Smirnov distance of a sample to `N(0,1)`.
pub fn ks_normal(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let p = normal_cdf(v[i]);
        d = d.max((p - i as f64 / n).abs()).max(((j + 1) as f64 / n - p).abs());
        i = j + 1;
    }
    d
}

#[derive(Debug, Clone, Serialize)]
pub struct CltResult {
    pub ks_distance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn clt_ks(ens: &TrajectoryEnsemble, sigma: f64, tolerance: f64) -> Result<CltResult> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("clt_ks", format!("degenerate sigma {sigma}")));
    }
    let scale = sigma * (ens.n as f64).sqrt();
    let z: Vec<f64> = ens.finals().iter().map(|s| s / scale).collect();
    let d = ks_normal(&z);
    Ok(CltResult { ks_distance: d, tolerance, pass: d <= tolerance })
}

#[derive(Debug, Clone, Serialize)]
pub struct WipResult {
    pub times: Vec<f64>,
    pub empirical: Vec<Vec<f64>>,
    pub cov_error: f64,
}

/// Compares the covariance of `S_{⌊nt⌋}/√n` with `σ²·min(s, t)`.
pub fn wip_marginals(ens: &TrajectoryEnsemble, sigma: f64, times: &[f64]) -> Result<WipResult> {
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| {
            let k = (ens.n as f64 * t).floor() as usize;
            ens.checkpoint_index(k)
                .ok_or_else(|| Error::invalid("wip_marginals", format!("no checkpoint at ⌊n·{t}⌋ = {k}")))
        })
        .collect::<Result<_>>()?;
    let rn = ens.n as f64;
    let r = ens.r as f64;
    let cols: Vec<Vec<f64>> = idx.iter().map(|&c| ens.sums.iter().map(|s| s[c] / rn.sqrt()).collect()).collect();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / r).collect();
    let m = times.len();
    let mut emp = vec![vec![0.0; m]; m];
    let mut err: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            let cov = cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).sum::<f64>()
                / (r - 1.0).max(1.0);
            emp[a][b] = cov;
            err = err.max((cov - sigma * sigma * times[a].min(times[b])).abs());
        }
    }
    Ok(WipResult { times: times.to_vec(), empirical: emp, cov_error: err })
}

#[derive(Debug, Clone, Serialize)]
pub struct LilSeries {
    pub threshold: f64,
    pub exceedance_rate: f64,
    /// `(c, (1/c)·P̂(max_{k≤c}|S_k| ≥ A√(c·LLc)))` over checkpoints `c ≥ 16`.
    pub terms: Vec<(usize, f64)>,
    pub partial_sums: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LilStatistic {
    /// `U_r = max_{k≤n}|S_k| / √(n·LLn)`.
    pub u: Vec<f64>,
    pub quantiles: Vec<(f64, f64)>,
    pub series: Vec<LilSeries>,
}

pub fn lil_statistic(ens: &TrajectoryEnsemble, thresholds: &[f64]) -> Result<LilStatistic> {
    if ens.n < 16 {
        return Err(Error::invalid("lil_statistic", "need n ≥ 16"));
    }
    let norm = |c: usize| (c as f64 * log_log(c as f64)).sqrt();
    let u: Vec<f64> = ens.final_max().iter().map(|m| m / norm(ens.n)).collect();
    let mut sorted = u.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.5, 0.9, 0.99, 1.0].iter().map(|&q| (q, fit::quantile_sorted(&sorted, q))).collect();
    let r = ens.r as f64;
    let series = thresholds
        .iter()
        .map(|&a| {
            let exceed = u.iter().filter(|&&x| x >= a).count() as f64 / r;
            let mut terms = Vec::new();
            let mut partial_sums = Vec::new();
            let mut acc = 0.0;
            for (ci, &c) in ens.checkpoints.iter().enumerate() {
                if c < 16 {
                    continue;
                }
                let lim = a * norm(c);
                let p = ens.running_max.iter().filter(|m| m[ci] >= lim).count() as f64 / r;
                let t = p / c as f64;
                acc += t;
                terms.push((c, t));
                partial_sums.push(acc);
            }
            LilSeries { threshold: a, exceedance_rate: exceed, terms, partial_sums }
        })
        .collect();
    Ok(LilStatistic { u, quantiles, series })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    /// Unbiased sample variance.
    Sample,
    /// `(IQR / 1.349)²`, insensitive to rare large excursions.
    Iqr,
}

pub fn estimate_variance(v: &[f64], est: VarianceEstimator) -> f64 {
    let n = v.len() as f64;
    match est {
        VarianceEstimator::Sample => {
            let m = v.iter().sum::<f64>() / n;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)
        }
        VarianceEstimator::Iqr => {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            let iqr = fit::quantile_sorted(&s, 0.75) - fit::quantile_sorted(&s, 0.25);
            (iqr / 1.348_979_500_392_163_5).powi(2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationModel {
    Linear,
    NLogN,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalizationScan {
    pub ns: Vec<usize>,
    pub var_over_n: Vec<f64>,
    pub constant_level: f64,
    pub log_slope: f64,
    pub log_intercept: f64,
    pub rss_constant: f64,
    pub rss_log: f64,
    /// `(RSS_const/(k−1)) / (RSS_log/(k−2))`.
    pub residual_ratio: f64,
    pub model: NormalizationModel,
    pub estimator: VarianceEstimator,
}

/// Ratio above which the `a·ln n + b` model is preferred (given a positive slope).
pub const PREFERENCE_RATIO: f64 = 1.5;

/// Fits `Var(S_n)/n` against a constant and against `a·ln n + b`.
pub fn fit_normalization(ns: &[usize], v: &[f64]) -> (f64, f64, f64, f64, f64, f64, NormalizationModel) {
    let k = ns.len() as f64;
    let level = v.iter().sum::<f64>() / k;
    let rss_c: f64 = v.iter().map(|x| (x - level).powi(2)).sum();
    let pts: Vec<(f64, f64)> = ns.iter().zip(v).map(|(&n, &y)| ((n as f64).ln(), y)).collect();
    let (a, b) = fit::linear_fit(&pts);
    let rss_l = fit::rss(&pts, a, b);
    let ratio = if rss_l > 0.0 { (rss_c / (k - 1.0)) / (rss_l / (k - 2.0)) } else { f64::INFINITY };
    let model =
        if ratio >= PREFERENCE_RATIO && a > 0.0 { NormalizationModel::NLogN } else { NormalizationModel::Linear };
    (level, a, b, rss_c, rss_l, ratio, model)
}

/// Independent ensembles per `n` (seeds derived from `(seed, n)`); compares
/// the constant and logarithmic growth models for `Var(S_n)/n`.
pub fn normalization_scan(
    op: &UlamOperator,
    f: &Observable,
    ns: &[usize],
    r: usize,
    seed: u64,
    sampler: Sampler,
    estimator: VarianceEstimator,
) -> Result<NormalizationScan> {
    if ns.len() < 5 {
        return Err(Error::invalid("normalization_scan", "need at least 5 horizons"));
    }
    let mut var_over_n = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = EnsembleConfig { sampler, ..EnsembleConfig::new(n, r, derive_seed(seed, n as u64)) };
        let ens = birkhoff_ensemble(op, f, &cfg)?;
        var_over_n.push(estimate_variance(&ens.finals(), estimator) / n as f64);
    }
    let (level, a, b, rc, rl, ratio, model) = fit_normalization(ns, &var_over_n);
    Ok(NormalizationScan {
        ns: ns.to_vec(),
        var_over_n,
        constant_level: level,
        log_slope: a,
        log_intercept: b,
        rss_constant: rc,
        rss_log: rl,
        residual_ratio: ratio,
        model,
        estimator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinGrid;
    use crate::maps::IntervalMap;
    use crate::observables::builtin;
    use crate::transfer::{build_ulam, UlamOptions};

    fn op(map: IntervalMap, b: usize) -> UlamOperator {
        build_ulam(&map, &BinGrid::uniform(b).unwrap(), &UlamOptions::for_map(&map)).unwrap()
    }

    #[test]
    fn inverse_and_forward_traces_agree_on_checkpoint_logic() {
        // With a constant observable both samplers give zero paths.
        let o = op(IntervalMap::tent(), 64);
        let f = builtin::constant(2.0).unwrap();
        for s in [Sampler::Forward, Sampler::InverseChain] {
            let cfg = EnsembleConfig { sampler: s, ..EnsembleConfig::new(100, 3, 1) };
            let e = birkhoff_ensemble(&o, &f, &cfg).unwrap();
            assert!(e.sums.iter().flatten().all(|v| v.abs() < 1e-12));
            assert!(e.running_max.iter().flatten().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn inverse_trace_matches_direct_orbit_sum() {
        // Reconstruct the forward orbit from the backward chain and compare.
        let o = op(IntervalMap::piecewise_linear(&[1.5, 3.0]).unwrap(), 64);
        let f = builtin::centered_linear().unwrap();
        let nf = nu_integral(&o, &f);
        let cfg = EnsembleConfig::new(40, 1, 9);
        let cps = default_checkpoints(40, &[7, 13]);
        let chain = InverseChain::from_operator(&o);
        let mut rng = stream(9, 0);
        let t = inverse_trace(&o, &chain, &f, nf, &cfg, &cps, &mut rng);
        let mut rng = stream(9, 0);
        let mut ys = vec![sample_stationary(&o, &mut rng, 1)[0]];
        for _ in 1..40 {
            let y = chain.step(*ys.last().unwrap(), &mut rng);
            ys.push(y);
        }
        let orbit: Vec<f64> = ys.iter().rev().copied().collect();
        for (ci, &c) in cps.iter().enumerate() {
            let s: f64 = orbit[..c].iter().map(|&x| f.eval(x) - nf).sum();
            let mut run = 0.0f64;
            let mut mx = 0.0f64;
            for &x in &orbit[..c] {
                run += f.eval(x) - nf;
                mx = mx.max(run.abs());
            }
            assert!((t.sums[ci] - s).abs() < 1e-12, "{c}");
            assert!((t.maxes[ci] - mx).abs() < 1e-12, "{c}");
        }
    }

    #[test]
    fn ks_of_point_mass_is_half() {
        assert!((ks_normal(&[0.0; 50]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iqr_of_normal_quantiles() {
        let v: Vec<f64> = (1..2000)
            .map(|i| {
                let p = i as f64 / 2000.0;
                // Bisection inverse of the normal CDF.
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..100 {
                    let m = 0.5 * (lo + hi);
                    if normal_cdf(m) < p {
                        lo = m
                    } else {
                        hi = m
                    }
                }
                2.0 * lo
            })
            .collect();
        assert!((estimate_variance(&v, VarianceEstimator::Iqr) - 4.0).abs() < 0.02);
    }

    #[test]
    fn normalization_fit_prefers_log_for_log_data() {
        let ns: Vec<usize> = (10..=16).map(|k| 1usize << k).collect();
        let v: Vec<f64> = ns.iter().map(|&n| 0.2 * (n as f64).ln() + 1.0).collect();
        let (.., model) = fit_normalization(&ns, &v);
        assert_eq!(model, NormalizationModel::NLogN);
        let flat: Vec<f64> = ns.iter().enumerate().map(|(i, _)| 1.0 + 0.01 * (i % 2) as f64).collect();
        let (.., model) = fit_normalization(&ns, &flat);
        assert_eq!(model, NormalizationModel::Linear);
    }
}
