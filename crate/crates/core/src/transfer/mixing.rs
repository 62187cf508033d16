use serde::Serialize;

use super::ulam::{Csr, UlamOperator};
use crate::error::{Error, Result};
use crate::fit;

/// A finite chain with states ordered by position. `r[s][t]` is the
/// transition probability of the (inverse-branch) chain `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    pub r: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
}

impl FiniteChain {
    pub fn new(r: Vec<Vec<f64>>, pi: Vec<f64>) -> Result<Self> {
        const OP: &str = "FiniteChain::new";
        let n = pi.len();
        if n == 0 || r.len() != n || r.iter().any(|row| row.len() != n) {
            return Err(Error::invalid(OP, "matrix must be square and match π"));
        }
        for row in &r {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::invalid(OP, "rows must be probability vectors"));
            }
        }
        Ok(FiniteChain { r, pi })
    }

    /// Stationary vector by power iteration.
    pub fn with_stationary(r: Vec<Vec<f64>>) -> Result<Self> {
        let n = r.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next = vec![0.0; n];
            for (s, row) in r.iter().enumerate() {
                for (t, v) in row.iter().enumerate() {
                    next[t] += pi[s] * v;
                }
            }
            let d: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if d < 1e-16 {
                break;
            }
        }
        FiniteChain::new(r, pi)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    Exponential,
    Polynomial,
    FiniteSupport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub rho_hat: f64,
    pub poly_exponent_hat: f64,
    pub rss_exponential: f64,
    pub rss_polynomial: f64,
}

impl DecayFit {
    pub fn fitted_param(&self) -> f64 {
        match self.model {
            DecayModel::Exponential | DecayModel::FiniteSupport => self.rho_hat,
            DecayModel::Polynomial => self.poly_exponent_hat,
        }
    }
}

/// Fits `log φ(k)` against `k` (exponential) and `log k` (polynomial) over the
/// strictly positive values. `prefer` forces the model; otherwise the smaller
/// residual wins.
pub fn decay_fit(values: &[f64], prefer: Option<DecayModel>) -> DecayFit {
    let pos: Vec<(f64, f64)> =
        values.iter().enumerate().filter(|(_, &v)| v > 1e-15).map(|(i, &v)| ((i + 1) as f64, v.ln())).collect();
    let trailing_zero = values.last().is_some_and(|&v| v <= 1e-15);
    if pos.len() < 2 {
        return DecayFit {
            model: DecayModel::FiniteSupport,
            rho_hat: 0.0,
            poly_exponent_hat: f64::INFINITY,
            rss_exponential: 0.0,
            rss_polynomial: 0.0,
        };
    }
    let (se, ce) = fit::linear_fit(&pos);
    let rss_e = fit::rss(&pos, se, ce);
    let logk: Vec<(f64, f64)> = pos.iter().map(|p| (p.0.ln(), p.1)).collect();
    let (sp, cp) = fit::linear_fit(&logk);
    let rss_p = fit::rss(&logk, sp, cp);
    let model = if trailing_zero {
        DecayModel::FiniteSupport
    } else {
        prefer.unwrap_or(if rss_e <= rss_p { DecayModel::Exponential } else { DecayModel::Polynomial })
    };
    DecayFit { model, rho_hat: se.exp(), poly_exponent_hat: -sp, rss_exponential: rss_e, rss_polynomial: rss_p }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingOptions {
    pub kmax: usize,
    /// Last lag entering the suprema over `i ≥ k`; `None` extends the lag
    /// range until the per-lag deviation vanishes (capped at `4·kmax + 50`).
    pub horizon: Option<usize>,
    /// States of the chain used for φ₁ (bins are merged by π-mass above this).
    pub phi1_bins: usize,
    /// States of the coarsened chain used for φ₂.
    pub pair_bins: usize,
    /// Largest gap `i₂ − i₁` in the φ₂ supremum; `None` uses the horizon.
    pub pair_gap: Option<usize>,
    pub prefer: Option<DecayModel>,
}

impl Default for MixingOptions {
    fn default() -> Self {
        MixingOptions { kmax: 30, horizon: None, phi1_bins: 1024, pair_bins: 64, pair_gap: None, prefer: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingProfile {
    /// `φ₁(k)` for `k = 1..=kmax`.
    pub phi1: Vec<f64>,
    /// Coarsened-chain lower bound of `φ₂(k)` for `k = 1..=kmax`.
    pub phi2: Vec<f64>,
    /// `φ₁(0)`, needed by the constant `Σ_{k≥0} φ₁^{1/2}(k)`.
    pub phi1_zero: f64,
    /// Per-lag deviations before the supremum over later lags.
    pub per_lag: Vec<f64>,
    pub horizon: usize,
    pub phi1_states: usize,
    pub phi2_states: usize,
    pub decay_fit: DecayFit,
    pub flags: Vec<String>,
    pub label: String,
}

impl MixingProfile {
    /// `Σ_{k≥0} φ₁^{1/2}(k)` with the tail certified by the decay fit.
    pub fn sum_sqrt_phi1(&self) -> Result<(f64, usize)> {
        let mut s = self.phi1_zero.sqrt();
        s += self.phi1.iter().map(|v| v.sqrt()).sum::<f64>();
        let k = self.phi1.len();
        let last = self.phi1.last().copied().unwrap_or(0.0);
        let tail = match self.decay_fit.model {
            DecayModel::FiniteSupport => 0.0,
            _ if last <= 0.0 => 0.0,
            DecayModel::Exponential => {
                let r = self.decay_fit.rho_hat.sqrt();
                if r >= 1.0 {
                    return Err(Error::Divergent {
                        op: "constants",
                        msg: format!("fitted ρ = {}", self.decay_fit.rho_hat),
                    });
                }
                last.sqrt() * r / (1.0 - r)
            }
            DecayModel::Polynomial => {
                let q = self.decay_fit.poly_exponent_hat / 2.0;
                if q <= 1.0 {
                    return Err(Error::Divergent { op: "constants", msg: format!("φ₁^(1/2) decays like k^-{q}") });
                }
                last.sqrt() * k as f64 / (q - 1.0)
            }
        };
        Ok((s + tail, k))
    }
}

fn threshold_sup(row: &[f64], pi: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut best: f64 = 0.0;
    for (r, p) in row.iter().zip(pi) {
        acc += r - p;
        best = best.max(acc.abs());
    }
    best
}

fn psi_zero(pi: &[f64]) -> f64 {
    // Start state s, threshold t: |1{s ≤ t} − F(t)|.
    let mut f = 0.0;
    let mut best: f64 = 0.0;
    let first = pi.iter().position(|&p| p > 0.0).unwrap_or(0);
    let last = pi.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (t, p) in pi.iter().enumerate() {
        f += p;
        if first <= t {
            best = best.max(1.0 - f);
        }
        if last > t {
            best = best.max(f);
        }
    }
    best
}

fn suffix_max(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].max(out[i + 1]);
    }
    out
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let v = a[i][k];
            if v == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += v * b[k][j];
            }
        }
    }
    c
}

/// Per-lag `ψ(k) = max_{s,t} |Σ_{j≤t} (R^k[s][j] − π_j)|` for `k = 1..=h`,
/// with `R` given sparse. Stops early once three consecutive lags vanish when
/// `h` is open-ended.
fn per_lag_psi(r: &Csr, pi: &[f64], h: usize, open: bool) -> Vec<f64> {
    let n = r.n;
    let support: Vec<usize> = (0..n).filter(|&s| pi[s] > 0.0).collect();
    let mut rows: Vec<Vec<f64>> = support
        .iter()
        .map(|&s| {
            let mut row = vec![0.0; n];
            for (j, v) in r.row(s) {
                row[j] += v;
            }
            row
        })
        .collect();
    let mut out = Vec::with_capacity(h);
    let mut next = vec![0.0; n];
    let mut quiet = 0;
    for k in 1..=h {
        if k > 1 {
            for row in rows.iter_mut() {
                r.left_mul(row, &mut next);
                row.copy_from_slice(&next);
            }
        }
        let v = rows.iter().map(|row| threshold_sup(row, pi)).fold(0.0, f64::max);
        out.push(v);
        quiet = if v < 1e-15 { quiet + 1 } else { 0 };
        if open && quiet >= 3 {
            break;
        }
    }
    out
}

/// Values `max_{s,t₁,t₂} |E(A B | Y₀ = s) − E(A B)|` with
/// `A = 1{Y_{i₁} ≤ t₁} − F(t₁)`, `B = 1{Y_{i₂} ≤ t₂} − F(t₂)`, for
/// `i₁ = 1..=h`, `i₂ − i₁ = 0..=gap`; returns the maximum over the gap for each `i₁`.
fn pair_values(chain: &FiniteChain, h: usize, gap: usize) -> Vec<f64> {
    let n = chain.len();
    let pi = &chain.pi;
    let cdf: Vec<f64> = pi
        .iter()
        .scan(0.0, |a, p| {
            *a += p;
            Some(*a)
        })
        .collect();
    // Cumulative rows of R^d, d = 0..=gap.
    let mut cum_d: Vec<Vec<Vec<f64>>> = Vec::with_capacity(gap + 1);
    let mut rd: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for d in 0..=gap {
        if d > 0 {
            rd = mat_mul(&rd, &chain.r);
        }
        cum_d.push(
            rd.iter()
                .map(|row| {
                    row.iter()
                        .scan(0.0, |a, v| {
                            *a += v;
                            Some(*a)
                        })
                        .collect()
                })
                .collect(),
        );
    }
    let mut out = Vec::with_capacity(h);
    let mut ri = chain.r.clone();
    let mut u = vec![0.0; n];
    for i1 in 1..=h {
        if i1 > 1 {
            ri = mat_mul(&ri, &chain.r);
        }
        let mut best: f64 = 0.0;
        for cd in &cum_d {
            for t2 in 0..n {
                for a in 0..n {
                    u[a] = cd[a][t2] - cdf[t2];
                }
                // Stationary value for each t₁ via prefix sums of π_a u_a.
                let total_pu: f64 = (0..n).map(|a| pi[a] * u[a]).sum();
                let mut pref_pu = 0.0;
                let cov: Vec<f64> = (0..n)
                    .map(|t1| {
                        pref_pu += pi[t1] * u[t1];
                        pref_pu - cdf[t1] * total_pu
                    })
                    .collect();
                for s in 0..n {
                    if pi[s] <= 0.0 {
                        continue;
                    }
                    let row = &ri[s];
                    let total: f64 = (0..n).map(|a| row[a] * u[a]).sum();
                    let mut pref = 0.0;
                    for t1 in 0..n {
                        pref += row[t1] * u[t1];
                        let g = pref - cdf[t1] * total;
                        best = best.max((g - cov[t1]).abs());
                    }
                }
            }
        }
        out.push(best);
    }
    out
}

/// Merges consecutive states into `target` groups of roughly equal π-mass.
pub fn coarsen(r: &Csr, pi: &[f64], target: usize) -> FiniteChain {
    let n = r.n;
    let target = target.min(n).max(1);
    let mut group = vec![0usize; n];
    let mut acc = 0.0;
    for s in 0..n {
        let g = ((acc + 0.5 * pi[s]) * target as f64).floor() as usize;
        group[s] = g.min(target - 1);
        acc += pi[s];
    }
    // Drop empty groups so indices stay contiguous.
    let mut remap = vec![usize::MAX; target];
    let mut m = 0;
    for &g in &group {
        if remap[g] == usize::MAX {
            remap[g] = m;
            m += 1;
        }
    }
    let group: Vec<usize> = group.iter().map(|&g| remap[g]).collect();
    let mut cpi = vec![0.0; m];
    let mut cr = vec![vec![0.0; m]; m];
    for s in 0..n {
        cpi[group[s]] += pi[s];
        for (t, v) in r.row(s) {
            cr[group[s]][group[t]] += pi[s] * v;
        }
    }
    for (a, row) in cr.iter_mut().enumerate() {
        if cpi[a] > 0.0 {
            row.iter_mut().for_each(|v| *v /= cpi[a]);
        } else {
            row[a] = 1.0;
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    FiniteChain { r: cr, pi: cpi }
}

fn csr_from_dense(m: &[Vec<f64>]) -> Csr {
    let n = m.len();
    let mut row_ptr = vec![0];
    let mut col = Vec::new();
    let mut val = Vec::new();
    for row in m {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                col.push(j);
                val.push(v);
            }
        }
        row_ptr.push(col.len());
    }
    Csr { n, row_ptr, col, val }
}

fn horizon_of(opts: &MixingOptions) -> (usize, bool) {
    match opts.horizon {
        Some(h) => (h.max(opts.kmax), false),
        None => (4 * opts.kmax + 50, true),
    }
}

fn assemble(
    per_lag: Vec<f64>,
    pairs: Vec<f64>,
    pi1: &[f64],
    opts: &MixingOptions,
    states: (usize, usize),
    label: &str,
) -> MixingProfile {
    let horizon = per_lag.len();
    let mut padded = per_lag.clone();
    padded.resize(opts.kmax.max(horizon), 0.0);
    let sup1 = suffix_max(&padded);
    let mut pp = pairs.clone();
    pp.resize(opts.kmax.max(pairs.len()), 0.0);
    let sup2 = suffix_max(&pp);
    let phi1: Vec<f64> = sup1[..opts.kmax].to_vec();
    let phi2: Vec<f64> = (0..opts.kmax).map(|k| sup2[k].max(phi1[k])).collect();
    let mut flags = Vec::new();
    for k in 1..per_lag.len().min(opts.kmax) {
        if per_lag[k] > per_lag[k - 1] * (1.0 + 1e-9) + 1e-15 {
            flags.push(format!("per-lag deviation increases at lag {}", k + 1));
        }
    }
    let phi1_zero = psi_zero(pi1).max(phi1.first().copied().unwrap_or(0.0));
    let decay_fit = decay_fit(&phi1, opts.prefer);
    MixingProfile {
        phi1,
        phi2,
        phi1_zero,
        per_lag,
        horizon,
        phi1_states: states.0,
        phi2_states: states.1,
        decay_fit,
        flags,
        label: label.into(),
    }
}

/// φ coefficients of an explicitly given finite chain (no coarsening).
pub fn phi_finite_chain(chain: &FiniteChain, opts: &MixingOptions) -> MixingProfile {
    let (h, open) = horizon_of(opts);
    let per_lag = per_lag_psi(&csr_from_dense(&chain.r), &chain.pi, h, open);
    let gap = opts.pair_gap.unwrap_or(per_lag.len());
    let pairs = pair_values(chain, per_lag.len(), gap);
    assemble(per_lag, pairs, &chain.pi, opts, (chain.len(), chain.len()), "finite chain")
}

/// φ coefficients of the discretized inverse-branch chain of an operator.
pub fn phi_coefficients(op: &UlamOperator, opts: &MixingOptions) -> Result<MixingProfile> {
    if opts.pair_bins > 256 {
        return Err(Error::CostGuard {
            op: "phi_coefficients",
            msg: format!("pair_bins = {} exceeds 256", opts.pair_bins),
        });
    }
    if opts.kmax == 0 {
        return Err(Error::invalid("phi_coefficients", "kmax must be at least 1"));
    }
    let r = op.reversed();
    let (h, open) = horizon_of(opts);
    let (per_lag, pi1, s1) = if op.bins() > opts.phi1_bins {
        let c = coarsen(&r, &op.pi, opts.phi1_bins);
        (per_lag_psi(&csr_from_dense(&c.r), &c.pi, h, open), c.pi.clone(), c.len())
    } else {
        (per_lag_psi(&r, &op.pi, h, open), op.pi.clone(), op.bins())
    };
    let coarse = coarsen(&r, &op.pi, opts.pair_bins);
    let gap = opts.pair_gap.unwrap_or(per_lag.len().min(2 * opts.kmax));
    let pairs = pair_values(&coarse, per_lag.len().min(2 * opts.kmax + 10), gap);
    let mut o = *opts;
    if o.prefer.is_none() {
        o.prefer = Some(if op.map.gamma().is_some() { DecayModel::Polynomial } else { DecayModel::Exponential });
    }
    Ok(assemble(per_lag, pairs, &pi1, &o, (s1, coarse.len()), "discretized-chain estimate"))
}

fn lp_norm(chain: &FiniteChain, v: &[f64], p: f64) -> f64 {
    chain.pi.iter().zip(v).map(|(w, x)| w * x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

fn centered(chain: &FiniteChain, f: &[f64]) -> Vec<f64> {
    let m: f64 = chain.pi.iter().zip(f).map(|(w, x)| w * x).sum();
    f.iter().map(|x| x - m).collect()
}

fn apply_power(chain: &FiniteChain, v: &[f64], k: usize) -> Vec<f64> {
    let mut cur = v.to_vec();
    for _ in 0..k {
        cur = chain.r.iter().map(|row| row.iter().zip(&cur).map(|(a, b)| a * b).sum()).collect();
    }
    cur
}

/// `‖f‖_p` of a state function under the stationary law.
pub fn state_norm(chain: &FiniteChain, f: &[f64], p: f64) -> f64 {
    lp_norm(chain, f, p)
}

/// `‖E(f(Y_k)|Y₀) − E f(Y_k)‖_p`.
pub fn conditional_deviation(chain: &FiniteChain, f: &[f64], k: usize, p: f64) -> f64 {
    lp_norm(chain, &apply_power(chain, &centered(chain, f), k), p)
}

/// `‖E(f(Y_i)⁽⁰⁾g(Y_j)⁽⁰⁾|Y₀) − E(f(Y_i)⁽⁰⁾g(Y_j)⁽⁰⁾)‖_{p/2}` for `i ≥ j`.
pub fn conditional_pair_deviation(chain: &FiniteChain, f: &[f64], g: &[f64], i: usize, j: usize, p: f64) -> f64 {
    assert!(i >= j, "conditional_pair_deviation needs i ≥ j");
    let f0 = centered(chain, f);
    let g0 = centered(chain, g);
    let inner = apply_power(chain, &f0, i - j);
    let prod: Vec<f64> = inner.iter().zip(&g0).map(|(a, b)| a * b).collect();
    let cond = apply_power(chain, &prod, j);
    let mean: f64 = chain.pi.iter().zip(&cond).map(|(w, x)| w * x).sum();
    let dev: Vec<f64> = cond.iter().map(|x| x - mean).collect();
    lp_norm(chain, &dev, p / 2.0)
}

/// Exhaustive enumeration of the φ₁/φ₂ suprema over start states, lags and
/// thresholds with naive matrix powers; the reference for [`phi_finite_chain`].
pub fn phi_oracle(chain: &FiniteChain, kmax: usize, horizon: usize, gap: usize) -> (Vec<f64>, Vec<f64>) {
    let n = chain.len();
    let pi = &chain.pi;
    let id: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut powers = vec![id];
    for k in 1..=horizon + gap {
        powers.push(mat_mul(&powers[k - 1], &chain.r));
    }
    let f = |t: usize| -> f64 { (0..=t).map(|j| pi[j]).sum() };
    let ind = |a: usize, t: usize| if a <= t { 1.0 } else { 0.0 };
    let single = |i: usize| -> f64 {
        let mut best: f64 = 0.0;
        for s in (0..n).filter(|&s| pi[s] > 0.0) {
            for t in 0..n {
                let p: f64 = (0..=t).map(|j| powers[i][s][j]).sum();
                best = best.max((p - f(t)).abs());
            }
        }
        best
    };
    let pair = |i1: usize, i2: usize| -> f64 {
        let d = i2 - i1;
        let mut best: f64 = 0.0;
        for t1 in 0..n {
            for t2 in 0..n {
                let e_ab = |s: usize| -> f64 {
                    let mut acc = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            acc += powers[i1][s][a] * powers[d][a][b] * (ind(a, t1) - f(t1)) * (ind(b, t2) - f(t2));
                        }
                    }
                    acc
                };
                let mean: f64 = (0..n).map(|s| pi[s] * e_ab(s)).sum();
                for s in (0..n).filter(|&s| pi[s] > 0.0) {
                    best = best.max((e_ab(s) - mean).abs());
                }
            }
        }
        best
    };
    let mut phi1 = Vec::new();
    let mut phi2 = Vec::new();
    for k in 1..=kmax {
        let mut b1: f64 = 0.0;
        let mut b2: f64 = 0.0;
        for i in k..=horizon {
            b1 = b1.max(single(i));
            for i2 in i..=i + gap {
                b2 = b2.max(pair(i, i2));
            }
        }
        phi1.push(b1);
        phi2.push(b2.max(b1));
    }
    (phi1, phi2)
}
