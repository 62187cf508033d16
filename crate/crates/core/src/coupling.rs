//! Diagonal Gaussian coupling: a block schedule `A_m`, the assembled sequence
//! `Z_i`, the ASIP discrepancy and a synthetic input where every assumption
//! holds by construction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit;
use crate::observables::log_log;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockSet {
    All,
    PowersOfTwo,
    Explicit { values: Vec<u64> },
}

impl BlockSet {
    /// Smallest element `≥ lo`, if any.
    fn next_at_least(&self, lo: u128) -> Option<u128> {
        match self {
            BlockSet::All => Some(lo),
            BlockSet::PowersOfTwo => lo.checked_next_power_of_two(),
            BlockSet::Explicit { values } => values.iter().map(|&v| v as u128).filter(|&v| v >= lo).min(),
        }
    }

    pub fn contains(&self, v: u128) -> bool {
        match self {
            BlockSet::All => true,
            BlockSet::PowersOfTwo => v.is_power_of_two(),
            BlockSet::Explicit { values } => values.iter().any(|&x| x as u128 == v),
        }
    }
}

fn lil_scale(a: u128) -> f64 {
    let a = a as f64;
    (a * log_log(a)).sqrt()
}

/// Left and right sides of the growth condition for `(j, m)`, `j < m − 1`:
/// `ε(j)√(A_{j+1} LL A_{j+1}) < 2^{−(m−j)} ε(m)√(A_m LL A_m)`.
fn decay_sides(eps: &[f64], a: &[u128], j: usize, m: usize) -> (f64, f64) {
    let lhs = eps[j - 1] * lil_scale(a[j]);
    let rhs = 2f64.powi(-((m - j) as i32)) * eps[m - 1] * lil_scale(a[m - 1]);
    (lhs, rhs)
}

#[derive(Debug, Clone, Serialize)]
pub struct Schedule {
    /// `A_1 < A_2 < …`, one per level.
    pub a: Vec<u128>,
    pub safety: f64,
    /// Every `(j, m)` pair re-checked without the safety factor.
    pub verified: bool,
}

impl Schedule {
    /// Level `m(i)` for a 1-based index: the `m` with `A_m ≤ i < A_{m+1}`;
    /// indices before `A_1` use level 1.
    pub fn level(&self, i: u128) -> usize {
        self.a.iter().rposition(|&a| a <= i).map(|p| p + 1).unwrap_or(1)
    }
}

pub fn verify_schedule(eps: &[f64], a: &[u128]) -> bool {
    for m in 3..=a.len() {
        for j in 1..m - 1 {
            let (l, r) = decay_sides(eps, a, j, m);
            if !(l < r) {
                return false;
            }
        }
    }
    a.windows(2).all(|w| w[0] < w[1])
}

/// Greedy schedule: each `A_m` is the smallest admissible block boundary
/// exceeding `A_{m−1}` for which every growth inequality holds with the
/// left side multiplied by `safety`.
pub fn schedule(eps: &[f64], blocks: &BlockSet, safety: f64, first: u64) -> Result<Schedule> {
    const OP: &str = "schedule";
    if eps.is_empty() {
        return Err(Error::invalid(OP, "no levels"));
    }
    if eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid(OP, "ε must be positive and non-increasing"));
    }
    if eps.len() > 1 && !(eps[eps.len() - 1] < eps[0]) {
        return Err(Error::invalid(OP, "ε does not decrease towards 0"));
    }
    if !(safety >= 1.0) {
        return Err(Error::invalid(OP, "safety factor must be at least 1"));
    }
    let mut a: Vec<u128> = Vec::with_capacity(eps.len());
    let a1 = blocks.next_at_least(first.max(16) as u128).ok_or(Error::ScheduleStall { op: OP, j: 0, m: 1 })?;
    a.push(a1);
    for m in 2..=eps.len() {
        // Only the right side depends on A_m and it is increasing, so the
        // admissible candidates form an upper set: gallop, then bisect.
        let first_bad = |cand: u128| {
            let mut trial = a.clone();
            trial.push(cand);
            (1..m.saturating_sub(1)).find(|&j| {
                let (l, r) = decay_sides(eps, &trial, j, m);
                !(safety * l < r)
            })
        };
        let mut lo = blocks.next_at_least(a[m - 2] + 1).ok_or(Error::ScheduleStall { op: OP, j: m - 1, m })?;
        let cand = if first_bad(lo).is_none() {
            lo
        } else {
            let mut step: u128 = 1;
            let mut hi = loop {
                let j = first_bad(lo).unwrap_or(m - 1);
                let next = lo.checked_add(step).and_then(|c| blocks.next_at_least(c));
                let next = next.ok_or(Error::ScheduleStall { op: OP, j, m })?;
                if first_bad(next).is_none() {
                    break next;
                }
                lo = next;
                step = step.saturating_mul(2);
            };
            // Smallest v in (lo, hi] whose next block boundary is admissible.
            let (mut vlo, mut vhi) = (lo, hi);
            while vhi - vlo > 1 {
                let mid = vlo + (vhi - vlo) / 2;
                let c = blocks.next_at_least(mid).unwrap_or(hi);
                if first_bad(c).is_none() {
                    vhi = mid;
                    hi = c;
                } else {
                    vlo = mid;
                }
            }
            hi
        };
        a.push(cand);
    }
    let verified = verify_schedule(eps, &a);
    Ok(Schedule { a, safety, verified })
}

/// Per-level inputs: the level-`m` approximation, its Gaussian partner and
/// its standard deviation.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingInput {
    pub x: Vec<f64>,
    /// `x_levels[m−1][i]` is `X_{i+1,m}`.
    pub x_levels: Vec<Vec<f64>>,
    /// `z_levels[m−1][i]` is `Z_{i+1,m}`.
    pub z_levels: Vec<Vec<f64>>,
    pub sigma_levels: Vec<f64>,
    pub eps: Vec<f64>,
    pub sigma: f64,
    pub blocks: BlockSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub sigma_levels_increase_to_sigma: bool,
    pub eps_decreasing: bool,
    /// `‖X − X_{·,m}‖` scale check `√2(σ − σ_m) ≤ ε(m)`; informational.
    pub lil_scale_within_eps: Vec<bool>,
    /// `Z_{·,m} = X_{·,m}` exactly.
    pub partners_exact: bool,
}

impl CouplingInput {
    pub fn check_assumptions(&self) -> AssumptionReport {
        let s = &self.sigma_levels;
        AssumptionReport {
            sigma_levels_increase_to_sigma: s.windows(2).all(|w| w[1] >= w[0])
                && s.iter().all(|&v| v <= self.sigma + 1e-15),
            eps_decreasing: self.eps.windows(2).all(|w| w[1] <= w[0]),
            lil_scale_within_eps: s
                .iter()
                .zip(&self.eps)
                .map(|(&sm, &e)| std::f64::consts::SQRT_2 * (self.sigma - sm) <= e)
                .collect(),
            partners_exact: self.x_levels == self.z_levels,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoupledZ {
    pub z: Vec<f64>,
    /// Level used for each index.
    pub level: Vec<usize>,
    /// True where the independent `δ` stream filled in.
    pub from_delta: Vec<bool>,
}

/// `Z_i = (σ/σ_{m(i)})·Z_{i,m(i)}`, or an independent `N(0, σ²)` draw when
/// `σ_{m(i)} = 0`.
pub fn build_z(input: &CouplingInput, sched: &Schedule, seed: u64) -> CoupledZ {
    let n = input.x.len();
    let mut rng = stream(derive_seed(seed, 0xD1A6), 0);
    let mut z = Vec::with_capacity(n);
    let mut level = Vec::with_capacity(n);
    let mut from_delta = Vec::with_capacity(n);
    for i in 0..n {
        let m = sched.level(i as u128 + 1).min(input.sigma_levels.len());
        let sm = input.sigma_levels[m - 1];
        let d: f64 = rng.sample(StandardNormal);
        if sm > 0.0 {
            z.push(input.sigma / sm * input.z_levels[m - 1][i]);
            from_delta.push(false);
        } else {
            z.push(input.sigma * d);
            from_delta.push(true);
        }
        level.push(m);
    }
    CoupledZ { z, level, from_delta }
}

/// `ε(m) = 2^{−m}`, `σ_m = σ(1 − 2^{−m})`.
pub fn default_levels(levels: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let eps = (1..=levels).map(|m| 2f64.powi(-(m as i32))).collect();
    let sig = (1..=levels).map(|m| sigma * (1.0 - 2f64.powi(-(m as i32)))).collect();
    (eps, sig)
}

/// `W_i` i.i.d. `N(0, σ²)`, `X_i = W_i + U_i` with `|U_i| ≤ ε(ℓ(i))/4`,
/// `ℓ(i) = ⌊log₂ i⌋ + 1`, and `X_{i,m} = Z_{i,m} = (σ_m/σ)·W_i`. Beyond the
/// supplied levels `ε` is continued geometrically with its last ratio, so the
/// perturbation keeps shrinking along the sequence.
pub fn synthetic_harness(seed: u64, eps: &[f64], sigma_levels: &[f64], sigma: f64, n: usize) -> Result<CouplingInput> {
    if eps.len() < 3 || eps.len() != sigma_levels.len() {
        return Err(Error::invalid("synthetic_harness", "need ≥ 3 levels with matching ε and σ_m"));
    }
    let mut rng = stream(seed, 0);
    let levels = eps.len();
    let ratio = eps[levels - 1] / eps[levels - 2];
    let mut w = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 1..=n {
        let wi: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        let l = (u64::BITS - (i as u64).leading_zeros()) as usize;
        let e = if l <= levels { eps[l - 1] } else { eps[levels - 1] * ratio.powi((l - levels) as i32) };
        let u = e / 4.0 * (2.0 * rng.random::<f64>() - 1.0);
        w.push(wi);
        x.push(wi + u);
    }
    let x_levels: Vec<Vec<f64>> = sigma_levels.iter().map(|&sm| w.iter().map(|wi| sm / sigma * wi).collect()).collect();
    Ok(CouplingInput {
        x,
        z_levels: x_levels.clone(),
        x_levels,
        sigma_levels: sigma_levels.to_vec(),
        eps: eps.to_vec(),
        sigma,
        blocks: BlockSet::PowersOfTwo,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Discrepancy {
    /// `(n, D_n)` with `D_n = |Σ_{i≤n}(X_i − Z_i)| / √(n·LLn)`.
    pub points: Vec<(usize, f64)>,
    /// Theil–Sen slope of `ln D_n` against `ln n`.
    pub trend: f64,
}

/// Geometric checkpoints `16, 32, …` up to `n`, always including `n`.
pub fn geometric_checkpoints(n: usize) -> Vec<usize> {
    let mut c = Vec::new();
    let mut k = 16;
    while k < n {
        c.push(k);
        k *= 2;
    }
    c.push(n);
    c
}

pub fn asip_discrepancy(x: &[f64], z: &[f64], checkpoints: &[usize]) -> Result<Discrepancy> {
    if x.len() != z.len() || checkpoints.iter().any(|&c| c < 16 || c > x.len()) {
        return Err(Error::invalid("asip_discrepancy", "sequences must align and checkpoints lie in [16, n]"));
    }
    let mut points = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut i = 0;
    for &c in checkpoints {
        while i < c {
            acc += x[i] - z[i];
            i += 1;
        }
        points.push((c, acc.abs() / lil_scale(c as u128)));
    }
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(n, d)| ((n as f64).ln(), d.ln())).collect();
    let trend = if pts.len() >= 2 { fit::theil_sen(&pts) } else { 0.0 };
    Ok(Discrepancy { points, trend })
}
