use serde::Serialize;

use super::ulam::UlamOperator;
use crate::fit;
use crate::observables::Observable;
use crate::quad;

/// `ν(f) = Σ_i h_i ∫_{I_i} f`.
pub fn nu_integral(op: &UlamOperator, f: &Observable) -> f64 {
    let e = &op.grid.edges;
    (0..op.bins()).filter(|&i| op.h[i] != 0.0).map(|i| op.h[i] * f.integral(e[i], e[i + 1])).sum()
}

/// `ν(f·g)` by per-bin adaptive quadrature.
pub fn nu_product(op: &UlamOperator, f: &Observable, g: &Observable) -> f64 {
    let e = &op.grid.edges;
    let mut total = 0.0;
    for i in 0..op.bins() {
        if op.h[i] == 0.0 {
            continue;
        }
        let q = quad::integrate(|x| f.eval(x) * g.eval(x), e[i], e[i + 1], 1e-300, 1e-12);
        total += op.h[i] * q.value;
    }
    total
}

/// `(∫_a^b f h, ∫_a^b h)` with the piecewise-constant density.
fn fh_integral(op: &UlamOperator, f: &Observable, a: f64, b: f64) -> (f64, f64) {
    let e = &op.grid.edges;
    let mut i = op.grid.locate(a);
    let (mut num, mut den) = (0.0, 0.0);
    while i < op.bins() && e[i] < b {
        let (l, r) = (a.max(e[i]), b.min(e[i + 1]));
        if r > l && op.h[i] != 0.0 {
            num += op.h[i] * f.integral(l, r);
            den += op.h[i] * (r - l);
        }
        i += 1;
    }
    (num, den)
}

/// Successive powers `K^n f` on bins.
///
/// Up to the operator's exact depth `s`, `(K^n f)_j` is the ratio
/// `∫_{T^{-n} I_j} f h / ∫_{T^{-n} I_j} h`, integrated over the exact preimage
/// intervals of bin `j`. Beyond `s` the discretized kernel is applied to
/// `K^s f`. With `s = 0` this is the plain Ulam kernel.
pub struct KernelPowers<'a> {
    op: &'a UlamOperator,
    exact: Vec<Vec<f64>>,
    current: Vec<f64>,
    current_n: usize,
    scratch: Vec<f64>,
}

impl<'a> KernelPowers<'a> {
    pub fn new(op: &'a UlamOperator, f: &Observable) -> Self {
        Self::with_depth(op, f, op.exact_depth)
    }

    pub fn with_depth(op: &'a UlamOperator, f: &Observable, depth: usize) -> Self {
        let exact = exact_pullbacks(op, f, depth);
        let current = exact[0].clone();
        KernelPowers { op, exact, current, current_n: 0, scratch: vec![0.0; op.bins()] }
    }

    pub fn depth(&self) -> usize {
        self.exact.len() - 1
    }

    /// `K^n f`; cheapest when called with non-decreasing `n`.
    pub fn get(&mut self, n: usize) -> &[f64] {
        if n < self.exact.len() {
            return &self.exact[n];
        }
        let s = self.depth();
        if self.current_n < s || self.current_n > n {
            self.current.clone_from(&self.exact[s]);
            self.current_n = s;
        }
        while self.current_n < n {
            self.op.kernel_step(&self.current, &mut self.scratch);
            std::mem::swap(&mut self.current, &mut self.scratch);
            self.current_n += 1;
        }
        &self.current
    }
}

fn exact_pullbacks(op: &UlamOperator, f: &Observable, depth: usize) -> Vec<Vec<f64>> {
    let b = op.bins();
    let e = &op.grid.edges;
    let mut num = vec![vec![0.0; b]; depth + 1];
    let mut den = vec![vec![0.0; b]; depth + 1];
    for j in 0..b {
        if op.h[j] < 1e-14 {
            continue;
        }
        let (n0, d0) = fh_integral(op, f, e[j], e[j + 1]);
        num[0][j] = n0;
        den[0][j] = d0;
        if depth == 0 {
            continue;
        }
        let mut stack = vec![(e[j], e[j + 1], 0usize)];
        while let Some((a, c, t)) = stack.pop() {
            for br in &op.map.branches {
                let (il, ih) = br.image();
                let (lo, hi) = (a.max(il), c.min(ih));
                if !(hi > lo) {
                    continue;
                }
                let (x0, x1) = (br.inverse_unchecked(lo), br.inverse_unchecked(hi));
                let (x0, x1) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
                let (x0, x1) = (x0.max(br.domain_lo), x1.min(br.domain_hi));
                if !(x1 > x0) {
                    continue;
                }
                let (nn, dd) = fh_integral(op, f, x0, x1);
                num[t + 1][j] += nn;
                den[t + 1][j] += dd;
                if t + 1 < depth {
                    stack.push((x0, x1, t + 1));
                }
            }
        }
    }
    num.iter()
        .zip(&den)
        .map(|(nr, dr)| nr.iter().zip(dr).map(|(&n, &d)| if d > 0.0 { n / d } else { 0.0 }).collect())
        .collect()
}

/// `K^n f` on bins, with the list of bins excluded from the support.
pub fn apply_kernel(op: &UlamOperator, f: &Observable, n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut kp = KernelPowers::new(op, f);
    (kp.get(n).to_vec(), op.unsupported.clone())
}

/// `ν((f − νf)·g∘T^k)`; the lag-0 term is integrated exactly.
pub fn correlation(op: &UlamOperator, f: &Observable, g: &Observable, k: usize) -> f64 {
    let nf = nu_integral(op, f);
    if k == 0 {
        return nu_product(op, f, g) - nf * nu_integral(op, g);
    }
    let mut kp = KernelPowers::new(op, f);
    correlation_from(op, kp.get(k), nf, &cell_averages(op, g))
}

pub fn correlation_from(op: &UlamOperator, kf: &[f64], nf: f64, gbar: &[f64]) -> f64 {
    (0..op.bins()).map(|j| op.pi[j] * (kf[j] - nf) * gbar[j]).sum()
}

pub fn cell_averages(op: &UlamOperator, f: &Observable) -> Vec<f64> {
    let e = &op.grid.edges;
    (0..op.bins()).map(|i| f.integral(e[i], e[i + 1]) / (e[i + 1] - e[i])).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GordinReport {
    /// `‖K^n f − ν(f)‖_{L²(ν)}` for `n = 0..=N`.
    pub terms: Vec<f64>,
    pub partial_sum: f64,
    pub rho_hat: Option<f64>,
    pub tail_estimate: f64,
}

pub fn gordin_sum(op: &UlamOperator, f: &Observable, max_lag: usize) -> GordinReport {
    let nf = nu_integral(op, f);
    let mut kp = KernelPowers::new(op, f);
    let terms: Vec<f64> = (0..=max_lag)
        .map(|n| {
            let v = kp.get(n);
            (0..op.bins()).map(|j| op.pi[j] * (v[j] - nf).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let partial_sum = terms.iter().sum();
    let lo = max_lag.saturating_sub(9);
    let pts: Vec<(f64, f64)> =
        (lo..=max_lag).filter(|&n| terms[n] > 1e-300).map(|n| (n as f64, terms[n].ln())).collect();
    let rho_hat = if pts.len() >= 3 { Some(fit::linear_fit(&pts).0.exp()) } else { None };
    let tail_estimate = match rho_hat {
        Some(r) if r < 1.0 => terms[max_lag] * r / (1.0 - r),
        Some(_) => f64::INFINITY,
        None => 0.0,
    };
    GordinReport { terms, partial_sum, rho_hat, tail_estimate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinGrid;
    use crate::maps::IntervalMap;
    use crate::observables::builtin;
    use crate::transfer::{build_ulam, UlamOptions};

    fn doubling(b: usize, depth: Option<usize>) -> UlamOperator {
        let opts = UlamOptions { exact_depth: depth, ..Default::default() };
        build_ulam(&IntervalMap::doubling(), &BinGrid::uniform(b).unwrap(), &opts).unwrap()
    }

    #[test]
    fn zero_power_is_cell_average() {
        let op = doubling(256, Some(3));
        let f = builtin::centered_linear().unwrap();
        let (v, _) = apply_kernel(&op, &f, 0);
        for j in 0..256 {
            assert!((v[j] - (op.grid.center(j) - 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn halving_identity() {
        let op = doubling(1024, Some(6));
        let f = builtin::centered_linear().unwrap();
        let mut kp = KernelPowers::new(&op, &f);
        for n in 1..=6 {
            let v = kp.get(n);
            for j in 0..1024 {
                let expect = (op.grid.center(j) - 0.5) / 2f64.powi(n as i32);
                assert!((v[j] - expect).abs() < 1e-14, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn cosine_killed_and_correlations() {
        let op = doubling(4096, None);
        let f = builtin::cosine(1).unwrap();
        let (v, _) = apply_kernel(&op, &f, 1);
        assert!(v.iter().all(|x| x.abs() < 1e-3));
        assert!((correlation(&op, &f, &f, 0) - 0.5).abs() < 1e-3);
        assert!(correlation(&op, &f, &f, 1).abs() < 1e-3);
        let c = builtin::constant(2.0).unwrap();
        assert!(correlation(&op, &f, &c, 3).abs() < 1e-12);
    }
}
