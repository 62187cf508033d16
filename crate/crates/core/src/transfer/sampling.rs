use rand::Rng;

use super::ulam::UlamOperator;
use crate::error::{Error, Result};
use crate::maps::IntervalMap;

/// Draws `count` points from the discretized invariant measure: a bin by
/// inverse CDF over `π`, then a uniform point inside it.
pub fn sample_stationary<R: Rng + ?Sized>(op: &UlamOperator, rng: &mut R, count: usize) -> Vec<f64> {
    let cdf: Vec<f64> = op
        .pi
        .iter()
        .scan(0.0, |a, p| {
            *a += p;
            Some(*a)
        })
        .collect();
    let total = *cdf.last().unwrap_or(&1.0);
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let (a, b) = (op.grid.edges[i], op.grid.edges[i + 1]);
            a + (b - a) * rng.random::<f64>()
        })
        .collect()
}

/// Time reversal of a stationary orbit: from `y` step to a preimage `x_k`
/// chosen with probability proportional to `h(x_k) / |T'(x_k)|`.
///
/// For full-branch piecewise-linear maps Lebesgue measure is invariant, so the
/// weights are exactly `1/|s_k|` and the chain is exact in law.
#[derive(Debug, Clone)]
pub struct InverseChain {
    map: IntervalMap,
    density: Option<(Vec<f64>, crate::grid::BinGrid)>,
}

impl InverseChain {
    pub fn new(map: &IntervalMap) -> Result<Self> {
        if !map.is_piecewise_linear() {
            return Err(Error::invalid("InverseChain::new", "needs a density for non-linear maps; use from_operator"));
        }
        Ok(InverseChain { map: map.clone(), density: None })
    }

    pub fn from_operator(op: &UlamOperator) -> Self {
        if op.map.is_piecewise_linear() {
            InverseChain { map: op.map.clone(), density: None }
        } else {
            InverseChain { map: op.map.clone(), density: Some((op.h.clone(), op.grid.clone())) }
        }
    }

    pub fn is_exact(&self) -> bool {
        self.density.is_none()
    }

    fn h(&self, x: f64) -> f64 {
        match &self.density {
            None => 1.0,
            Some((h, g)) => h[g.locate(x)],
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> f64 {
        let mut pre = [(0.0f64, 0.0f64); 16];
        let mut cand: Vec<(f64, f64)> = Vec::new();
        let many = self.map.branches.len() > pre.len();
        let mut n = 0;
        let mut total = 0.0;
        for b in &self.map.branches {
            let (lo, hi) = b.image();
            if y < lo || y > hi {
                continue;
            }
            let x = b.inverse_unchecked(y);
            let w = self.h(x) / b.derivative(x).abs();
            total += w;
            if many {
                cand.push((x, w));
            } else {
                pre[n] = (x, w);
                n += 1;
            }
        }
        let list: &[(f64, f64)] = if many { &cand } else { &pre[..n] };
        let mut u = rng.random::<f64>() * total;
        for &(x, w) in list {
            if u < w {
                return x;
            }
            u -= w;
        }
        list.last().map(|p| p.0).unwrap_or(y)
    }
}
