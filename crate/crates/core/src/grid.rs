//! Bin partitions of `[0, 1]`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GridScheme {
    Uniform,
    GeometricNearZero { ratio: f64, first_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    pub edges: Vec<f64>,
    pub scheme: GridScheme,
}

impl BinGrid {
    pub fn uniform(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("BinGrid::uniform", "need at least one bin"));
        }
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Ok(BinGrid { edges, scheme: GridScheme::Uniform })
    }

    /// Widths `w, w·r, w·r², …` with the ratio `r > 1` solved so that `bins`
    /// widths sum to one.
    pub fn geometric_near_zero(bins: usize, first_width: f64) -> Result<Self> {
        const OP: &str = "BinGrid::geometric_near_zero";
        if bins < 2 {
            return Err(Error::invalid(OP, "need at least two bins"));
        }
        if !(first_width > 0.0 && first_width * bins as f64 <= 1.0) {
            return Err(Error::invalid(OP, format!("first width {first_width} infeasible for {bins} bins")));
        }
        let total = |r: f64| -> f64 {
            let b = bins as f64;
            if (r - 1.0).abs() < 1e-12 {
                first_width * b
            } else {
                first_width * (r.powf(b) - 1.0) / (r - 1.0)
            }
        };
        let (mut lo, mut hi) = (1.0, 2.0);
        while total(hi) < 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let ratio = 0.5 * (lo + hi);
        let mut edges = Vec::with_capacity(bins + 1);
        edges.push(0.0);
        let mut w = first_width;
        let mut e = 0.0;
        for _ in 0..bins - 1 {
            e += w;
            edges.push(e);
            w *= ratio;
        }
        edges.push(1.0);
        let g = BinGrid { edges, scheme: GridScheme::GeometricNearZero { ratio, first_width } };
        g.check()?;
        Ok(g)
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        let g = BinGrid { edges, scheme: GridScheme::Uniform };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        let e = &self.edges;
        if e.len() < 2 || e[0] != 0.0 || e[e.len() - 1] != 1.0 || e.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("BinGrid", "edges must increase strictly from 0 to 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Bin containing `x` (right-closed at 1).
    pub fn locate(&self, x: f64) -> usize {
        let n = self.len();
        if let GridScheme::Uniform = self.scheme {
            if self.edges.len() > 2 && (self.edges[1] * n as f64 - 1.0).abs() < 1e-15 {
                let i = (x * n as f64) as usize;
                let i = i.min(n - 1);
                // Guard against rounding in x·n.
                if x >= self.edges[i] && (x < self.edges[i + 1] || i == n - 1) {
                    return i;
                }
            }
        }
        let k = self.edges.partition_point(|&e| e <= x);
        k.saturating_sub(1).min(n - 1)
    }
}

/// Values of a function on the bins of a grid (cell averages unless stated).
#[derive(Debug, Clone, PartialEq)]
pub struct BinDensity {
    pub grid: BinGrid,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = BinGrid::uniform(8).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(1.0), 7);
        assert_eq!(g.locate(0.125), 1);
        assert_eq!(g.locate(0.124_999), 0);
    }

    #[test]
    fn geometric_grid_sums_to_one() {
        let g = BinGrid::geometric_near_zero(8192, 1e-8).unwrap();
        assert_eq!(g.len(), 8192);
        assert!((g.width(0) - 1e-8).abs() < 1e-20);
        assert!(g.edges.windows(2).all(|w| w[1] > w[0]));
        if let GridScheme::GeometricNearZero { ratio, .. } = g.scheme {
            let last = g.width(8191);
            let expect = 1e-8 * ratio.powi(8191);
            assert!((last - expect).abs() / expect < 1e-6);
        }
        for x in [1e-9, 3e-7, 0.3, 0.999] {
            let i = g.locate(x);
            assert!(g.edges[i] <= x && x < g.edges[i + 1]);
        }
    }
}
