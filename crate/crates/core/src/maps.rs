//! Piecewise-monotone interval maps: uniformly expanding maps and the
//! generalized Pomeau–Manneville (LSV) family with a neutral fixed point at 0.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Closed-form branch laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchLaw {
    /// `x ↦ slope·x + offset`.
    Affine { slope: f64, offset: f64 },
    /// `x ↦ x(1 + (2x)^γ)`, the neutral LSV branch on `[0, 1/2)`.
    Neutral { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub direction: Direction,
    pub law: BranchLaw,
}

impl Branch {
    pub fn forward(&self, x: f64) -> f64 {
        match self.law {
            BranchLaw::Affine { slope, offset } => slope * x + offset,
            BranchLaw::Neutral { gamma } => x * (1.0 + (2.0 * x).powf(gamma)),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.law {
            BranchLaw::Affine { slope, .. } => slope,
            BranchLaw::Neutral { gamma } => 1.0 + (1.0 + gamma) * (2.0 * x).powf(gamma),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self.law {
            BranchLaw::Affine { .. } => 0.0,
            BranchLaw::Neutral { gamma } => gamma * (1.0 + gamma) * 2f64.powf(gamma) * x.powf(gamma - 1.0),
        }
    }

    /// Image interval `[lo, hi]` of the closed branch domain.
    pub fn image(&self) -> (f64, f64) {
        let a = self.forward(self.domain_lo);
        let b = self.forward(self.domain_hi);
        (a.min(b), a.max(b))
    }

    /// Preimage of `y` inside this branch, without range checks.
    pub fn inverse_unchecked(&self, y: f64) -> f64 {
        match self.law {
            BranchLaw::Affine { slope, offset } => ((y - offset) / slope).clamp(self.domain_lo, self.domain_hi),
            BranchLaw::Neutral { gamma } => invert_neutral(gamma, y, self.domain_hi),
        }
    }
}

/// Solves `x(1 + (2x)^γ) = y` on `[0, hi]` by safeguarded Newton.
fn invert_neutral(gamma: f64, y: f64, hi: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let f = |x: f64| x * (1.0 + (2.0 * x).powf(gamma)) - y;
    let (mut lo, mut up) = (0.0, hi);
    // Start from the fixed-point guess x ≈ y / (1 + (2y)^γ).
    let mut x = (y / (1.0 + (2.0 * y).powf(gamma))).clamp(0.0, hi);
    for _ in 0..100 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            up = x;
        } else {
            lo = x;
        }
        let d = 1.0 + (1.0 + gamma) * (2.0 * x).powf(gamma);
        let mut next = x - fx / d;
        if !(next > lo && next < up) {
            next = 0.5 * (lo + up);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        x = next;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    UniformlyExpanding { lambda: f64, adler_c: f64 },
    Gpm { gamma: f64, neutral_branch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMap {
    pub name: String,
    pub branches: Vec<Branch>,
    pub kind: MapKind,
}

fn affine(lo: f64, hi: f64, slope: f64) -> Branch {
    // Increasing branches map lo ↦ 0, decreasing ones map lo ↦ 1.
    let offset = if slope > 0.0 { -slope * lo } else { 1.0 - slope * lo };
    Branch {
        domain_lo: lo,
        domain_hi: hi,
        direction: if slope > 0.0 { Direction::Increasing } else { Direction::Decreasing },
        law: BranchLaw::Affine { slope, offset },
    }
}

impl IntervalMap {
    pub fn doubling() -> Self {
        Self::piecewise_linear(&[2.0, 2.0]).expect("valid slopes").named("doubling")
    }

    pub fn tent() -> Self {
        Self::piecewise_linear(&[2.0, -2.0]).expect("valid slopes").named("tent")
    }

    /// Full-branch piecewise-linear map; branch `k` has width `1/|slopes[k]|`
    /// and maps onto `[0, 1]`, decreasing when the slope is negative.
    pub fn piecewise_linear(slopes: &[f64]) -> Result<Self> {
        const OP: &str = "piecewise_linear";
        if slopes.is_empty() {
            return Err(Error::invalid(OP, "no slopes"));
        }
        if slopes.iter().any(|s| !s.is_finite() || s.abs() <= 1.0) {
            return Err(Error::invalid(OP, "every |slope| must exceed 1"));
        }
        let total: f64 = slopes.iter().map(|s| 1.0 / s.abs()).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(OP, format!("Σ 1/|slope| = {total}, must equal 1")));
        }
        let mut lo = 0.0;
        let mut branches = Vec::with_capacity(slopes.len());
        for (k, &s) in slopes.iter().enumerate() {
            let hi = if k + 1 == slopes.len() { 1.0 } else { lo + 1.0 / s.abs() };
            let exact = s.signum() / (hi - lo);
            let slope = if (exact - s).abs() <= 1e-12 * s.abs() { s } else { exact };
            branches.push(affine(lo, hi, slope));
            lo = hi;
        }
        let lambda = slopes.iter().map(|s| s.abs()).fold(f64::INFINITY, f64::min);
        Ok(IntervalMap {
            name: "piecewise_linear".into(),
            branches,
            kind: MapKind::UniformlyExpanding { lambda, adler_c: 0.0 },
        })
    }

    pub fn lsv(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("lsv", format!("gamma = {gamma} not in (0,1)")));
        }
        let neutral = Branch {
            domain_lo: 0.0,
            domain_hi: 0.5,
            direction: Direction::Increasing,
            law: BranchLaw::Neutral { gamma },
        };
        Ok(IntervalMap {
            name: "lsv".into(),
            branches: vec![neutral, affine(0.5, 1.0, 2.0)],
            kind: MapKind::Gpm { gamma, neutral_branch: 0 },
        })
    }

    fn named(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            MapKind::Gpm { gamma, .. } => Some(gamma),
            MapKind::UniformlyExpanding { .. } => None,
        }
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.branches.iter().all(|b| matches!(b.law, BranchLaw::Affine { .. }))
    }

    /// Branch containing `x`; shared endpoints belong to the right-hand branch.
    pub fn branch_index(&self, x: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { op: "branch_index", x });
        }
        let last = self.branches.len() - 1;
        Ok(self.branches.iter().position(|b| x < b.domain_hi).unwrap_or(last).min(last))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { op: "eval", x });
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let b = self.branches.iter().find(|b| x < b.domain_hi).unwrap_or(&self.branches[self.branches.len() - 1]);
        b.forward(x).clamp(0.0, 1.0)
    }

    fn is_endpoint(&self, x: f64) -> bool {
        x == 0.0 || x == 1.0 || self.branches.iter().any(|b| x == b.domain_lo || x == b.domain_hi)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { op: "derivative", x });
        }
        if self.is_endpoint(x) {
            return Err(Error::Endpoint { op: "derivative", x });
        }
        Ok(self.branches[self.branch_index(x)?].derivative(x))
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        if self.is_endpoint(x) {
            return Err(Error::Endpoint { op: "second_derivative", x });
        }
        Ok(self.branches[self.branch_index(x)?].second_derivative(x))
    }

    pub fn inverse_branch(&self, k: usize, y: f64) -> Result<f64> {
        const OP: &str = "inverse_branch";
        let b = self.branches.get(k).ok_or_else(|| Error::invalid(OP, format!("no branch {k}")))?;
        let (lo, hi) = b.image();
        if !(y >= lo - 1e-15 && y <= hi + 1e-15) {
            return Err(Error::OutOfImage { op: OP, branch: k, y });
        }
        Ok(b.inverse_unchecked(y.clamp(lo, hi)))
    }

    /// `(x0, T x0, …, T^{n−1} x0)`. For GPM maps iterates are kept at least one
    /// ulp above the neutral fixed point.
    pub fn orbit(&self, x0: f64, n: usize) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&x0) {
            return Err(Error::Domain { op: "orbit", x: x0 });
        }
        let floor = if self.gamma().is_some() { f64::from_bits(1) } else { 0.0 };
        let mut out = Vec::with_capacity(n);
        let mut x = x0.max(floor);
        for _ in 0..n {
            out.push(x);
            x = self.eval_unchecked(x).max(floor);
        }
        Ok(out)
    }

    /// Smallest positive value iterates are allowed to take.
    pub fn orbit_floor(&self) -> f64 {
        if self.gamma().is_some() {
            f64::from_bits(1)
        } else {
            0.0
        }
    }

    pub fn validate(&self, grid_size: usize) -> Result<ValidationReport> {
        if grid_size < 100 {
            return Err(Error::invalid("validate", "grid_size must be at least 100"));
        }
        let mut issues = Vec::new();
        let mut coverage_ok =
            self.branches[0].domain_lo == 0.0 && self.branches[self.branches.len() - 1].domain_hi == 1.0;
        for w in self.branches.windows(2) {
            if w[0].domain_hi != w[1].domain_lo {
                coverage_ok = false;
                issues.push(format!("gap or overlap at {} / {}", w[0].domain_hi, w[1].domain_lo));
            }
        }
        if !coverage_ok && issues.is_empty() {
            issues.push("branches do not reach 0 and 1".into());
        }
        let mut branches = Vec::new();
        let mut adler = 0.0f64;
        for (k, b) in self.branches.iter().enumerate() {
            let mut min_d = f64::INFINITY;
            let mut monotone = true;
            let mut prev = None;
            for i in 1..grid_size {
                let x = b.domain_lo + (b.domain_hi - b.domain_lo) * i as f64 / grid_size as f64;
                let d = b.derivative(x);
                min_d = min_d.min(d.abs());
                let y = b.forward(x);
                if let Some(p) = prev {
                    let ok = match b.direction {
                        Direction::Increasing => y > p,
                        Direction::Decreasing => y < p,
                    };
                    monotone &= ok;
                }
                prev = Some(y);
                if self.gamma().is_none() {
                    adler = adler.max(b.second_derivative(x).abs() / (d * d));
                }
            }
            if !monotone {
                issues.push(format!("branch {k} not strictly monotone"));
            }
            branches.push(BranchReport { index: k, min_abs_derivative: min_d, monotone });
        }
        let mut gpm_fit = None;
        match self.kind {
            MapKind::UniformlyExpanding { lambda, .. } => {
                let m = branches.iter().map(|b| b.min_abs_derivative).fold(f64::INFINITY, f64::min);
                if m < lambda - 1e-12 || m <= 1.0 {
                    issues.push(format!("min |T'| = {m} below lambda = {lambda}"));
                }
            }
            MapKind::Gpm { gamma, neutral_branch } => {
                let b = &self.branches[neutral_branch];
                // Fit log T'' = log c + (γ−1) log x on 1e-6..1e-2.
                let pts: Vec<(f64, f64)> = (0..=40)
                    .map(|i| {
                        let x = 10f64.powf(-6.0 + 4.0 * i as f64 / 40.0);
                        let d2 = if matches!(b.law, BranchLaw::Neutral { .. }) {
                            b.second_derivative(x)
                        } else {
                            let h = (1e-4 * x).max(1e-12);
                            (b.forward(x + h) - 2.0 * b.forward(x) + b.forward(x - h)) / (h * h)
                        };
                        (x.ln(), d2.ln())
                    })
                    .collect();
                let (slope, intercept) = crate::fit::linear_fit(&pts);
                let gamma_hat = slope + 1.0;
                gpm_fit = Some(GpmFit { gamma_hat, c_hat: intercept.exp() });
                if (gamma_hat - gamma).abs() > 0.01 {
                    issues.push(format!("fitted gamma {gamma_hat} differs from {gamma}"));
                }
                let d0 = b.derivative(1e-12);
                if d0 >= 1.0 + 1e-2 {
                    issues.push(format!("T'(1e-12) = {d0} not close to 1"));
                }
            }
        }
        Ok(ValidationReport {
            map: self.name.clone(),
            coverage_ok,
            branches,
            adler_ratio: if self.gamma().is_none() { Some(adler) } else { None },
            gpm_fit,
            transitivity: "unverified (assumed)".into(),
            issues,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchReport {
    pub index: usize,
    pub min_abs_derivative: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GpmFit {
    pub gamma_hat: f64,
    pub c_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub map: String,
    pub coverage_ok: bool,
    pub branches: Vec<BranchReport>,
    pub adler_ratio: Option<f64>,
    pub gpm_fit: Option<GpmFit>,
    pub transitivity: String,
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_eval_and_inverse() {
        let m = IntervalMap::doubling();
        assert_eq!(m.eval(0.3).unwrap(), 0.6);
        assert_eq!(m.derivative(0.3).unwrap(), 2.0);
        assert_eq!(m.inverse_branch(0, 0.6).unwrap(), 0.3);
        assert!(m.eval(1.5).is_err());
        assert!(m.derivative(0.5).is_err());
    }

    #[test]
    fn lsv_examples() {
        let m = IntervalMap::lsv(0.5).unwrap();
        let y = m.eval(0.25).unwrap();
        assert!((y - 0.25 * (1.0 + 2f64.sqrt() * 0.5)).abs() < 1e-15);
        assert!((y - 0.426_776_695_296_636_9).abs() < 1e-15);
        assert_eq!(m.eval(0.75).unwrap(), 0.5);
        assert_eq!(m.eval(0.5).unwrap(), 0.0);
        assert_eq!(m.inverse_branch(1, 0.5).unwrap(), 0.75);
        assert!((m.inverse_branch(0, y).unwrap() - 0.25).abs() < 1e-12);
        let d = m.derivative(1e-8).unwrap();
        assert!(d > 1.0 && d < 1.001);
        assert!(m.inverse_branch(5, 0.1).is_err());
    }

    #[test]
    fn tent_derivative() {
        assert_eq!(IntervalMap::tent().derivative(0.7).unwrap(), -2.0);
    }

    #[test]
    fn orbits() {
        let m = IntervalMap::doubling();
        let o = m.orbit(1.0 / 3.0, 4).unwrap();
        for (a, b) in o.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(m.orbit(0.0, 3).unwrap(), vec![0.0, 0.0, 0.0]);
        let l = IntervalMap::lsv(0.25).unwrap();
        let o = l.orbit(0.9, 3).unwrap();
        assert_eq!(o[1], l.eval(0.9).unwrap());
        assert_eq!(o[2], l.eval(o[1]).unwrap());
        assert!(l.orbit(0.0, 2).unwrap().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn validation_reports() {
        let r = IntervalMap::doubling().validate(1000).unwrap();
        assert!(r.ok());
        assert_eq!(r.branches[0].min_abs_derivative, 2.0);
        assert_eq!(r.adler_ratio, Some(0.0));
        let r = IntervalMap::lsv(0.25).unwrap().validate(1000).unwrap();
        let g = r.gpm_fit.unwrap().gamma_hat;
        assert!((0.24..=0.26).contains(&g), "{g}");
        let r = IntervalMap::piecewise_linear(&[1.5, 3.0]).unwrap().validate(500).unwrap();
        let m = r.branches.iter().map(|b| b.min_abs_derivative).fold(f64::INFINITY, f64::min);
        assert!((m - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lsv_left_limit_is_one() {
        let m = IntervalMap::lsv(0.3).unwrap();
        let y = m.branches[0].forward(0.5 - 1e-12);
        assert!((y - 1.0).abs() < 1e-10);
    }
}
