//! Piecewise-monotone observables, tail functions, the variation norm and the
//! bounded-variation decompositions.
//!
//! An [`Observable`] is a finite weighted sum `Σ a_ℓ g_ℓ` of [`MonotonePiece`]s.
//! Each piece is a monotone law on an interval, null outside, optionally
//! restricted to a value band (`g·1_{g ∈ band}`), which is how truncations and
//! decompositions stay exact pointwise.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PieceLaw {
    /// `(x + shift)^{−a}`.
    Power { a: f64, shift: f64 },
    /// `x^{−a} |ln x|^{−b}`.
    LogDamped { a: f64, b: f64 },
    /// `cos(2πkx)`.
    Cosine { k: u32 },
    /// `1`.
    Constant,
    /// `slope·x + offset`.
    Linear { slope: f64, offset: f64 },
    /// Linear interpolation through `(xs, ys)`, `ys` monotone.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl PieceLaw {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            PieceLaw::Power { a, shift } => (x + shift).powf(-a),
            PieceLaw::LogDamped { a, b } => x.powf(-a) * x.ln().abs().powf(-b),
            PieceLaw::Cosine { k } => (2.0 * PI * *k as f64 * x).cos(),
            PieceLaw::Constant => 1.0,
            PieceLaw::Linear { slope, offset } => slope * x + offset,
            PieceLaw::Table { xs, ys } => {
                if x <= xs[0] {
                    return ys[0];
                }
                let n = xs.len();
                if x >= xs[n - 1] {
                    return ys[n - 1];
                }
                let i = xs.partition_point(|&t| t <= x) - 1;
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ys[i] + t * (ys[i + 1] - ys[i])
            }
        }
    }

    /// Antiderivative of the law, where a closed form exists.
    fn antiderivative(&self, x: f64) -> Option<f64> {
        match self {
            PieceLaw::Power { a, shift } => {
                let u = x + shift;
                if (a - 1.0).abs() < 1e-15 {
                    Some(u.ln())
                } else {
                    Some(u.powf(1.0 - a) / (1.0 - a))
                }
            }
            PieceLaw::Cosine { k } => {
                let w = 2.0 * PI * *k as f64;
                Some((w * x).sin() / w)
            }
            PieceLaw::Constant => Some(x),
            PieceLaw::Linear { slope, offset } => Some(0.5 * slope * x * x + offset * x),
            _ => None,
        }
    }

    /// Antiderivative of the squared law, where a closed form exists.
    fn antiderivative_sq(&self, x: f64) -> Option<f64> {
        match self {
            PieceLaw::Power { a, shift } => {
                let u = x + shift;
                if (2.0 * a - 1.0).abs() < 1e-15 {
                    Some(u.ln())
                } else {
                    Some(u.powf(1.0 - 2.0 * a) / (1.0 - 2.0 * a))
                }
            }
            PieceLaw::Cosine { k } => {
                let w = 2.0 * PI * *k as f64;
                Some(0.5 * x + (2.0 * w * x).sin() / (4.0 * w))
            }
            PieceLaw::Constant => Some(x),
            PieceLaw::Linear { slope, offset } => {
                if *slope == 0.0 {
                    Some(offset * offset * x)
                } else {
                    Some((slope * x + offset).powi(3) / (3.0 * slope))
                }
            }
            _ => None,
        }
    }
}

/// Value band `[lo, hi]` with closedness flags; the full line by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl Band {
    pub const ALL: Band = Band { lo: f64::NEG_INFINITY, lo_closed: true, hi: f64::INFINITY, hi_closed: true };

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    fn intersect(&self, o: &Band) -> Band {
        let (lo, lo_closed) = if self.lo > o.lo {
            (self.lo, self.lo_closed)
        } else if o.lo > self.lo {
            (o.lo, o.lo_closed)
        } else {
            (self.lo, self.lo_closed && o.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < o.hi {
            (self.hi, self.hi_closed)
        } else if o.hi < self.hi {
            (o.hi, o.hi_closed)
        } else {
            (self.hi, self.hi_closed && o.hi_closed)
        };
        Band { lo, lo_closed, hi, hi_closed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    NonDecreasing,
    NonIncreasing,
}

/// `scale·law(x)` on the support interval, restricted to values in `band`,
/// null elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonePiece {
    pub support_lo: f64,
    pub support_hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
    pub direction: Monotonicity,
    pub law: PieceLaw,
    pub scale: f64,
    pub band: Band,
    /// Closure of `{x in support : value in band}`, cached.
    pub effective: Option<(f64, f64)>,
}

/// Largest `x` in `[lo, hi]` with `pred(x)` true, for `pred` true on a prefix.
fn last_true(lo: f64, hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    // Bisection over the ordered bit patterns of non-negative doubles.
    let (mut a, mut b) = (lo.to_bits(), hi.to_bits());
    if pred(hi) {
        return hi;
    }
    while b - a > 1 {
        let m = a + (b - a) / 2;
        if pred(f64::from_bits(m)) {
            a = m;
        } else {
            b = m;
        }
    }
    f64::from_bits(a)
}

impl MonotonePiece {
    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool, law: PieceLaw, scale: f64) -> Result<Self> {
        const OP: &str = "MonotonePiece::new";
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(OP, format!("support [{lo}, {hi}] not inside [0,1]")));
        }
        if !scale.is_finite() {
            return Err(Error::invalid(OP, "scale must be finite"));
        }
        let probe_a = law.value(lo + 0.25 * (hi - lo));
        let probe_b = law.value(lo + 0.75 * (hi - lo));
        let direction =
            if scale * (probe_b - probe_a) < 0.0 { Monotonicity::NonIncreasing } else { Monotonicity::NonDecreasing };
        let mut p = MonotonePiece {
            support_lo: lo,
            support_hi: hi,
            lo_closed,
            hi_closed,
            direction,
            law,
            scale,
            band: Band::ALL,
            effective: None,
        };
        p.effective = p.compute_effective();
        Ok(p)
    }

    #[inline]
    fn raw(&self, x: f64) -> f64 {
        self.scale * self.law.value(x)
    }

    fn in_support(&self, x: f64) -> bool {
        let l = if self.lo_closed { x >= self.support_lo } else { x > self.support_lo };
        let h = if self.hi_closed { x <= self.support_hi } else { x < self.support_hi };
        l && h
    }

    pub fn eval(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return 0.0;
        }
        let v = self.raw(x);
        if self.band.contains(v) {
            v
        } else {
            0.0
        }
    }

    /// Restricts the piece to values in `band` (intersected with any existing
    /// band).
    pub fn restricted(&self, band: Band) -> Self {
        let mut p = self.clone();
        p.band = self.band.intersect(&band);
        p.effective = p.compute_effective();
        p
    }

    fn compute_effective(&self) -> Option<(f64, f64)> {
        let (lo, hi) = (self.support_lo, self.support_hi);
        if self.band == Band::ALL {
            return Some((lo, hi));
        }
        // Values in band form an interval of x since the law is monotone.
        // Probe interior points to decide which side the band sits on.
        let inc = self.direction == Monotonicity::NonDecreasing;
        let above_lo = |x: f64| {
            let v = self.raw(x);
            if self.band.lo_closed {
                v >= self.band.lo
            } else {
                v > self.band.lo
            }
        };
        let below_hi = |x: f64| {
            let v = self.raw(x);
            if self.band.hi_closed {
                v <= self.band.hi
            } else {
                v < self.band.hi
            }
        };
        // Interior sample points avoid evaluating singular endpoints.
        let ilo = if lo == 0.0 { f64::from_bits(1) } else { lo };
        let (a, b) = if inc {
            // above_lo holds on a suffix, below_hi on a prefix.
            let a = if above_lo(ilo) {
                lo
            } else if !above_lo(hi) {
                return None;
            } else {
                last_true(ilo, hi, |x| !above_lo(x))
            };
            let b = if below_hi(hi) {
                hi
            } else if !below_hi(ilo) {
                return None;
            } else {
                last_true(ilo, hi, below_hi)
            };
            (a, b)
        } else {
            let a = if below_hi(ilo) {
                lo
            } else if !below_hi(hi) {
                return None;
            } else {
                last_true(ilo, hi, |x| !below_hi(x))
            };
            let b = if above_lo(hi) {
                hi
            } else if !above_lo(ilo) {
                return None;
            } else {
                last_true(ilo, hi, above_lo)
            };
            (a, b)
        };
        if a > b {
            None
        } else {
            Some((a, b))
        }
    }

    /// `∫_a^b piece(x) dx`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.integral_pow(a, b, 1)
    }

    /// `∫_a^b piece(x)² dx`.
    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        self.integral_pow(a, b, 2)
    }

    fn integral_pow(&self, a: f64, b: f64, p: i32) -> f64 {
        let Some((c, d)) = self.effective else { return 0.0 };
        let lo = a.max(c);
        let hi = b.min(d);
        if !(hi > lo) {
            return 0.0;
        }
        let closed = if p == 1 {
            self.law.antiderivative(hi).zip(self.law.antiderivative(lo)).map(|(u, v)| u - v)
        } else {
            self.law.antiderivative_sq(hi).zip(self.law.antiderivative_sq(lo)).map(|(u, v)| u - v)
        };
        let s = if p == 1 { self.scale } else { self.scale * self.scale };
        match closed {
            Some(v) if v.is_finite() => s * v,
            _ => match &self.law {
                PieceLaw::Table { xs, ys } => s * table_integral(xs, ys, lo, hi, p),
                law => {
                    let q = quad::integrate(|x| law.value(x).powi(p), lo, hi, 1e-15, 1e-12);
                    s * q.value
                }
            },
        }
    }
}

fn table_integral(xs: &[f64], ys: &[f64], lo: f64, hi: f64, p: i32) -> f64 {
    let law = PieceLaw::Table { xs: xs.to_vec(), ys: ys.to_vec() };
    let mut pts = vec![lo];
    pts.extend(xs.iter().copied().filter(|&x| x > lo && x < hi));
    pts.push(hi);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (u, v) = (law.value(w[0]), law.value(w[1]));
        let dx = w[1] - w[0];
        total += if p == 1 { 0.5 * (u + v) * dx } else { dx * (u * u + u * v + v * v) / 3.0 };
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TailFunction {
    /// `min(1, t^{−q})`.
    PowerLaw { q: f64 },
    /// `1` on `[0, m)`, `0` afterwards: the tail of an observable bounded by `m`.
    Bounded { m: f64 },
    /// Right-continuous step function through `(t_i, H_i)`, `H = 1` before `t_0`.
    Table { ts: Vec<f64>, hs: Vec<f64> },
    /// `min(cap, H(t))`.
    Capped { cap: f64, inner: Box<TailFunction> },
}

impl TailFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TailFunction::PowerLaw { q } => {
                if t <= 1.0 {
                    1.0
                } else {
                    t.powf(-q)
                }
            }
            TailFunction::Bounded { m } => {
                if t < *m {
                    1.0
                } else {
                    0.0
                }
            }
            TailFunction::Table { ts, hs } => {
                let k = ts.partition_point(|&x| x <= t);
                if k == 0 {
                    1.0
                } else {
                    hs[k - 1]
                }
            }
            TailFunction::Capped { cap, inner } => cap.min(inner.eval(t)),
        }
    }

    /// Checks the tail-function axioms on a grid.
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "TailFunction::validate";
        if let TailFunction::Table { ts, hs } = self {
            if ts.len() != hs.len() || ts.is_empty() {
                return Err(Error::invalid(OP, "table needs matching non-empty columns"));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(OP, "table abscissae must increase"));
            }
        }
        let mut prev = f64::INFINITY;
        for i in 0..=10_000 {
            let t = 1e-3 * 10f64.powf(9.0 * i as f64 / 10_000.0);
            let v = self.eval(t);
            if !(0.0..=1.0).contains(&v) || v > prev + 1e-15 {
                return Err(Error::invalid(OP, format!("not a non-increasing map into [0,1] at t={t}")));
            }
            prev = v;
        }
        if self.eval(1e6) > 1e-3 {
            return Err(Error::invalid(OP, "H(1e6) does not approach 0"));
        }
        match lil_condition_integral(self, 0.0) {
            LilIntegral::Finite { .. } => Ok(()),
            LilIntegral::Divergent => Err(Error::invalid(OP, "t·H(t) is not integrable")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LilIntegral {
    Finite { value: f64, tail_bound: f64 },
    Divergent,
}

/// `∫_0^∞ x·H(x)^{(1−2γ)/(1−γ)} dx`. `[0, 1]` is integrated directly and
/// `[1, T]` in the variable `ln x`; beyond `T` the integrand is treated as a
/// power with its local exponent, which either certifies the tail or returns
/// the divergence marker.
pub fn lil_condition_integral(h: &TailFunction, gamma: f64) -> LilIntegral {
    let e = (1.0 - 2.0 * gamma) / (1.0 - gamma);
    let g = |x: f64| {
        let v = h.eval(x);
        if v <= 0.0 {
            0.0
        } else {
            x * v.powf(e)
        }
    };
    let mut kinks = vec![0.0, 1.0];
    let mut t_max: f64 = 1e8;
    match h {
        TailFunction::Bounded { m } => {
            kinks.push(*m);
            t_max = t_max.max(2.0 * m);
        }
        TailFunction::Table { ts, .. } => {
            kinks.extend(ts.iter().copied());
            t_max = t_max.max(2.0 * ts[ts.len() - 1]);
        }
        TailFunction::Capped { inner, .. } => {
            if let TailFunction::Table { ts, .. } = inner.as_ref() {
                kinks.extend(ts.iter().copied());
                t_max = t_max.max(2.0 * ts[ts.len() - 1]);
            }
        }
        TailFunction::PowerLaw { .. } => {}
    }
    kinks.retain(|&k| (0.0..=t_max).contains(&k));
    kinks.push(t_max);
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let mut value = 0.0;
    for w in kinks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let q = if a >= 1.0 {
            quad::integrate(
                |u: f64| {
                    let x = u.exp();
                    x * g(x)
                },
                a.ln(),
                b.ln(),
                1e-14,
                1e-12,
            )
        } else {
            quad::integrate(g, a, b, 1e-14, 1e-12)
        };
        value += q.value;
    }
    let top = g(t_max);
    if top == 0.0 {
        return LilIntegral::Finite { value, tail_bound: 0.0 };
    }
    let p = -(g(t_max).ln() - g(0.5 * t_max).ln()) / std::f64::consts::LN_2;
    if !(p > 1.0 + 1e-9) {
        return LilIntegral::Divergent;
    }
    let tail = t_max * top / (p - 1.0);
    LilIntegral::Finite { value: value + tail, tail_bound: tail }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ClassTag {
    L2Class { p: f64, m: f64 },
    TailClass { h: TailFunction },
    Untagged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub weight: f64,
    pub piece: MonotonePiece,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    pub name: String,
    pub terms: Vec<Term>,
    pub class_tag: ClassTag,
    /// Truncation level when produced by [`truncate_gn`].
    pub truncation_level: Option<f64>,
}

impl Observable {
    pub fn new(name: impl Into<String>, terms: Vec<Term>, class_tag: ClassTag) -> Result<Self> {
        let o = Observable { name: name.into(), terms, class_tag, truncation_level: None };
        if o.class_tag != ClassTag::Untagged && o.weight_sum() > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "Observable::new",
                format!("class-tagged observable has Σ|a| = {} > 1", o.weight_sum()),
            ));
        }
        Ok(o)
    }

    pub fn weight_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight.abs()).sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.weight * t.piece.eval(x)).sum()
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.terms.iter().map(|t| t.weight * t.piece.integral(a, b)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.weight == 0.0 || t.piece.effective.is_none())
    }

    /// Multiplies every weight by `c`; the class tag is dropped unless `|c| ≤ 1`.
    pub fn scaled(&self, c: f64) -> Observable {
        let mut o = self.clone();
        for t in &mut o.terms {
            t.weight *= c;
        }
        if c.abs() > 1.0 {
            o.class_tag = ClassTag::Untagged;
        }
        o
    }

    /// Concatenation of term lists (untagged).
    pub fn plus(&self, other: &Observable) -> Observable {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Observable {
            name: format!("{}+{}", self.name, other.name),
            terms,
            class_tag: ClassTag::Untagged,
            truncation_level: None,
        }
    }

    /// Points where some term's support or band boundary sits.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0, 1.0];
        for t in &self.terms {
            pts.push(t.piece.support_lo);
            pts.push(t.piece.support_hi);
            if let Some((a, b)) = t.piece.effective {
                pts.push(a);
                pts.push(b);
            }
            if let PieceLaw::Table { xs, .. } = &t.piece.law {
                pts.extend(xs.iter().copied().filter(|x| (0.0..=1.0).contains(x)));
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

fn piece(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool, law: PieceLaw, scale: f64) -> MonotonePiece {
    MonotonePiece::new(lo, hi, lo_closed, hi_closed, law, scale).expect("built-in piece")
}

/// Built-in observables.
pub mod builtin {
    use super::*;

    /// `(x + shift)^{−a}` on `(0, 1]`.
    pub fn power_law(a: f64, shift: f64) -> Result<Observable> {
        if !(a > 0.0) || shift < 0.0 {
            return Err(Error::invalid("power_law", "need a > 0 and shift ≥ 0"));
        }
        let p = piece(0.0, 1.0, false, true, PieceLaw::Power { a, shift }, 1.0);
        Observable::new(
            format!("power_law(a={a},shift={shift})"),
            vec![Term { weight: 1.0, piece: p }],
            ClassTag::Untagged,
        )
    }

    /// `x^{−a}|ln x|^{−b}` on `(0, e^{−b/a}]`, where it is non-increasing.
    pub fn log_damped_power(a: f64, b: f64) -> Result<Observable> {
        if !(a > 0.0) || b < 0.0 {
            return Err(Error::invalid("log_damped_power", "need a > 0 and b ≥ 0"));
        }
        let hi = if b > 0.0 { (-b / a).exp() } else { 1.0 };
        let law = PieceLaw::LogDamped { a, b };
        let p = MonotonePiece::new(0.0, hi, false, true, law, 1.0)?;
        Observable::new(
            format!("log_damped_power(a={a},b={b})"),
            vec![Term { weight: 1.0, piece: p }],
            ClassTag::Untagged,
        )
    }

    /// `cos(2πkx)` as `4k` constant-sign quarter-period pieces with weight
    /// `1/(4k)` and scale `4k`, so that `Σ|a| = 1`.
    pub fn cosine(k: u32) -> Result<Observable> {
        if k == 0 {
            return Err(Error::invalid("cosine", "k must be positive"));
        }
        let q = 4 * k as usize;
        let w = 1.0 / q as f64;
        let terms = (0..q)
            .map(|i| {
                let lo = i as f64 / q as f64;
                let hi = (i + 1) as f64 / q as f64;
                let p = piece(lo, hi, true, i + 1 == q, PieceLaw::Cosine { k }, q as f64);
                Term { weight: w, piece: p }
            })
            .collect();
        Observable::new(format!("cosine(k={k})"), terms, ClassTag::Untagged)
    }

    /// `1_{[lo, hi)}`, closed at 1 when `hi = 1`.
    pub fn indicator(lo: f64, hi: f64) -> Result<Observable> {
        let p = MonotonePiece::new(lo, hi, true, hi == 1.0, PieceLaw::Constant, 1.0)?;
        Observable::new(format!("indicator({lo},{hi})"), vec![Term { weight: 1.0, piece: p }], ClassTag::Untagged)
    }

    /// `x − 1/2`, split at `1/2` into two constant-sign pieces of weight 1/2.
    pub fn centered_linear() -> Result<Observable> {
        let law = PieceLaw::Linear { slope: 2.0, offset: -1.0 };
        let left = piece(0.0, 0.5, true, false, law.clone(), 1.0);
        let right = piece(0.5, 1.0, true, true, law, 1.0);
        Observable::new(
            "centered_linear",
            vec![Term { weight: 0.5, piece: left }, Term { weight: 0.5, piece: right }],
            ClassTag::Untagged,
        )
    }

    /// `c` as one piece of unit weight and scale `c`.
    pub fn constant(c: f64) -> Result<Observable> {
        if !c.is_finite() {
            return Err(Error::invalid("constant", "value must be finite"));
        }
        let p = piece(0.0, 1.0, true, true, PieceLaw::Constant, c);
        Observable::new(format!("constant({c})"), vec![Term { weight: 1.0, piece: p }], ClassTag::Untagged)
    }

    /// Monotone piecewise-linear table on `[xs_0, xs_last]`, split at a sign change.
    pub fn table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Observable> {
        const OP: &str = "table";
        if xs.len() < 2 || xs.len() != ys.len() || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(OP, "need ≥ 2 strictly increasing abscissae with matching values"));
        }
        let inc = ys.windows(2).all(|w| w[1] >= w[0]);
        let dec = ys.windows(2).all(|w| w[1] <= w[0]);
        if !(inc || dec) {
            return Err(Error::invalid(OP, "table values must be monotone"));
        }
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        let law = PieceLaw::Table { xs: xs.clone(), ys: ys.clone() };
        let (first, last) = (ys[0], ys[ys.len() - 1]);
        if first * last >= 0.0 || first == 0.0 || last == 0.0 {
            let p = MonotonePiece::new(lo, hi, true, hi == 1.0, law, 1.0)?;
            return Observable::new("table", vec![Term { weight: 1.0, piece: p }], ClassTag::Untagged);
        }
        // Split at the zero crossing into two constant-sign pieces.
        let i = ys.windows(2).position(|w| w[0] * w[1] <= 0.0 && w[0] != w[1]).expect("sign change");
        let x0 = xs[i] + (xs[i + 1] - xs[i]) * ys[i] / (ys[i] - ys[i + 1]);
        let mut terms = Vec::new();
        if x0 > lo {
            terms.push(Term { weight: 0.5, piece: MonotonePiece::new(lo, x0, true, false, law.clone(), 2.0)? });
        }
        if x0 < hi {
            terms.push(Term { weight: 0.5, piece: MonotonePiece::new(x0, hi, true, hi == 1.0, law, 2.0)? });
        }
        Observable::new("table", terms, ClassTag::Untagged)
    }
}

/// Exact `‖f‖_v` including the boundary terms `|f(a_0)|`, `|f(a_k)|`.
///
/// Walks the sorted breakpoints; between consecutive breakpoints all active
/// pieces must share a direction so the sum is monotone there.
pub fn variation_norm(f: &Observable) -> Result<f64> {
    const OP: &str = "variation_norm";
    let pts = f.breakpoints();
    let mut seq: Vec<f64> = vec![0.0];
    let mut last_right = 0.0;
    for (i, &p) in pts.iter().enumerate() {
        // Left limit at p equals the right-end limit of the previous open gap.
        let left = if i == 0 { 0.0 } else { last_right };
        seq.push(left);
        seq.push(f.eval(p));
        let next = pts.get(i + 1).copied();
        let Some(q) = next else {
            seq.push(0.0);
            break;
        };
        let mut right = 0.0;
        let mut end = 0.0;
        let mut dir = 0i8;
        for t in &f.terms {
            if t.weight == 0.0 {
                continue;
            }
            let Some((a, b)) = t.piece.effective else { continue };
            if !(a <= p && q <= b) {
                continue;
            }
            let lv = t.piece.raw(p);
            let rv = t.piece.raw(q);
            if !lv.is_finite() || !rv.is_finite() {
                return Err(Error::UnboundedVariation { op: OP, msg: format!("infinite limit in {}", f.name) });
            }
            right += t.weight * lv;
            end += t.weight * rv;
            let d = (t.weight * (rv - lv)).signum() as i8;
            if rv != lv {
                if dir != 0 && d != dir {
                    return Err(Error::invalid(OP, "overlapping pieces with opposite directions"));
                }
                dir = d;
            }
        }
        seq.push(right);
        last_right = end;
    }
    seq.push(0.0);
    Ok(seq.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// `(bv, remainder)` with `bv = Σ a_ℓ g_ℓ 1_{|g_ℓ| ≤ m}`; the remainder is
/// tagged with `H_m = min(H(m), H)` when `f` carries a tail tag.
pub fn decompose_h(f: &Observable, m: f64) -> Result<(Observable, Observable)> {
    if !(m > 0.0) {
        return Err(Error::invalid("decompose_H", "m must be positive"));
    }
    let inner = Band { lo: -m, lo_closed: true, hi: m, hi_closed: true };
    let upper = Band { lo: m, lo_closed: false, hi: f64::INFINITY, hi_closed: true };
    let lower = Band { lo: f64::NEG_INFINITY, lo_closed: true, hi: -m, hi_closed: false };
    let mut bv = Vec::new();
    let mut rem = Vec::new();
    for t in &f.terms {
        bv.push(Term { weight: t.weight, piece: t.piece.restricted(inner) });
        for b in [upper, lower] {
            let p = t.piece.restricted(b);
            if p.effective.is_some() {
                rem.push(Term { weight: t.weight, piece: p });
            }
        }
    }
    let bv_tag = if f.class_tag == ClassTag::Untagged { ClassTag::Untagged } else { f.class_tag.clone() };
    let rem_tag = match &f.class_tag {
        ClassTag::TailClass { h } => {
            ClassTag::TailClass { h: TailFunction::Capped { cap: h.eval(m), inner: Box::new(h.clone()) } }
        }
        other => other.clone(),
    };
    Ok((
        Observable { name: format!("bv_{m}({})", f.name), terms: bv, class_tag: bv_tag, truncation_level: None },
        Observable { name: format!("rem_{m}({})", f.name), terms: rem, class_tag: rem_tag, truncation_level: None },
    ))
}

/// `LLn = ln(max(ln n, e))`.
pub fn log_log(n: f64) -> f64 {
    n.ln().max(std::f64::consts::E).ln()
}

/// Truncation level `M√n/√LLn`.
pub fn truncation_level(n: u64, m: f64) -> f64 {
    m * (n as f64).sqrt() / log_log(n as f64).sqrt()
}

/// Applies `g_n(x) = x·1_{|x| ≤ level}` to every piece.
pub fn truncate_gn(f: &Observable, n: u64, m: f64) -> Result<Observable> {
    if n < 16 || !(m > 0.0) {
        return Err(Error::invalid("truncate_gn", "need n ≥ 16 and M > 0"));
    }
    let level = truncation_level(n, m);
    let band = Band { lo: -level, lo_closed: true, hi: level, hi_closed: true };
    let terms = f.terms.iter().map(|t| Term { weight: t.weight, piece: t.piece.restricted(band) }).collect();
    Ok(Observable {
        name: format!("g_{n}({})", f.name),
        terms,
        class_tag: f.class_tag.clone(),
        truncation_level: Some(level),
    })
}

/// A density on bins used as the measure `μ` for L² computations.
#[derive(Debug, Clone, Copy)]
pub struct BinMeasure<'a> {
    pub edges: &'a [f64],
    pub density: &'a [f64],
}

impl BinMeasure<'_> {
    /// `μ(g²)` for one piece, exact per bin given the piecewise-constant density.
    pub fn piece_sq(&self, p: &MonotonePiece) -> f64 {
        let Some((a, b)) = p.effective else { return 0.0 };
        let i0 = self.edges.partition_point(|&e| e <= a).saturating_sub(1);
        let mut total = 0.0;
        for i in i0..self.density.len() {
            let (l, r) = (self.edges[i], self.edges[i + 1]);
            if l >= b {
                break;
            }
            if self.density[i] != 0.0 {
                total += self.density[i] * p.integral_sq(l, r);
            }
        }
        total
    }

    /// `μ(|g|^p)` by per-bin quadrature.
    pub fn piece_abs_pow(&self, piece: &MonotonePiece, pow: f64) -> f64 {
        if pow == 2.0 {
            return self.piece_sq(piece);
        }
        let Some((a, b)) = piece.effective else { return 0.0 };
        let mut total = 0.0;
        for i in 0..self.density.len() {
            let (l, r) = (self.edges[i].max(a), self.edges[i + 1].min(b));
            if r > l && self.density[i] != 0.0 {
                total += self.density[i] * quad::integrate(|x| piece.eval(x).abs().powf(pow), l, r, 1e-15, 1e-10).value;
            }
        }
        total
    }

    /// `μ{x : |g(x)| > t}`.
    pub fn piece_tail(&self, p: &MonotonePiece, t: f64) -> f64 {
        let up = p.restricted(Band { lo: t, lo_closed: false, hi: f64::INFINITY, hi_closed: true });
        let dn = p.restricted(Band { lo: f64::NEG_INFINITY, lo_closed: true, hi: -t, hi_closed: false });
        self.mass(up.effective) + self.mass(dn.effective)
    }

    fn mass(&self, iv: Option<(f64, f64)>) -> f64 {
        let Some((a, b)) = iv else { return 0.0 };
        let mut total = 0.0;
        for i in 0..self.density.len() {
            let (l, r) = (self.edges[i].max(a), self.edges[i + 1].min(b));
            if r > l {
                total += self.density[i] * (r - l);
            }
        }
        total
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Split {
    pub bv_part: Observable,
    pub remainder: Observable,
    /// `K(g_ℓ)` per term.
    pub thresholds: Vec<f64>,
    /// The common cap `K*`.
    pub cap: f64,
    /// Weight-weighted L² size of the remainder class.
    pub remainder_m: f64,
    pub degenerate: bool,
}

/// `K(g) = inf{K : μ(g² 1_{|g| ≥ K}) ≤ eps²}` by bisection.
pub fn threshold_k(p: &MonotonePiece, eps: f64, mu: &BinMeasure) -> Result<f64> {
    let tail_sq = |k: f64| {
        let q = p.restricted(Band { lo: k, lo_closed: true, hi: f64::INFINITY, hi_closed: true });
        let r = p.restricted(Band { lo: f64::NEG_INFINITY, lo_closed: true, hi: -k, hi_closed: true });
        mu.piece_sq(&q) + mu.piece_sq(&r)
    };
    let total = mu.piece_sq(p);
    if !total.is_finite() {
        return Err(Error::Quadrature { op: "decompose_L2", msg: "μ(g²) is not finite".into() });
    }
    if total <= eps * eps {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while tail_sq(hi) > eps * eps {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Quadrature { op: "decompose_L2", msg: "threshold search diverged".into() });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail_sq(mid) > eps * eps {
            lo = mid
        } else {
            hi = mid
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(hi)
}

/// L² split: every term is clipped at the common cap `K*`, the smallest cap
/// with `Σ|a_ℓ|·μ(g_ℓ² 1_{|g_ℓ| > K*})^{1/2} ≤ eps`.
pub fn decompose_l2(f: &Observable, eps: f64, mu: &BinMeasure) -> Result<L2Split> {
    const OP: &str = "decompose_L2";
    if !(eps > 0.0) {
        return Err(Error::invalid(OP, "eps must be positive"));
    }
    let mut thresholds = Vec::new();
    for t in &f.terms {
        thresholds.push(threshold_k(&t.piece, eps, mu)?);
    }
    let resid = |k: f64| -> f64 {
        f.terms
            .iter()
            .map(|t| {
                let up = t.piece.restricted(Band { lo: k, lo_closed: false, hi: f64::INFINITY, hi_closed: true });
                let dn = t.piece.restricted(Band { lo: f64::NEG_INFINITY, lo_closed: true, hi: -k, hi_closed: false });
                t.weight.abs() * (mu.piece_sq(&up) + mu.piece_sq(&dn)).sqrt()
            })
            .sum()
    };
    let norm: f64 = {
        // ‖f‖_{L²(μ)} by per-bin quadrature on the sum.
        let mut s = 0.0;
        for i in 0..mu.density.len() {
            if mu.density[i] != 0.0 {
                let (l, r) = (mu.edges[i], mu.edges[i + 1]);
                s += mu.density[i] * quad::integrate(|x| f.eval(x).powi(2), l, r, 1e-15, 1e-9).value;
            }
        }
        s.sqrt()
    };
    if eps >= norm {
        let zero =
            Observable { name: "0".into(), terms: vec![], class_tag: ClassTag::Untagged, truncation_level: None };
        let mut rem = f.clone();
        rem.class_tag = ClassTag::L2Class { p: 2.0, m: norm };
        return Ok(L2Split {
            bv_part: zero,
            remainder: rem,
            thresholds,
            cap: 0.0,
            remainder_m: norm,
            degenerate: true,
        });
    }
    let mut hi = thresholds.iter().copied().fold(1.0, f64::max);
    while resid(hi) > eps {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if resid(mid) > eps {
            lo = mid
        } else {
            hi = mid
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    let cap = hi;
    let (bv, mut rem) = decompose_h(f, cap)?;
    let remainder_m = resid(cap);
    rem.class_tag = ClassTag::L2Class { p: 2.0, m: remainder_m };
    Ok(L2Split { bv_part: bv, remainder: rem, thresholds, cap, remainder_m, degenerate: false })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassCheck {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks a class declaration numerically against `μ`: `μ(|g_ℓ|^p) ≤ M^p` or
/// `μ(|g_ℓ| > t) ≤ H(t)` on a `t` grid, plus the weight normalization.
pub fn check_class_tag(f: &Observable, mu: &BinMeasure) -> ClassCheck {
    let mut violations = Vec::new();
    if f.class_tag != ClassTag::Untagged && f.weight_sum() > 1.0 + 1e-12 {
        violations.push(format!("Σ|a| = {}", f.weight_sum()));
    }
    match &f.class_tag {
        ClassTag::L2Class { p, m } => {
            for (i, t) in f.terms.iter().enumerate() {
                let v = mu.piece_abs_pow(&t.piece, *p);
                if v > m.powf(*p) * (1.0 + 1e-9) {
                    violations.push(format!("term {i}: μ(|g|^p) = {v} > M^p = {}", m.powf(*p)));
                }
            }
        }
        ClassTag::TailClass { h } => {
            for (i, t) in f.terms.iter().enumerate() {
                for j in 0..=60 {
                    let s = 10f64.powf(-2.0 + 8.0 * j as f64 / 60.0);
                    let v = mu.piece_tail(&t.piece, s);
                    if v > h.eval(s) + 1e-12 {
                        violations.push(format!("term {i}: μ(|g| > {s}) = {v} > H = {}", h.eval(s)));
                        break;
                    }
                }
            }
        }
        ClassTag::Untagged => {}
    }
    ClassCheck { ok: violations.is_empty(), violations }
}
