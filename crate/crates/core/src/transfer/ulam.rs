use crate::error::{Error, Result};
use crate::grid::BinGrid;
use crate::maps::{Direction, IntervalMap};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { n, row_ptr, col, val }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col[k], self.val[k]))
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// `y = x·A` (row vector times matrix).
    pub fn left_mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col[k]] += xi * self.val[k];
            }
        }
    }

    /// `y = A·x`.
    pub fn right_mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            y[i] = s;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push((j, i, v));
            }
        }
        Csr::from_triplets(self.n, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlamOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Average the last 100 iterates before each convergence check.
    pub cesaro: bool,
    /// Depth of the exact preimage pullback used by the kernel; `None` picks
    /// the largest depth within the leaf budget.
    pub exact_depth: Option<usize>,
    pub leaf_budget: usize,
}

impl Default for UlamOptions {
    fn default() -> Self {
        UlamOptions { tol: 1e-12, max_iter: 100_000, cesaro: false, exact_depth: None, leaf_budget: 1 << 22 }
    }
}

impl UlamOptions {
    pub fn for_map(map: &IntervalMap) -> Self {
        let mut o = UlamOptions::default();
        if map.gamma().is_some() {
            o.cesaro = true;
            o.leaf_budget = 1 << 20;
        }
        o
    }
}

#[derive(Debug, Clone)]
pub struct UlamOperator {
    pub map: IntervalMap,
    pub grid: BinGrid,
    /// `P[i][j] = Leb(I_i ∩ T^{-1} I_j) / Leb(I_i)`.
    pub p: Csr,
    /// Transpose of `P`, used to push mass forward and to apply `K`.
    pub pt: Csr,
    /// Invariant density, cell-average values.
    pub h: Vec<f64>,
    /// Stationary bin masses `π_i = h_i·Leb(I_i)`.
    pub pi: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub exact_depth: usize,
    /// Bins excluded from the support (`h_i < 1e-14`).
    pub unsupported: Vec<usize>,
}

/// Builds the Ulam matrix from exact preimage intervals of bin edges and
/// computes the invariant density by power iteration on the adjoint.
pub fn build_ulam(map: &IntervalMap, grid: &BinGrid, opts: &UlamOptions) -> Result<UlamOperator> {
    const OP: &str = "build_ulam";
    let b = grid.len();
    if b < 1 {
        return Err(Error::invalid(OP, "empty grid"));
    }
    let e = &grid.edges;
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * b * map.branches.len());
    for br in &map.branches {
        let (il, ih) = br.image();
        let j0 = grid.locate(il);
        let j1 = if ih >= 1.0 { b - 1 } else { grid.locate(ih) };
        // Preimage of every edge inside the image, shared between neighbours.
        let mut pre = Vec::with_capacity(j1 - j0 + 2);
        for j in j0..=j1 + 1 {
            let y = e[j].clamp(il, ih);
            pre.push(br.inverse_unchecked(y));
        }
        for (jj, j) in (j0..=j1).enumerate() {
            let (x0, x1) = match br.direction {
                Direction::Increasing => (pre[jj], pre[jj + 1]),
                Direction::Decreasing => (pre[jj + 1], pre[jj]),
            };
            let (x0, x1) = (x0.max(br.domain_lo), x1.min(br.domain_hi));
            if !(x1 > x0) {
                continue;
            }
            let mut i = grid.locate(x0);
            while i < b && e[i] < x1 {
                let ov = x1.min(e[i + 1]) - x0.max(e[i]);
                if ov > 0.0 {
                    trip.push((i, j, ov));
                }
                i += 1;
            }
        }
    }
    let mut p = Csr::from_triplets(b, trip);
    for i in 0..b {
        let s: f64 = p.row(i).map(|(_, v)| v).sum();
        if s <= 0.0 {
            return Err(Error::invalid(OP, format!("bin {i} has no image")));
        }
        for k in p.row_ptr[i]..p.row_ptr[i + 1] {
            p.val[k] /= s;
        }
    }
    let pt = p.transpose();

    let mut pi: Vec<f64> = (0..b).map(|i| grid.width(i)).collect();
    let mut next = vec![0.0; b];
    let mut acc = vec![0.0; b];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let l1 = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| (x - y).abs()).sum::<f64>();
    while iterations < opts.max_iter {
        p.left_mul(&pi, &mut next);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        std::mem::swap(&mut pi, &mut next);
        iterations += 1;
        if opts.cesaro {
            acc.iter_mut().zip(&pi).for_each(|(a, v)| *a += v);
        }
        if iterations % 100 == 0 {
            // pi holds the iterate, next the previous one.
            p.left_mul(&pi, &mut next);
            residual = l1(&next, &pi);
            if residual <= opts.tol {
                break;
            }
            if opts.cesaro {
                let s: f64 = acc.iter().sum();
                let avg: Vec<f64> = acc.iter().map(|v| v / s).collect();
                p.left_mul(&avg, &mut next);
                let r = l1(&next, &avg);
                if r <= opts.tol {
                    pi = avg;
                    residual = r;
                    break;
                }
                // Restart from the average: it damps slowly oscillating modes.
                if r < residual {
                    pi = avg;
                }
                acc.iter_mut().for_each(|a| *a = 0.0);
            }
        }
    }
    if residual > opts.tol {
        return Err(Error::NonConvergence { op: OP, iterations, residual });
    }
    let h: Vec<f64> = pi.iter().enumerate().map(|(i, &m)| m / grid.width(i)).collect();
    let unsupported = (0..b).filter(|&i| h[i] < 1e-14).collect();
    let branches = map.branches.len().max(1);
    let exact_depth = match opts.exact_depth {
        Some(d) => d,
        None => {
            let mut d = 0;
            let mut leaves = b;
            while leaves * branches <= opts.leaf_budget && d < 24 {
                leaves *= branches;
                d += 1;
            }
            d
        }
    };
    Ok(UlamOperator {
        map: map.clone(),
        grid: grid.clone(),
        p,
        pt,
        h,
        pi,
        iterations,
        residual,
        exact_depth,
        unsupported,
    })
}

impl UlamOperator {
    pub fn bins(&self) -> usize {
        self.grid.len()
    }

    /// One step of the discretized kernel: `(K v)_j = Σ_i π_i P[i][j] v_i / π_j`,
    /// with `π_j` replaced by `(πP)_j` so constants are fixed exactly.
    pub fn kernel_step(&self, v: &[f64], out: &mut [f64]) {
        let b = self.bins();
        for j in 0..b {
            if self.pi[j] <= 0.0 || self.h[j] < 1e-14 {
                out[j] = 0.0;
                continue;
            }
            let (mut s, mut q) = (0.0, 0.0);
            for (i, pij) in self.pt.row(j) {
                let w = self.pi[i] * pij;
                s += w * v[i];
                q += w;
            }
            out[j] = if q > 0.0 { s / q } else { 0.0 };
        }
    }

    /// `‖πP − π‖₁`.
    pub fn stationarity_residual(&self) -> f64 {
        let mut next = vec![0.0; self.bins()];
        self.p.left_mul(&self.pi, &mut next);
        next.iter().zip(&self.pi).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Reversed chain `R[j][i] = π_i P[i][j] / π_j` in CSR form. Rows are
    /// normalized by `(πP)_j` so they stay stochastic at the solver tolerance.
    pub fn reversed(&self) -> Csr {
        let b = self.bins();
        let mut t = Vec::with_capacity(self.p.nnz());
        for j in 0..b {
            let q: f64 = self.pt.row(j).map(|(i, pij)| self.pi[i] * pij).sum();
            if self.pi[j] <= 0.0 || q <= 0.0 {
                t.push((j, j, 1.0));
                continue;
            }
            for (i, pij) in self.pt.row(j) {
                let v = self.pi[i] * pij / q;
                if v > 0.0 {
                    t.push((j, i, v));
                }
            }
        }
        Csr::from_triplets(b, t)
    }

    /// L¹ distance between the piecewise-constant densities of two operators.
    pub fn density_l1(&self, other: &UlamOperator) -> f64 {
        let mut pts: Vec<f64> = self.grid.edges.iter().chain(&other.grid.edges).copied().collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts.windows(2)
            .map(|w| {
                let m = 0.5 * (w[0] + w[1]);
                (self.h[self.grid.locate(m)] - other.h[other.grid.locate(m)]).abs() * (w[1] - w[0])
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_entries_are_halves() {
        let m = IntervalMap::doubling();
        let g = BinGrid::uniform(64).unwrap();
        let op = build_ulam(&m, &g, &UlamOptions::default()).unwrap();
        for i in 0..64 {
            let row: Vec<_> = op.p.row(i).collect();
            assert_eq!(row.len(), 2);
            assert!(row.iter().all(|&(_, v)| v == 0.5));
            assert!((op.h[i] - 1.0).abs() < 1e-12);
        }
        assert!(op.stationarity_residual() <= 1e-12);
    }

    #[test]
    fn rows_are_stochastic() {
        for m in
            [IntervalMap::tent(), IntervalMap::piecewise_linear(&[1.5, 3.0]).unwrap(), IntervalMap::lsv(0.25).unwrap()]
        {
            let g = if m.gamma().is_some() {
                BinGrid::geometric_near_zero(512, 1e-8).unwrap()
            } else {
                BinGrid::uniform(300).unwrap()
            };
            let op = build_ulam(&m, &g, &UlamOptions::for_map(&m)).unwrap();
            for i in 0..op.bins() {
                let s: f64 = op.p.row(i).map(|(_, v)| v).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert!((op.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let r = op.reversed();
            let mut back = vec![0.0; op.bins()];
            r.left_mul(&op.pi, &mut back);
            let err: f64 = back.iter().zip(&op.pi).map(|(a, b)| (a - b).abs()).sum();
            assert!(err < 1e-10);
            for j in 0..op.bins() {
                let s: f64 = r.row(j).map(|(_, v)| v).sum();
                assert!((s - 1.0).abs() < 1e-10, "{} {j} {s} {}", m.name, op.pi[j]);
            }
        }
    }
}
