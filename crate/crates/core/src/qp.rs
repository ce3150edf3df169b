//! Small dense convex quadratic programs.
//!
//! Solves `min 1/2 z^T H z + q^T z` subject to `A z >= b` and optional box bounds with
//! the Goldfarb-Idnani dual active-set method. Box bounds are folded into the
//! inequality rows: general rows come first, then one lower-bound row per variable
//! (`z_j >= z_min_j`), then one upper-bound row per variable (`-z_j >= -z_max_j`).

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Real};

/// Dense row-major square matrix helper.
fn at<T: Copy>(m: &[T], n: usize, i: usize, j: usize) -> T {
    m[i * n + j]
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T> {
    n: usize,
    h: Vec<T>,
    q: Vec<T>,
    a: Vec<Vec<T>>,
    b: Vec<T>,
    z_min: Option<Vec<T>>,
    z_max: Option<Vec<T>>,
}

impl<T: Real> QpProblem<T> {
    /// Cost `1/2 z^T H z + q^T z` with `H` given as rows.
    pub fn new(h: Vec<Vec<T>>, q: Vec<T>) -> Result<Self> {
        let n = q.len();
        if h.len() != n {
            return Err(Error::Dimension { expected: n, got: h.len() });
        }
        if let Some(row) = h.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension { expected: n, got: row.len() });
        }
        let scale = h.iter().flatten().fold(T::one(), |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if !((h[i][j] - h[j][i]).abs() <= lit::<T>(1e-10) * scale) {
                    return Err(Error::Contract(format!("cost matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, h: h.into_iter().flatten().collect(), q, a: Vec::new(), b: Vec::new(), z_min: None, z_max: None })
    }

    /// Diagonal cost matrix.
    pub fn diagonal(diag: &[T], q: Vec<T>) -> Result<Self> {
        let n = diag.len();
        let h = (0..n).map(|i| (0..n).map(|j| if i == j { diag[i] } else { T::zero() }).collect()).collect();
        Self::new(h, q)
    }

    /// Adds the row `a^T z >= b`.
    pub fn add_inequality(&mut self, a: Vec<T>, b: T) -> Result<()> {
        if a.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: a.len() });
        }
        self.a.push(a);
        self.b.push(b);
        Ok(())
    }

    pub fn with_inequalities(mut self, a: Vec<Vec<T>>, b: Vec<T>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension { expected: a.len(), got: b.len() });
        }
        for (row, bi) in a.into_iter().zip(b) {
            self.add_inequality(row, bi)?;
        }
        Ok(self)
    }

    pub fn with_bounds(mut self, z_min: Option<Vec<T>>, z_max: Option<Vec<T>>) -> Result<Self> {
        for bound in [&z_min, &z_max].into_iter().flatten() {
            if bound.len() != self.n {
                return Err(Error::Dimension { expected: self.n, got: bound.len() });
            }
        }
        if let (Some(lo), Some(hi)) = (&z_min, &z_max) {
            if let Some(index) = lo.iter().zip(hi).position(|(l, h)| !(l <= h)) {
                return Err(Error::InfeasibleBox { index });
            }
        }
        self.z_min = z_min;
        self.z_max = z_max;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_general(&self) -> usize {
        self.a.len()
    }

    /// Total folded row count.
    pub fn num_constraints(&self) -> usize {
        self.a.len() + self.z_min.as_ref().map_or(0, |_| self.n) + self.z_max.as_ref().map_or(0, |_| self.n)
    }

    /// Folded constraint `k` as `(a, b)` with `a^T z >= b`.
    pub fn constraint(&self, k: usize) -> (Vec<T>, T) {
        let m = self.a.len();
        if k < m {
            return (self.a[k].clone(), self.b[k]);
        }
        let mut k = k - m;
        let unit = |j: usize, s: T| (0..self.n).map(|i| if i == j { s } else { T::zero() }).collect::<Vec<T>>();
        if let Some(lo) = &self.z_min {
            if k < self.n {
                return (unit(k, T::one()), lo[k]);
            }
            k -= self.n;
        }
        let hi = self.z_max.as_ref().expect("constraint index in range");
        (unit(k, -T::one()), -hi[k])
    }

    fn folded(&self) -> (Vec<Vec<T>>, Vec<T>) {
        (0..self.num_constraints()).map(|k| self.constraint(k)).unzip()
    }

    pub fn objective(&self, z: &[T]) -> T {
        let hz = self.h_times(z);
        let half: T = lit(0.5);
        (0..self.n).map(|i| z[i] * (half * hz[i] + self.q[i])).sum()
    }

    fn h_times(&self, z: &[T]) -> Vec<T> {
        (0..self.n).map(|i| (0..self.n).map(|j| at(&self.h, self.n, i, j) * z[j]).sum()).collect()
    }

    /// Whether `z` satisfies every folded constraint to `tol`.
    pub fn is_feasible(&self, z: &[T], tol: T) -> bool {
        let (a, b) = self.folded();
        a.iter().zip(&b).all(|(row, &bi)| dot(row, z) - bi >= -tol)
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub z_star: Vec<T>,
    /// Folded indices of the active constraints, in the order they entered.
    pub active_set: Vec<usize>,
    /// Multipliers aligned with `active_set`.
    pub multipliers: Vec<T>,
    pub kkt_residual: T,
    pub status: QpStatus,
    pub iterations: usize,
}

impl<T: Real> QpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Scaled KKT residual of `z` with full multiplier vector `lambda` (one per folded row).
///
/// Stationarity and complementarity are divided by `1 + |Hz|_inf + |q|_inf`, so the
/// value is unchanged when the cost is multiplied by a positive scalar.
pub fn kkt_residual<T: Real>(problem: &QpProblem<T>, z: &[T], lambda: &[T]) -> T {
    let (a, b) = problem.folded();
    let hz = problem.h_times(z);
    let scale = T::one() + norm_inf(&hz).max(norm_inf(&problem.q));
    let mut grad: Vec<T> = hz.iter().zip(&problem.q).map(|(&x, &y)| x + y).collect();
    let mut worst = T::zero();
    for ((row, &bi), &l) in a.iter().zip(&b).zip(lambda) {
        for (g, &aij) in grad.iter_mut().zip(row) {
            *g = *g - l * aij;
        }
        let slack = dot(row, z) - bi;
        if slack.is_finite() {
            worst = worst.max((-slack).max(T::zero()) / (T::one() + bi.abs()));
            worst = worst.max((l * slack).abs() / scale);
        }
        worst = worst.max(-l);
    }
    worst.max(norm_inf(&grad) / scale)
}

/// KKT residual of an arbitrary point.
///
/// Multipliers are recovered by nonnegative least squares over the rows whose slack is
/// within `1e-9 (1 + |b|)`; the result combines stationarity, primal infeasibility, and
/// the complementarity of the recovered multipliers.
pub fn check_kkt<T: Real>(problem: &QpProblem<T>, z: &[T]) -> T {
    let (a, b) = problem.folded();
    let near: Vec<usize> = (0..a.len())
        .filter(|&k| (dot(&a[k], z) - b[k]).abs() <= lit::<T>(1e-9) * (T::one() + b[k].abs()))
        .collect();
    let hz = problem.h_times(z);
    let g: Vec<T> = hz.iter().zip(&problem.q).map(|(&x, &y)| x + y).collect();
    let cols: Vec<Vec<T>> = near.iter().map(|&k| a[k].clone()).collect();
    let mu = nnls(&cols, &g);
    let mut lambda = vec![T::zero(); a.len()];
    for (&k, &m) in near.iter().zip(&mu) {
        lambda[k] = m;
    }
    kkt_residual(problem, z, &lambda)
}

/// Least squares on the given columns by Householder QR; rank-deficient directions get zero.
fn lstsq<T: Real>(cols: &[Vec<T>], g: &[T]) -> Vec<T> {
    let n = g.len();
    let k = cols.len();
    let mut m: Vec<Vec<T>> = cols.to_vec();
    let mut rhs = g.to_vec();
    let mut diag_ok = vec![true; k];
    let scale = cols.iter().map(|c| norm_inf(c)).fold(T::zero(), T::max);
    for j in 0..k.min(n) {
        let alpha = m[j][j..].iter().map(|&x| x * x).sum::<T>().sqrt();
        if !(alpha > lit::<T>(1e3) * T::epsilon() * scale) {
            diag_ok[j] = false;
            continue;
        }
        let alpha = if m[j][j] > T::zero() { -alpha } else { alpha };
        let mut v: Vec<T> = m[j][j..].to_vec();
        v[0] = v[0] - alpha;
        let vv = dot(&v, &v);
        if vv == T::zero() {
            continue;
        }
        let reflect = |x: &mut [T]| {
            let f = (dot(&v, x) + dot(&v, x)) / vv;
            for (xi, &vi) in x.iter_mut().zip(&v) {
                *xi = *xi - f * vi;
            }
        };
        for col in m.iter_mut().skip(j) {
            reflect(&mut col[j..]);
        }
        reflect(&mut rhs[j..]);
    }
    let mut x = vec![T::zero(); k];
    for j in (0..k.min(n)).rev() {
        if !diag_ok[j] {
            continue;
        }
        let s: T = (j + 1..k.min(n)).map(|c| m[c][j] * x[c]).sum();
        x[j] = (rhs[j] - s) / m[j][j];
    }
    x
}

/// Lawson-Hanson nonnegative least squares `min |M x - g|` with `x >= 0`.
fn nnls<T: Real>(cols: &[Vec<T>], g: &[T]) -> Vec<T> {
    let k = cols.len();
    let mut x = vec![T::zero(); k];
    let mut passive = vec![false; k];
    let tol = lit::<T>(1e-12) * (T::one() + norm_inf(g));
    let residual_grad = |x: &[T]| -> Vec<T> {
        let mut r = g.to_vec();
        for (c, &xc) in cols.iter().zip(x) {
            for (ri, &ci) in r.iter_mut().zip(c) {
                *ri = *ri - ci * xc;
            }
        }
        cols.iter().map(|c| dot(c, &r)).collect()
    };
    for _ in 0..3 * k + 3 {
        let w = residual_grad(&x);
        let pick = (0..k).filter(|&j| !passive[j] && w[j] > tol).fold(None, |best: Option<usize>, j| match best {
            Some(b) if w[b] >= w[j] => Some(b),
            _ => Some(j),
        });
        let Some(j) = pick else { break };
        passive[j] = true;
        for _ in 0..3 * k + 3 {
            let idx: Vec<usize> = (0..k).filter(|&c| passive[c]).collect();
            let sub: Vec<Vec<T>> = idx.iter().map(|&c| cols[c].clone()).collect();
            let s = lstsq(&sub, g);
            if s.iter().all(|&v| v > T::zero()) {
                for (&c, &v) in idx.iter().zip(&s) {
                    x[c] = v;
                }
                break;
            }
            let mut alpha = T::one();
            for (&c, &v) in idx.iter().zip(&s) {
                if v <= T::zero() {
                    let d = x[c] - v;
                    if d > T::zero() {
                        alpha = alpha.min(x[c] / d);
                    }
                }
            }
            for (&c, &v) in idx.iter().zip(&s) {
                x[c] = x[c] + alpha * (v - x[c]);
                if x[c] <= tol {
                    x[c] = T::zero();
                    passive[c] = false;
                }
            }
            if !idx.iter().any(|&c| passive[c]) {
                break;
            }
        }
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Iteration cap; `None` scales with the problem size.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iter: None }
    }
}

/// Dual active-set solver with reusable workspace.
#[derive(Debug, Clone, Default)]
pub struct QpSolver<T> {
    pub options: QpOptions,
    j: Vec<T>,
    r: Vec<T>,
}

impl<T: Real> QpSolver<T> {
    pub fn new(options: QpOptions) -> Self {
        Self { options, j: Vec::new(), r: Vec::new() }
    }

    pub fn solve(&mut self, problem: &QpProblem<T>) -> Result<QpSolution<T>> {
        let n = problem.n;
        let l = cholesky(&problem.h, n).ok_or(Error::NotPositiveDefinite)?;
        // J = L^{-T}, so J^T H J = I
        self.j = invert_lower_transpose(&l, n);
        self.r = vec![T::zero(); n * n];
        let (a, b) = problem.folded();
        let m = a.len();
        let max_iter = self.options.max_iter.unwrap_or(50 * (n + m) + 100);

        // unconstrained minimizer -J J^T q
        let jtq: Vec<T> = (0..n).map(|c| (0..n).map(|k| at(&self.j, n, k, c) * problem.q[k]).sum()).collect();
        let mut z: Vec<T> = (0..n).map(|i| -(0..n).map(|c| at(&self.j, n, i, c) * jtq[c]).sum::<T>()).collect();

        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<T> = Vec::new();
        let mut is_active = vec![false; m];
        let mut iterations = 0;
        let tol = |k: usize, z: &[T]| {
            lit::<T>(1e-12) * (T::one() + b[k].abs() + a[k].iter().zip(z).map(|(x, y)| (*x * *y).abs()).sum::<T>())
        };

        let status = 'outer: loop {
            // most violated inactive constraint, lowest index on ties
            let mut p = None;
            let mut worst = T::zero();
            for k in 0..m {
                if is_active[k] {
                    continue;
                }
                let s = dot(&a[k], &z) - b[k];
                if s < -tol(k, &z) && (p.is_none() || s < worst) {
                    p = Some(k);
                    worst = s;
                }
            }
            let Some(p) = p else { break QpStatus::Optimal };
            let np = &a[p];
            let mut u_p = T::zero();
            loop {
                iterations += 1;
                if iterations > max_iter {
                    break 'outer QpStatus::MaxIter;
                }
                let qa = active.len();
                let d: Vec<T> = (0..n).map(|c| (0..n).map(|k| at(&self.j, n, k, c) * np[k]).sum()).collect();
                // primal direction in the null space of the active rows
                let zdir: Vec<T> = (0..n).map(|i| (qa..n).map(|c| at(&self.j, n, i, c) * d[c]).sum()).collect();
                // dual direction r = R^{-1} d[..qa]
                let mut rdir = vec![T::zero(); qa];
                for i in (0..qa).rev() {
                    let s: T = (i + 1..qa).map(|c| at(&self.r, n, i, c) * rdir[c]).sum();
                    rdir[i] = (d[i] - s) / at(&self.r, n, i, i);
                }
                let mut t1 = T::infinity();
                let mut drop = None;
                for (pos, (&ri, &ui)) in rdir.iter().zip(&u).enumerate() {
                    if ri > T::zero() {
                        let t = ui / ri;
                        if t < t1 {
                            t1 = t;
                            drop = Some(pos);
                        }
                    }
                }
                let curvature = dot(&zdir, np);
                let dir_scale = norm_inf(&zdir);
                let t2 = if dir_scale > lit::<T>(1e3) * T::epsilon() * (T::one() + norm_inf(&z)) && curvature > T::zero() {
                    -(dot(np, &z) - b[p]) / curvature
                } else {
                    T::infinity()
                };
                if t1.is_infinite() && t2.is_infinite() {
                    break 'outer QpStatus::Infeasible;
                }
                let t = t1.min(t2);
                for (ui, &ri) in u.iter_mut().zip(&rdir) {
                    *ui = *ui - t * ri;
                }
                u_p = u_p + t;
                if t2.is_finite() {
                    for (zi, &di) in z.iter_mut().zip(&zdir) {
                        *zi = *zi + t * di;
                    }
                }
                if t2 <= t1 {
                    self.add(&d, qa, n);
                    active.push(p);
                    u.push(u_p);
                    is_active[p] = true;
                    continue 'outer;
                }
                let pos = drop.expect("finite partial step has a blocking constraint");
                is_active[active[pos]] = false;
                active.remove(pos);
                u.remove(pos);
                self.drop(pos, qa, n);
            }
        };

        let mut lambda = vec![T::zero(); m];
        for (&k, &ui) in active.iter().zip(&u) {
            lambda[k] = ui;
        }
        let kkt = match status {
            QpStatus::Optimal => kkt_residual(problem, &z, &lambda),
            _ => T::infinity(),
        };
        Ok(QpSolution { z_star: z, active_set: active, multipliers: u, kkt_residual: kkt, status, iterations })
    }

    /// Rotates `d = J^T n_p` so only its first `qa + 1` entries are nonzero and appends it to `R`.
    fn add(&mut self, d: &[T], qa: usize, n: usize) {
        let mut d = d.to_vec();
        for jc in (qa + 1..n).rev() {
            if d[jc] == T::zero() {
                continue;
            }
            let (c, s, h) = givens(d[jc - 1], d[jc]);
            d[jc - 1] = h;
            d[jc] = T::zero();
            for k in 0..n {
                let (x, y) = (self.j[k * n + jc - 1], self.j[k * n + jc]);
                self.j[k * n + jc - 1] = c * x + s * y;
                self.j[k * n + jc] = c * y - s * x;
            }
        }
        for i in 0..=qa {
            self.r[i * n + qa] = d[i];
        }
    }

    /// Removes column `pos` of `R` and restores its triangular shape.
    fn drop(&mut self, pos: usize, qa: usize, n: usize) {
        for c in pos..qa - 1 {
            for i in 0..n {
                self.r[i * n + c] = self.r[i * n + c + 1];
            }
        }
        for i in 0..n {
            self.r[i * n + qa - 1] = T::zero();
        }
        for jr in pos..qa - 1 {
            let (a0, b0) = (self.r[jr * n + jr], self.r[(jr + 1) * n + jr]);
            if b0 == T::zero() {
                continue;
            }
            let (c, s, h) = givens(a0, b0);
            self.r[jr * n + jr] = h;
            self.r[(jr + 1) * n + jr] = T::zero();
            for col in jr + 1..qa - 1 {
                let (x, y) = (self.r[jr * n + col], self.r[(jr + 1) * n + col]);
                self.r[jr * n + col] = c * x + s * y;
                self.r[(jr + 1) * n + col] = c * y - s * x;
            }
            for k in 0..n {
                let (x, y) = (self.j[k * n + jr], self.j[k * n + jr + 1]);
                self.j[k * n + jr] = c * x + s * y;
                self.j[k * n + jr + 1] = c * y - s * x;
            }
        }
    }
}

/// Solves with a fresh solver and default options.
pub fn solve_qp<T: Real>(problem: &QpProblem<T>) -> Result<QpSolution<T>> {
    QpSolver::new(QpOptions::default()).solve(problem)
}

fn givens<T: Real>(a: T, b: T) -> (T, T, T) {
    let h = a.hypot(b);
    (a / h, b / h, h)
}

fn cholesky<T: Real>(h: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: T = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = h[i * n + i] - s;
                if !(d > T::zero()) {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (h[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let dmax = (0..n).map(|i| l[i * n + i]).fold(T::zero(), T::max);
    let dmin = (0..n).map(|i| l[i * n + i]).fold(T::infinity(), T::min);
    if n > 0 && !(dmin > dmax * count::<T>(n).sqrt() * T::epsilon()) {
        return None;
    }
    Some(l)
}

/// `L^{-T}` for lower-triangular `L`.
fn invert_lower_transpose<T: Real>(l: &[T], n: usize) -> Vec<T> {
    // solve L X = I column by column, then transpose
    let mut inv = vec![T::zero(); n * n];
    for c in 0..n {
        for i in c..n {
            let rhs = if i == c { T::one() } else { T::zero() };
            let s: T = (c..i).map(|k| l[i * n + k] * inv[k * n + c]).sum();
            inv[i * n + c] = (rhs - s) / l[i * n + i];
        }
    }
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[j * n + i];
        }
    }
    out
}
