//! Dense convex QP with box bounds and a single sum constraint:
//!
//! ```text
//!     minimize    ½ xᵀ H x + cᵀ x
//!     subject to  lower ≤ x ≤ upper,  Σ x = eq_sum
//! ```
//!
//! Solved by a primal active-set method over the bound constraints. The sum
//! constraint stays active throughout and is eliminated with an orthonormal
//! basis of the complement of `𝟏` on the free variables. `H` only has to be
//! positive semidefinite: along zero-curvature directions of the reduced
//! problem the solver follows the descent ray to the nearest bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest eigenvalue of `H` still accepted as PSD.
pub const PSD_TOLERANCE: f64 = -1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub eq_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
    /// `lower == upper`; never released.
    Pinned,
}

impl QpProblem {
    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }

    /// The point `lower + t (upper − lower)` with the single `t` that meets the
    /// sum constraint. For `0 ≤ x ≤ δ`, `Σx = n` this is the all-ones vector.
    pub fn interior_point(&self) -> DVector<f64> {
        let span = &self.upper - &self.lower;
        let total = span.sum();
        let t = if total > 0.0 {
            ((self.eq_sum - self.lower.sum()) / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
        &self.lower + span * t
    }

    /// Largest violation of bounds and the sum constraint at `x`.
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        bounds.max((x.sum() - self.eq_sum).abs())
    }

    /// Max-norm KKT stationarity residual at `x`, minimized over the sum
    /// multiplier. Coordinates within `1e-9` of a bound count as active.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let g = self.gradient(x);
        let state: Vec<Bound> = (0..self.len())
            .map(|i| {
                let (l, u) = (self.lower[i], self.upper[i]);
                let tol = 1e-9 * l.abs().max(u.abs()).max(1.0);
                let at_l = x[i] - l <= tol;
                let at_u = u - x[i] <= tol;
                match (at_l, at_u) {
                    (true, true) => Bound::Pinned,
                    (true, false) => Bound::Lower,
                    (false, true) => Bound::Upper,
                    _ => Bound::Free,
                }
            })
            .collect();
        let residual = |nu: f64| {
            state
                .iter()
                .zip(g.iter())
                .map(|(s, &gi)| match s {
                    Bound::Free => (gi + nu).abs(),
                    Bound::Lower => (-(gi + nu)).max(0.0),
                    Bound::Upper => (gi + nu).max(0.0),
                    Bound::Pinned => 0.0,
                })
                .fold(0.0, f64::max)
        };
        // residual(ν) is convex and piecewise linear; its minimizer lies in
        // [min(−g), max(−g)].
        let (mut lo, mut hi) = g
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &gi| (a.min(-gi), b.max(-gi)));
        if !lo.is_finite() {
            return 0.0;
        }
        for _ in 0..200 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if residual(a) <= residual(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        residual(0.5 * (lo + hi))
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if self.hessian.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "QP with {n} variables has Hessian {:?} and bounds of length {}/{}",
                self.hessian.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if n == 0 {
            return Err(Error::Empty("QP with no variables".into()));
        }
        let finite = self
            .hessian
            .iter()
            .chain(self.linear.iter())
            .chain(self.lower.iter())
            .chain(self.upper.iter())
            .all(|v| v.is_finite());
        if !finite || !self.eq_sum.is_finite() {
            return Err(Error::NonFinite("QP data".into()));
        }
        let scale = self.hessian.amax().max(1.0);
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InfeasibleQp("Hessian is not symmetric".into()));
        }
        if let Some(i) = (0..n).find(|&i| self.lower[i] > self.upper[i]) {
            return Err(Error::InfeasibleQp(format!(
                "lower bound exceeds upper bound at index {i}"
            )));
        }
        let (lo, hi) = (self.lower.sum(), self.upper.sum());
        let slack = 1e-12 * self.eq_sum.abs().max(1.0);
        if self.eq_sum < lo - slack || self.eq_sum > hi + slack {
            return Err(Error::InfeasibleQp(format!(
                "sum {} outside the attainable range [{lo}, {hi}]",
                self.eq_sum
            )));
        }
        Ok(())
    }

    fn check_psd(&self, hessian: &DMatrix<f64>) -> Result<()> {
        let n = self.len();
        let shifted = hessian + DMatrix::<f64>::identity(n, n) * (-PSD_TOLERANCE);
        if shifted.cholesky().is_some() {
            return Ok(());
        }
        let min = hessian
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < PSD_TOLERANCE {
            Err(Error::NotPsd(min))
        } else {
            Ok(())
        }
    }
}

/// Solves from [`QpProblem::interior_point`].
pub fn solve(p: &QpProblem) -> Result<QpSolution> {
    p.check()?;
    let x0 = p.interior_point();
    solve_checked(p, x0)
}

/// Solves starting from a caller-supplied feasible point. The returned
/// objective is never above the objective at `x0`.
pub fn solve_from(p: &QpProblem, x0: &DVector<f64>) -> Result<QpSolution> {
    p.check()?;
    if x0.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "warm start of length {} for a QP with {} variables",
            x0.len(),
            p.len()
        )));
    }
    let tol = 1e-8 * p.eq_sum.abs().max(1.0);
    if x0.iter().any(|v| !v.is_finite()) || p.infeasibility(x0) > tol {
        return Err(Error::InfeasibleQp("warm start is not feasible".into()));
    }
    solve_checked(p, x0.clone())
}

fn solve_checked(p: &QpProblem, mut x: DVector<f64>) -> Result<QpSolution> {
    let n = p.len();
    let h = (&p.hessian + p.hessian.transpose()) * 0.5;
    p.check_psd(&h)?;

    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            let (l, u) = (p.lower[i], p.upper[i]);
            if l == u {
                x[i] = l;
                Bound::Pinned
            } else if x[i] <= l {
                x[i] = l;
                Bound::Lower
            } else if x[i] >= u {
                x[i] = u;
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    let max_iters = 100 * n;
    let mut iterations = 0;
    loop {
        if iterations >= max_iters {
            return Err(Error::QpNotConverged(max_iters));
        }
        iterations += 1;

        let g = &h * &x + &p.linear;
        let gscale = g.amax().max(p.linear.amax()).max(1.0);
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();

        // Stationary on the free set once the projected gradient is at
        // rounding level; Newton steps below that are noise.
        let stationary = if free.len() < 2 {
            true
        } else {
            let mean = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
            let projected = free.iter().map(|&i| (g[i] - mean).abs()).fold(0.0, f64::max);
            projected <= 1e-12 * gscale
        };
        let step = if stationary { None } else { free_direction(&h, &g, &free) };
        let xscale = x.amax().max(1.0);
        let fval = 0.5 * x.dot(&(&g + &p.linear));
        let negligible = step.as_ref().is_none_or(|s| {
            if s.ray {
                return false;
            }
            // For a Newton step the model decrease is −½ gᵀd.
            let decrease = -0.5 * free.iter().enumerate().map(|(a, &i)| g[i] * s.dir[a]).sum::<f64>();
            s.dir.amax() <= 1e-13 * xscale || decrease <= 1e-15 * fval.abs().max(1.0)
        });

        if negligible {
            match release_candidate(&g, &state, &free, gscale) {
                Some(i) => {
                    state[i] = Bound::Free;
                    continue;
                }
                None => break,
            }
        }

        let Step { dir, ray } = step.expect("non-negligible step exists");
        let dir_scale = dir.amax();
        let mut alpha_max = f64::INFINITY;
        for (a, &i) in free.iter().enumerate() {
            let d = dir[a];
            if d.abs() <= 1e-15 * dir_scale {
                continue;
            }
            let room = if d < 0.0 { p.lower[i] - x[i] } else { p.upper[i] - x[i] };
            alpha_max = alpha_max.min((room / d).max(0.0));
        }
        let alpha = if ray { alpha_max } else { alpha_max.min(1.0) };
        if !alpha.is_finite() {
            // A descent ray with nothing blocking it: only possible if the
            // direction is numerically zero.
            break;
        }
        for (a, &i) in free.iter().enumerate() {
            x[i] += alpha * dir[a];
        }
        if ray || alpha_max <= 1.0 {
            // Every free coordinate whose bound was reached with this step
            // joins the working set.
            for (a, &i) in free.iter().enumerate() {
                let d = dir[a];
                if d.abs() <= 1e-15 * dir_scale {
                    continue;
                }
                let room = if d < 0.0 { p.lower[i] - (x[i] - alpha * d) } else { p.upper[i] - (x[i] - alpha * d) };
                let ratio = (room / d).max(0.0);
                if ratio <= alpha * (1.0 + 1e-12) + 1e-300 {
                    if d < 0.0 {
                        x[i] = p.lower[i];
                        state[i] = Bound::Lower;
                    } else {
                        x[i] = p.upper[i];
                        state[i] = Bound::Upper;
                    }
                }
            }
        }
        for &i in &free {
            x[i] = x[i].clamp(p.lower[i], p.upper[i]);
        }
    }

    repair_sum(p, &mut x, &state);
    let objective = 0.5 * x.dot(&(&h * &x)) + p.linear.dot(&x);
    Ok(QpSolution {
        x,
        objective,
        iterations,
    })
}

struct Step {
    /// Direction over the free coordinates, in `free` order; sums to zero.
    dir: DVector<f64>,
    /// True for a zero-curvature descent ray (take the full blocking step).
    ray: bool,
}

/// Minimizer of the quadratic model restricted to the free coordinates and
/// to `Σ d = 0`, or a descent ray when the reduced Hessian is singular along a
/// direction the gradient does not vanish on.
fn free_direction(h: &DMatrix<f64>, g: &DVector<f64>, free: &[usize]) -> Option<Step> {
    let f = free.len();
    if f < 2 {
        return None;
    }
    let hf = DMatrix::from_fn(f, f, |a, b| h[(free[a], free[b])]);
    let gf = DVector::from_fn(f, |a, _| g[free[a]]);

    // Householder reflector Q = I − β v vᵀ mapping e₁ to 𝟏/√f; its trailing
    // f−1 columns span the complement of 𝟏.
    let mut v = DVector::from_element(f, 1.0 / (f as f64).sqrt());
    v[0] -= 1.0;
    let beta = 2.0 / v.norm_squared();
    let hv = &hf * &v;
    let vhv = v.dot(&hv);
    let qhq = &hf - (&v * hv.transpose()) * beta - (&hv * v.transpose()) * beta
        + (&v * v.transpose()) * (beta * beta * vhv);
    let qg = &gf - &v * (beta * v.dot(&gf));

    let reduced_h = qhq.view((1, 1), (f - 1, f - 1)).into_owned();
    let reduced_g = qg.rows(1, f - 1).into_owned();

    let (q, ray) = reduced_step(reduced_h, &reduced_g);

    let mut y = DVector::zeros(f);
    y.rows_mut(1, f - 1).copy_from(&q);
    let dir = &y - &v * (beta * v.dot(&y));
    Some(Step { dir, ray })
}

fn reduced_step(m: DMatrix<f64>, r: &DVector<f64>) -> (DVector<f64>, bool) {
    let diag_max = m.diagonal().amax();
    if diag_max > 0.0 {
        if let Some(chol) = m.clone().cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-10 * diag_max {
                return (-chol.solve(r), false);
            }
        }
    }

    let eig = m.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let threshold = 1e-10 * lmax.max(f64::MIN_POSITIVE);
    let coeffs = eig.eigenvectors.tr_mul(r);
    let rscale = r.amax();

    let mut null = DVector::zeros(r.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= threshold {
            null -= eig.eigenvectors.column(i) * coeffs[i];
        }
    }
    if null.amax() > 1e-12 * rscale.max(1.0) {
        return (null, true);
    }

    let mut q = DVector::zeros(r.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > threshold {
            q -= eig.eigenvectors.column(i) * (coeffs[i] / lambda);
        }
    }
    (q, false)
}

/// The bound whose multiplier is most negative, if any is below tolerance.
fn release_candidate(g: &DVector<f64>, state: &[Bound], free: &[usize], gscale: f64) -> Option<usize> {
    let nu = if free.is_empty() {
        // Any ν in [max over lower of −g, min over upper of −g] makes every
        // multiplier nonnegative; take the midpoint of the (possibly empty)
        // interval.
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
        for (i, s) in state.iter().enumerate() {
            match s {
                Bound::Lower => a = a.max(-g[i]),
                Bound::Upper => b = b.min(-g[i]),
                _ => {}
            }
        }
        match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a,
            (false, true) => b,
            (false, false) => return None,
        }
    } else {
        -free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
    };

    let tol = 1e-10 * gscale;
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in state.iter().enumerate() {
        let mu = match s {
            Bound::Lower => g[i] + nu,
            Bound::Upper => -(g[i] + nu),
            _ => continue,
        };
        if mu < -tol && best.is_none_or(|(_, m)| mu < m) {
            best = Some((i, mu));
        }
    }
    best.map(|(i, _)| i)
}

/// Removes rounding drift from `Σx` by spreading it over the free coordinates.
fn repair_sum(p: &QpProblem, x: &mut DVector<f64>, state: &[Bound]) {
    let drift = p.eq_sum - x.sum();
    if drift == 0.0 {
        return;
    }
    let free: Vec<usize> = (0..x.len()).filter(|&i| state[i] == Bound::Free).collect();
    let targets: Vec<usize> = if free.is_empty() { (0..x.len()).collect() } else { free };
    let share = drift / targets.len() as f64;
    for &i in &targets {
        x[i] = (x[i] + share).clamp(p.lower[i], p.upper[i]);
    }
}
