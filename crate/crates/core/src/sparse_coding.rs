//! Lasso solves for shared sparse codes.
//!
//! Objective: `||t - X a||^2 + lambda * ||a||_1` (no 1/2 factor, no 1/d
//! scaling). Solved by cyclic coordinate descent over the Gram matrix
//! `X^T X`, maintaining the correlation vector `X^T (t - X a)`. Once a sweep
//! leaves the support and signs unchanged, the smooth problem restricted to
//! that face is solved directly and the iterate moves toward its solution
//! as far as the signs allow; this removes the slow tail of plain
//! coordinate descent on ill-conditioned designs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Bound on the KKT residual.
    pub tol: f64,
    /// Maximum number of full coordinate sweeps.
    pub max_sweeps: usize,
}

impl LassoOptions {
    /// `tol = 1e-7`, `10 * k` sweeps.
    pub fn for_atoms(k: usize) -> Self {
        LassoOptions {
            tol: DEFAULT_TOL,
            max_sweeps: 10 * k.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coef: DVector<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

/// `||t - X a||^2 + lambda * ||a||_1`
pub fn lasso_objective(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64, a: &DVector<f64>) -> f64 {
    (target - design * a).norm_squared() + lambda * a.lp_norm(1)
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_residual(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64, a: &DVector<f64>) -> f64 {
    let grad = 2.0 * design.tr_mul(&(design * a - target));
    kkt_from_gradient(&grad, lambda, a)
}

fn kkt_from_gradient(grad: &DVector<f64>, lambda: f64, a: &DVector<f64>) -> f64 {
    grad.iter()
        .zip(a.iter())
        .map(|(&g, &aj)| {
            if aj != 0.0 {
                (g + lambda * aj.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Lasso over a fixed design, reusable across many targets.
#[derive(Debug, Clone)]
pub struct GramLasso {
    gram: DMatrix<f64>,
    lambda: f64,
    options: LassoOptions,
}

impl GramLasso {
    pub fn new(gram: DMatrix<f64>, lambda: f64, options: LassoOptions) -> Result<Self> {
        if !gram.is_square() || gram.nrows() == 0 {
            return Err(Error::InvalidParameter("Gram matrix must be square and non-empty".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "lasso design".into(),
            });
        }
        Ok(GramLasso { gram, lambda, options })
    }

    pub fn from_design(design: &DMatrix<f64>, lambda: f64, options: LassoOptions) -> Result<Self> {
        Self::new(design.tr_mul(design), lambda, options)
    }

    pub fn atoms(&self) -> usize {
        self.gram.nrows()
    }

    /// Solves given `corr = X^T t`, optionally warm-started.
    pub fn solve(&self, corr: &DVector<f64>, init: Option<&DVector<f64>>) -> Result<LassoSolution> {
        let k = self.atoms();
        if corr.len() != k {
            return Err(Error::dims("lasso correlation", k, corr.len()));
        }
        if corr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "lasso target".into(),
            });
        }
        let mut a = match init {
            Some(a0) if a0.len() == k && a0.iter().all(|v| v.is_finite()) => a0.clone(),
            Some(a0) if a0.len() != k => return Err(Error::dims("lasso warm start", k, a0.len())),
            _ => DVector::zeros(k),
        };
        // zero columns carry no information
        for j in 0..k {
            if self.gram[(j, j)] <= 0.0 {
                a[j] = 0.0;
            }
        }
        let mut q = corr - &self.gram * &a;
        let mut kkt = self.kkt(&q, &a);
        let mut sweeps = 0;
        while kkt > self.options.tol && sweeps < self.options.max_sweeps {
            self.sweep(&mut a, &mut q);
            sweeps += 1;
            // each blocked step drops one coordinate, so this terminates
            while self.face_step(corr, &mut a) {}
            q = corr - &self.gram * &a;
            kkt = self.kkt(&q, &a);
        }
        Ok(LassoSolution {
            coef: a,
            converged: kkt <= self.options.tol,
            sweeps,
            kkt_residual: kkt,
        })
    }

    /// `a^T G a - 2 corr^T a + lambda ||a||_1`, the objective up to a constant.
    fn reduced_objective(&self, corr: &DVector<f64>, a: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram * a)) - 2.0 * corr.dot(a) + self.lambda * a.lp_norm(1)
    }

    /// Moves `a` toward the minimizer of the objective on its current face
    /// (support and signs fixed), stopping where a coordinate reaches zero.
    /// On a singular face whose objective is unbounded below, follows the
    /// flat descent direction to the first zero crossing instead. Leaves `a`
    /// alone when the move would not lower the objective. Returns whether a
    /// coordinate was zeroed, in which case the smaller face is worth a retry.
    fn face_step(&self, corr: &DVector<f64>, a: &mut DVector<f64>) -> bool {
        let support: Vec<usize> = (0..a.len()).filter(|&j| a[j] != 0.0).collect();
        if support.is_empty() {
            return false;
        }
        let s = support.len();
        let g = DMatrix::from_fn(s, s, |r, c| self.gram[(support[r], support[c])]);
        let rhs = DVector::from_fn(s, |r, _| {
            let j = support[r];
            corr[j] - 0.5 * self.lambda * a[j].signum()
        });
        let current = DVector::from_fn(s, |r, _| a[support[r]]);
        // (direction, step cap): full step to the face minimizer, or an
        // unbounded ray along the null space
        let (direction, cap) = match g.clone().cholesky() {
            Some(chol) => (chol.solve(&rhs) - &current, 1.0),
            None => {
                let eig = g.symmetric_eigen();
                let floor = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
                let mut target = DVector::zeros(s);
                let mut null = DVector::zeros(s);
                for (i, &ev) in eig.eigenvalues.iter().enumerate() {
                    let u = eig.eigenvectors.column(i);
                    let c = u.dot(&rhs);
                    if ev > floor {
                        target += u * (c / ev);
                    } else {
                        null += u * c;
                    }
                }
                if null.norm() <= 1e-9 * rhs.norm() {
                    (target - &current, 1.0)
                } else {
                    (null, f64::INFINITY)
                }
            }
        };
        let mut t = cap;
        let mut blocking = None;
        for (r, &j) in support.iter().enumerate() {
            if direction[r] * a[j] < 0.0 {
                let cross = -a[j] / direction[r];
                if cross < t {
                    t = cross;
                    blocking = Some(j);
                }
            }
        }
        if !t.is_finite() {
            return false;
        }
        let mut next = a.clone();
        for (r, &j) in support.iter().enumerate() {
            next[j] += t * direction[r];
        }
        if let Some(j) = blocking {
            next[j] = 0.0;
        }
        if next.iter().all(|v| v.is_finite()) && self.reduced_objective(corr, &next) <= self.reduced_objective(corr, a) {
            *a = next;
            blocking.is_some()
        } else {
            false
        }
    }

    fn kkt(&self, q: &DVector<f64>, a: &DVector<f64>) -> f64 {
        kkt_from_gradient(&(-2.0 * q), self.lambda, a)
    }

    /// One exact minimization along coordinate `j`; returns the step taken.
    fn coordinate_step(&self, j: usize, a: &mut DVector<f64>, q: &mut DVector<f64>) -> f64 {
        let gjj = self.gram[(j, j)];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = a[j];
        let new = soft_threshold(q[j] + gjj * old, self.lambda / 2.0) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            a[j] = new;
            q.axpy(-delta, &self.gram.column(j), 1.0);
        }
        delta
    }

    fn sweep(&self, a: &mut DVector<f64>, q: &mut DVector<f64>) {
        for j in 0..self.atoms() {
            self.coordinate_step(j, a, q);
        }
    }
}

/// Single-target convenience wrapper, starting from zero.
pub fn solve_lasso(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoSolution> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::InvalidParameter("empty lasso design".into()));
    }
    if target.len() != design.nrows() {
        return Err(Error::dims("lasso target", design.nrows(), target.len()));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "lasso target".into(),
        });
    }
    let solver = GramLasso::from_design(
        design,
        lambda,
        LassoOptions {
            tol,
            max_sweeps: max_iter,
        },
    )?;
    solver.solve(&design.tr_mul(target), None)
}

/// Reduced-space dictionary `W^g` (m x k).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveDictionary {
    pub group: usize,
    pub w: DMatrix<f64>,
}

impl EffectiveDictionary {
    pub fn new(group: usize, w: DMatrix<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("dictionary of group {group}"),
            });
        }
        Ok(EffectiveDictionary { group, w })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeBatch {
    pub bridge: usize,
    /// k x n
    pub a: DMatrix<f64>,
    pub converged: bool,
    pub max_kkt_residual: f64,
}

/// Solves every column of the stacked system
/// `[U; V] ~ [W_young; W_old] A` with an l1 penalty on `A`.
#[allow(clippy::too_many_arguments)]
pub fn solve_coupled_codes(
    bridge: usize,
    young: &EffectiveDictionary,
    old: &EffectiveDictionary,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda: f64,
    options: LassoOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<SparseCodeBatch> {
    let k = young.w.ncols();
    if old.w.ncols() != k {
        return Err(Error::dims("atoms of the older dictionary", k, old.w.ncols()));
    }
    if u.shape() != v.shape() {
        return Err(Error::dims("paired columns", u.ncols(), v.ncols()));
    }
    if u.nrows() != young.w.nrows() {
        return Err(Error::dims("younger reduced dimension", young.w.nrows(), u.nrows()));
    }
    if v.nrows() != old.w.nrows() {
        return Err(Error::dims("older reduced dimension", old.w.nrows(), v.nrows()));
    }
    if let Some(w) = warm {
        if w.shape() != (k, u.ncols()) {
            return Err(Error::dims("warm-start codes", k * u.ncols(), w.len()));
        }
    }
    let gram = young.w.tr_mul(&young.w) + old.w.tr_mul(&old.w);
    let solver = GramLasso::new(gram, lambda, options)?;
    let corr = young.w.tr_mul(u) + old.w.tr_mul(v);

    let solutions = (0..u.ncols())
        .into_par_iter()
        .map(|i| {
            let init = warm.map(|w| w.column(i).into_owned());
            solver.solve(&corr.column(i).into_owned(), init.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut a = DMatrix::zeros(k, u.ncols());
    let mut converged = true;
    let mut max_kkt: f64 = 0.0;
    for (i, s) in solutions.into_iter().enumerate() {
        a.set_column(i, &s.coef);
        converged &= s.converged;
        max_kkt = max_kkt.max(s.kkt_residual);
    }
    Ok(SparseCodeBatch {
        bridge,
        a,
        converged,
        max_kkt_residual: max_kkt,
    })
}
