//! The learned artifact and its hyperparameters.

use nalgebra::DMatrix;

use crate::dataset::{AverageFaceSet, DatasetDims};
use crate::error::{Error, Result};
use crate::projection::ProjectionBasis;

/// Slack allowed on the unit-ball constraint for dictionary columns.
pub const COLUMN_NORM_SLACK: f64 = 1e-10;
/// Allowed deviation of `H^T H` from the identity.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;
/// Upper bound on the default reduced dimension.
pub const DEFAULT_MAX_REDUCED_DIM: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Sparsity weight.
    pub lambda: f64,
    /// Personalized-layer weight.
    pub gamma: f64,
    /// Atoms per group dictionary.
    pub k: usize,
    /// Reduced dimension; `None` resolves to `min(smallest group size, 100, f)`.
    pub m: Option<usize>,
    pub max_outer_iter: usize,
    /// Stop once the relative objective change drops below this.
    pub rel_tol: f64,
    pub rng_seed: u64,
    pub lasso_tol: f64,
    /// `None` resolves to `10 * k`.
    pub lasso_max_sweeps: Option<usize>,
    /// Mean-center group samples before computing projection bases.
    pub center: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.01,
            gamma: 0.1,
            k: 70,
            m: None,
            max_outer_iter: 60,
            rel_tol: 1e-4,
            rng_seed: 0,
            lasso_tol: 1e-7,
            lasso_max_sweeps: None,
            center: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.m == Some(0) {
            return bad("m must be at least 1".into());
        }
        if self.max_outer_iter == 0 {
            return bad("max_outer_iter must be at least 1".into());
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be >= 0, got {}", self.rel_tol));
        }
        if !(self.lasso_tol.is_finite() && self.lasso_tol > 0.0) {
            return bad(format!("lasso_tol must be > 0, got {}", self.lasso_tol));
        }
        if self.lasso_max_sweeps == Some(0) {
            return bad("lasso_max_sweeps must be at least 1".into());
        }
        Ok(())
    }

    pub fn resolve_m(&self, dims: &DatasetDims) -> Result<usize> {
        let m = match self.m {
            Some(m) => m,
            None => {
                let smallest = (0..dims.groups).map(|g| dims.group_size(g)).min().unwrap_or(0);
                smallest.min(DEFAULT_MAX_REDUCED_DIM).min(dims.f)
            }
        };
        if m == 0 || m > dims.f {
            return Err(Error::InvalidParameter(format!(
                "reduced dimension m = {m} must lie in 1..={}",
                dims.f
            )));
        }
        Ok(m)
    }

    pub fn lasso_sweeps(&self) -> usize {
        self.lasso_max_sweeps.unwrap_or(10 * self.k)
    }
}

/// Reduced-space dictionary of one group (m x k).
#[derive(Debug, Clone, PartialEq)]
pub struct AgingDictionary {
    pub group: usize,
    pub d: DMatrix<f64>,
}

impl AgingDictionary {
    pub fn max_column_norm(&self) -> f64 {
        max_column_norm(&self.d)
    }
}

pub fn max_column_norm(d: &DMatrix<f64>) -> f64 {
    d.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// One row of the per-iteration training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLogRow {
    pub iteration: u64,
    pub objective: f64,
    pub max_column_norm: f64,
    /// Largest condition number among the damped dictionary Gram matrices.
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgingModel {
    pub dims: DatasetDims,
    /// Hyperparameters with `m` and `lasso_max_sweeps` resolved.
    pub hyper: HyperParams,
    pub bases: Vec<ProjectionBasis>,
    pub dictionaries: Vec<AgingDictionary>,
    pub averages: AverageFaceSet,
    pub training_log: Vec<TrainingLogRow>,
}

impl AgingModel {
    pub fn groups(&self) -> usize {
        self.dims.groups
    }

    pub fn f(&self) -> usize {
        self.dims.f
    }

    pub fn m(&self) -> usize {
        self.bases.first().map(|b| b.m()).unwrap_or(0)
    }

    pub fn k(&self) -> usize {
        self.dictionaries.first().map(|d| d.d.ncols()).unwrap_or(0)
    }

    /// Checks every structural and numerical invariant of a complete model.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.hyper.validate()?;
        let (g, f) = (self.groups(), self.f());
        let (m, k) = (self.m(), self.k());
        for (what, n) in [
            ("projection bases", self.bases.len()),
            ("dictionaries", self.dictionaries.len()),
            ("average faces", self.averages.faces.len()),
        ] {
            if n != g {
                return Err(Error::dims(what, g, n));
            }
        }
        if self.hyper.m.is_some_and(|hm| hm != m) {
            return Err(Error::dims("reduced dimension", self.hyper.m.unwrap(), m));
        }
        if self.hyper.k != k {
            return Err(Error::dims("atoms per dictionary", self.hyper.k, k));
        }
        for (i, basis) in self.bases.iter().enumerate() {
            if basis.h.shape() != (f, m) {
                return Err(Error::dims(format!("projection basis {i} size"), f * m, basis.h.len()));
            }
            if basis.h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("projection basis {i}"),
                });
            }
            let err = basis.orthonormality_error();
            if err > ORTHONORMALITY_TOL {
                return Err(Error::ConstraintViolation(format!(
                    "projection basis {i} deviates from orthonormal by {err:e}"
                )));
            }
        }
        for (i, dict) in self.dictionaries.iter().enumerate() {
            if dict.d.shape() != (m, k) {
                return Err(Error::dims(format!("dictionary {i} size"), m * k, dict.d.len()));
            }
            if dict.d.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("dictionary {i}"),
                });
            }
            let norm = dict.max_column_norm();
            if norm > 1.0 + COLUMN_NORM_SLACK {
                return Err(Error::ConstraintViolation(format!(
                    "dictionary {i} has a column of norm {norm}"
                )));
            }
        }
        for (i, face) in self.averages.faces.iter().enumerate() {
            if face.len() != f {
                return Err(Error::dims(format!("average face {i}"), f, face.len()));
            }
            if let Some(&v) = face.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange {
                    value: v,
                    context: format!("average face {i}"),
                });
            }
        }
        if let Some(row) = self.training_log.iter().find(|r| !r.objective.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("training log iteration {}", row.iteration),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let h = HyperParams::default();
        assert_eq!((h.lambda, h.gamma, h.k), (0.01, 0.1, 70));
        assert_eq!(h.max_outer_iter, 60);
        assert_eq!(h.rel_tol, 1e-4);
        assert_eq!(h.lasso_sweeps(), 700);
        h.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        for h in [
            HyperParams { lambda: -0.1, ..Default::default() },
            HyperParams { gamma: -2.0, ..Default::default() },
            HyperParams { k: 0, ..Default::default() },
            HyperParams { m: Some(0), ..Default::default() },
            HyperParams { rel_tol: f64::NAN, ..Default::default() },
        ] {
            assert!(h.validate().is_err(), "{h:?}");
        }
    }

    #[test]
    fn default_m_uses_smallest_group() {
        let dims = DatasetDims::new(4096, vec![100, 100, 100], None).unwrap();
        // end groups have 100 samples, interior 200
        assert_eq!(HyperParams::default().resolve_m(&dims).unwrap(), 100);
        let dims = DatasetDims::new(4096, vec![30, 40], None).unwrap();
        assert_eq!(HyperParams::default().resolve_m(&dims).unwrap(), 30);
        let dims = DatasetDims::new(8, vec![30, 40], None).unwrap();
        assert_eq!(HyperParams::default().resolve_m(&dims).unwrap(), 8);
        let too_big = HyperParams { m: Some(9), ..Default::default() };
        assert!(too_big.resolve_m(&dims).is_err());
    }
}
