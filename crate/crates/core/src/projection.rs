//! Per-group truncated-SVD bases.
//!
//! The left singular vectors of the raw (uncentered by default) sample matrix
//! are obtained from an eigendecomposition of the smaller Gram matrix, then
//! re-orthonormalized. Each column's sign is fixed so that its
//! largest-magnitude entry is positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular values at or below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub group: usize,
    /// f x m, orthonormal columns.
    pub h: DMatrix<f64>,
}

/// A fitted basis together with the singular values it was truncated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFit {
    pub basis: ProjectionBasis,
    /// Leading singular values, non-increasing. Entries past the numerical
    /// rank (completion columns) are zero.
    pub singular_values: Vec<f64>,
}

impl ProjectionBasis {
    /// Fits the `m` leading left singular vectors of `samples` (f x s).
    ///
    /// Requires `m <= min(f, s)`.
    pub fn fit(group: usize, samples: &DMatrix<f64>, m: usize, center: bool) -> Result<Self> {
        Self::fit_with_spectrum(group, samples, m, center).map(|fit| fit.basis)
    }

    pub fn fit_with_spectrum(
        group: usize,
        samples: &DMatrix<f64>,
        m: usize,
        center: bool,
    ) -> Result<ProjectionFit> {
        let (f, s) = samples.shape();
        if m == 0 || m > f.min(s) {
            return Err(Error::InvalidParameter(format!(
                "reduced dimension m = {m} must lie in 1..={} (f = {f}, s = {s})",
                f.min(s)
            )));
        }
        Self::fit_completed_with_spectrum(group, samples, m, center)
    }

    pub fn fit_completed(group: usize, samples: &DMatrix<f64>, m: usize, center: bool) -> Result<Self> {
        Self::fit_completed_with_spectrum(group, samples, m, center).map(|fit| fit.basis)
    }

    /// Like [`fit`](Self::fit) but accepts `s < m <= f`; directions beyond the
    /// data's numerical rank are filled with a deterministic orthonormal
    /// completion built from the standard basis.
    pub fn fit_completed_with_spectrum(
        group: usize,
        samples: &DMatrix<f64>,
        m: usize,
        center: bool,
    ) -> Result<ProjectionFit> {
        let (f, s) = samples.shape();
        if s == 0 {
            return Err(Error::EmptyGroup { group });
        }
        if m == 0 || m > f {
            return Err(Error::InvalidParameter(format!(
                "reduced dimension m = {m} must lie in 1..={f}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("samples of group {group}"),
            });
        }
        let centered;
        let data = if center {
            let mean = samples.column_mean();
            centered = DMatrix::from_fn(f, s, |r, c| samples[(r, c)] - mean[r]);
            &centered
        } else {
            samples
        };

        let (mut vectors, values) = leading_left_singular(data, m);
        let sigma_max = values.first().copied().unwrap_or(0.0);
        if sigma_max.is_nan() || sigma_max <= 0.0 {
            return Err(Error::NoSpectrum);
        }
        let keep = values.iter().take_while(|&&v| v > RANK_TOL * sigma_max).count();
        vectors.truncate(keep);
        let mut singular_values: Vec<f64> = values[..keep].to_vec();

        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m);
        for v in vectors {
            if let Some(u) = orthonormalize_against(&basis, v) {
                basis.push(u);
            }
        }
        singular_values.truncate(basis.len());
        let mut e = 0;
        while basis.len() < m {
            let mut cand = DVector::zeros(f);
            cand[e] = 1.0;
            e += 1;
            if let Some(u) = orthonormalize_against(&basis, cand) {
                basis.push(u);
                singular_values.push(0.0);
            }
        }
        for u in basis.iter_mut() {
            fix_sign(u);
        }
        Ok(ProjectionFit {
            basis: ProjectionBasis {
                group,
                h: DMatrix::from_columns(&basis),
            },
            singular_values,
        })
    }

    pub fn f(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.h.ncols()
    }

    /// H^T v
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.f() {
            return Err(Error::dims("project", self.f(), v.len()));
        }
        Ok(self.h.tr_mul(v))
    }

    /// H c
    pub fn lift(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        if c.len() != self.m() {
            return Err(Error::dims("lift", self.m(), c.len()));
        }
        Ok(&self.h * c)
    }

    pub fn project_matrix(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if samples.nrows() != self.f() {
            return Err(Error::dims("project", self.f(), samples.nrows()));
        }
        Ok(self.h.tr_mul(samples))
    }

    pub fn lift_matrix(&self, coords: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coords.nrows() != self.m() {
            return Err(Error::dims("lift", self.m(), coords.nrows()));
        }
        Ok(&self.h * coords)
    }

    /// Largest entry of |H^T H - I|.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.h.tr_mul(&self.h);
        let m = gram.nrows();
        (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

/// Returns up to `m` left singular vectors with their singular values,
/// sorted by non-increasing singular value.
fn leading_left_singular(data: &DMatrix<f64>, m: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let (f, s) = data.shape();
    if s <= f {
        let gram = data.tr_mul(data);
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let mut vectors = Vec::new();
        let mut values = Vec::new();
        for &i in order.iter().take(m.min(s)) {
            let sigma = eig.eigenvalues[i].max(0.0).sqrt();
            values.push(sigma);
            let u = if sigma > 0.0 {
                data * eig.eigenvectors.column(i) / sigma
            } else {
                DVector::zeros(f)
            };
            vectors.push(u);
        }
        (vectors, values)
    } else {
        let gram = data * data.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let take: Vec<usize> = order.into_iter().take(m).collect();
        let values = take.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
        let vectors = take.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        (vectors, values)
    }
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Two passes of modified Gram-Schmidt; `None` if `v` is (numerically) in the span.
fn orthonormalize_against(basis: &[DVector<f64>], mut v: DVector<f64>) -> Option<DVector<f64>> {
    let original = v.norm();
    if original == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let d = b.dot(&v);
            v.axpy(-d, b, 1.0);
        }
    }
    let n = v.norm();
    if n <= 1e-6 * original {
        return None;
    }
    Some(v / n)
}

fn fix_sign(u: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..u.len() {
        if u[i].abs() > u[best].abs() {
            best = i;
        }
    }
    if u[best] < 0.0 {
        u.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn rank_one() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let m = DMatrix::from_columns(&[v.clone() * 2.0, v.clone() * -0.5, v.clone()]);
        let basis = ProjectionBasis::fit(0, &m, 1, false).unwrap();
        let unit = &v / v.norm();
        let h = basis.h.column(0);
        assert!((h - &unit).norm() < 1e-12 || (h + &unit).norm() < 1e-12);
        // largest-magnitude entry (3.0) is positive
        assert!(h[3] > 0.0);
        let residual = &m - &basis.h * basis.h.tr_mul(&m);
        assert!(residual.norm() < 1e-12);
    }

    #[test]
    fn full_rank_square() {
        let m = gaussian(5, 5, 1);
        let basis = ProjectionBasis::fit(0, &m, 5, false).unwrap();
        let hht = &basis.h * basis.h.transpose();
        assert!((hht - DMatrix::identity(5, 5)).abs().max() < 1e-10);
        let residual = &m - &basis.h * basis.h.tr_mul(&m);
        assert!(residual.norm() < 1e-10);
    }

    #[test]
    fn discarded_energy_matches_independent_svd() {
        let m = gaussian(20, 8, 7);
        let fit = ProjectionBasis::fit_with_spectrum(0, &m, 3, false).unwrap();
        let basis = &fit.basis;
        let residual = &m - &basis.h * basis.h.tr_mul(&m);
        // oracle: Golub-Kahan SVD, a different route than the Gram eigensolve
        let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = sv[3..].iter().map(|s| s * s).sum();
        assert!((residual.norm_squared() - discarded).abs() < 1e-9 * discarded.max(1.0));
        for (a, b) in fit.singular_values.iter().zip(&sv) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
        assert!(fit.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(basis.orthonormality_error() < 1e-8);
    }

    #[test]
    fn wide_matrix_uses_outer_gram() {
        let m = gaussian(4, 12, 9);
        let basis = ProjectionBasis::fit(0, &m, 4, false).unwrap();
        assert!(basis.orthonormality_error() < 1e-10);
        assert!((&m - &basis.h * basis.h.tr_mul(&m)).norm() < 1e-10);
    }

    #[test]
    fn project_and_lift_on_basis_vectors() {
        let m = gaussian(10, 6, 2);
        let basis = ProjectionBasis::fit(0, &m, 3, false).unwrap();
        let first = basis.h.column(0).into_owned();
        let e1 = basis.project(&first).unwrap();
        assert!((e1.clone() - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-12);
        assert_eq!(basis.lift(&DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap(), first);

        // something orthogonal to the span
        let mut v = gaussian(10, 1, 5).column(0).into_owned();
        v -= &basis.h * basis.h.tr_mul(&v);
        assert!(basis.project(&v).unwrap().norm() < 1e-12);
    }

    #[test]
    fn project_lift_match_scalar_loops() {
        let m = gaussian(9, 5, 11);
        let basis = ProjectionBasis::fit(0, &m, 4, false).unwrap();
        let v = gaussian(9, 1, 12).column(0).into_owned();
        let c = gaussian(4, 1, 13).column(0).into_owned();
        let p = basis.project(&v).unwrap();
        let l = basis.lift(&c).unwrap();
        for j in 0..4 {
            let mut acc = 0.0;
            for i in 0..9 {
                acc += basis.h[(i, j)] * v[i];
            }
            assert!((p[j] - acc).abs() < 1e-10);
        }
        for i in 0..9 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += basis.h[(i, j)] * c[j];
            }
            assert!((l[i] - acc).abs() < 1e-10);
        }
    }

    #[test]
    fn errors() {
        let m = gaussian(5, 3, 0);
        assert!(matches!(ProjectionBasis::fit(0, &m, 4, false), Err(Error::InvalidParameter(_))));
        assert!(matches!(ProjectionBasis::fit(0, &m, 0, false), Err(Error::InvalidParameter(_))));
        let z = DMatrix::zeros(5, 3);
        assert!(matches!(ProjectionBasis::fit(0, &z, 2, false), Err(Error::NoSpectrum)));
        let basis = ProjectionBasis::fit(0, &m, 2, false).unwrap();
        assert!(basis.project(&DVector::zeros(4)).is_err());
        assert!(basis.lift(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn completion_beyond_sample_count() {
        let m = gaussian(12, 3, 4);
        let fit = ProjectionBasis::fit_completed_with_spectrum(0, &m, 6, false).unwrap();
        let basis = &fit.basis;
        assert_eq!(basis.m(), 6);
        assert!(basis.orthonormality_error() < 1e-10);
        assert_eq!(&fit.singular_values[3..], &[0.0, 0.0, 0.0]);
        assert!((&m - &basis.h * basis.h.tr_mul(&m)).norm() < 1e-10);
    }

    #[test]
    fn centering_switch_changes_basis() {
        let mut m = gaussian(8, 6, 21);
        m.add_scalar_mut(3.0);
        let plain = ProjectionBasis::fit(0, &m, 2, false).unwrap();
        let centered = ProjectionBasis::fit(0, &m, 2, true).unwrap();
        assert!((plain.h - centered.h).norm() > 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn projector_properties(seed in 0u64..10_000, f in 3usize..12, s in 1usize..8, pick in 0usize..8) {
                let m = gaussian(f, s, seed);
                let dim = 1 + pick % f.min(s);
                let fit = ProjectionBasis::fit_with_spectrum(0, &m, dim, false).unwrap();
                let basis = fit.basis;
                prop_assert!(basis.orthonormality_error() < 1e-8);
                prop_assert!(fit.singular_values.windows(2).all(|w| w[0] >= w[1]));
                let v = gaussian(f, 1, seed + 1).column(0).into_owned();
                let back = basis.lift(&basis.project(&v).unwrap()).unwrap();
                prop_assert!(back.norm() <= v.norm() * (1.0 + 1e-12));
                let c = gaussian(dim, 1, seed + 2).column(0).into_owned();
                let round = basis.project(&basis.lift(&c).unwrap()).unwrap();
                prop_assert!((round - &c).amax() < 1e-8);
            }
        }
    }
}
