//! Closed-form quadratic transport distance between Gaussian measures.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Largest covariance condition number accepted.
const MAX_CONDITION: f64 = 1e12;

/// A Gaussian probability measure `N(m, A)` on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    /// `cov` must be symmetric within `1e-12` and positive definite.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("gaussian parameters must be finite"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 {
            return Err(invalid(format!("covariance is not symmetric (defect {asym:.3e})")));
        }
        let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
        let lo = eig.min();
        let hi = eig.max();
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(invalid(format!(
                "covariance is singular or ill conditioned (eigenvalues in [{lo:.3e}, {hi:.3e}])"
            )));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
        })
    }

    /// Isotropic `N(m, s I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky-like factor `S` with `S Sᵀ = A`, for sampling.
    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        psd_sqrt(&self.cov)
    }
}

fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `dist_MK,2(g1, g2)` from
/// `|m1 − m2|² + tr A1 + tr A2 − 2 tr (√A1 A2 √A1)^{1/2}`.
pub fn mk2_gaussian(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    let s1 = psd_sqrt(&g1.cov);
    let mut inner = &s1 * &g2.cov * &s1;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner).trace();
    let sq = (&g1.mean - &g2.mean).norm_squared() + g1.cov.trace() + g2.cov.trace() - 2.0 * cross;
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{mk_distance, EmpiricalMeasure, MkOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_and_shifted() {
        let g = GaussianMeasure::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!(mk2_gaussian(&g, &g).unwrap() < 1e-12);
        let h = GaussianMeasure::isotropic(vec![1.0, 0.0], 1.0).unwrap();
        assert!((mk2_gaussian(&g, &h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_covariance() {
        let g = GaussianMeasure::isotropic(vec![0.0, 0.0], 4.0).unwrap();
        let h = GaussianMeasure::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!((mk2_gaussian(&g, &h).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_for_noncommuting_covariances() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 3.0]);
        let g = GaussianMeasure::new(vec![0.3, -1.0], a).unwrap();
        let h = GaussianMeasure::new(vec![1.0, 0.5], b).unwrap();
        let d1 = mk2_gaussian(&g, &h).unwrap();
        let d2 = mk2_gaussian(&h, &g).unwrap();
        assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_covariances() {
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianMeasure::new(vec![0.0, 0.0], sing).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianMeasure::new(vec![0.0, 0.0], asym).is_err());
        let ill = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(GaussianMeasure::new(vec![0.0, 0.0], ill).is_err());
    }

    #[test]
    fn agrees_with_samples_in_one_dimension() {
        // in 1-d the empirical quadratic distance converges at the parametric rate
        let g = GaussianMeasure::isotropic(vec![0.0], 4.0).unwrap();
        let h = GaussianMeasure::isotropic(vec![0.5], 1.0).unwrap();
        let exact = mk2_gaussian(&g, &h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let draw = |rng: &mut ChaCha8Rng, m: f64, s: f64| {
            let pts: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect();
            EmpiricalMeasure::uniform(1, pts).unwrap()
        };
        let a = draw(&mut rng, 0.0, 2.0);
        let b = draw(&mut rng, 0.5, 1.0);
        let est = mk_distance(&a, &b, 2.0, &MkOptions::default()).unwrap().distance;
        assert!((est - exact).abs() < 0.1, "{est} vs {exact}");
    }
}
