//! Fréchet distance between Gaussians fitted to feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const NEGATIVE_EIGEN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    /// Sample mean and unbiased covariance of `samples` (each a feature vector).
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let dim = samples.first().map_or(0, |s| s.len());
        if dim == 0 {
            return Err(Error::Data("no features".into()));
        }
        if n < dim + 1 {
            return Err(Error::Data(format!("{n} samples is too few for {dim}-d moments (need {})", dim + 1)));
        }
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        let mut mean = DVector::zeros(dim);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n as f64;
        let mut centered = DMatrix::zeros(dim, n);
        for (j, s) in samples.iter().enumerate() {
            for i in 0..dim {
                centered[(i, j)] = s[i] - mean[i];
            }
        }
        let cov = &centered * centered.transpose() / (n - 1) as f64;
        Ok(GaussianMoments { mean, cov })
    }
}

fn checked_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::Numeric(format!("{what}: non-finite eigenvalues")));
    }
    if min < -NEGATIVE_EIGEN_TOL {
        return Err(Error::Numeric(format!(
            "{what}: eigenvalue {min:.3e} below -{NEGATIVE_EIGEN_TOL:e} (max {max:.3e}, condition {:.3e})",
            max.abs() / min.abs().max(f64::MIN_POSITIVE)
        )));
    }
    Ok(eig)
}

fn psd_sqrt(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = checked_eigen(m, what)?;
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μr − μg‖² + Tr(Σr + Σg − 2 (Σr Σg)^{1/2})`, with the trace of the square
/// root taken through the symmetric product `Σr^{1/2} Σg Σr^{1/2}`.
pub fn frechet_distance(real: &GaussianMoments, gen: &GaussianMoments) -> Result<f64> {
    if real.mean.len() != gen.mean.len() {
        return Err(Error::Shape(format!("feature dims {} vs {}", real.mean.len(), gen.mean.len())));
    }
    let diff = &real.mean - &gen.mean;
    let sr = psd_sqrt(real.cov.clone(), "real covariance")?;
    let prod = &sr * &gen.cov * &sr;
    let eig = checked_eigen(prod, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = diff.dot(&diff) + real.cov.trace() + gen.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

pub fn fgd(real: &[Vec<f64>], gen: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&GaussianMoments::from_samples(real)?, &GaussianMoments::from_samples(gen)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(n: usize, dim: usize, seed: u64, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).collect()
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = samples(50, 4, 1, 0.0);
        assert!(fgd(&a, &a).unwrap() <= 1e-9);
    }

    #[test]
    fn unit_gaussians_one_apart() {
        let a = GaussianMoments { mean: DVector::from_element(1, 0.0), cov: DMatrix::identity(1, 1) };
        let b = GaussianMoments { mean: DVector::from_element(1, 1.0), cov: DMatrix::identity(1, 1) };
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_closed_form() {
        // 1-D: (μ1-μ2)² + (σ1-σ2)²
        let a = GaussianMoments { mean: DVector::from_element(1, 0.5), cov: DMatrix::from_element(1, 1, 4.0) };
        let b = GaussianMoments { mean: DVector::from_element(1, -0.5), cov: DMatrix::from_element(1, 1, 9.0) };
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric() {
        let a = samples(40, 3, 2, 0.0);
        let b = samples(60, 3, 3, 0.4);
        assert!((fgd(&a, &b).unwrap() - fgd(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(fgd(&samples(3, 4, 1, 0.0), &samples(9, 4, 2, 0.0)), Err(Error::Data(_))));
    }

    #[test]
    fn indefinite_covariance_is_numeric_error() {
        let a = GaussianMoments { mean: DVector::zeros(2), cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]) };
        let b = GaussianMoments { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) };
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Numeric(_))));
    }
}
