use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest dimension served by the scrambled Sobol sequence.
pub const MAX_SOBOL_DIM: usize = 256;

/// Fixed standard-normal base samples, one row per MC draw.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseSamples {
    pub z: DMatrix<f64>,
    pub seed: u64,
}

impl BaseSamples {
    /// Owen-scrambled Sobol points mapped through the normal inverse CDF
    /// when `dim <= 256`, otherwise ChaCha pseudo-random normals.
    pub fn new(n: usize, dim: usize, seed: u64) -> Self {
        let z = if dim <= MAX_SOBOL_DIM {
            let normal = Normal::standard();
            let scramble = (seed ^ (seed >> 32)) as u32;
            DMatrix::from_fn(n, dim, |i, j| {
                let u = sobol_burley::sample(i as u32, j as u32, scramble) as f64;
                // centre the f32 lattice cell and keep away from 0 and 1
                let u = (u + 0.5 / 16_777_216.0).clamp(1e-9, 1.0 - 1e-9);
                normal.inverse_cdf(u)
            })
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut z = DMatrix::zeros(n, dim);
            for i in 0..n {
                for j in 0..dim {
                    z[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
            z
        };
        Self { z, seed }
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

/// A square root `S` with `S Sᵀ = cov` for a symmetric PSD matrix; negative
/// eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let mut s = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let r = lambda.max(0.0).sqrt();
        s.column_mut(j).scale_mut(r);
    }
    s
}

/// `(S, W)` with `S = V Λ^½` and `W = V Λ^-½`, both restricted to
/// eigenvalues above round-off. For a Gaussian `f_b = μ_b + S z`, the
/// conditional mean of a correlated block shifts by `K_cb W z`.
pub(crate) fn sqrt_and_pinv(cov: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(cov.clone());
    let n = cov.nrows();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let cutoff = scale * 1e-12;
    let mut s = eig.eigenvectors.clone();
    let mut w = eig.eigenvectors.clone();
    for j in 0..n {
        let lambda = eig.eigenvalues[j];
        if lambda > cutoff {
            let r = lambda.sqrt();
            s.column_mut(j).scale_mut(r);
            w.column_mut(j).scale_mut(1.0 / r);
        } else {
            s.column_mut(j).fill(0.0);
            w.column_mut(j).fill(0.0);
        }
    }
    (s, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_samples_are_standard_normal_ish() {
        let b = BaseSamples::new(1024, 3, 7);
        for j in 0..3 {
            let col = b.z.column(j);
            let mean = col.mean();
            let var = col.map(|v| (v - mean).powi(2)).mean();
            assert!(mean.abs() < 0.05, "{mean}");
            assert!((var - 1.0).abs() < 0.1, "{var}");
        }
        assert_eq!(b, BaseSamples::new(1024, 3, 7));
        assert_ne!(b.z, BaseSamples::new(1024, 3, 8).z);
    }

    #[test]
    fn high_dimension_falls_back() {
        let b = BaseSamples::new(4, 300, 1);
        assert_eq!(b.dim(), 300);
        assert!(b.z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sqrt_reconstructs_singular_covariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let s = psd_sqrt(&cov);
        assert!((&s * s.transpose() - &cov).abs().max() < 1e-12);
        let (s2, w) = sqrt_and_pinv(&cov);
        assert!((&s2 * s2.transpose() - &cov).abs().max() < 1e-12);
        // S Wᵀ projects onto the range of cov
        let p = &s2 * w.transpose();
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((p - expect).abs().max() < 1e-12);
    }
}
