use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{cross_matrix, gram_matrix, rows, KernelParams};
use super::linalg::{symmetrize, JitteredCholesky};
use crate::error::{Error, Result};

/// Observations a GP is conditioned on.
///
/// `noise_variance` is the homoscedastic σ² applied to every point whose
/// `fixed_noise` entry is `None`; points with `Some(v)` use `v` instead.
/// An empty `fixed_noise` means no overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub noise_variance: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_noise: Vec<Option<f64>>,
}

impl TrainingData {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>, noise_variance: f64) -> Result<Self> {
        let data = Self {
            inputs,
            targets,
            noise_variance,
            fixed_noise: Vec::new(),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_fixed_noise(mut self, fixed_noise: Vec<Option<f64>>) -> Result<Self> {
        self.fixed_noise = fixed_noise;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() == 0 {
            return Err(Error::InsufficientData("training data needs at least one point".into()));
        }
        if self.targets.len() != self.inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} input rows but {} targets",
                self.inputs.nrows(),
                self.targets.len()
            )));
        }
        if !self.fixed_noise.is_empty() && self.fixed_noise.len() != self.inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} fixed-noise entries for {} points",
                self.fixed_noise.len(),
                self.inputs.nrows()
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::Validation(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if self.fixed_noise.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation("fixed noise variances must be non-negative".into()));
        }
        if self.inputs.iter().chain(self.targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("training data contains non-finite values".into()));
        }
        Ok(())
    }

    /// Whether point `i` uses the learned σ².
    pub fn uses_learned_noise(&self, i: usize) -> bool {
        self.fixed_noise.get(i).is_none_or(|v| v.is_none())
    }

    pub fn noise_diagonal(&self, noise_variance: f64) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| {
            self.fixed_noise.get(i).copied().flatten().unwrap_or(noise_variance)
        })
    }
}

/// Joint Gaussian over m query points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorGaussian {
    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

/// A GP conditioned on training data, with the factorization cached so that
/// repeated queries cost O(n²) each.
#[derive(Clone, Debug)]
pub struct ConditionedGp {
    kernel: KernelParams,
    train: Vec<Vec<f64>>,
    chol: JitteredCholesky,
    alpha: DVector<f64>,
    dim: usize,
}

impl ConditionedGp {
    pub fn new(kernel: &KernelParams, data: &TrainingData) -> Result<Self> {
        kernel.validate()?;
        data.validate()?;
        kernel.check_input_dim(data.dim())?;
        let train = rows(&data.inputs);
        let mut k = gram_matrix(kernel, &train);
        let noise = data.noise_diagonal(data.noise_variance);
        for i in 0..k.nrows() {
            k[(i, i)] += noise[i];
        }
        let chol = JitteredCholesky::new(&k)?;
        let alpha = chol.factor.solve(&data.targets);
        Ok(Self {
            kernel: kernel.clone(),
            train,
            chol,
            alpha,
            dim: data.dim(),
        })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter
    }

    fn check_queries(&self, queries: &[Vec<f64>]) -> Result<()> {
        if queries.is_empty() {
            return Err(Error::Shape("no query points".into()));
        }
        for q in queries {
            if q.len() != self.dim {
                return Err(Error::Shape(format!(
                    "query has dimension {}, training inputs have {}",
                    q.len(),
                    self.dim
                )));
            }
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite query input".into()));
            }
        }
        Ok(())
    }

    /// Full joint posterior over the query rows.
    pub fn posterior(&self, queries: &DMatrix<f64>) -> Result<PosteriorGaussian> {
        self.posterior_rows(&rows(queries))
    }

    pub fn posterior_rows(&self, queries: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        self.check_queries(queries)?;
        let k_xq = cross_matrix(&self.kernel, &self.train, queries);
        let mean = k_xq.tr_mul(&self.alpha);
        let v = self
            .chol
            .factor
            .l_dirty()
            .solve_lower_triangular(&k_xq)
            .ok_or(Error::Conditioning {
                jitter: self.chol.jitter,
            })?;
        let mut cov = gram_matrix(&self.kernel, queries) - v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok(PosteriorGaussian { mean, covariance: cov })
    }

    /// Posterior means and variances only (no cross-covariances).
    pub fn marginals_rows(&self, queries: &[Vec<f64>]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_queries(queries)?;
        let k_xq = cross_matrix(&self.kernel, &self.train, queries);
        let mean = k_xq.tr_mul(&self.alpha);
        let v = self
            .chol
            .factor
            .l_dirty()
            .solve_lower_triangular(&k_xq)
            .ok_or(Error::Conditioning {
                jitter: self.chol.jitter,
            })?;
        let var = DVector::from_fn(queries.len(), |j, _| {
            let prior = self.kernel.eval_unchecked(&queries[j], &queries[j]);
            (prior - v.column(j).norm_squared()).max(0.0)
        });
        Ok((mean, var))
    }

    /// Means only; skips the triangular solve.
    pub fn mean_rows(&self, queries: &[Vec<f64>]) -> Result<DVector<f64>> {
        self.check_queries(queries)?;
        Ok(cross_matrix(&self.kernel, &self.train, queries).tr_mul(&self.alpha))
    }
}

/// μ_p(X*) and Σ_p(X*, X*) for a zero-mean GP.
pub fn posterior(params: &KernelParams, data: &TrainingData, queries: &DMatrix<f64>) -> Result<PosteriorGaussian> {
    ConditionedGp::new(params, data)?.posterior(queries)
}
