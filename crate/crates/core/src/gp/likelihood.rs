use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::kernel::{gram_grad_contraction, gram_matrix, rows, KernelParams};
use super::linalg::JitteredCholesky;
use super::posterior::TrainingData;
use crate::error::Result;

/// Log marginal likelihood and its gradient.
///
/// `gradient` is laid out as the kernel's unconstrained parameters
/// ([`KernelParams::to_unconstrained`]) followed by the derivative with
/// respect to ln σ² of the learned noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
}

fn noisy_gram(k: &mut DMatrix<f64>, data: &TrainingData) {
    let noise = data.noise_diagonal(data.noise_variance);
    for i in 0..k.nrows() {
        k[(i, i)] += noise[i];
    }
}

pub fn log_marginal_likelihood(params: &KernelParams, data: &TrainingData) -> Result<f64> {
    params.validate()?;
    data.validate()?;
    params.check_input_dim(data.dim())?;
    let mut k = gram_matrix(params, &rows(&data.inputs));
    noisy_gram(&mut k, data);
    let chol = JitteredCholesky::new(&k)?;
    let alpha = chol.factor.solve(&data.targets);
    let n = data.len() as f64;
    Ok(-0.5 * data.targets.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n * (2.0 * PI).ln())
}

pub fn log_marginal_likelihood_with_gradient(params: &KernelParams, data: &TrainingData) -> Result<MarginalLikelihood> {
    params.validate()?;
    data.validate()?;
    params.check_input_dim(data.dim())?;
    let inputs = rows(&data.inputs);
    let mut k = gram_matrix(params, &inputs);
    noisy_gram(&mut k, data);
    let chol = JitteredCholesky::new(&k)?;
    let alpha = chol.factor.solve(&data.targets);
    let n = data.len();
    let value = -0.5 * data.targets.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // M = alpha alpha^T - K^{-1};  dL/dtheta = 1/2 tr(M dK/dtheta)
    let mut m = chol.factor.inverse();
    m.neg_mut();
    m.ger(1.0, &alpha, &alpha, 1.0);

    let mut gradient: Vec<f64> = gram_grad_contraction(params, &inputs, &m)
        .into_iter()
        .map(|v| 0.5 * v)
        .collect();
    let noise_grad = 0.5
        * data.noise_variance
        * (0..n)
            .filter(|&i| data.uses_learned_noise(i))
            .map(|i| m[(i, i)])
            .sum::<f64>();
    gradient.push(noise_grad);
    Ok(MarginalLikelihood { value, gradient })
}
