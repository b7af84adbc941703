//! Multi-start MAP / maximum-likelihood hyperparameter fitting.

use std::cell::RefCell;
use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::likelihood::log_marginal_likelihood_with_gradient;
use super::posterior::TrainingData;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: u64,
    pub grad_tol: f64,
    /// Stop once an iteration changes the objective by less than this.
    pub cost_tol: f64,
    pub seed: u64,
    /// Log-uniform range for random initial lengthscales.
    pub lengthscale_init: (f64, f64),
    /// Add a log-normal(0, 1) prior on every lengthscale (MAP fitting).
    pub lengthscale_prior: bool,
    pub learn_noise: bool,
    pub noise_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 200,
            grad_tol: 1e-6,
            cost_tol: 1e-7,
            seed: 0,
            lengthscale_init: (0.05, 5.0),
            lengthscale_prior: true,
            learn_noise: true,
            noise_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub index: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedHyperparameters {
    pub kernel: KernelParams,
    pub noise_variance: f64,
    /// Maximized objective: log marginal likelihood, plus the log prior when enabled.
    pub objective: f64,
    pub restarts: Vec<RestartReport>,
}

/// Objective over the unconstrained vector `[kernel params..., noise param]`.
/// The noise parameter is `ln(σ² - floor)`; absent when noise is not learned.
struct Objective<'a> {
    template: &'a KernelParams,
    data: &'a TrainingData,
    config: &'a FitConfig,
    lengthscale_idx: Vec<usize>,
    learns_noise: bool,
    cache: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
    best: RefCell<Option<(f64, Vec<f64>)>>,
}

impl<'a> Objective<'a> {
    fn new(template: &'a KernelParams, data: &'a TrainingData, config: &'a FitConfig) -> Self {
        let learns_noise = config.learn_noise && (0..data.len()).any(|i| data.uses_learned_noise(i));
        Self {
            template,
            data,
            config,
            lengthscale_idx: template.lengthscale_param_indices(),
            learns_noise,
            cache: RefCell::new(None),
            best: RefCell::new(None),
        }
    }

    fn decode(&self, theta: &[f64]) -> Result<(KernelParams, f64)> {
        let p = self.template.num_params();
        let kernel = self.template.with_unconstrained(&theta[..p])?;
        let noise = if self.learns_noise {
            self.config.noise_floor + theta[p].exp()
        } else {
            self.data.noise_variance
        };
        Ok((kernel, noise))
    }

    fn encode(&self, kernel: &KernelParams, noise: f64) -> Vec<f64> {
        let mut theta = kernel.to_unconstrained();
        if self.learns_noise {
            theta.push((noise - self.config.noise_floor).max(1e-12).ln());
        }
        theta
    }

    /// Maximized objective and gradient at `theta`.
    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if let Some((t, v, g)) = self.cache.borrow().as_ref() {
            if t.as_slice() == theta {
                return Ok((*v, g.clone()));
            }
        }
        let (kernel, noise) = self.decode(theta)?;
        let mut data = self.data.clone();
        data.noise_variance = noise;
        let mll = log_marginal_likelihood_with_gradient(&kernel, &data)?;
        let p = kernel.num_params();
        let mut value = mll.value;
        let mut grad = mll.gradient[..p].to_vec();
        if self.learns_noise {
            // d/dθ with σ² = floor + e^θ, from d/d ln σ²
            grad.push(mll.gradient[p] * (noise - self.config.noise_floor) / noise);
        }
        if self.config.lengthscale_prior {
            for &i in &self.lengthscale_idx {
                value += -0.5 * theta[i] * theta[i] - 0.5 * (2.0 * PI).ln();
                grad[i] -= theta[i];
            }
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Fitting("non-finite objective".into()));
        }
        *self.cache.borrow_mut() = Some((theta.to_vec(), value, grad.clone()));
        let mut best = self.best.borrow_mut();
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            *best = Some((value, theta.to_vec()));
        }
        Ok((value, grad))
    }
}

struct Problem<'o, 'a>(&'o Objective<'a>);

impl CostFunction for Problem<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.0
            .evaluate(theta)
            .map(|(v, _)| -v)
            .map_err(|e| argmin::core::Error::msg(e.to_string()))
    }
}

impl Gradient for Problem<'_, '_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, theta: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.0
            .evaluate(theta)
            .map(|(_, g)| g.into_iter().map(|v| -v).collect())
            .map_err(|e| argmin::core::Error::msg(e.to_string()))
    }
}

fn optimize(objective: &Objective<'_>, start: Vec<f64>, config: &FitConfig) -> Option<(f64, Vec<f64>)> {
    let linesearch = MoreThuenteLineSearch::new();
    let solver = LBFGS::new(linesearch, 7)
        .with_tolerance_grad(config.grad_tol)
        .ok()?
        .with_tolerance_cost(config.cost_tol)
        .ok()?;
    // A failed line search still leaves the best point seen in `objective.best`.
    let _ = Executor::new(Problem(objective), solver)
        .configure(|state| state.param(start).max_iters(config.max_iters))
        .run()
        .map(|res| {
            if let Some(p) = res.state().get_best_param() {
                let _ = objective.evaluate(p);
            }
        });
    objective.best.borrow().clone()
}

/// Maximize the (optionally MAP-regularized) log marginal likelihood.
///
/// Restart 0 starts from `init` and `data.noise_variance`; the remaining
/// restarts redraw every lengthscale log-uniformly. The best restart wins,
/// ties going to the lower index.
pub fn fit_hyperparameters(
    init: &KernelParams,
    data: &TrainingData,
    config: &FitConfig,
) -> Result<FittedHyperparameters> {
    init.validate()?;
    data.validate()?;
    init.check_input_dim(data.dim())?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(
            "hyperparameter fitting needs at least two points".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.lengthscale_init;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let noise0 = data.noise_variance.max(config.noise_floor * 2.0);

    let mut best: Option<(f64, KernelParams, f64)> = None;
    let mut reports = Vec::with_capacity(config.restarts.max(1));
    for index in 0..config.restarts.max(1) {
        let mut start_kernel = init.clone();
        if index > 0 {
            start_kernel.for_each_leaf_mut(&mut |leaf| {
                for l in leaf.lengthscales.iter_mut() {
                    *l = rng.random_range(ln_lo..ln_hi).exp();
                }
            });
        }
        let objective = Objective::new(init, data, config);
        let start = objective.encode(&start_kernel, noise0);
        let Ok((initial, _)) = objective.evaluate(&start) else {
            tracing::debug!(index, "restart start point not evaluable");
            continue;
        };
        let Some((value, theta)) = optimize(&objective, start, config) else {
            continue;
        };
        reports.push(RestartReport {
            index,
            initial_objective: initial,
            final_objective: value,
        });
        if best.as_ref().is_none_or(|(b, _, _)| value > *b) {
            let (kernel, noise) = objective.decode(&theta)?;
            best = Some((value, kernel, noise));
        }
    }
    let (objective, kernel, noise_variance) =
        best.ok_or_else(|| Error::Fitting("no restart produced a finite marginal likelihood".into()))?;
    tracing::debug!(objective, restarts = reports.len(), "hyperparameters fitted");
    Ok(FittedHyperparameters {
        kernel,
        noise_variance,
        objective,
        restarts: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn toy() -> TrainingData {
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin()).collect();
        TrainingData::new(DMatrix::from_column_slice(12, 1, &x), DVector::from_vec(y), 0.01).unwrap()
    }

    #[test]
    fn fit_improves_on_every_start() {
        let init = KernelParams::exponentiated_quadratic(1.0, vec![1.0]);
        let fitted = fit_hyperparameters(&init, &toy(), &FitConfig::default()).unwrap();
        for r in &fitted.restarts {
            assert!(r.final_objective >= r.initial_objective);
            assert!(fitted.objective >= r.initial_objective);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let init = KernelParams::matern52(1.0, vec![1.0]);
        let cfg = FitConfig {
            seed: 7,
            ..FitConfig::default()
        };
        let a = fit_hyperparameters(&init, &toy(), &cfg).unwrap();
        let b = fit_hyperparameters(&init, &toy(), &cfg).unwrap();
        assert_eq!(a.kernel, b.kernel);
        assert_eq!(a.noise_variance.to_bits(), b.noise_variance.to_bits());
    }

    #[test]
    fn single_point_rejected() {
        let data = TrainingData::new(DMatrix::from_element(1, 1, 0.0), DVector::from_element(1, 1.0), 0.1).unwrap();
        let init = KernelParams::matern52(1.0, vec![1.0]);
        assert!(matches!(
            fit_hyperparameters(&init, &data, &FitConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
