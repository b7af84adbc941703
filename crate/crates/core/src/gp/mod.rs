//! Generic Gaussian-process machinery: kernels, exact posterior inference and
//! marginal-likelihood hyperparameter fitting. Nothing in here knows about
//! concrete.

mod fit;
mod kernel;
mod likelihood;
mod linalg;
mod posterior;

pub use fit::{fit_hyperparameters, FitConfig, FittedHyperparameters, RestartReport};
pub use kernel::{kernel_eval, kernel_matrix, KernelParams, KernelVariant};
pub use likelihood::{log_marginal_likelihood, log_marginal_likelihood_with_gradient, MarginalLikelihood};
pub use linalg::JitteredCholesky;
pub use posterior::{posterior, ConditionedGp, PosteriorGaussian, TrainingData};
