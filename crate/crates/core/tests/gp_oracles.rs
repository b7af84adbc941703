mod common;

use approx::assert_relative_eq;
use mixopt::gp::{
    fit_hyperparameters, kernel_matrix, log_marginal_likelihood, log_marginal_likelihood_with_gradient, posterior,
    FitConfig, KernelParams, TrainingData,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn kernel_matrix_plus_jitter_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>());
        let k = common::random_ard_kernel(&mut rng, 3);
        let mut m = kernel_matrix(&k, &a, &a).unwrap();
        for i in 0..5 {
            m[(i, i)] += 1e-6;
        }
        let eig = SymmetricEigen::new(m);
        assert!(eig.eigenvalues.min() > 0.0);
    }
}

#[test]
fn kernel_matrix_transpose_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = DMatrix::from_fn(4, 2, |_, _| rng.random::<f64>());
    let b = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
    let k = KernelParams::exponentiated_quadratic(1.5, vec![0.3, 0.8]);
    let ab = kernel_matrix(&k, &a, &b).unwrap();
    let ba = kernel_matrix(&k, &b, &a).unwrap();
    assert_eq!(ab, ba.transpose());
    let single = kernel_matrix(&k, &a.rows(0, 1).into_owned(), &a.rows(0, 1).into_owned()).unwrap();
    assert_eq!(single.shape(), (1, 1));
    assert_eq!(single[(0, 0)], 1.5);
}

#[test]
fn posterior_matches_dense_inverse_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..50 {
        let n = 1 + trial % 6;
        let d = 1 + trial % 3;
        let noise = rng.random_range(1e-3..0.5);
        let data = common::random_dataset(&mut rng, n, d, noise);
        let k = common::random_ard_kernel(&mut rng, d);
        let q = DMatrix::from_fn(4, d, |_, _| rng.random::<f64>());
        let p = posterior(&k, &data, &q).unwrap();
        let (mean, cov) = common::dense_posterior(&k, &data, &q);
        for i in 0..4 {
            assert!((p.mean[i] - mean[i]).abs() < 1e-10, "mean {} vs {}", p.mean[i], mean[i]);
            for j in 0..4 {
                assert!((p.covariance[(i, j)] - cov[(i, j)]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn posterior_covariance_symmetric_psd_and_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let data = common::random_dataset(&mut rng, 6, 2, 1e-4);
        let k = common::random_ard_kernel(&mut rng, 2);
        let q = DMatrix::from_fn(8, 2, |_, _| rng.random::<f64>() * 1.5);
        let p = posterior(&k, &data, &q).unwrap();
        let asym = (&p.covariance - p.covariance.transpose()).abs().max();
        assert!(asym <= 1e-10);
        let eig = SymmetricEigen::new(p.covariance.clone());
        assert!(eig.eigenvalues.min() >= -1e-8);
        for i in 0..8 {
            assert!(p.covariance[(i, i)] <= k.prior_variance() + 1e-8);
        }
    }
}

#[test]
fn noiseless_training_inputs_reproduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let data = common::random_dataset(&mut rng, 6, 2, 0.0);
    let k = KernelParams::matern52(1.0, vec![0.5, 0.5]);
    let p = posterior(&k, &data, &data.inputs).unwrap();
    for i in 0..6 {
        assert!((p.mean[i] - data.targets[i]).abs() < 1e-6);
    }
}

#[test]
fn mll_equals_chain_rule_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let data = common::random_dataset(&mut rng, 6, 2, 0.05);
        let k = common::random_ard_kernel(&mut rng, 2);
        let direct = log_marginal_likelihood(&k, &data).unwrap();
        let chain = common::chain_rule_mll(&k, &data);
        assert_relative_eq!(direct, chain, epsilon = 1e-9);
    }
}

fn fd_check(k: &KernelParams, data: &TrainingData) {
    let analytic = log_marginal_likelihood_with_gradient(k, data).unwrap();
    let theta = k.to_unconstrained();
    let h = 1e-5;
    let eval = |t: &[f64], log_noise: f64| {
        let kk = k.with_unconstrained(t).unwrap();
        let mut d = data.clone();
        d.noise_variance = log_noise.exp();
        log_marginal_likelihood(&kk, &d).unwrap()
    };
    let ln_noise = data.noise_variance.ln();
    for i in 0..=theta.len() {
        let fd = if i < theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            let mut dn = theta.clone();
            dn[i] -= h;
            (eval(&up, ln_noise) - eval(&dn, ln_noise)) / (2.0 * h)
        } else {
            (eval(&theta, ln_noise + h) - eval(&theta, ln_noise - h)) / (2.0 * h)
        };
        let a = analytic.gradient[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
        assert!(rel < 1e-4, "component {i}: analytic {a} vs fd {fd}");
    }
}

#[test]
fn mll_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let noise = rng.random_range(0.01..0.3);
        let data = common::random_dataset(&mut rng, 8, 3, noise);
        let k = KernelParams::additive(
            KernelParams::exponentiated_quadratic(rng.random_range(0.3..2.0), vec![rng.random_range(0.3..2.0)])
                .on_dims(vec![2]),
            common::random_ard_kernel(&mut rng, 3),
        );
        fd_check(&k, &data);
    }
}

#[test]
fn lengthscale_recovered_from_synthetic_draw() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let n = 40;
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
    let truth = KernelParams::exponentiated_quadratic(1.0, vec![0.5]);
    let xm = DMatrix::from_column_slice(n, 1, &x);
    let mut k = kernel_matrix(&truth, &xm, &xm).unwrap();
    for i in 0..n {
        k[(i, i)] += 1e-4 + 1e-8;
    }
    let l = k.cholesky().unwrap().l();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = l * z;
    let data = TrainingData::new(xm, y, 1e-3).unwrap();
    let cfg = FitConfig {
        lengthscale_prior: false,
        seed: 3,
        ..FitConfig::default()
    };
    let fitted = fit_hyperparameters(&KernelParams::exponentiated_quadratic(1.0, vec![1.0]), &data, &cfg).unwrap();
    let ell = fitted.kernel.lengthscales[0];
    assert!((0.3..=0.8).contains(&ell), "recovered lengthscale {ell}");

    // grid oracle over the lengthscale, other hyperparameters held at the fit
    let mut d = data.clone();
    d.noise_variance = fitted.noise_variance;
    let grid: Vec<f64> = (0..200).map(|i| 0.1 + i as f64 * 0.005).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| {
            let f = |l: f64| {
                let mut kk = fitted.kernel.clone();
                kk.lengthscales[0] = l;
                log_marginal_likelihood(&kk, &d).unwrap()
            };
            f(*a).partial_cmp(&f(*b)).unwrap()
        })
        .unwrap();
    assert!((best - ell).abs() <= 0.01, "grid peak {best} vs fitted {ell}");
}

#[test]
fn refit_from_optimum_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let data = common::random_dataset(&mut rng, 15, 2, 0.1);
    let cfg = FitConfig {
        restarts: 1,
        ..FitConfig::default()
    };
    let first = fit_hyperparameters(&KernelParams::matern52(1.0, vec![1.0, 1.0]), &data, &cfg).unwrap();
    let mut d = data.clone();
    d.noise_variance = first.noise_variance;
    let second = fit_hyperparameters(&first.kernel, &d, &cfg).unwrap();
    assert!((second.objective - first.objective).abs() < 1e-6);
}

#[test]
fn fitting_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let data = common::random_dataset(&mut rng, 12, 2, 0.1);
    let init = KernelParams::matern52(1.0, vec![1.0, 1.0]);
    let cfg = FitConfig {
        seed: 99,
        ..FitConfig::default()
    };
    let a = fit_hyperparameters(&init, &data, &cfg).unwrap();
    let b = fit_hyperparameters(&init, &data, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_matrix_permutation_invariant(seed in 0u64..10_000, shift in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        let k = common::random_ard_kernel(&mut rng, 2);
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let pa = DMatrix::from_fn(5, 2, |i, j| a[(perm[i], j)]);
        let m = kernel_matrix(&k, &a, &a).unwrap();
        let pm = kernel_matrix(&k, &pa, &pa).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                prop_assert_eq!(pm[(i, j)], m[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn posterior_variance_never_exceeds_prior(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::random_dataset(&mut rng, 4, 2, 0.01);
        let k = common::random_ard_kernel(&mut rng, 2);
        let q = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>() * 3.0 - 1.0);
        let p = posterior(&k, &data, &q).unwrap();
        for i in 0..3 {
            prop_assert!(p.covariance[(i, i)] <= k.prior_variance() + 1e-8);
        }
    }
}
