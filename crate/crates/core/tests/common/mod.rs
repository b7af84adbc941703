//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

pub mod concrete;

use mixopt::gp::{KernelParams, TrainingData};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, d: usize, noise: f64) -> TrainingData {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    TrainingData::new(x, y, noise).unwrap()
}

pub fn random_ard_kernel<R: Rng>(rng: &mut R, d: usize) -> KernelParams {
    let ls = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
    KernelParams::matern52(rng.random_range(0.5..2.0), ls)
}

fn dense_gram(k: &KernelParams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ra: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let rb: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
    DMatrix::from_fn(ra.len(), rb.len(), |i, j| {
        mixopt::gp::kernel_eval(k, &ra[i], &rb[j]).unwrap()
    })
}

/// Posterior mean and covariance through an explicit LU inverse of K + σ²I.
pub fn dense_posterior(k: &KernelParams, data: &TrainingData, queries: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut kxx = dense_gram(k, &data.inputs, &data.inputs);
    let noise = data.noise_diagonal(data.noise_variance);
    for i in 0..kxx.nrows() {
        kxx[(i, i)] += noise[i];
    }
    let inv = kxx.try_inverse().expect("invertible");
    let ksx = dense_gram(k, queries, &data.inputs);
    let kss = dense_gram(k, queries, queries);
    let mean = &ksx * &inv * &data.targets;
    let cov = kss - &ksx * &inv * ksx.transpose();
    (mean, cov)
}

/// log p(y) as the sum of one-step-ahead predictive log densities, each
/// computed by explicit inversion of the prefix covariance.
pub fn chain_rule_mll(k: &KernelParams, data: &TrainingData) -> f64 {
    let n = data.len();
    let mut kxx = dense_gram(k, &data.inputs, &data.inputs);
    let noise = data.noise_diagonal(data.noise_variance);
    for i in 0..n {
        kxx[(i, i)] += noise[i];
    }
    let mut total = 0.0;
    for i in 0..n {
        let (mean, var) = if i == 0 {
            (0.0, kxx[(0, 0)])
        } else {
            let prefix = kxx.view((0, 0), (i, i)).into_owned();
            let inv = prefix.try_inverse().unwrap();
            let cross = kxx.view((i, 0), (1, i)).into_owned();
            let y = data.targets.rows(0, i).into_owned();
            let m = (&cross * &inv * y)[0];
            let v = kxx[(i, i)] - (&cross * &inv * cross.transpose())[0];
            (m, v)
        };
        let r = data.targets[i] - mean;
        total += -0.5 * r * r / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
    }
    total
}

/// Hypervolume by inclusion-exclusion over all non-empty subsets (maximize,
/// points below `r` clipped to zero volume).
pub fn hv_inclusion_exclusion(points: &[Vec<f64>], r: &[f64]) -> f64 {
    let n = points.len();
    assert!(n <= 16);
    let m = r.len();
    let mut total = 0.0;
    for mask in 1u32..(1 << n) {
        let mut corner = vec![f64::INFINITY; m];
        for (i, p) in points.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for j in 0..m {
                    corner[j] = corner[j].min(p[j]);
                }
            }
        }
        let vol: f64 = corner.iter().zip(r).map(|(c, rr)| (c - rr).max(0.0)).product();
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * vol;
    }
    total
}

/// Plain Monte Carlo hypervolume over the bounding box; returns (estimate, standard error).
pub fn hv_monte_carlo<R: Rng>(points: &[Vec<f64>], r: &[f64], samples: usize, rng: &mut R) -> (f64, f64) {
    let m = r.len();
    let upper: Vec<f64> = (0..m)
        .map(|j| points.iter().map(|p| p[j]).fold(r[j], f64::max))
        .collect();
    let box_vol: f64 = upper.iter().zip(r).map(|(u, l)| u - l).product();
    if box_vol <= 0.0 {
        return (0.0, 0.0);
    }
    let mut hits = 0usize;
    let mut z = vec![0.0; m];
    for _ in 0..samples {
        for j in 0..m {
            z[j] = r[j] + rng.random::<f64>() * (upper[j] - r[j]);
        }
        if points.iter().any(|p| p.iter().zip(&z).all(|(a, b)| a >= b)) {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    (p * box_vol, box_vol * (p * (1.0 - p) / samples as f64).sqrt())
}

/// O(n²) pairwise-domination filter (maximize). Returns kept indices,
/// first occurrence kept among duplicates.
pub fn pareto_bruteforce(points: &[Vec<f64>]) -> Vec<usize> {
    let dominates =
        |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y);
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .enumerate()
                .any(|(j, q)| dominates(q, &points[i]) || (j < i && q == &points[i]))
        })
        .collect()
}

fn hvi_2d(frontier: &[Vec<f64>], r: &[f64], y: [f64; 2]) -> f64 {
    let mut with = frontier.to_vec();
    with.push(y.to_vec());
    let base = hv_inclusion_exclusion(frontier, r);
    (hv_inclusion_exclusion(&with, r) - base).max(0.0)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Integrate over [a, b] splitting at the given breakpoints.
fn piecewise<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|c| *c > a && *c < b).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut edges = vec![a];
    edges.extend(cuts);
    edges.push(b);
    edges.windows(2).map(|w| adaptive_simpson(f, w[0], w[1], tol, 40)).sum()
}

/// E[HVI(y)] for y ~ N(mean, cov) in two objectives, by nested adaptive
/// Simpson quadrature over ±8 sd with breakpoints at the frontier coordinates.
pub fn ehvi_quadrature_2d(frontier: &[Vec<f64>], r: &[f64], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let s1 = cov[0][0].sqrt();
    let s2 = cov[1][1].sqrt();
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[0][1];
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let density = |y1: f64, y2: f64| {
        let d1 = y1 - mean[0];
        let d2 = y2 - mean[1];
        let q = (cov[1][1] * d1 * d1 - 2.0 * cov[0][1] * d1 * d2 + cov[0][0] * d2 * d2) / det;
        norm * (-0.5 * q).exp()
    };
    let mut b1: Vec<f64> = frontier.iter().map(|p| p[0]).collect();
    b1.push(r[0]);
    let mut b2: Vec<f64> = frontier.iter().map(|p| p[1]).collect();
    b2.push(r[1]);
    let lo1 = (mean[0] - 8.0 * s1).max(r[0]);
    let hi1 = mean[0] + 8.0 * s1;
    let lo2 = (mean[1] - 8.0 * s2).max(r[1]);
    let hi2 = mean[1] + 8.0 * s2;
    if hi1 <= lo1 || hi2 <= lo2 {
        return 0.0;
    }
    let outer = |y1: f64| {
        let inner = |y2: f64| hvi_2d(frontier, r, [y1, y2]) * density(y1, y2);
        piecewise(&inner, lo2, hi2, &b2, 1e-10)
    };
    piecewise(&outer, lo1, hi1, &b1, 1e-9)
}
