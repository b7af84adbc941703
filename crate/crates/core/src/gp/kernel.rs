//! Covariance functions.
//!
//! A [`KernelParams`] value is a small tree: leaves are stationary kernels
//! (exponentiated quadratic or Matérn-5/2, isotropic or ARD) restricted to an
//! optional subset of input coordinates, and `AdditiveComposite` nodes sum
//! exactly two children. Output scales and lengthscales are stored in natural
//! units; optimization works on their logarithms (see [`KernelParams::to_unconstrained`]).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    ExponentiatedQuadratic,
    Matern52Ard,
    AdditiveComposite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub variant: KernelVariant,
    /// Variance multiplier. Fixed (not optimized) on composite nodes.
    pub output_scale: f64,
    /// One entry (isotropic) or one per active coordinate (ARD).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lengthscales: Vec<f64>,
    /// Coordinates the leaf reads; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<KernelParams>,
}

impl KernelParams {
    pub fn exponentiated_quadratic(output_scale: f64, lengthscales: Vec<f64>) -> Self {
        Self::leaf(KernelVariant::ExponentiatedQuadratic, output_scale, lengthscales)
    }

    pub fn matern52(output_scale: f64, lengthscales: Vec<f64>) -> Self {
        Self::leaf(KernelVariant::Matern52Ard, output_scale, lengthscales)
    }

    fn leaf(variant: KernelVariant, output_scale: f64, lengthscales: Vec<f64>) -> Self {
        Self {
            variant,
            output_scale,
            lengthscales,
            active_dims: None,
            children: Vec::new(),
        }
    }

    /// `first + second`, each child carrying its own output scale.
    pub fn additive(first: KernelParams, second: KernelParams) -> Self {
        Self {
            variant: KernelVariant::AdditiveComposite,
            output_scale: 1.0,
            lengthscales: Vec::new(),
            active_dims: None,
            children: vec![first, second],
        }
    }

    pub fn on_dims(mut self, dims: Vec<usize>) -> Self {
        self.active_dims = Some(dims);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.variant != KernelVariant::AdditiveComposite
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::Validation(format!(
                "output scale must be positive and finite, got {}",
                self.output_scale
            )));
        }
        if self.is_leaf() {
            if !self.children.is_empty() {
                return Err(Error::Validation("leaf kernels take no children".into()));
            }
            if self.lengthscales.is_empty() {
                return Err(Error::Validation("leaf kernel needs at least one lengthscale".into()));
            }
            if let Some(bad) = self.lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                return Err(Error::Validation(format!("lengthscale must be positive, got {bad}")));
            }
            if let Some(dims) = &self.active_dims {
                if dims.is_empty() {
                    return Err(Error::Validation("active_dims must not be empty".into()));
                }
                if self.lengthscales.len() != 1 && self.lengthscales.len() != dims.len() {
                    return Err(Error::Shape(format!(
                        "{} lengthscales for {} active dimensions",
                        self.lengthscales.len(),
                        dims.len()
                    )));
                }
            }
        } else {
            if self.children.len() != 2 {
                return Err(Error::Validation(format!(
                    "additive composite needs exactly two children, got {}",
                    self.children.len()
                )));
            }
            for child in &self.children {
                child.validate()?;
            }
        }
        Ok(())
    }

    /// Smallest input dimension the kernel can be evaluated on, and whether
    /// the dimension is pinned exactly (ARD without explicit active dims).
    fn dimension_requirement(&self) -> (usize, bool) {
        if self.is_leaf() {
            match &self.active_dims {
                Some(dims) => (dims.iter().max().map_or(0, |m| m + 1), false),
                None if self.lengthscales.len() > 1 => (self.lengthscales.len(), true),
                None => (1, false),
            }
        } else {
            self.children.iter().fold((0, false), |(d, exact), c| {
                let (cd, ce) = c.dimension_requirement();
                (d.max(cd), exact || ce)
            })
        }
    }

    pub fn check_input_dim(&self, d: usize) -> Result<()> {
        let (need, exact) = self.dimension_requirement();
        if d < need || (exact && d != need) {
            return Err(Error::Shape(format!(
                "kernel expects {}{need} input dimensions, got {d}",
                if exact { "" } else { "at least " }
            )));
        }
        Ok(())
    }

    /// Prior variance k(z, z).
    pub fn prior_variance(&self) -> f64 {
        if self.is_leaf() {
            self.output_scale
        } else {
            self.output_scale * self.children.iter().map(|c| c.prior_variance()).sum::<f64>()
        }
    }

    /// Number of optimized hyperparameters in this tree.
    pub fn num_params(&self) -> usize {
        if self.is_leaf() {
            1 + self.lengthscales.len()
        } else {
            self.children.iter().map(|c| c.num_params()).sum()
        }
    }

    /// Log output scales and log lengthscales, depth-first.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.push_unconstrained(&mut out);
        out
    }

    fn push_unconstrained(&self, out: &mut Vec<f64>) {
        if self.is_leaf() {
            out.push(self.output_scale.ln());
            out.extend(self.lengthscales.iter().map(|l| l.ln()));
        } else {
            for c in &self.children {
                c.push_unconstrained(out);
            }
        }
    }

    /// Inverse of [`to_unconstrained`](Self::to_unconstrained); the tree shape is taken from `self`.
    pub fn with_unconstrained(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} hyperparameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        let mut out = self.clone();
        let mut cursor = 0;
        out.pull_unconstrained(theta, &mut cursor);
        Ok(out)
    }

    fn pull_unconstrained(&mut self, theta: &[f64], cursor: &mut usize) {
        if self.is_leaf() {
            self.output_scale = theta[*cursor].exp();
            *cursor += 1;
            for l in self.lengthscales.iter_mut() {
                *l = theta[*cursor].exp();
                *cursor += 1;
            }
        } else {
            for c in self.children.iter_mut() {
                c.pull_unconstrained(theta, cursor);
            }
        }
    }

    /// Positions of the log-lengthscale entries in the unconstrained vector.
    pub fn lengthscale_param_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cursor = 0;
        self.collect_lengthscale_indices(&mut cursor, &mut out);
        out
    }

    fn collect_lengthscale_indices(&self, cursor: &mut usize, out: &mut Vec<usize>) {
        if self.is_leaf() {
            *cursor += 1;
            for _ in &self.lengthscales {
                out.push(*cursor);
                *cursor += 1;
            }
        } else {
            for c in &self.children {
                c.collect_lengthscale_indices(cursor, out);
            }
        }
    }

    /// Visit every leaf mutably, depth-first.
    pub fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut KernelParams)) {
        if self.is_leaf() {
            f(self);
        } else {
            for c in self.children.iter_mut() {
                c.for_each_leaf_mut(f);
            }
        }
    }

    fn scaled_sq_dist(&self, z: &[f64], zp: &[f64]) -> f64 {
        let iso = self.lengthscales.len() == 1;
        let term = |k: usize, i: usize| {
            let l = if iso {
                self.lengthscales[0]
            } else {
                self.lengthscales[k]
            };
            let d = (z[i] - zp[i]) / l;
            d * d
        };
        match &self.active_dims {
            Some(dims) => dims.iter().enumerate().map(|(k, &i)| term(k, i)).sum(),
            None => (0..z.len()).map(|i| term(i, i)).sum(),
        }
    }

    /// Kernel value without shape checks.
    pub(crate) fn eval_unchecked(&self, z: &[f64], zp: &[f64]) -> f64 {
        match self.variant {
            KernelVariant::ExponentiatedQuadratic => self.output_scale * (-0.5 * self.scaled_sq_dist(z, zp)).exp(),
            KernelVariant::Matern52Ard => {
                let r2 = self.scaled_sq_dist(z, zp);
                let r = r2.sqrt();
                self.output_scale * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
            KernelVariant::AdditiveComposite => {
                self.output_scale * (self.children[0].eval_unchecked(z, zp) + self.children[1].eval_unchecked(z, zp))
            }
        }
    }

    /// Kernel value plus its partial derivatives with respect to the
    /// unconstrained parameters, written into `grad` (length `num_params`).
    pub(crate) fn eval_with_grad(&self, z: &[f64], zp: &[f64], grad: &mut [f64]) -> f64 {
        match self.variant {
            KernelVariant::AdditiveComposite => {
                let split = self.children[0].num_params();
                let (g0, g1) = grad.split_at_mut(split);
                let v = self.children[0].eval_with_grad(z, zp, g0) + self.children[1].eval_with_grad(z, zp, g1);
                if self.output_scale != 1.0 {
                    grad.iter_mut().for_each(|g| *g *= self.output_scale);
                }
                self.output_scale * v
            }
            _ => {
                let iso = self.lengthscales.len() == 1;
                let n_dims = self.active_dims.as_ref().map_or(z.len(), Vec::len);
                let mut r2 = 0.0;
                for k in 0..n_dims {
                    let i = self.active_dims.as_ref().map_or(k, |d| d[k]);
                    let l = if iso {
                        self.lengthscales[0]
                    } else {
                        self.lengthscales[k]
                    };
                    let d = (z[i] - zp[i]) / l;
                    let t = d * d;
                    r2 += t;
                    if !iso {
                        grad[1 + k] = t;
                    }
                }
                if iso {
                    grad[1] = r2;
                }
                // grad[1..] currently holds the scaled squared distance
                // components; the leaf-specific factor turns them into partials.
                let (value, factor) = if self.variant == KernelVariant::ExponentiatedQuadratic {
                    let v = self.output_scale * (-0.5 * r2).exp();
                    (v, v)
                } else {
                    let r = r2.sqrt();
                    let e = (-SQRT5 * r).exp();
                    let v = self.output_scale * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * e;
                    (v, self.output_scale * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e)
                };
                grad[0] = value;
                for g in grad[1..].iter_mut() {
                    *g *= factor;
                }
                value
            }
        }
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation("non-finite kernel input".into()))
    }
}

/// k(z, z') with full input validation.
pub fn kernel_eval(params: &KernelParams, z: &[f64], z_prime: &[f64]) -> Result<f64> {
    if z.len() != z_prime.len() {
        return Err(Error::Shape(format!(
            "kernel arguments have dimensions {} and {}",
            z.len(),
            z_prime.len()
        )));
    }
    params.validate()?;
    params.check_input_dim(z.len())?;
    check_finite(z)?;
    check_finite(z_prime)?;
    Ok(params.eval_unchecked(z, z_prime))
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Gram matrix between the rows of `a` (n×d) and `b` (m×d).
pub fn kernel_matrix(params: &KernelParams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Shape("kernel_matrix needs non-empty inputs".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "input dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    params.validate()?;
    params.check_input_dim(a.ncols())?;
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite kernel input".into()));
    }
    Ok(cross_matrix(params, &rows(a), &rows(b)))
}

pub(crate) fn cross_matrix(params: &KernelParams, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| params.eval_unchecked(&a[i], &b[j]))
}

pub(crate) fn gram_matrix(params: &KernelParams, a: &[Vec<f64>]) -> DMatrix<f64> {
    let n = a.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = params.eval_unchecked(&a[i], &a[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `sum_ij w_ij dK_ij/dθ` for every unconstrained parameter θ, for a
/// symmetric weight matrix `w`, without materializing the derivative matrices.
pub(crate) fn gram_grad_contraction(params: &KernelParams, a: &[Vec<f64>], w: &DMatrix<f64>) -> Vec<f64> {
    let n = a.len();
    let p = params.num_params();
    let mut out = vec![0.0; p];
    let mut g = vec![0.0; p];
    for j in 0..n {
        for i in j..n {
            params.eval_with_grad(&a[i], &a[j], &mut g);
            let wij = if i == j { w[(i, i)] } else { 2.0 * w[(i, j)] };
            for (o, gv) in out.iter_mut().zip(&g) {
                *o += wij * gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eq_zero_distance_is_output_scale() {
        let k = KernelParams::exponentiated_quadratic(1.0, vec![1.0]);
        assert_eq!(kernel_eval(&k, &[0.3, 0.2], &[0.3, 0.2]).unwrap(), 1.0);
    }

    #[test]
    fn eq_sqrt2_distance() {
        let k = KernelParams::exponentiated_quadratic(1.0, vec![1.0]);
        let v = kernel_eval(&k, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn matern_ard_equal_scaled_distances() {
        let k = KernelParams::matern52(1.0, vec![1.0, 2.0]);
        let a = kernel_eval(&k, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let b = kernel_eval(&k, &[0.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn composite_zero_distance_sums_children() {
        let k = KernelParams::additive(
            KernelParams::exponentiated_quadratic(0.7, vec![1.0]).on_dims(vec![2]),
            KernelParams::matern52(1.3, vec![1.0, 1.0, 1.0]),
        );
        let z = [0.1, 0.2, 0.3];
        assert_relative_eq!(kernel_eval(&k, &z, &z).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(k.prior_variance(), 2.0);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let k = KernelParams::matern52(1.0, vec![1.0, 2.0]);
        assert!(matches!(kernel_eval(&k, &[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(
            kernel_eval(&k, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let k = KernelParams::exponentiated_quadratic(1.0, vec![1.0]);
        assert!(matches!(
            kernel_eval(&k, &[f64::NAN], &[0.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(KernelParams::matern52(0.0, vec![1.0]).validate().is_err());
        assert!(KernelParams::matern52(1.0, vec![-1.0]).validate().is_err());
        let mut bad = KernelParams::additive(
            KernelParams::matern52(1.0, vec![1.0]),
            KernelParams::matern52(1.0, vec![1.0]),
        );
        bad.children.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unconstrained_round_trip() {
        let k = KernelParams::additive(
            KernelParams::exponentiated_quadratic(0.7, vec![1.5]).on_dims(vec![2]),
            KernelParams::matern52(1.3, vec![0.5, 2.0, 3.0]),
        );
        let theta = k.to_unconstrained();
        assert_eq!(theta.len(), 6);
        assert_eq!(k.lengthscale_param_indices(), vec![1, 3, 4, 5]);
        let back = k.with_unconstrained(&theta).unwrap();
        for (a, b) in back.to_unconstrained().iter().zip(&theta) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let k = KernelParams::additive(
            KernelParams::exponentiated_quadratic(0.7, vec![1.5]).on_dims(vec![2]),
            KernelParams::matern52(1.3, vec![0.5, 2.0, 3.0]),
        );
        let z = [0.1, 0.5, -0.3];
        let zp = [0.4, 0.2, 0.6];
        let theta = k.to_unconstrained();
        let mut g = vec![0.0; theta.len()];
        k.eval_with_grad(&z, &zp, &mut g);
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            let mut dn = theta.clone();
            dn[i] -= h;
            let fd = (k.with_unconstrained(&up).unwrap().eval_unchecked(&z, &zp)
                - k.with_unconstrained(&dn).unwrap().eval_unchecked(&z, &zp))
                / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn json_shape() {
        let k = KernelParams::additive(
            KernelParams::exponentiated_quadratic(0.5, vec![1.0]).on_dims(vec![1]),
            KernelParams::matern52(2.0, vec![1.0, 1.0]),
        );
        let v = serde_json::to_value(&k).unwrap();
        assert_eq!(v["variant"], "additive_composite");
        assert_eq!(v["children"][0]["variant"], "exponentiated_quadratic");
        assert_eq!(v["children"][0]["active_dims"][0], 1);
        let back: KernelParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, k);
    }
}
