//! Disjoint boxes covering the region above `r` that a frontier does not
//! dominate. The hypervolume improvement of a point `y` is the total volume
//! of `[r, y]` intersected with these boxes.

use super::pareto::weakly_dominates;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    pub lower: Vec<Vec<f64>>,
    /// Upper corners; `f64::INFINITY` where unbounded.
    pub upper: Vec<Vec<f64>>,
}

impl BoxSet {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Exact hypervolume improvement of `y`.
    pub fn hvi(&self, y: &[f64]) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                l.iter()
                    .zip(u)
                    .zip(y)
                    .map(|((l, u), y)| (y.min(*u) - l).max(0.0))
                    .product::<f64>()
            })
            .sum()
    }

    /// `log` of the hypervolume improvement with every positive part
    /// replaced by a softplus of temperature `tau`. Finite everywhere.
    pub fn log_smooth_hvi(&self, y: &[f64], tau: f64) -> f64 {
        let terms: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                l.iter()
                    .zip(u)
                    .zip(y)
                    .map(|((l, u), y)| log_softplus(y.min(*u) - l, tau))
                    .sum()
            })
            .collect();
        logsumexp(&terms)
    }
}

/// `ln(tau * ln(1 + exp(x / tau)))`, stable for large |x / tau|.
pub fn log_softplus(x: f64, tau: f64) -> f64 {
    let v = x / tau;
    if v > 35.0 {
        (x + tau * (-v).exp().ln_1p()).ln()
    } else if v < -35.0 {
        tau.ln() + v
    } else {
        (tau * v.exp().ln_1p()).ln()
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Box decomposition for two or three objectives. Frontier points that are
/// not strictly above `r` are ignored.
pub fn box_decomposition(frontier: &[Vec<f64>], r: &[f64]) -> BoxSet {
    let pts: Vec<&Vec<f64>> = frontier
        .iter()
        .filter(|p| p.iter().zip(r).all(|(a, b)| a > b))
        .collect();
    match r.len() {
        2 => boxes_2d(&pts, r),
        3 => boxes_3d(&pts, r),
        m => panic!("box decomposition supports 2 or 3 objectives, got {m}"),
    }
}

fn boxes_2d(pts: &[&Vec<f64>], r: &[f64]) -> BoxSet {
    let mut nd: Vec<&Vec<f64>> = pts
        .iter()
        .copied()
        .filter(|p| !pts.iter().any(|q| weakly_dominates(q, p) && q != p))
        .collect();
    nd.sort_by(|a, b| a[0].total_cmp(&b[0]));
    nd.dedup();
    let mut lower = Vec::with_capacity(nd.len() + 1);
    let mut upper = Vec::with_capacity(nd.len() + 1);
    let mut left = r[0];
    for p in &nd {
        lower.push(vec![left, p[1]]);
        upper.push(vec![p[0], f64::INFINITY]);
        left = p[0];
    }
    lower.push(vec![left, r[1]]);
    upper.push(vec![f64::INFINITY, f64::INFINITY]);
    BoxSet { lower, upper }
}

/// Grid cells on the distinct frontier x and y coordinates; each cell's
/// column is dominated up to the largest z among points covering the cell.
fn boxes_3d(pts: &[&Vec<f64>], r: &[f64]) -> BoxSet {
    let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let (nx, ny) = (xs.len(), ys.len());
    // grid edges: a_0 = r_x, a_1..a_nx = xs, a_{nx+1} = inf
    let edge = |v: &[f64], rr: f64, i: usize| -> f64 {
        if i == 0 {
            rr
        } else if i <= v.len() {
            v[i - 1]
        } else {
            f64::INFINITY
        }
    };
    // best[i][j]: max z over points whose x is edge i and y is edge j (1-based)
    let mut best = vec![vec![r[2]; ny + 2]; nx + 2];
    for p in pts {
        let i = xs.partition_point(|v| *v < p[0]) + 1;
        let j = ys.partition_point(|v| *v < p[1]) + 1;
        best[i][j] = best[i][j].max(p[2]);
    }
    for i in (0..=nx).rev() {
        for j in (0..=ny).rev() {
            let v = best[i][j].max(best[i + 1][j]).max(best[i][j + 1]);
            best[i][j] = v;
        }
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            let z = best[i + 1][j + 1];
            lower.push(vec![edge(&xs, r[0], i), edge(&ys, r[1], j), z]);
            upper.push(vec![edge(&xs, r[0], i + 1), edge(&ys, r[1], j + 1), f64::INFINITY]);
        }
    }
    BoxSet { lower, upper }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moo::hypervolume;

    #[test]
    fn hvi_matches_hypervolume_difference() {
        let frontier = vec![vec![3.0, 1.0, 2.0], vec![1.0, 3.0, 1.0], vec![2.0, 2.0, 3.0]];
        let r = [0.0, 0.0, 0.0];
        let boxes = box_decomposition(&frontier, &r);
        let base = hypervolume(&frontier, &r).unwrap();
        for y in [[2.5, 2.5, 2.5], [4.0, 0.5, 1.0], [1.0, 1.0, 1.0], [0.5, 4.0, 4.0]] {
            let mut with = frontier.clone();
            with.push(y.to_vec());
            let expect = hypervolume(&with, &r).unwrap() - base;
            assert!((boxes.hvi(&y) - expect).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn hvi_2d() {
        let boxes = box_decomposition(&[vec![1.0, 1.0]], &[0.0, 0.0]);
        assert_eq!(boxes.hvi(&[2.0, 2.0]), 3.0);
        assert_eq!(boxes.hvi(&[0.5, 0.5]), 0.0);
    }

    #[test]
    fn log_softplus_branches_agree() {
        for x in [-1.0, -0.04, -1e-3, 0.0, 1e-3, 0.04, 1.0] {
            let direct = (1e-3 * (x / 1e-3f64).exp().ln_1p()).ln();
            let v = log_softplus(x, 1e-3);
            if direct.is_finite() {
                assert!((v - direct).abs() < 1e-9, "{x}");
            }
        }
        assert!(log_softplus(-1e6, 1e-3).is_finite());
    }

    #[test]
    fn smooth_log_tracks_exact() {
        let boxes = box_decomposition(&[vec![1.0, 1.0]], &[0.0, 0.0]);
        assert!((boxes.log_smooth_hvi(&[2.0, 2.0], 1e-6) - 3f64.ln()).abs() < 1e-4);
        let near = boxes.log_smooth_hvi(&[0.9, 0.9], 1e-3);
        let far = boxes.log_smooth_hvi(&[0.5, 0.5], 1e-3);
        assert!(near.is_finite() && far.is_finite() && far < near);
    }
}
