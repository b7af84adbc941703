use std::collections::BTreeMap;
use std::ops::Bound::{Excluded, Included, Unbounded};

use ordered_float::OrderedFloat;

use super::pareto::check_points;
use crate::error::{Error, Result};

/// 2D staircase of mutually non-dominated (x, y) points above a reference
/// corner, with its dominated area maintained under insertion.
#[derive(Clone, Debug)]
pub(crate) struct Staircase {
    rx: f64,
    ry: f64,
    // x ascending, y strictly descending
    steps: BTreeMap<OrderedFloat<f64>, f64>,
    area: f64,
}

impl Staircase {
    pub(crate) fn new(rx: f64, ry: f64) -> Self {
        Self {
            rx,
            ry,
            steps: BTreeMap::new(),
            area: 0.0,
        }
    }

    pub(crate) fn area(&self) -> f64 {
        self.area
    }

    /// Inserts a point with `x > rx`, `y > ry`; returns the area gained.
    pub(crate) fn insert(&mut self, x: f64, y: f64) -> f64 {
        let key = OrderedFloat(x);
        let mut height = match self.steps.range((Included(key), Unbounded)).next() {
            Some((_, &ys)) if ys >= y => return 0.0,
            Some((_, &ys)) => ys,
            None => self.ry,
        };
        let mut gained = 0.0;
        let mut right = x;
        let mut removed = Vec::new();
        for (&kx, &ky) in self.steps.range((Unbounded, Excluded(key))).rev() {
            gained += (right - kx.0) * (y - height);
            if ky >= y {
                if ky == y {
                    removed.push(kx);
                }
                height = f64::INFINITY;
                break;
            }
            removed.push(kx);
            height = ky;
            right = kx.0;
        }
        if height.is_finite() {
            gained += (right - self.rx) * (y - height);
        }
        for k in removed {
            self.steps.remove(&k);
        }
        self.steps.insert(key, y);
        self.area += gained;
        gained
    }
}

fn hv2(points: &[&[f64]], r: &[f64]) -> f64 {
    let mut s = Staircase::new(r[0], r[1]);
    for p in points {
        s.insert(p[0], p[1]);
    }
    s.area()
}

fn hv3(points: &[&[f64]], r: &[f64]) -> f64 {
    let mut sorted: Vec<&[f64]> = points.to_vec();
    sorted.sort_by(|a, b| b[2].total_cmp(&a[2]));
    let mut s = Staircase::new(r[0], r[1]);
    let mut vol = 0.0;
    for (i, p) in sorted.iter().enumerate() {
        s.insert(p[0], p[1]);
        let next = sorted.get(i + 1).map_or(r[2], |q| q[2]);
        vol += s.area() * (p[2] - next);
    }
    vol
}

/// Slicing along the last objective; exponential in m, for m >= 4.
fn hv_slices(points: &[&[f64]], r: &[f64]) -> f64 {
    let m = r.len();
    if m == 3 {
        return hv3(points, r);
    }
    let mut sorted: Vec<&[f64]> = points.to_vec();
    sorted.sort_by(|a, b| b[m - 1].total_cmp(&a[m - 1]));
    let mut vol = 0.0;
    for i in 0..sorted.len() {
        let next = sorted.get(i + 1).map_or(r[m - 1], |q| q[m - 1]);
        let depth = sorted[i][m - 1] - next;
        if depth > 0.0 {
            let proj: Vec<&[f64]> = sorted[..=i].iter().map(|p| &p[..m - 1]).collect();
            vol += hv_slices(&proj, &r[..m - 1]) * depth;
        }
    }
    vol
}

/// Lebesgue measure of the region dominated by `points` and bounded below
/// by `r` (maximize-all). Points not strictly above `r` contribute nothing
/// and are dropped.
pub fn hypervolume(points: &[Vec<f64>], r: &[f64]) -> Result<f64> {
    let m = check_points(points)?;
    if points.is_empty() {
        return Ok(0.0);
    }
    if m != r.len() {
        return Err(Error::Shape(format!(
            "points have {m} objectives, reference point has {}",
            r.len()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("reference point must be finite".into()));
    }
    let above: Vec<&[f64]> = points
        .iter()
        .filter(|p| p.iter().zip(r).all(|(a, b)| a > b))
        .map(|p| p.as_slice())
        .collect();
    if above.len() < points.len() {
        tracing::warn!(
            dropped = points.len() - above.len(),
            "points not above the reference point ignored in hypervolume"
        );
    }
    Ok(hv_unchecked(&above, r))
}

pub(crate) fn hv_unchecked(points: &[&[f64]], r: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    match r.len() {
        1 => points.iter().map(|p| p[0]).fold(r[0], f64::max) - r[0],
        2 => hv2(points, r),
        3 => hv3(points, r),
        _ => hv_slices(points, r),
    }
}
