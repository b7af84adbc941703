use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mutually non-dominated objective vectors (maximize-all), with the index
/// of each point in the filtered input.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFrontier {
    pub points: Vec<Vec<f64>>,
    pub indices: Vec<usize>,
}

impl ParetoFrontier {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `a` weakly dominates `b`: at least as good everywhere.
pub fn weakly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    weakly_dominates(a, b) && a.iter().zip(b).any(|(x, y)| x > y)
}

pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else { return Ok(0) };
    let m = first.len();
    if m == 0 {
        return Err(Error::Shape("objective vectors must be non-empty".into()));
    }
    for p in points {
        if p.len() != m {
            return Err(Error::Shape(format!("objective vectors of length {} and {m}", p.len())));
        }
        if p.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation("objective vector contains NaN".into()));
        }
    }
    Ok(m)
}

/// Indices of the non-dominated points, in input order; among exact
/// duplicates only the first is kept.
pub fn pareto_indices(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_points(points)?;
    // In lexicographically descending order no point can dominate one that
    // precedes it, so each point only needs checking against those kept so far.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .iter()
            .zip(&points[a])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if !kept.iter().any(|&k| weakly_dominates(&points[k], &points[i])) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

pub fn pareto_filter(points: &[Vec<f64>]) -> Result<ParetoFrontier> {
    let indices = pareto_indices(points)?;
    Ok(ParetoFrontier {
        points: indices.iter().map(|&i| points[i].clone()).collect(),
        indices,
    })
}
