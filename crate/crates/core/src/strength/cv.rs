use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::StrengthObservation;
use super::model::{fit_strength_model, StrengthModelConfig};
use crate::campaign::Constraints;
use crate::error::{Error, Result};

/// z-value of the central 95% interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub fold: usize,
    /// Index into the input observations.
    pub index: usize,
    pub age_days: f64,
    pub mean_mpa: f64,
    /// Predictive sd including observation noise.
    pub sd_mpa: f64,
    pub actual_mpa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub points: Vec<CvPoint>,
    pub rmse: f64,
    /// Fraction of held-out points inside the central 95% predictive interval.
    pub coverage95: f64,
}

/// Assigns each distinct mixture to a fold; all ages of a mixture share it.
pub fn mixture_folds(observations: &[StrengthObservation], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut groups: Vec<[u64; 7]> = Vec::new();
    let mut group_of = HashMap::new();
    for o in observations {
        group_of.entry(o.mixture.key()).or_insert_with(|| {
            groups.push(o.mixture.key());
            groups.len() - 1
        });
    }
    if folds < 2 {
        return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
    }
    if folds > groups.len() {
        return Err(Error::Validation(format!(
            "{folds} folds requested but only {} distinct mixtures",
            groups.len()
        )));
    }
    let mut perm: Vec<usize> = (0..groups.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of_group = vec![0; groups.len()];
    for (rank, &g) in perm.iter().enumerate() {
        fold_of_group[g] = rank % folds;
    }
    Ok(observations
        .iter()
        .map(|o| fold_of_group[group_of[&o.mixture.key()]])
        .collect())
}

/// K-fold cross-validation grouped by mixture. Only measured observations
/// are scored; zero-day anchors are rebuilt inside each fold's fit.
pub fn cross_validate(
    observations: &[StrengthObservation],
    design_space: &Constraints,
    folds: usize,
    seed: u64,
    config: &StrengthModelConfig,
) -> Result<CvReport> {
    let measured: Vec<StrengthObservation> = observations.iter().filter(|o| o.is_measured()).cloned().collect();
    let assignment = mixture_folds(&measured, folds, seed)?;
    let mut points = Vec::with_capacity(measured.len());
    for fold in 0..folds {
        let train: Vec<StrengthObservation> = measured
            .iter()
            .zip(&assignment)
            .filter(|(_, f)| **f != fold)
            .map(|(o, _)| o.clone())
            .collect();
        let test: Vec<usize> = (0..measured.len()).filter(|&i| assignment[i] == fold).collect();
        let model = fit_strength_model(&train, design_space, config).map_err(|e| match e {
            Error::InsufficientData(m) => Error::Validation(format!("fold {fold}: {m}")),
            other => other,
        })?;
        let noise_var = model.noise_sd_mpa().powi(2);
        for i in test {
            let o = &measured[i];
            let p = model.predict(&o.mixture, &[o.age_days])?[0];
            points.push(CvPoint {
                fold,
                index: i,
                age_days: o.age_days,
                mean_mpa: p.mean_mpa,
                sd_mpa: (p.sd_mpa * p.sd_mpa + noise_var).sqrt(),
                actual_mpa: o.strength_mpa,
            });
        }
        tracing::debug!(fold, "cross-validation fold done");
    }
    points.sort_by_key(|p| p.index);
    let n = points.len() as f64;
    let rmse = (points.iter().map(|p| (p.mean_mpa - p.actual_mpa).powi(2)).sum::<f64>() / n).sqrt();
    let covered = points
        .iter()
        .filter(|p| (p.actual_mpa - p.mean_mpa).abs() <= Z95 * p.sd_mpa)
        .count();
    Ok(CvReport {
        folds,
        points,
        rmse,
        coverage95: covered as f64 / n,
    })
}
