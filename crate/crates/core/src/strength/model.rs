use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mixture::{IngredientId, Mixture, Provenance, StrengthObservation, NUM_INGREDIENTS};
use crate::campaign::Constraints;
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters, ConditionedGp, FitConfig, KernelParams, PosteriorGaussian, TrainingData};
use crate::moo::FeasibleRegion;

pub const DEFAULT_TAU: f64 = 1.0 / 24.0;

/// Number of features: one per ingredient plus the time coordinate (last).
pub const FEATURE_DIM: usize = NUM_INGREDIENTS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTransform {
    /// `ln(age + tau)`
    Log,
    /// `age / max_age`
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelStructure {
    /// EQ on the time coordinate plus Matérn-5/2 ARD on all coordinates.
    Composite,
    /// A single Matérn-5/2 ARD kernel on all coordinates.
    SingleMatern,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrengthModelConfig {
    pub tau: f64,
    pub time_transform: TimeTransform,
    pub kernel: KernelStructure,
    pub augment: bool,
    /// Extra random zero-day compositions; `None` means `max(5, n_mixtures / 4)`.
    pub extra_compositions: Option<usize>,
    pub augmented_noise_mpa: f64,
    pub fit: FitConfig,
    pub seed: u64,
    /// Hyperparameters are fitted on a random subset of at most this many
    /// points; the posterior is always conditioned on every point.
    pub max_fit_points: usize,
    pub initial_noise: f64,
}

impl Default for StrengthModelConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            time_transform: TimeTransform::Log,
            kernel: KernelStructure::Composite,
            augment: true,
            extra_compositions: None,
            augmented_noise_mpa: 0.5,
            fit: FitConfig::default(),
            seed: 0,
            max_fit_points: 400,
            initial_noise: 0.05,
        }
    }
}

impl StrengthModelConfig {
    /// No log-time, no augmentation, one Matérn kernel.
    pub fn ablated() -> Self {
        Self {
            time_transform: TimeTransform::Linear,
            kernel: KernelStructure::SingleMatern,
            augment: false,
            ..Self::default()
        }
    }
}

/// Affine input scaling and target standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lower: [f64; NUM_INGREDIENTS],
    pub span: [f64; NUM_INGREDIENTS],
    pub target_mean: f64,
    pub target_sd: f64,
    pub time_transform: TimeTransform,
    pub tau: f64,
    pub max_age: f64,
}

impl Normalization {
    pub fn normalize(&self, mixture: &Mixture) -> [f64; NUM_INGREDIENTS] {
        let q = mixture.quantities();
        std::array::from_fn(|i| (q[i] - self.lower[i]) / self.span[i])
    }

    pub fn denormalize(&self, z: &[f64; NUM_INGREDIENTS]) -> [f64; NUM_INGREDIENTS] {
        std::array::from_fn(|i| z[i] * self.span[i] + self.lower[i])
    }

    pub fn time_feature(&self, age_days: f64) -> f64 {
        match self.time_transform {
            TimeTransform::Log => (age_days + self.tau).ln(),
            TimeTransform::Linear => age_days / self.max_age,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lower.iter().chain(&self.span).all(|v| v.is_finite())
            && self.span.iter().all(|s| *s > 0.0)
            && self.target_mean.is_finite()
            && self.target_sd.is_finite()
            && self.target_sd > 0.0
            && self.tau > 0.0
            && self.max_age > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(
                "normalization constants must be finite and invertible".into(),
            ))
        }
    }
}

/// Feature vector `[normalized quantities..., time]`, time last.
pub fn featurize(mixture: &Mixture, age_days: f64, normalization: &Normalization) -> Result<Vec<f64>> {
    if !(age_days.is_finite() && age_days >= 0.0) {
        return Err(Error::Validation(format!("age must be non-negative, got {age_days}")));
    }
    let mut f = normalization.normalize(mixture).to_vec();
    f.push(normalization.time_feature(age_days));
    Ok(f)
}

/// Adds one zero-day record per distinct mixture lacking one, then `extra`
/// records at mixtures drawn uniformly from `design_space`.
pub fn augment_zero_day(
    observations: &[StrengthObservation],
    extra: usize,
    design_space: &Constraints,
    seed: u64,
) -> Result<Vec<StrengthObservation>> {
    if observations.is_empty() {
        return Err(Error::InsufficientData("no observations to augment".into()));
    }
    let mut out = observations.to_vec();
    let mut anchored: HashSet<_> = observations
        .iter()
        .filter(|o| o.provenance == Provenance::AugmentedZero)
        .map(|o| o.mixture.key())
        .collect();
    for o in observations {
        if anchored.insert(o.mixture.key()) {
            out.push(StrengthObservation::augmented_zero(o.mixture));
        }
    }
    if extra > 0 {
        let region = FeasibleRegion::new(design_space)?;
        for m in region.sample_mixtures(extra, seed) {
            out.push(StrengthObservation::augmented_zero(m));
        }
    }
    Ok(out)
}

pub fn distinct_mixtures(observations: &[StrengthObservation]) -> usize {
    observations
        .iter()
        .map(|o| o.mixture.key())
        .collect::<HashSet<_>>()
        .len()
}

/// Hex SHA-256 of the canonical JSON encoding of the observations.
pub fn data_digest(observations: &[StrengthObservation]) -> String {
    let bytes = serde_json::to_vec(observations).expect("observations serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Design-space box spanning every observed quantity.
pub fn observed_bounds(observations: &[StrengthObservation]) -> Constraints {
    let mut c = Constraints::default();
    for id in IngredientId::ALL {
        let (lo, hi) = observations
            .iter()
            .map(|o| o.mixture.get(id))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if lo.is_finite() && hi > lo {
            c = c.with_bound(id, lo, hi);
        } else if lo.is_finite() && lo > 0.0 {
            c = c.with_bound(id, lo, lo);
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthPrediction {
    pub age_days: f64,
    pub mean_mpa: f64,
    pub sd_mpa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Snapshot {
    kernel: KernelParams,
    training: TrainingData,
    normalization: Normalization,
    observations: Vec<StrengthObservation>,
    config: StrengthModelConfig,
    digest: String,
}

/// A fitted strength GP. Serializes to a self-contained JSON snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "Snapshot", try_from = "Snapshot")]
pub struct StrengthModel {
    snapshot: Snapshot,
    gp: ConditionedGp,
}

impl From<StrengthModel> for Snapshot {
    fn from(m: StrengthModel) -> Self {
        m.snapshot
    }
}

impl TryFrom<Snapshot> for StrengthModel {
    type Error = Error;

    fn try_from(snapshot: Snapshot) -> Result<Self> {
        if data_digest(&snapshot.observations) != snapshot.digest {
            return Err(Error::Integrity {
                digest: snapshot.digest.clone(),
                message: "training observations do not match the stored digest".into(),
            });
        }
        snapshot.normalization.validate()?;
        let gp = ConditionedGp::new(&snapshot.kernel, &snapshot.training)?;
        Ok(Self { snapshot, gp })
    }
}

impl PartialEq for StrengthModel {
    fn eq(&self, other: &Self) -> bool {
        self.snapshot == other.snapshot
    }
}

fn build_kernel(structure: KernelStructure) -> KernelParams {
    let joint = KernelParams::matern52(1.0, vec![1.0; FEATURE_DIM]);
    match structure {
        KernelStructure::Composite => KernelParams::additive(
            KernelParams::exponentiated_quadratic(0.5, vec![2.0]).on_dims(vec![FEATURE_DIM - 1]),
            joint,
        ),
        KernelStructure::SingleMatern => joint,
    }
}

fn normalization_for(
    records: &[StrengthObservation],
    design_space: &Constraints,
    config: &StrengthModelConfig,
) -> Normalization {
    let bounds = design_space.effective_bounds();
    let mut lower = [0.0; NUM_INGREDIENTS];
    let mut span = [1.0; NUM_INGREDIENTS];
    for i in 0..NUM_INGREDIENTS {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        if design_space.bounds.contains_key(&IngredientId::ALL[i]) {
            lo = bounds[i].lo;
            hi = bounds[i].hi;
        }
        for r in records {
            let q = r.mixture.quantities()[i];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if lo.is_finite() {
            lower[i] = lo;
            span[i] = if hi > lo { hi - lo } else { 1.0 };
        }
    }
    let measured: Vec<f64> = records
        .iter()
        .filter(|r| r.is_measured())
        .map(|r| r.strength_mpa)
        .collect();
    let n = measured.len() as f64;
    let mean = measured.iter().sum::<f64>() / n;
    let var = measured.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let sd = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
    let max_age = records.iter().map(|r| r.age_days).fold(0.0, f64::max).max(1.0);
    Normalization {
        lower,
        span,
        target_mean: mean,
        target_sd: sd,
        time_transform: config.time_transform,
        tau: config.tau,
        max_age,
    }
}

fn training_data(
    records: &[StrengthObservation],
    norm: &Normalization,
    noise: f64,
    augmented_noise_mpa: f64,
) -> Result<TrainingData> {
    let n = records.len();
    let mut x = DMatrix::zeros(n, FEATURE_DIM);
    let mut y = DVector::zeros(n);
    let mut fixed = Vec::with_capacity(n);
    let aug_var = (augmented_noise_mpa / norm.target_sd).powi(2);
    for (i, r) in records.iter().enumerate() {
        let f = featurize(&r.mixture, r.age_days, norm)?;
        for (j, v) in f.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = (r.strength_mpa - norm.target_mean) / norm.target_sd;
        fixed.push((!r.is_measured()).then_some(aug_var));
    }
    TrainingData::new(x, y, noise)?.with_fixed_noise(fixed)
}

fn subset(data: &TrainingData, idx: &[usize]) -> Result<TrainingData> {
    let x = DMatrix::from_fn(idx.len(), data.dim(), |i, j| data.inputs[(idx[i], j)]);
    let y = DVector::from_fn(idx.len(), |i, _| data.targets[idx[i]]);
    let fixed = if data.fixed_noise.is_empty() {
        Vec::new()
    } else {
        idx.iter().map(|&i| data.fixed_noise[i]).collect()
    };
    TrainingData::new(x, y, data.noise_variance)?.with_fixed_noise(fixed)
}

/// Errors unless there are at least 2 measurements at 2 distinct ages.
pub fn check_trainable(observations: &[StrengthObservation]) -> Result<()> {
    let measured: Vec<&StrengthObservation> = observations.iter().filter(|o| o.is_measured()).collect();
    let ages: HashSet<u64> = measured.iter().map(|o| o.age_days.to_bits()).collect();
    if measured.len() < 2 || ages.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 measured observations at 2 distinct ages, have {} at {} ages",
            measured.len(),
            ages.len()
        )));
    }
    Ok(())
}

/// Fits the strength GP on `observations` (measured records, optionally
/// already containing zero-day anchors).
pub fn fit_strength_model(
    observations: &[StrengthObservation],
    design_space: &Constraints,
    config: &StrengthModelConfig,
) -> Result<StrengthModel> {
    for o in observations {
        o.validate()?;
    }
    check_trainable(observations)?;
    let records = if config.augment {
        let extra = config
            .extra_compositions
            .unwrap_or_else(|| (distinct_mixtures(observations) / 4).max(5));
        augment_zero_day(observations, extra, design_space, config.seed)?
    } else {
        observations.iter().filter(|o| o.is_measured()).cloned().collect()
    };
    let norm = normalization_for(&records, design_space, config);
    let data = training_data(&records, &norm, config.initial_noise, config.augmented_noise_mpa)?;

    let fit_data = if data.len() > config.max_fit_points {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15));
        idx.truncate(config.max_fit_points);
        idx.sort_unstable();
        subset(&data, &idx)?
    } else {
        data.clone()
    };
    let fitted = fit_hyperparameters(&build_kernel(config.kernel), &fit_data, &config.fit)?;
    let mut training = data;
    training.noise_variance = fitted.noise_variance;
    let snapshot = Snapshot {
        kernel: fitted.kernel,
        training,
        normalization: norm,
        digest: data_digest(observations),
        observations: observations.to_vec(),
        config: config.clone(),
    };
    StrengthModel::try_from(snapshot)
}

impl StrengthModel {
    pub fn kernel(&self) -> &KernelParams {
        &self.snapshot.kernel
    }

    pub fn normalization(&self) -> &Normalization {
        &self.snapshot.normalization
    }

    pub fn training(&self) -> &TrainingData {
        &self.snapshot.training
    }

    pub fn config(&self) -> &StrengthModelConfig {
        &self.snapshot.config
    }

    /// Observations the model was fitted on, before augmentation.
    pub fn observations(&self) -> &[StrengthObservation] {
        &self.snapshot.observations
    }

    pub fn digest(&self) -> &str {
        &self.snapshot.digest
    }

    /// Learned observation-noise standard deviation in MPa.
    pub fn noise_sd_mpa(&self) -> f64 {
        self.snapshot.training.noise_variance.sqrt() * self.snapshot.normalization.target_sd
    }

    /// The same model with the composition-dependent term removed, so
    /// predictions depend on age only.
    pub fn time_only(&self) -> Result<Self> {
        let k = &self.snapshot.kernel;
        if k.is_leaf() {
            return Err(Error::Config("model kernel has no time-only component".into()));
        }
        let mut snapshot = self.snapshot.clone();
        snapshot.kernel = k.children[0].clone();
        Self::try_from(snapshot)
    }

    fn features(&self, mixtures: &[Mixture], ages: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(mixtures.len() * ages.len());
        for m in mixtures {
            for &a in ages {
                rows.push(featurize(m, a, &self.snapshot.normalization)?);
            }
        }
        Ok(rows)
    }

    /// Latent posterior mean and sd in MPa for one mixture at several ages.
    pub fn predict(&self, mixture: &Mixture, ages: &[f64]) -> Result<Vec<StrengthPrediction>> {
        let post = self.predict_joint(std::slice::from_ref(mixture), ages)?;
        Ok(ages
            .iter()
            .enumerate()
            .map(|(i, &a)| StrengthPrediction {
                age_days: a,
                mean_mpa: post.mean[i],
                sd_mpa: post.covariance[(i, i)].max(0.0).sqrt(),
            })
            .collect())
    }

    /// Joint posterior in MPa over every (mixture, age) pair, mixture-major.
    pub fn predict_joint(&self, mixtures: &[Mixture], ages: &[f64]) -> Result<PosteriorGaussian> {
        let rows = self.features(mixtures, ages)?;
        let post = self.gp.posterior_rows(&rows)?;
        let n = &self.snapshot.normalization;
        Ok(PosteriorGaussian {
            mean: post.mean.map(|v| v * n.target_sd + n.target_mean),
            covariance: post.covariance * (n.target_sd * n.target_sd),
        })
    }

    /// Per-point means and sds in MPa, mixture-major, without cross-covariances.
    pub fn predict_marginals(&self, mixtures: &[Mixture], ages: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = &self.snapshot.normalization;
        let mut means = Vec::with_capacity(mixtures.len() * ages.len());
        let mut sds = Vec::with_capacity(mixtures.len() * ages.len());
        for chunk in mixtures.chunks(256) {
            let rows = self.features(chunk, ages)?;
            let (m, v) = self.gp.marginals_rows(&rows)?;
            means.extend(m.iter().map(|x| x * n.target_sd + n.target_mean));
            sds.extend(v.iter().map(|x| x.max(0.0).sqrt() * n.target_sd));
        }
        Ok((means, sds))
    }

    /// Posterior means in MPa, mixture-major.
    pub fn predict_means(&self, mixtures: &[Mixture], ages: &[f64]) -> Result<Vec<f64>> {
        let n = &self.snapshot.normalization;
        let mut means = Vec::with_capacity(mixtures.len() * ages.len());
        for chunk in mixtures.chunks(1024) {
            let rows = self.features(chunk, ages)?;
            means.extend(
                self.gp
                    .mean_rows(&rows)?
                    .iter()
                    .map(|x| x * n.target_sd + n.target_mean),
            );
        }
        Ok(means)
    }
}

pub fn predict_strength(model: &StrengthModel, mixture: &Mixture, ages: &[f64]) -> Result<Vec<StrengthPrediction>> {
    model.predict(mixture, ages)
}

/// Mean of replicate measurements per (mixture, age).
pub fn aggregate_replicates(observations: &[StrengthObservation]) -> Vec<(Mixture, f64, f64)> {
    let mut groups: BTreeMap<([u64; NUM_INGREDIENTS], u64), (Mixture, f64, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for o in observations.iter().filter(|o| o.is_measured()) {
        let key = (o.mixture.key(), o.age_days.to_bits());
        let e = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (o.mixture, o.age_days, 0.0, 0)
        });
        e.2 += o.strength_mpa;
        e.3 += 1;
    }
    order
        .into_iter()
        .map(|k| {
            let (m, a, s, c) = groups[&k];
            (m, a, s / c as f64)
        })
        .collect()
}
