use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::constraints::{Constraints, Scenario};
use super::ingest::IngestedRow;
use crate::error::{Error, Result};
use crate::moo::{hypervolume, optimize_acquisition, pareto_indices, AcquisitionConfig, FeasibleRegion, Novelty};
use crate::objectives::{gwp, objective_posterior, GwpTable, MixtureObjectives, ObjectiveSpec};
use crate::strength::{fit_strength_model, Mixture, StrengthModel, StrengthModelConfig, StrengthObservation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Human,
    Ai,
}

/// Predicted objectives of a proposed mixture: means for each age then
/// −GWP, and the strength sds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedObjectives {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub gwp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub id: String,
    pub origin: Origin,
    pub created_at: DateTime<Utc>,
    pub mixtures: Vec<Mixture>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PredictedObjectives>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub seq: u64,
    pub recorded_at: DateTime<Utc>,
    /// `None` for external data not tied to a batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<String>,
    pub observation: StrengthObservation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    /// SHA-256 of the snapshot file.
    pub digest: String,
    /// SHA-256 of the training observations.
    pub data_digest: String,
    pub observations: usize,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferredConfig {
    pub candidates: usize,
    pub seed: u64,
}

impl Default for InferredConfig {
    fn default() -> Self {
        Self {
            candidates: 50_000,
            seed: 0,
        }
    }
}

fn default_novelty() -> f64 {
    1.0
}

/// Campaign state. Observations live in an append-only log next to the
/// campaign file; everything else is in the campaign file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: String,
    pub constraints: Constraints,
    pub gwp_table: GwpTable,
    #[serde(default)]
    pub objectives: ObjectiveSpec,
    #[serde(default)]
    pub model: StrengthModelConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    /// Proposals closer than this (L∞, kg/m³) to a tested mixture are rejected.
    #[serde(default = "default_novelty")]
    pub novelty_threshold: f64,
    #[serde(default)]
    pub inferred: InferredConfig,
    #[serde(default)]
    pub batches: Vec<Batch>,
    #[serde(default)]
    pub snapshots: Vec<SnapshotRef>,
    #[serde(skip)]
    pub observations: Vec<ObservationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPoint {
    pub mixture: Mixture,
    pub strength_mpa: f64,
    pub gwp: f64,
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<String>,
    pub pareto: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalFrontier {
    pub age_days: f64,
    /// Every measured mixture at this age, dominated ones included.
    pub points: Vec<EmpiricalPoint>,
    /// Indices into `points` of the Pareto-optimal mixtures.
    pub frontier: Vec<usize>,
    pub hypervolume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredPoint {
    pub mixture: Mixture,
    /// Predicted strength means per age, then −GWP.
    pub objectives: Vec<f64>,
    /// Predictive strength sd per age.
    pub sd: Vec<f64>,
    pub gwp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredFrontier {
    pub objective_names: Vec<String>,
    pub points: Vec<InferredPoint>,
    pub candidates: usize,
    pub hypervolume: f64,
    pub scenario: Scenario,
    pub snapshot: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub id: String,
    pub origin: Origin,
    pub created_at: DateTime<Utc>,
    pub size: usize,
    pub observations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierSummary {
    pub age_days: f64,
    pub mixtures: usize,
    pub pareto: usize,
    pub hypervolume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub id: String,
    pub observations: usize,
    pub measured_mixtures: usize,
    pub external_observations: usize,
    pub batches: Vec<BatchSummary>,
    pub frontiers: Vec<FrontierSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<SnapshotRef>,
    pub objective_names: Vec<String>,
    pub reference_point: Vec<f64>,
    pub constraints: Constraints,
    pub gwp_table: String,
}

#[derive(Clone, Debug)]
pub struct Proposal {
    pub batch: Batch,
    pub model: StrengthModel,
}

pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "invalid id '{id}': use letters, digits, '-' and '_'"
        )))
    }
}

impl Campaign {
    pub fn new(id: impl Into<String>, constraints: Constraints, gwp_table: GwpTable) -> Result<Self> {
        let c = Self {
            id: id.into(),
            constraints,
            gwp_table,
            objectives: ObjectiveSpec::default(),
            model: StrengthModelConfig::default(),
            acquisition: AcquisitionConfig::default(),
            novelty_threshold: default_novelty(),
            inferred: InferredConfig::default(),
            batches: Vec::new(),
            snapshots: Vec::new(),
            observations: Vec::new(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.id)?;
        self.constraints.validate()?;
        self.gwp_table.validate()?;
        self.objectives.validate()?;
        self.acquisition.validate()?;
        FeasibleRegion::new(&self.constraints)?;
        Ok(())
    }

    /// Appends rows to the log. Unknown batch labels create human batches.
    pub fn add_observations(&mut self, rows: &[IngestedRow], now: DateTime<Utc>) -> Vec<ObservationRecord> {
        let mut added = Vec::with_capacity(rows.len());
        for row in rows {
            if let Some(label) = &row.batch {
                match self.batches.iter_mut().find(|b| &b.id == label) {
                    Some(b) => {
                        if b.origin == Origin::Human && !b.mixtures.contains(&row.observation.mixture) {
                            b.mixtures.push(row.observation.mixture);
                        }
                    }
                    None => self.batches.push(Batch {
                        id: label.clone(),
                        origin: Origin::Human,
                        created_at: now,
                        mixtures: vec![row.observation.mixture],
                        predictions: Vec::new(),
                        snapshot: None,
                        seed: None,
                        acquisition_value: None,
                    }),
                }
            }
            let rec = ObservationRecord {
                seq: self.observations.len() as u64,
                recorded_at: now,
                batch: row.batch.clone(),
                observation: row.observation.clone(),
            };
            self.observations.push(rec.clone());
            added.push(rec);
        }
        added
    }

    pub fn strength_observations(&self) -> Vec<StrengthObservation> {
        self.observations.iter().map(|r| r.observation.clone()).collect()
    }

    /// Distinct mixtures with at least one measurement, first-seen order.
    pub fn tested_mixtures(&self) -> Vec<Mixture> {
        let mut out: Vec<Mixture> = Vec::new();
        for r in &self.observations {
            if !out.iter().any(|m| m.key() == r.observation.mixture.key()) {
                out.push(r.observation.mixture);
            }
        }
        out
    }

    pub fn fit_model(&self) -> Result<StrengthModel> {
        fit_strength_model(&self.strength_observations(), &self.constraints, &self.model)
    }

    pub fn latest_snapshot(&self) -> Option<&SnapshotRef> {
        self.snapshots.last()
    }

    pub fn record_snapshot(&mut self, digest: String, model: &StrengthModel, now: DateTime<Utc>) {
        if self.snapshots.iter().any(|s| s.digest == digest) {
            return;
        }
        self.snapshots.push(SnapshotRef {
            digest,
            data_digest: model.digest().to_string(),
            observations: model.observations().len(),
            created_at: now,
        });
    }

    /// Fits on every observation and proposes `q` new feasible, novel
    /// mixtures. The batch is appended with origin `ai`.
    pub fn propose_batch(&mut self, q: usize, seed: u64, now: DateTime<Utc>) -> Result<Proposal> {
        let mut proposal = self.plan_batch(q, seed, now)?;
        self.commit_proposal(&mut proposal, now)?;
        Ok(proposal)
    }

    /// The proposal computation without touching campaign state.
    pub fn plan_batch(&self, q: usize, seed: u64, now: DateTime<Utc>) -> Result<Proposal> {
        let model = self.fit_model()?;
        let (digest, _) = super::store::encode_snapshot(&model)?;
        let config = AcquisitionConfig {
            q,
            seed,
            ..self.acquisition.clone()
        };
        let region = FeasibleRegion::new(&self.constraints)?;
        let tested = self.tested_mixtures();
        let objectives = MixtureObjectives {
            model: &model,
            table: &self.gwp_table,
            spec: &self.objectives,
        };
        let result = optimize_acquisition(
            &objectives,
            &region,
            &tested,
            &self.objectives.reference_point,
            &config,
            Novelty {
                avoid: &tested,
                threshold: self.novelty_threshold,
            },
        )?;
        let a = self.objectives.ages.len();
        let predictions = objective_posterior(&model, &self.gwp_table, &self.objectives, &result.mixtures)?
            .into_iter()
            .map(|p| PredictedObjectives {
                mean: p.mean.iter().copied().collect(),
                sd: (0..a).map(|i| p.covariance[(i, i)].max(0.0).sqrt()).collect(),
                gwp: -p.mean[a],
            })
            .collect();
        let batch = Batch {
            id: self.next_ai_batch_id(),
            origin: Origin::Ai,
            created_at: now,
            mixtures: result.mixtures,
            predictions,
            snapshot: Some(digest),
            seed: Some(seed),
            acquisition_value: Some(result.value),
        };
        Ok(Proposal { batch, model })
    }

    fn next_ai_batch_id(&self) -> String {
        let n = self.batches.iter().filter(|b| b.origin == Origin::Ai).count();
        format!("ai-{}", n + 1)
    }

    /// Records a planned proposal and its snapshot. The batch id is
    /// reassigned if other batches were added since planning.
    pub fn commit_proposal(&mut self, proposal: &mut Proposal, now: DateTime<Utc>) -> Result<()> {
        let digest = proposal
            .batch
            .snapshot
            .clone()
            .ok_or_else(|| Error::Validation("proposal has no snapshot digest".into()))?;
        proposal.batch.id = self.next_ai_batch_id();
        self.record_snapshot(digest, &proposal.model, now);
        self.batches.push(proposal.batch.clone());
        Ok(())
    }

    pub fn summary(&self) -> Result<CampaignSummary> {
        let batches = self
            .batches
            .iter()
            .map(|b| BatchSummary {
                id: b.id.clone(),
                origin: b.origin,
                created_at: b.created_at,
                size: b.mixtures.len(),
                observations: self
                    .observations
                    .iter()
                    .filter(|r| r.batch.as_ref() == Some(&b.id))
                    .count(),
            })
            .collect();
        let frontiers = self
            .objectives
            .ages
            .iter()
            .map(|&age| {
                let f = self.empirical_pareto(age)?;
                Ok(FrontierSummary {
                    age_days: age,
                    mixtures: f.points.len(),
                    pareto: f.frontier.len(),
                    hypervolume: f.hypervolume,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CampaignSummary {
            id: self.id.clone(),
            observations: self.observations.len(),
            measured_mixtures: self.tested_mixtures().len(),
            external_observations: self.observations.iter().filter(|r| r.batch.is_none()).count(),
            batches,
            frontiers,
            snapshot: self.latest_snapshot().cloned(),
            objective_names: self.objectives.objective_names(),
            reference_point: self.objectives.reference_point.clone(),
            constraints: self.constraints.clone(),
            gwp_table: self.gwp_table.name.clone(),
        })
    }

    /// Measured frontier of (strength at `age_days`, −GWP), replicates averaged.
    pub fn empirical_pareto(&self, age_days: f64) -> Result<EmpiricalFrontier> {
        let mut points: Vec<EmpiricalPoint> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for r in &self.observations {
            let o = &r.observation;
            if !o.is_measured() || (o.age_days - age_days).abs() > 1e-9 {
                continue;
            }
            match points.iter().position(|p| p.mixture.key() == o.mixture.key()) {
                Some(i) => {
                    sums[i] += o.strength_mpa;
                    points[i].replicates += 1;
                }
                None => {
                    points.push(EmpiricalPoint {
                        mixture: o.mixture,
                        strength_mpa: 0.0,
                        gwp: gwp(&self.gwp_table, &o.mixture)?,
                        replicates: 1,
                        batch: r.batch.clone(),
                        pareto: false,
                    });
                    sums.push(o.strength_mpa);
                }
            }
        }
        for (p, s) in points.iter_mut().zip(&sums) {
            p.strength_mpa = s / p.replicates as f64;
        }
        let vectors: Vec<Vec<f64>> = points.iter().map(|p| vec![p.strength_mpa, -p.gwp]).collect();
        let frontier = pareto_indices(&vectors)?;
        for &i in &frontier {
            points[i].pareto = true;
        }
        let r = self.reference_for_age(age_days);
        let front: Vec<Vec<f64>> = frontier.iter().map(|&i| vectors[i].clone()).collect();
        let hv = if front.is_empty() {
            0.0
        } else {
            hypervolume(&front, &r)?
        };
        Ok(EmpiricalFrontier {
            age_days,
            points,
            frontier,
            hypervolume: hv,
        })
    }

    fn reference_for_age(&self, age_days: f64) -> Vec<f64> {
        let spec = &self.objectives;
        let idx = spec.ages.iter().position(|a| (a - age_days).abs() < 1e-9);
        vec![
            idx.map_or(0.0, |i| spec.reference_point[i]),
            *spec.reference_point.last().expect("validated reference point"),
        ]
    }

    /// Frontier of predicted mean objectives over the scenario's feasible
    /// region, approximated by dense candidate sampling.
    pub fn inferred_pareto(
        &self,
        model: &StrengthModel,
        snapshot: &str,
        scenario: &Scenario,
        config: &InferredConfig,
    ) -> Result<InferredFrontier> {
        let constraints = scenario.apply(&self.constraints);
        let table = scenario.gwp_table.as_ref().unwrap_or(&self.gwp_table);
        table.validate()?;
        let region = FeasibleRegion::new(&constraints)?;
        let spec = &self.objectives;
        let a = spec.ages.len();
        let candidates = region.sample_mixtures(config.candidates.max(1), config.seed);
        let means = model.predict_means(&candidates, &spec.ages)?;
        let mut vectors = Vec::with_capacity(candidates.len());
        for (i, x) in candidates.iter().enumerate() {
            let mut v = means[i * a..(i + 1) * a].to_vec();
            v.push(-gwp(table, x)?);
            vectors.push(v);
        }
        let keep = pareto_indices(&vectors)?;
        let chosen: Vec<Mixture> = keep.iter().map(|&i| candidates[i]).collect();
        let (_, sds) = model.predict_marginals(&chosen, &spec.ages)?;
        let noise = model.noise_sd_mpa().powi(2);
        let points: Vec<InferredPoint> = keep
            .iter()
            .enumerate()
            .map(|(j, &i)| InferredPoint {
                mixture: candidates[i],
                objectives: vectors[i].clone(),
                sd: sds[j * a..(j + 1) * a].iter().map(|s| (s * s + noise).sqrt()).collect(),
                gwp: -vectors[i][a],
            })
            .collect();
        let front: Vec<Vec<f64>> = points.iter().map(|p| p.objectives.clone()).collect();
        let hv = if front.is_empty() {
            0.0
        } else {
            hypervolume(&front, &spec.reference_point)?
        };
        Ok(InferredFrontier {
            objective_names: spec.objective_names(),
            points,
            candidates: candidates.len(),
            hypervolume: hv,
            scenario: scenario.clone(),
            snapshot: snapshot.to_string(),
        })
    }
}
