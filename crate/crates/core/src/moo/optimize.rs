use serde::{Deserialize, Serialize};

use super::acquisition::{Acquisition, AcquisitionConfig, BatchMode, ObjectiveModel};
use super::region::FeasibleRegion;
use crate::error::Result;
use crate::strength::Mixture;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub initial_value: f64,
    pub final_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedBatch {
    pub mixtures: Vec<Mixture>,
    pub value: f64,
    /// Best single raw candidate's acquisition value.
    pub best_raw_value: f64,
    pub restarts: Vec<RestartOutcome>,
    /// Set when the feasible region is a single point.
    pub degenerate: bool,
}

/// Mixtures closer than `threshold` (L∞, kg/m³) to any of `avoid` are rejected.
#[derive(Clone, Copy, Debug)]
pub struct Novelty<'a> {
    pub avoid: &'a [Mixture],
    pub threshold: f64,
}

impl Novelty<'_> {
    pub fn none() -> Novelty<'static> {
        Novelty {
            avoid: &[],
            threshold: 0.0,
        }
    }

    pub fn accepts(&self, x: &Mixture) -> bool {
        self.avoid.iter().all(|a| a.linf_distance(x) > self.threshold)
    }
}

struct Search<'s, 'a, M: ObjectiveModel + ?Sized> {
    acq: &'s Acquisition<'a, M>,
    region: &'s FeasibleRegion,
    novelty: Novelty<'s>,
}

impl<M: ObjectiveModel + ?Sized> Search<'_, '_, M> {
    fn value(&self, zs: &[Vec<f64>]) -> Result<f64> {
        let batch: Vec<Mixture> = zs.iter().map(|z| self.region.to_mixture(z)).collect();
        self.acq.evaluate(&batch)
    }

    /// Derivative-free compass search on the points in `movable`, every trial
    /// clipped to the feasible region along the move direction.
    fn polish(&self, zs: &mut [Vec<f64>], movable: &[usize], value: &mut f64, budget: usize) -> Result<()> {
        let k = self.region.dim();
        let mut step: Vec<f64> = (0..k)
            .map(|l| 0.1 * (self.region.upper()[l] - self.region.lower()[l]))
            .collect();
        let mut evals = 0;
        let mut shrinks = 0;
        while evals < budget && shrinks < 10 {
            let mut improved = false;
            'sweep: for &i in movable {
                for l in 0..k {
                    for sign in [1.0, -1.0] {
                        if evals >= budget {
                            break 'sweep;
                        }
                        let mut target = zs[i].clone();
                        target[l] += sign * step[l];
                        let moved = self.region.clip_move(&zs[i], &target);
                        if moved == zs[i] || !self.novelty.accepts(&self.region.to_mixture(&moved)) {
                            continue;
                        }
                        let previous = std::mem::replace(&mut zs[i], moved);
                        evals += 1;
                        let v = self.value(zs)?;
                        if v > *value {
                            *value = v;
                            improved = true;
                        } else {
                            zs[i] = previous;
                        }
                    }
                }
            }
            if !improved {
                step.iter_mut().for_each(|s| *s *= 0.5);
                shrinks += 1;
            }
        }
        Ok(())
    }

    fn best_addition(&self, zs: &[Vec<f64>], pool: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for c in pool {
            if zs.contains(c) {
                continue;
            }
            let mut trial = zs.to_vec();
            trial.push(c.clone());
            let v = self.value(&trial)?;
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((c.clone(), v));
            }
        }
        // pool exhausted: repeat the last point
        Ok(match best {
            Some(b) => b,
            None => {
                let mut trial = zs.to_vec();
                trial.push(zs[zs.len() - 1].clone());
                let v = self.value(&trial)?;
                (zs[zs.len() - 1].clone(), v)
            }
        })
    }
}

/// Maximizes the acquisition over batches of `config.q` feasible mixtures.
pub fn optimize_acquisition<M: ObjectiveModel + ?Sized>(
    model: &M,
    region: &FeasibleRegion,
    observed: &[Mixture],
    reference_point: &[f64],
    config: &AcquisitionConfig,
    novelty: Novelty<'_>,
) -> Result<OptimizedBatch> {
    config.validate()?;
    let acq = Acquisition::new(model, observed, reference_point, config)?;
    if region.is_point() {
        tracing::warn!(
            q = config.q,
            "feasible region is a single point; returning identical mixtures"
        );
        let x = region.to_mixture(&region.sample(1, config.seed)[0]);
        let batch = vec![x; config.q];
        let value = acq.evaluate(&batch)?;
        return Ok(OptimizedBatch {
            mixtures: batch,
            value,
            best_raw_value: value,
            restarts: Vec::new(),
            degenerate: true,
        });
    }
    let search = Search {
        acq: &acq,
        region,
        novelty,
    };

    let mut raw = region.sample(config.raw_candidates, config.seed);
    let before = raw.len();
    raw.retain(|z| novelty.accepts(&region.to_mixture(z)));
    if raw.is_empty() {
        tracing::warn!(before, "no raw candidate passes the novelty filter; ignoring it");
        raw = region.sample(config.raw_candidates, config.seed);
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(raw.len());
    for (i, z) in raw.iter().enumerate() {
        scored.push((search.value(std::slice::from_ref(z))?, i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let best_raw_value = scored[0].0;
    let pool: Vec<Vec<f64>> = scored
        .iter()
        .take(config.greedy_pool.max(config.restarts))
        .map(|(_, i)| raw[*i].clone())
        .collect();

    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    let mut restarts = Vec::new();
    for r in 0..config.restarts.min(pool.len()) {
        let mut zs = vec![pool[r].clone()];
        let mut value = search.value(&zs)?;
        match config.batch_mode {
            BatchMode::Joint => {
                while zs.len() < config.q {
                    let (c, v) = search.best_addition(&zs, &pool)?;
                    zs.push(c);
                    value = v;
                }
                let initial = value;
                let all: Vec<usize> = (0..zs.len()).collect();
                search.polish(&mut zs, &all, &mut value, config.polish_evals)?;
                restarts.push(RestartOutcome {
                    initial_value: initial,
                    final_value: value,
                });
            }
            BatchMode::SequentialGreedy => {
                let initial = value;
                let per_point = (config.polish_evals / config.q).max(1);
                search.polish(&mut zs, &[0], &mut value, per_point)?;
                while zs.len() < config.q {
                    let (c, v) = search.best_addition(&zs, &pool)?;
                    zs.push(c);
                    value = v;
                    let last = zs.len() - 1;
                    search.polish(&mut zs, &[last], &mut value, per_point)?;
                }
                restarts.push(RestartOutcome {
                    initial_value: initial,
                    final_value: value,
                });
            }
        }
        tracing::debug!(restart = r, value, "acquisition restart finished");
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((zs, value));
        }
    }
    let (zs, value) = best.expect("at least one restart");
    Ok(OptimizedBatch {
        mixtures: zs.iter().map(|z| region.to_mixture(z)).collect(),
        value,
        best_raw_value,
        restarts,
        degenerate: false,
    })
}
