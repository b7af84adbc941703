mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use chrono::{TimeZone, Utc};
use common::concrete::{design_space, random_mixture, synthetic_dataset, true_strength};
use mixopt::campaign::{Campaign, InferredConfig, IngestedRow, Origin, Scenario, Store};
use mixopt::moo::{dominates, hypervolume};
use mixopt::objectives::{gwp, GwpTable};
use mixopt::strength::{IngredientId, StrengthModel, StrengthObservation};
use mixopt::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn table() -> GwpTable {
    use IngredientId::*;
    GwpTable::new(
        "test",
        [
            (Cement, 0.9),
            (FlyAsh, 0.03),
            (Slag, 0.08),
            (Water, 0.0003),
            (FineAggregate, 0.005),
            (CoarseAggregate, 0.006),
            (Superplasticizer, 1.5),
        ],
    )
    .unwrap()
}

fn now() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()
}

fn rows(obs: &[StrengthObservation], batch: &str) -> Vec<IngestedRow> {
    obs.iter()
        .enumerate()
        .map(|(i, o)| IngestedRow {
            line: i as u64 + 2,
            observation: o.clone(),
            batch: Some(batch.to_string()),
        })
        .collect()
}

fn campaign(id: &str, mixtures: usize) -> Campaign {
    let mut c = Campaign::new(id, design_space(), table()).unwrap();
    c.objectives.reference_point = vec![0.0, 0.0, -600.0];
    c.acquisition.mc_samples = 64;
    c.acquisition.raw_candidates = 256;
    c.acquisition.polish_evals = 120;
    let data = synthetic_dataset(&mut ChaCha8Rng::seed_from_u64(200), mixtures, &[1.0, 7.0, 28.0], 1.0);
    c.add_observations(&rows(&data, "human-1"), now());
    c
}

fn fitted() -> &'static (Campaign, StrengthModel) {
    static F: OnceLock<(Campaign, StrengthModel)> = OnceLock::new();
    F.get_or_init(|| {
        let c = campaign("fitted", 16);
        let m = c.fit_model().unwrap();
        (c, m)
    })
}

#[test]
fn proposals_are_feasible_novel_and_reproducible() {
    let mut c = campaign("propose", 10);
    let a = c.plan_batch(3, 7, now()).unwrap();
    let b = c.plan_batch(3, 7, now()).unwrap();
    assert_eq!(a.batch.mixtures, b.batch.mixtures);
    assert_eq!(a.batch.id, "ai-1");
    let tested = c.tested_mixtures();
    for x in &a.batch.mixtures {
        assert!(
            c.constraints.is_satisfied(x, 1e-9),
            "{:?}",
            c.constraints.worst_violation(x)
        );
        for t in &tested {
            assert!(x.linf_distance(t) >= c.novelty_threshold);
        }
    }
    assert_eq!(a.batch.predictions.len(), 3);
    for (x, p) in a.batch.mixtures.iter().zip(&a.batch.predictions) {
        assert!((p.gwp - gwp(&table(), x).unwrap()).abs() < 1e-9);
        assert_eq!(p.mean.len(), 3);
        assert!(p.sd.iter().all(|s| *s > 0.0));
    }
    let before = c.observations.clone();
    let mut p = a;
    c.commit_proposal(&mut p, now()).unwrap();
    assert_eq!(c.batches.last().unwrap().origin, Origin::Ai);
    assert_eq!(c.snapshots.len(), 1);
    assert_eq!(c.observations, before);
}

#[test]
fn empirical_frontier_grows_with_batches() {
    let mut c = Campaign::new("grow", design_space(), table()).unwrap();
    c.objectives.reference_point = vec![0.0, 0.0, -600.0];
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut last = 0.0;
    for b in 0..5 {
        let obs: Vec<StrengthObservation> = (0..4)
            .map(|_| {
                let m = random_mixture(&mut rng);
                StrengthObservation::measured(m, 28.0, true_strength(&m, 28.0)).unwrap()
            })
            .collect();
        c.add_observations(&rows(&obs, &format!("human-{b}")), now());
        let f = c.empirical_pareto(28.0).unwrap();
        assert!(f.hypervolume >= last);
        last = f.hypervolume;
        let front: Vec<Vec<f64>> = f
            .frontier
            .iter()
            .map(|&i| vec![f.points[i].strength_mpa, -f.points[i].gwp])
            .collect();
        assert!((hypervolume(&front, &[0.0, -600.0]).unwrap() - f.hypervolume).abs() < 1e-9);
    }
}

#[test]
fn empirical_frontier_on_hand_example() {
    use IngredientId::*;
    let mut c = Campaign::new("hand", design_space(), table()).unwrap();
    let base = |cement: f64, slag: f64| {
        mixopt::strength::Mixture::from_pairs([
            (Cement, cement),
            (Slag, slag),
            (Water, 180.0),
            (FineAggregate, 800.0),
            (CoarseAggregate, 1000.0),
        ])
        .unwrap()
    };
    let a = base(400.0, 0.0); // strong, high GWP
    let b = base(200.0, 200.0); // weaker, low GWP
    let d = base(390.0, 10.0); // weaker than a but lower GWP
    let e = base(300.0, 0.0); // dominated by b
    let obs = [
        StrengthObservation::measured(a, 28.0, 50.0).unwrap(),
        StrengthObservation::measured(a, 28.0, 52.0).unwrap(),
        StrengthObservation::measured(b, 28.0, 35.0).unwrap(),
        StrengthObservation::measured(d, 28.0, 40.0).unwrap(),
        StrengthObservation::measured(e, 28.0, 30.0).unwrap(),
        StrengthObservation::measured(e, 7.0, 20.0).unwrap(),
    ];
    c.add_observations(&rows(&obs, "human-1"), now());
    let f = c.empirical_pareto(28.0).unwrap();
    assert_eq!(f.points.len(), 4);
    assert_eq!(f.points[0].strength_mpa, 51.0);
    assert_eq!(f.points[0].replicates, 2);
    let pareto: Vec<bool> = f.points.iter().map(|p| p.pareto).collect();
    assert_eq!(pareto, [true, true, true, false]);
    assert!(c.empirical_pareto(3.0).unwrap().points.is_empty());
}

#[test]
fn exclusion_zeroes_the_ingredient() {
    let (c, m) = fitted();
    let cfg = InferredConfig {
        candidates: 3000,
        seed: 1,
    };
    for id in [IngredientId::FlyAsh, IngredientId::Slag] {
        let scenario = Scenario {
            exclude: vec![id],
            ..Scenario::default()
        };
        let f = c.inferred_pareto(m, "s", &scenario, &cfg).unwrap();
        assert!(!f.points.is_empty());
        assert!(f.points.iter().all(|p| p.mixture.get(id) == 0.0));
        for p in &f.points {
            assert!(scenario.apply(&c.constraints).is_satisfied(&p.mixture, 1e-9));
        }
    }
}

#[test]
fn inferred_frontier_non_dominated_and_reproducible() {
    let (c, m) = fitted();
    let cfg = InferredConfig {
        candidates: 3000,
        seed: 2,
    };
    let a = c.inferred_pareto(m, "s", &Scenario::default(), &cfg).unwrap();
    let b = c.inferred_pareto(m, "s", &Scenario::default(), &cfg).unwrap();
    assert_eq!(a, b);
    for p in &a.points {
        assert!(!a.points.iter().any(|q| dominates(&q.objectives, &p.objectives)));
        assert_eq!(p.sd.len(), 2);
    }
    assert_eq!(a.objective_names, ["strength_day_1", "strength_day_28", "neg_gwp"]);
}

#[test]
fn gwp_rescaling_keeps_the_frontier_set() {
    let (c, m) = fitted();
    let cfg = InferredConfig {
        candidates: 3000,
        seed: 3,
    };
    let key = |f: &mixopt::campaign::InferredFrontier| -> BTreeSet<[u64; 7]> {
        f.points.iter().map(|p| p.mixture.key()).collect()
    };
    let base = c.inferred_pareto(m, "s", &Scenario::default(), &cfg).unwrap();
    for factor in [2.0, 0.37, 11.0] {
        let scenario = Scenario {
            gwp_table: Some(table().scaled(factor)),
            ..Scenario::default()
        };
        let scaled = c.inferred_pareto(m, "s", &scenario, &cfg).unwrap();
        assert_eq!(key(&base), key(&scaled), "factor {factor}");
    }
}

#[test]
fn replacing_gwp_table_changes_only_last_objective() {
    let (c, m) = fitted();
    let cfg = InferredConfig {
        candidates: 500,
        seed: 4,
    };
    let other = GwpTable::new("other", IngredientId::ALL.map(|i| (i, 0.1))).unwrap();
    let a = c.inferred_pareto(m, "s", &Scenario::default(), &cfg).unwrap();
    let b = c
        .inferred_pareto(
            m,
            "s",
            &Scenario {
                gwp_table: Some(other.clone()),
                ..Scenario::default()
            },
            &cfg,
        )
        .unwrap();
    // candidate sets coincide, so every shared mixture has identical strength predictions
    for p in &a.points {
        if let Some(q) = b.points.iter().find(|q| q.mixture == p.mixture) {
            assert_eq!(p.objectives[..2], q.objectives[..2]);
            assert!((q.gwp - gwp(&other, &q.mixture).unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn infeasible_scenario_reports_certificate() {
    let (c, m) = fitted();
    let scenario = Scenario {
        exclude: vec![IngredientId::Cement, IngredientId::Slag, IngredientId::FlyAsh],
        ..Scenario::default()
    };
    let err = c
        .inferred_pareto(m, "s", &scenario, &InferredConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }), "{err}");
}

#[test]
fn store_round_trip_is_structural_identity() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut c = campaign("trip", 6);
    store
        .create(&Campaign {
            observations: Vec::new(),
            ..c.clone()
        })
        .unwrap();
    store.save(&c).unwrap();
    let p = c.propose_batch(2, 3, now()).unwrap();
    store.save_snapshot(&c.id, &p.model).unwrap();
    store.save(&c).unwrap();
    let loaded = store.load("trip").unwrap();
    assert_eq!(loaded, c);
    let snap = store.load_snapshot("trip", &c.snapshots[0].digest).unwrap();
    let x = c.batches.last().unwrap().mixtures[0];
    assert_eq!(
        snap.predict(&x, &[1.0, 28.0]).unwrap(),
        p.model.predict(&x, &[1.0, 28.0]).unwrap()
    );
}

#[test]
fn missing_snapshot_is_an_integrity_error_but_log_survives() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut c = campaign("broken", 6);
    store
        .create(&Campaign {
            observations: Vec::new(),
            ..c.clone()
        })
        .unwrap();
    let p = c.propose_batch(1, 0, now()).unwrap();
    store.save_snapshot(&c.id, &p.model).unwrap();
    store.save(&c).unwrap();
    let snap_dir = dir.path().join("broken/snapshots");
    for e in std::fs::read_dir(&snap_dir).unwrap() {
        std::fs::remove_file(e.unwrap().path()).unwrap();
    }
    assert!(matches!(store.load("broken"), Err(Error::Integrity { .. })));
    assert_eq!(store.load_observations("broken").unwrap(), c.observations);
}

#[test]
fn concurrent_appends_serialize() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    store
        .create(&Campaign::new("busy", design_space(), table()).unwrap())
        .unwrap();
    let threads: Vec<_> = (0..6)
        .map(|t| {
            let store = store.clone();
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                for _ in 0..5 {
                    let obs = synthetic_dataset(&mut rng, 1, &[28.0], 0.5);
                    store.append("busy", &rows(&obs, &format!("human-{t}"))).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    let log = store.load_observations("busy").unwrap();
    assert_eq!(log.len(), 30);
    assert!(log.iter().enumerate().all(|(i, r)| r.seq == i as u64));
    let loaded = store.load("busy").unwrap();
    assert_eq!(loaded.batches.len(), 6);
    assert!(loaded.batches.iter().all(|b| b.mixtures.len() == 5));
}

#[test]
fn log_is_append_only_across_operations() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let c = campaign("append", 5);
    store
        .create(&Campaign {
            observations: Vec::new(),
            ..c.clone()
        })
        .unwrap();
    store.save(&c).unwrap();
    let first = store.load_observations("append").unwrap();
    let more = synthetic_dataset(&mut ChaCha8Rng::seed_from_u64(9), 2, &[28.0], 0.5);
    store.append("append", &rows(&more, "human-2")).unwrap();
    let mut stale = c.clone();
    stale.observations.pop();
    assert!(store.save(&stale).is_err());
    let after = store.load_observations("append").unwrap();
    assert_eq!(after[..first.len()], first[..]);
    assert_eq!(after.len(), first.len() + 2);
}
