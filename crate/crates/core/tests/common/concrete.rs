//! Synthetic strength law, design space and UCI loader for tests.

use std::path::PathBuf;

use mixopt::campaign::{Constraints, LinearConstraint};
use mixopt::strength::{IngredientId, Mixture, StrengthObservation};
use rand::Rng;
use rand_distr::StandardNormal;

use IngredientId::*;

pub const BOUNDS: [(IngredientId, f64, f64); 7] = [
    (Cement, 100.0, 540.0),
    (Slag, 0.0, 360.0),
    (FlyAsh, 0.0, 200.0),
    (Water, 120.0, 250.0),
    (FineAggregate, 590.0, 1000.0),
    (CoarseAggregate, 800.0, 1150.0),
    (Superplasticizer, 0.0, 30.0),
];

pub fn design_space() -> Constraints {
    let mut c = Constraints::default();
    for (id, lo, hi) in BOUNDS {
        c = c.with_bound(id, lo, hi);
    }
    c.with_water_binder(0.3, 0.6)
        .with_linear(LinearConstraint::binder_total(250.0, 600.0))
}

pub fn feasible(m: &Mixture) -> bool {
    let b = m.get(Cement) + m.get(Slag) + m.get(FlyAsh);
    let wb = m.get(Water) / b;
    (250.0..=600.0).contains(&b) && (0.3..=0.6).contains(&wb)
}

/// Uniform draw from the design space by rejection.
pub fn random_mixture<R: Rng>(rng: &mut R) -> Mixture {
    loop {
        let mut q = [0.0; 7];
        for (id, lo, hi) in BOUNDS {
            q[id.index()] = rng.random_range(lo..=hi);
        }
        let m = Mixture::new(q).unwrap();
        if feasible(&m) {
            return m;
        }
    }
}

/// Ground-truth strength in MPa: an Abrams-type water/binder law with
/// slower early gain for supplementary binders; exactly 0 at t = 0.
pub fn true_strength(m: &Mixture, t: f64) -> f64 {
    let slag = m.get(Slag);
    let ash = m.get(FlyAsh);
    let cement = m.get(Cement);
    let effective = cement + 0.8 * slag + 0.5 * ash;
    let water = (m.get(Water) - 1.5 * m.get(Superplasticizer)).max(60.0);
    let s28 = 105.0 * (-2.4 * water / effective).exp();
    let scm = (slag + ash) / (cement + slag + ash);
    let k = 2.0 + 8.0 * scm;
    s28 * (t / (t + k)) * ((28.0 + k) / 28.0)
}

/// Measured records at `ages` for `n` random mixtures with Gaussian noise.
pub fn synthetic_dataset<R: Rng>(rng: &mut R, n: usize, ages: &[f64], noise_mpa: f64) -> Vec<StrengthObservation> {
    let mut out = Vec::new();
    for _ in 0..n {
        let m = random_mixture(rng);
        for &t in ages {
            let e: f64 = rng.sample(StandardNormal);
            let s = (true_strength(&m, t) + noise_mpa * e).max(0.1);
            out.push(StrengthObservation::measured(m, t, s).unwrap());
        }
    }
    out
}

/// UCI concrete rows (cement, slag, fly ash, water, superplasticizer,
/// coarse, fine, age, strength) from `MIXOPT_UCI_CSV` or `tests/data/uci_concrete.csv`.
pub fn load_uci() -> Option<(PathBuf, Vec<StrengthObservation>)> {
    let path = std::env::var_os("MIXOPT_UCI_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/uci_concrete.csv"));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(&path).ok()?;
    let order = [
        Cement,
        Slag,
        FlyAsh,
        Water,
        Superplasticizer,
        CoarseAggregate,
        FineAggregate,
    ];
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.ok()?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .ok()?;
        if v.len() < 9 {
            return None;
        }
        let mixture = Mixture::from_pairs(order.iter().zip(&v).map(|(id, x)| (*id, *x))).ok()?;
        out.push(StrengthObservation::measured(mixture, v[7], v[8]).ok()?);
    }
    (!out.is_empty()).then_some((path, out))
}

/// Design-space box spanning the observed compositions.
pub fn observed_space(obs: &[StrengthObservation]) -> Constraints {
    let mut c = Constraints::default();
    for id in IngredientId::ALL {
        let lo = obs.iter().map(|o| o.mixture.get(id)).fold(f64::INFINITY, f64::min);
        let hi = obs.iter().map(|o| o.mixture.get(id)).fold(f64::NEG_INFINITY, f64::max);
        c = c.with_bound(id, lo, hi);
    }
    c
}
