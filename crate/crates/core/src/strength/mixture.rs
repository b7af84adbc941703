use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngredientId {
    Cement,
    FlyAsh,
    Slag,
    Water,
    FineAggregate,
    CoarseAggregate,
    Superplasticizer,
}

pub const NUM_INGREDIENTS: usize = 7;

impl IngredientId {
    pub const ALL: [IngredientId; NUM_INGREDIENTS] = [
        IngredientId::Cement,
        IngredientId::FlyAsh,
        IngredientId::Slag,
        IngredientId::Water,
        IngredientId::FineAggregate,
        IngredientId::CoarseAggregate,
        IngredientId::Superplasticizer,
    ];

    pub const BINDERS: [IngredientId; 3] = [IngredientId::Cement, IngredientId::FlyAsh, IngredientId::Slag];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            IngredientId::Cement => "cement",
            IngredientId::FlyAsh => "fly_ash",
            IngredientId::Slag => "slag",
            IngredientId::Water => "water",
            IngredientId::FineAggregate => "fine_aggregate",
            IngredientId::CoarseAggregate => "coarse_aggregate",
            IngredientId::Superplasticizer => "superplasticizer",
        }
    }
}

impl fmt::Display for IngredientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IngredientId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        IngredientId::ALL
            .into_iter()
            .find(|i| i.name() == key)
            .ok_or_else(|| Error::Schema(format!("unknown ingredient '{s}'")))
    }
}

/// A concrete composition in kg per cubic metre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<IngredientId, f64>", into = "BTreeMap<IngredientId, f64>")]
pub struct Mixture {
    quantities: [f64; NUM_INGREDIENTS],
}

impl Mixture {
    /// All quantities must be finite and non-negative.
    pub fn new(quantities: [f64; NUM_INGREDIENTS]) -> Result<Self> {
        if let Some((i, q)) = quantities
            .iter()
            .enumerate()
            .find(|(_, q)| !(q.is_finite() && **q >= 0.0))
        {
            return Err(Error::Validation(format!(
                "{} quantity must be non-negative and finite, got {q}",
                IngredientId::ALL[i]
            )));
        }
        Ok(Self { quantities })
    }

    pub fn zero() -> Self {
        Self {
            quantities: [0.0; NUM_INGREDIENTS],
        }
    }

    pub fn from_pairs<I: IntoIterator<Item = (IngredientId, f64)>>(pairs: I) -> Result<Self> {
        let mut q = [0.0; NUM_INGREDIENTS];
        for (id, v) in pairs {
            q[id.index()] = v;
        }
        Self::new(q)
    }

    pub fn get(&self, id: IngredientId) -> f64 {
        self.quantities[id.index()]
    }

    pub fn quantities(&self) -> &[f64; NUM_INGREDIENTS] {
        &self.quantities
    }

    pub fn with(mut self, id: IngredientId, value: f64) -> Result<Self> {
        self.quantities[id.index()] = value;
        Self::new(self.quantities)
    }

    /// cement + fly ash + slag
    pub fn binder(&self) -> f64 {
        IngredientId::BINDERS.iter().map(|b| self.get(*b)).sum()
    }

    pub fn water_binder_ratio(&self) -> Option<f64> {
        let b = self.binder();
        (b > 0.0).then(|| self.get(IngredientId::Water) / b)
    }

    /// Checks the extra invariants a mixture must satisfy to be cast: positive
    /// binder and a positive, finite water/binder ratio.
    pub fn validate_castable(&self) -> Result<()> {
        match self.water_binder_ratio() {
            None => Err(Error::Validation("mixture has no binder".into())),
            Some(r) if !(r.is_finite() && r > 0.0) => {
                Err(Error::Validation(format!("water/binder ratio {r} is not positive")))
            }
            Some(_) => Ok(()),
        }
    }

    pub fn linf_distance(&self, other: &Mixture) -> f64 {
        self.quantities
            .iter()
            .zip(&other.quantities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise key, for grouping identical mixtures.
    pub fn key(&self) -> [u64; NUM_INGREDIENTS] {
        self.quantities.map(|q| (q + 0.0).to_bits())
    }
}

impl TryFrom<BTreeMap<IngredientId, f64>> for Mixture {
    type Error = Error;

    fn try_from(map: BTreeMap<IngredientId, f64>) -> Result<Self> {
        Mixture::from_pairs(map)
    }
}

impl From<Mixture> for BTreeMap<IngredientId, f64> {
    fn from(m: Mixture) -> Self {
        IngredientId::ALL.into_iter().map(|i| (i, m.get(i))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    AugmentedZero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthObservation {
    pub mixture: Mixture,
    pub age_days: f64,
    pub strength_mpa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate_id: Option<u8>,
    pub provenance: Provenance,
}

impl StrengthObservation {
    pub fn measured(mixture: Mixture, age_days: f64, strength_mpa: f64) -> Result<Self> {
        let obs = Self {
            mixture,
            age_days,
            strength_mpa,
            replicate_id: None,
            provenance: Provenance::Measured,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn augmented_zero(mixture: Mixture) -> Self {
        Self {
            mixture,
            age_days: 0.0,
            strength_mpa: 0.0,
            replicate_id: None,
            provenance: Provenance::AugmentedZero,
        }
    }

    pub fn with_replicate(mut self, replicate: u8) -> Self {
        self.replicate_id = Some(replicate);
        self
    }

    pub fn is_measured(&self) -> bool {
        self.provenance == Provenance::Measured
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength_mpa.is_finite() && self.strength_mpa >= 0.0) {
            return Err(Error::Validation(format!(
                "strength must be non-negative, got {}",
                self.strength_mpa
            )));
        }
        match self.provenance {
            Provenance::Measured if !(self.age_days.is_finite() && self.age_days > 0.0) => Err(Error::Validation(
                format!("measured observations need a positive age, got {}", self.age_days),
            )),
            Provenance::AugmentedZero if self.age_days != 0.0 || self.strength_mpa != 0.0 => Err(Error::Validation(
                "augmented records must sit at age 0 with strength 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mixture {
        Mixture::from_pairs([
            (IngredientId::Cement, 300.0),
            (IngredientId::Slag, 100.0),
            (IngredientId::Water, 160.0),
        ])
        .unwrap()
    }

    #[test]
    fn binder_and_ratio() {
        let m = sample();
        assert_eq!(m.binder(), 400.0);
        assert_eq!(m.water_binder_ratio(), Some(0.4));
        assert!(m.validate_castable().is_ok());
        assert!(Mixture::zero().validate_castable().is_err());
    }

    #[test]
    fn negative_quantity_rejected() {
        assert!(Mixture::from_pairs([(IngredientId::Water, -1.0)]).is_err());
    }

    #[test]
    fn serde_as_ingredient_map() {
        let json = serde_json::to_string(&sample()).unwrap();
        assert!(json.contains("\"fly_ash\":0.0"));
        let back: Mixture = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sample());
        let partial: Mixture = serde_json::from_str(r#"{"cement": 10.0}"#).unwrap();
        assert_eq!(partial.get(IngredientId::Cement), 10.0);
    }

    #[test]
    fn ingredient_parsing() {
        assert_eq!("Fly Ash".parse::<IngredientId>().unwrap(), IngredientId::FlyAsh);
        assert!("gravel".parse::<IngredientId>().is_err());
    }

    #[test]
    fn observation_invariants() {
        assert!(StrengthObservation::measured(sample(), 0.0, 10.0).is_err());
        assert!(StrengthObservation::measured(sample(), 1.0, -1.0).is_err());
        assert!(StrengthObservation::augmented_zero(sample()).validate().is_ok());
    }
}
