//! Feasible design space: per-ingredient bounds, linear constraints and
//! exclusions, plus post-hoc scenario overrides.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::GwpTable;
use crate::strength::{IngredientId, Mixture, NUM_INGREDIENTS};

pub const WB_MIN_LABEL: &str = "water_binder_min";
pub const WB_MAX_LABEL: &str = "water_binder_max";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// `lo <= sum_i coefficients[i] * x_i <= hi`; a missing side is unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coefficients: BTreeMap<IngredientId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl LinearConstraint {
    pub fn coefficient_vector(&self) -> [f64; NUM_INGREDIENTS] {
        let mut a = [0.0; NUM_INGREDIENTS];
        for (id, c) in &self.coefficients {
            a[id.index()] = *c;
        }
        a
    }

    pub fn value(&self, mixture: &Mixture) -> f64 {
        self.coefficients.iter().map(|(id, c)| c * mixture.get(*id)).sum()
    }

    /// Amount by which `mixture` violates the constraint (0 when satisfied).
    pub fn violation(&self, mixture: &Mixture) -> f64 {
        let v = self.value(mixture);
        let below = self.lo.map_or(0.0, |lo| lo - v);
        let above = self.hi.map_or(0.0, |hi| v - hi);
        below.max(above).max(0.0)
    }

    pub fn describe(&self) -> String {
        let terms: Vec<String> = self.coefficients.iter().map(|(id, c)| format!("{c}*{id}")).collect();
        let body = terms.join(" + ");
        let name = self.label.as_deref().map(|l| format!("{l}: ")).unwrap_or_default();
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => format!("{name}{lo} <= {body} <= {hi}"),
            (Some(lo), None) => format!("{name}{body} >= {lo}"),
            (None, Some(hi)) => format!("{name}{body} <= {hi}"),
            (None, None) => format!("{name}{body} unconstrained"),
        }
    }

    /// `water >= lo * binder` and `water <= hi * binder`.
    pub fn water_binder_window(lo: f64, hi: f64) -> [LinearConstraint; 2] {
        let make = |ratio: f64, lower: bool, label: &str| {
            let mut coefficients = BTreeMap::new();
            coefficients.insert(IngredientId::Water, 1.0);
            for b in IngredientId::BINDERS {
                coefficients.insert(b, -ratio);
            }
            LinearConstraint {
                coefficients,
                lo: lower.then_some(0.0),
                hi: (!lower).then_some(0.0),
                label: Some(label.to_string()),
            }
        };
        [make(lo, true, WB_MIN_LABEL), make(hi, false, WB_MAX_LABEL)]
    }

    pub fn binder_total(lo: f64, hi: f64) -> LinearConstraint {
        LinearConstraint {
            coefficients: IngredientId::BINDERS.into_iter().map(|b| (b, 1.0)).collect(),
            lo: Some(lo),
            hi: Some(hi),
            label: Some("binder_total".into()),
        }
    }
}

/// Ingredients without an entry in `bounds` are fixed at zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(default)]
    pub bounds: BTreeMap<IngredientId, Bound>,
    #[serde(default)]
    pub linear: Vec<LinearConstraint>,
    #[serde(default)]
    pub exclusions: BTreeSet<IngredientId>,
}

impl Constraints {
    pub fn with_bound(mut self, id: IngredientId, lo: f64, hi: f64) -> Self {
        self.bounds.insert(id, Bound::new(lo, hi));
        self
    }

    pub fn with_linear(mut self, c: LinearConstraint) -> Self {
        self.linear.push(c);
        self
    }

    pub fn with_water_binder(mut self, lo: f64, hi: f64) -> Self {
        self.linear.retain(|c| !is_water_binder(c));
        self.linear.extend(LinearConstraint::water_binder_window(lo, hi));
        self
    }

    pub fn excluding(mut self, id: IngredientId) -> Self {
        self.exclusions.insert(id);
        self
    }

    /// Per-ingredient bounds after exclusions collapse to `[0, 0]`.
    pub fn effective_bounds(&self) -> [Bound; NUM_INGREDIENTS] {
        IngredientId::ALL.map(|id| {
            if self.exclusions.contains(&id) {
                Bound::new(0.0, 0.0)
            } else {
                self.bounds.get(&id).copied().unwrap_or(Bound::new(0.0, 0.0))
            }
        })
    }

    /// Structural checks only; non-emptiness of the feasible region is
    /// established by [`crate::moo::FeasibleRegion::new`].
    pub fn validate(&self) -> Result<()> {
        for (id, b) in &self.bounds {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo < 0.0 {
                return Err(Error::Infeasible {
                    certificate: format!("bound on {id} must be finite and non-negative: [{}, {}]", b.lo, b.hi),
                });
            }
            if b.lo > b.hi {
                return Err(Error::Infeasible {
                    certificate: format!("bound on {id} has lo {} > hi {}", b.lo, b.hi),
                });
            }
        }
        for c in &self.linear {
            if c.coefficients.values().any(|v| !v.is_finite())
                || c.lo.is_some_and(|v| !v.is_finite())
                || c.hi.is_some_and(|v| !v.is_finite())
            {
                return Err(Error::Validation(format!(
                    "non-finite linear constraint {}",
                    c.describe()
                )));
            }
            if let (Some(lo), Some(hi)) = (c.lo, c.hi) {
                if lo > hi {
                    return Err(Error::Infeasible {
                        certificate: format!("linear constraint has lo > hi: {}", c.describe()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest violation over bounds and linear constraints, with a description.
    pub fn worst_violation(&self, mixture: &Mixture) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for (i, b) in self.effective_bounds().iter().enumerate() {
            let q = mixture.quantities()[i];
            let v = (b.lo - q).max(q - b.hi);
            if v > worst.0 {
                worst = (v, format!("{} outside [{}, {}]", IngredientId::ALL[i], b.lo, b.hi));
            }
        }
        for c in &self.linear {
            let v = c.violation(mixture);
            if v > worst.0 {
                worst = (v, c.describe());
            }
        }
        worst
    }

    pub fn is_satisfied(&self, mixture: &Mixture, tol: f64) -> bool {
        self.worst_violation(mixture).0 <= tol
    }
}

fn is_water_binder(c: &LinearConstraint) -> bool {
    matches!(c.label.as_deref(), Some(WB_MIN_LABEL) | Some(WB_MAX_LABEL))
}

/// Post-hoc modifications applied on top of a campaign's constraints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude: Vec<IngredientId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<IngredientId, Bound>,
    /// Replaces any water/binder window already present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water_binder: Option<Bound>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linear: Vec<LinearConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gwp_table: Option<GwpTable>,
}

impl Scenario {
    pub fn apply(&self, base: &Constraints) -> Constraints {
        let mut out = base.clone();
        out.exclusions.extend(self.exclude.iter().copied());
        for (id, b) in &self.bounds {
            out.bounds.insert(*id, *b);
        }
        if let Some(wb) = self.water_binder {
            out = out.with_water_binder(wb.lo, wb.hi);
        }
        out.linear.extend(self.linear.iter().cloned());
        out
    }
}
