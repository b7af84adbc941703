//! Objective vector: strength at fixed ages from the model, negated GWP.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moo::ObjectiveModel;
use crate::strength::{IngredientId, Mixture, StrengthModel};

/// Linear GWP coefficients in kg CO₂e per kg of ingredient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwpTable {
    #[serde(default)]
    pub name: String,
    pub coefficients: BTreeMap<IngredientId, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<IngredientId, String>,
}

#[derive(Deserialize)]
struct GwpRow {
    ingredient: String,
    #[serde(rename = "kgCO2e_per_kg")]
    coefficient: f64,
    #[serde(default)]
    source: Option<String>,
}

impl GwpTable {
    pub fn new(name: impl Into<String>, coefficients: impl IntoIterator<Item = (IngredientId, f64)>) -> Result<Self> {
        let table = Self {
            name: name.into(),
            coefficients: coefficients.into_iter().collect(),
            sources: BTreeMap::new(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (id, c) in &self.coefficients {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(Error::Config(format!(
                    "GWP coefficient for {id} must be finite and >= 0, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    /// CSV with columns `ingredient,kgCO2e_per_kg[,source]`.
    pub fn from_csv_reader<R: Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        let mut table = Self {
            name: name.into(),
            coefficients: BTreeMap::new(),
            sources: BTreeMap::new(),
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<GwpRow>().enumerate() {
            let row = row.map_err(|e| Error::Row {
                line: i as u64 + 2,
                message: e.to_string(),
            })?;
            let id: IngredientId = row.ingredient.parse()?;
            table.coefficients.insert(id, row.coefficient);
            if let Some(s) = row.source.filter(|s| !s.is_empty()) {
                table.sources.insert(id, s);
            }
        }
        table.validate()?;
        Ok(table)
    }

    /// Loads `.csv` as CSV, anything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Self::from_csv_reader(name, text.as_bytes())
        } else {
            Self::from_json_str(&text)
        }
    }

    /// Every coefficient multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        for c in t.coefficients.values_mut() {
            *c *= factor;
        }
        t
    }
}

/// kg CO₂e per m³. Ingredients present in the mixture need a coefficient.
pub fn gwp(table: &GwpTable, mixture: &Mixture) -> Result<f64> {
    let mut total = 0.0;
    for id in IngredientId::ALL {
        let q = mixture.get(id);
        if q == 0.0 {
            continue;
        }
        let c = table
            .coefficients
            .get(&id)
            .ok_or_else(|| Error::Config(format!("GWP table '{}' has no coefficient for {id}", table.name)))?;
        total += c * q;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSpec {
    /// Strength ages in days; the objective vector is these strengths then −GWP.
    pub ages: Vec<f64>,
    pub reference_point: Vec<f64>,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            ages: vec![1.0, 28.0],
            reference_point: vec![0.0, 0.0, -600.0],
        }
    }
}

impl ObjectiveSpec {
    pub fn num_objectives(&self) -> usize {
        self.ages.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.ages.is_empty() || self.ages.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Config("objective ages must be positive and non-empty".into()));
        }
        if self.reference_point.len() != self.num_objectives() {
            return Err(Error::Config(format!(
                "reference point has {} entries, expected {}",
                self.reference_point.len(),
                self.num_objectives()
            )));
        }
        if self.reference_point.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference point must be finite".into()));
        }
        Ok(())
    }

    pub fn objective_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.ages.iter().map(|a| format!("strength_day_{a}")).collect();
        names.push("neg_gwp".into());
        names
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePosterior {
    pub mean: DVector<f64>,
    /// Strength block from the GP; the last row and column are zero.
    pub covariance: DMatrix<f64>,
}

/// Per-mixture objective mean and covariance.
pub fn objective_posterior(
    model: &StrengthModel,
    table: &GwpTable,
    spec: &ObjectiveSpec,
    mixtures: &[Mixture],
) -> Result<Vec<ObjectivePosterior>> {
    spec.validate()?;
    let a = spec.ages.len();
    let m = a + 1;
    mixtures
        .iter()
        .map(|x| {
            let post = model.predict_joint(std::slice::from_ref(x), &spec.ages)?;
            let mut mean = DVector::zeros(m);
            let mut cov = DMatrix::zeros(m, m);
            mean.rows_mut(0, a).copy_from(&post.mean);
            cov.view_mut((0, 0), (a, a)).copy_from(&post.covariance);
            mean[a] = -gwp(table, x)?;
            Ok(ObjectivePosterior { mean, covariance: cov })
        })
        .collect()
}

/// The objective vector of a mixture as a joint Gaussian, for acquisition.
#[derive(Clone, Copy, Debug)]
pub struct MixtureObjectives<'a> {
    pub model: &'a StrengthModel,
    pub table: &'a GwpTable,
    pub spec: &'a ObjectiveSpec,
}

impl ObjectiveModel for MixtureObjectives<'_> {
    fn num_objectives(&self) -> usize {
        self.spec.num_objectives()
    }

    fn joint(&self, points: &[Mixture]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let a = self.spec.ages.len();
        let m = a + 1;
        let n = points.len();
        let post = self.model.predict_joint(points, &self.spec.ages)?;
        let mut mean = DVector::zeros(n * m);
        let mut cov = DMatrix::zeros(n * m, n * m);
        let at = |i: usize, j: usize| i * m + j;
        for i in 0..n {
            for j in 0..a {
                mean[at(i, j)] = post.mean[i * a + j];
                for k in 0..n {
                    for l in 0..a {
                        cov[(at(i, j), at(k, l))] = post.covariance[(i * a + j, k * a + l)];
                    }
                }
            }
            mean[at(i, a)] = -gwp(self.table, &points[i])?;
        }
        Ok((mean, cov))
    }
}
