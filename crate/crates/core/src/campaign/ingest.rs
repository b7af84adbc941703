//! Measurement CSV ingestion.
//!
//! Columns: one per ingredient (kg/m³, missing columns mean 0), `age_days`,
//! `strength`, optional `strength_unit` (`MPa` or `psi`), `batch` and
//! `replicate`. Header names are case-insensitive; spaces and dashes count
//! as underscores.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strength::{IngredientId, Mixture, StrengthObservation, NUM_INGREDIENTS};

pub const PSI_PER_MPA: f64 = 145.0377;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrengthUnit {
    #[serde(rename = "MPa")]
    Mpa,
    #[serde(rename = "psi")]
    Psi,
}

impl StrengthUnit {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "mpa" => Some(Self::Mpa),
            "psi" => Some(Self::Psi),
            _ => None,
        }
    }

    pub fn to_mpa(self, value: f64) -> f64 {
        match self {
            Self::Mpa => value,
            Self::Psi => value / PSI_PER_MPA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestedRow {
    pub line: u64,
    pub observation: StrengthObservation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub line: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rows: Vec<RowOutcome>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Column {
    Ingredient(IngredientId),
    Age,
    Strength,
    Unit,
    Batch,
    Replicate,
}

fn classify(name: &str) -> Result<Column> {
    let key = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    Ok(match key.as_str() {
        "age_days" | "age" => Column::Age,
        "strength" | "strength_mpa" => Column::Strength,
        "strength_unit" | "unit" => Column::Unit,
        "batch" => Column::Batch,
        "replicate" | "replicate_id" => Column::Replicate,
        _ => Column::Ingredient(
            key.parse()
                .map_err(|_| Error::Schema(format!("unknown column '{}'", name.trim())))?,
        ),
    })
}

fn schema(headers: &[String]) -> Result<Vec<Column>> {
    let cols = headers.iter().map(|h| classify(h)).collect::<Result<Vec<_>>>()?;
    for (i, c) in cols.iter().enumerate() {
        if cols[..i].contains(c) {
            return Err(Error::Schema(format!("duplicate column '{}'", headers[i].trim())));
        }
    }
    for (need, label) in [(Column::Age, "age_days"), (Column::Strength, "strength")] {
        if !cols.contains(&need) {
            return Err(Error::Schema(format!("missing required column '{label}'")));
        }
    }
    Ok(cols)
}

fn parse_number(value: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("{what}: '{}' is not a number", value.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} must be finite"))
    }
}

fn parse_row(cols: &[Column], values: &[&str]) -> std::result::Result<(StrengthObservation, Option<String>), String> {
    if values.len() != cols.len() {
        return Err(format!("expected {} fields, found {}", cols.len(), values.len()));
    }
    let mut q = [0.0; NUM_INGREDIENTS];
    let mut age = None;
    let mut strength = None;
    let mut unit = StrengthUnit::Mpa;
    let mut batch = None;
    let mut replicate = None;
    for (col, raw) in cols.iter().zip(values) {
        match col {
            Column::Ingredient(id) => {
                let v = if raw.trim().is_empty() {
                    0.0
                } else {
                    parse_number(raw, id.name())?
                };
                if v < 0.0 {
                    return Err(format!("negative quantity {v} for {id}"));
                }
                q[id.index()] = v;
            }
            Column::Age => age = Some(parse_number(raw, "age_days")?),
            Column::Strength => strength = Some(parse_number(raw, "strength")?),
            Column::Unit => {
                unit = StrengthUnit::parse(raw).ok_or_else(|| format!("unknown strength unit '{}'", raw.trim()))?;
            }
            Column::Batch => batch = Some(raw.trim().to_string()).filter(|s| !s.is_empty()),
            Column::Replicate => {
                if !raw.trim().is_empty() {
                    replicate = Some(
                        raw.trim()
                            .parse::<u8>()
                            .map_err(|_| format!("replicate '{}' is not a small integer", raw.trim()))?,
                    );
                }
            }
        }
    }
    let age = age.ok_or("missing age_days")?;
    let strength = unit.to_mpa(strength.ok_or("missing strength")?);
    let mixture = Mixture::new(q).map_err(|e| e.to_string())?;
    let mut obs = StrengthObservation::measured(mixture, age, strength).map_err(|e| e.to_string())?;
    obs.replicate_id = replicate;
    Ok((obs, batch))
}

/// Parses rows given as a header plus string fields, with 1-based line
/// numbers for diagnostics.
pub fn ingest_records<'a, I>(headers: &[String], records: I, strict: bool) -> Result<(Vec<IngestedRow>, IngestReport)>
where
    I: IntoIterator<Item = (u64, Vec<&'a str>)>,
{
    let cols = schema(headers)?;
    let mut rows = Vec::new();
    let mut report = IngestReport::default();
    for (line, values) in records {
        match parse_row(&cols, &values) {
            Ok((observation, batch)) => {
                report.accepted += 1;
                report.rows.push(RowOutcome {
                    line,
                    accepted: true,
                    message: None,
                });
                rows.push(IngestedRow {
                    line,
                    observation,
                    batch,
                });
            }
            Err(message) => {
                if strict {
                    return Err(Error::Row { line, message });
                }
                report.rejected += 1;
                report.rows.push(RowOutcome {
                    line,
                    accepted: false,
                    message: Some(message),
                });
            }
        }
    }
    Ok((rows, report))
}

/// Reads a measurement CSV. Malformed rows are reported and skipped, or
/// abort the whole read in strict mode. An empty input yields no rows.
pub fn ingest_csv<R: Read>(reader: R, strict: bool) -> Result<(Vec<IngestedRow>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Ok((Vec::new(), IngestReport::default()));
    }
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        raw.push((line, rec));
    }
    ingest_records(&headers, raw.iter().map(|(l, r)| (*l, r.iter().collect())), strict)
}

pub fn ingest_path(path: &std::path::Path, strict: bool) -> Result<(Vec<IngestedRow>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_csv(file, strict)
}

/// JSON rows use the CSV column names as keys; values may be numbers or strings.
pub fn ingest_json_rows(
    rows: &[serde_json::Map<String, serde_json::Value>],
    strict: bool,
) -> Result<(Vec<IngestedRow>, IngestReport)> {
    let mut headers: Vec<String> = Vec::new();
    for r in rows {
        for k in r.keys() {
            if !headers.contains(k) {
                headers.push(k.clone());
            }
        }
    }
    if rows.is_empty() {
        return Ok((Vec::new(), IngestReport::default()));
    }
    let fields: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            headers
                .iter()
                .map(|h| match r.get(h) {
                    None | Some(serde_json::Value::Null) => String::new(),
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(v) => v.to_string(),
                })
                .collect()
        })
        .collect();
    ingest_records(
        &headers,
        fields
            .iter()
            .enumerate()
            .map(|(i, f)| (i as u64 + 1, f.iter().map(String::as_str).collect())),
        strict,
    )
}
