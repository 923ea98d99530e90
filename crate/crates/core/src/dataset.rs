//! Study-level records: effect estimates, sampling variances and the
//! mixed-type characteristics the oracles compare.
//!
//! Two on-disk formats are accepted.
//!
//! CSV has a header row with the reserved columns `id`, `effect` and exactly
//! one of `se` / `variance`. Every other column is a characteristic, optionally
//! annotated as `name:numeric`, `name:categorical` or `name:text`. Unannotated
//! columns are numeric when every present value parses as a number and
//! categorical otherwise. Empty cells and `NA` are missing values.
//!
//! JSON is an object with a `schema` array of `{name, kind}` and a `studies`
//! array of `{id, effect, variance | se, characteristics: {name: value}}`.
//! `null` or an absent key is a missing value.
//!
//! Variance is the canonical storage; a standard error is squared on ingest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharacteristicKind {
    Numeric,
    Categorical,
    Text,
}

impl CharacteristicKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "numeric" | "number" | "num" => Some(Self::Numeric),
            "categorical" | "category" | "cat" => Some(Self::Categorical),
            "text" | "string" => Some(Self::Text),
            _ => None,
        }
    }
}

impl fmt::Display for CharacteristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Numeric => "numeric",
            Self::Categorical => "categorical",
            Self::Text => "text",
        })
    }
}

/// A present characteristic value. Which variant a value has is independent of
/// the schema so that mismatches survive ingest and show up in validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Numeric(f64),
    Categorical(String),
    Text(String),
}

impl Value {
    pub fn kind(&self) -> CharacteristicKind {
        match self {
            Value::Numeric(_) => CharacteristicKind::Numeric,
            Value::Categorical(_) => CharacteristicKind::Categorical,
            Value::Text(_) => CharacteristicKind::Text,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Numeric(x) => Some(*x),
            _ => None,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Numeric(x) => serde_json::Number::from_f64(*x)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Categorical(s) | Value::Text(s) => serde_json::Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Numeric(x) => write!(f, "{x}"),
            Value::Categorical(s) | Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: CharacteristicKind,
}

/// Shared characteristic names and kinds, in column order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub features: Vec<Feature>,
}

impl Schema {
    pub fn new(features: Vec<Feature>) -> Self {
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// A characteristic as seen through a study: name, declared kind and value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Characteristic<'a> {
    pub name: &'a str,
    pub kind: CharacteristicKind,
    pub value: Option<&'a Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    /// Effect estimate (SMD units in the motivating application).
    pub effect: f64,
    /// Sampling variance, always > 0.
    pub variance: f64,
    /// Values aligned with the dataset schema; `None` is missing.
    pub values: Vec<Option<Value>>,
}

impl Study {
    pub fn characteristics<'a>(
        &'a self,
        schema: &'a Schema,
    ) -> impl Iterator<Item = Characteristic<'a>> + 'a {
        schema
            .features
            .iter()
            .zip(&self.values)
            .map(|(f, v)| Characteristic {
                name: &f.name,
                kind: f.kind,
                value: v.as_ref(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub studies: Vec<Study>,
}

impl Dataset {
    pub fn new(schema: Schema, studies: Vec<Study>) -> Self {
        Self { schema, studies }
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.studies.iter().map(|s| s.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.studies.iter().position(|s| s.id == id)
    }

    pub fn effects(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.effect).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.variance).collect()
    }

    /// Canonical JSON document (the JSON ingest format with `variance`).
    pub fn to_json_value(&self) -> serde_json::Value {
        let studies: Vec<serde_json::Value> = self
            .studies
            .iter()
            .map(|s| {
                let mut chars = serde_json::Map::new();
                for (f, v) in self.schema.features.iter().zip(&s.values) {
                    let jv = v.as_ref().map_or(serde_json::Value::Null, Value::to_json);
                    chars.insert(f.name.clone(), jv);
                }
                serde_json::json!({
                    "id": s.id,
                    "effect": s.effect,
                    "variance": s.variance,
                    "characteristics": chars,
                })
            })
            .collect();
        serde_json::json!({ "schema": self.schema, "studies": studies })
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value())
            .expect("dataset values are finite");
        s.push('\n');
        s
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io(format!("reading dataset {}", path.display()), e))?;
    parse_dataset(&bytes, format)
}

pub fn parse_dataset(bytes: &[u8], format: Format) -> Result<Dataset> {
    match format {
        Format::Csv => parse_csv(bytes),
        Format::Json => parse_json(bytes),
    }
}

fn parse_number(raw: &str, location: &str, field: &str) -> Result<f64> {
    let x: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        location: location.to_string(),
        message: format!("field `{field}`: `{raw}` is not a number"),
    })?;
    if !x.is_finite() {
        return Err(Error::Parse {
            location: location.to_string(),
            message: format!("field `{field}`: `{raw}` is not finite"),
        });
    }
    Ok(x)
}

#[derive(Clone, Copy)]
enum Precision {
    Se,
    Variance,
}

fn canonical_variance(
    id: &str,
    location: &str,
    precision: Precision,
    raw: f64,
) -> Result<f64> {
    let variance = match precision {
        Precision::Se => {
            if raw <= 0.0 {
                return Err(Error::NonPositiveVariance {
                    id: id.to_string(),
                    location: format!("{location}, field `se`"),
                    value: raw,
                });
            }
            raw * raw
        }
        Precision::Variance => raw,
    };
    if variance <= 0.0 || !variance.is_finite() {
        let field = match precision {
            Precision::Se => "se",
            Precision::Variance => "variance",
        };
        return Err(Error::NonPositiveVariance {
            id: id.to_string(),
            location: format!("{location}, field `{field}`"),
            value: variance,
        });
    }
    Ok(variance)
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

fn parse_csv(bytes: &[u8]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            location: "line 1".into(),
            message: e.to_string(),
        })?
        .clone();

    let mut id_col = None;
    let mut effect_col = None;
    let mut se_col = None;
    let mut var_col = None;
    // (column index, name, annotated kind)
    let mut feature_cols: Vec<(usize, String, Option<CharacteristicKind>)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h {
            "id" => id_col = Some(i),
            "effect" => effect_col = Some(i),
            "se" => se_col = Some(i),
            "variance" => var_col = Some(i),
            _ => {
                let (name, kind) = match h.rsplit_once(':') {
                    Some((name, kind)) => {
                        let k = CharacteristicKind::parse(kind).ok_or_else(|| Error::Parse {
                            location: "line 1".into(),
                            message: format!("column `{h}`: unknown kind annotation `{kind}`"),
                        })?;
                        (name.trim().to_string(), Some(k))
                    }
                    None => (h.to_string(), None),
                };
                if feature_cols.iter().any(|(_, n, _)| *n == name) {
                    return Err(Error::Parse {
                        location: "line 1".into(),
                        message: format!("characteristic `{name}` appears twice"),
                    });
                }
                feature_cols.push((i, name, kind));
            }
        }
    }
    let id_col = id_col.ok_or_else(|| Error::MissingColumn { column: "id".into() })?;
    let effect_col = effect_col.ok_or_else(|| Error::MissingColumn {
        column: "effect".into(),
    })?;
    let (prec_col, precision) = match (se_col, var_col) {
        (Some(c), None) => (c, Precision::Se),
        (None, Some(c)) => (c, Precision::Variance),
        (None, None) => {
            return Err(Error::MissingColumn {
                column: "se|variance".into(),
            })
        }
        (Some(_), Some(_)) => {
            return Err(Error::Parse {
                location: "line 1".into(),
                message: "exactly one of `se` and `variance` may be given".into(),
            })
        }
    };

    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let location = format!("row {} (line {})", r + 1, r + 2);
        let rec = rec.map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        rows.push((location, rec));
    }

    // kind inference for unannotated columns
    let schema = Schema::new(
        feature_cols
            .iter()
            .map(|(col, name, kind)| {
                let kind = kind.unwrap_or_else(|| {
                    let all_numeric = rows.iter().all(|(_, rec)| {
                        let cell = rec.get(*col).unwrap_or("");
                        is_missing(cell)
                            || cell.trim().parse::<f64>().is_ok_and(|x| x.is_finite())
                    });
                    if all_numeric {
                        CharacteristicKind::Numeric
                    } else {
                        CharacteristicKind::Categorical
                    }
                });
                Feature {
                    name: name.clone(),
                    kind,
                }
            })
            .collect(),
    );

    let mut seen = HashSet::new();
    let mut studies = Vec::with_capacity(rows.len());
    for (location, rec) in &rows {
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let id = cell(id_col).trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                location: location.clone(),
                message: "field `id` is empty".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                id,
                location: location.clone(),
            });
        }
        let effect = parse_number(cell(effect_col), location, "effect")?;
        let raw_prec = parse_number(
            cell(prec_col),
            location,
            match precision {
                Precision::Se => "se",
                Precision::Variance => "variance",
            },
        )?;
        let variance = canonical_variance(&id, location, precision, raw_prec)?;
        let values = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|((col, _, _), feat)| {
                let raw = cell(*col);
                if is_missing(raw) {
                    return None;
                }
                let raw = raw.trim();
                Some(match feat.kind {
                    CharacteristicKind::Numeric => match raw.parse::<f64>() {
                        Ok(x) if x.is_finite() => Value::Numeric(x),
                        _ => Value::Text(raw.to_string()),
                    },
                    CharacteristicKind::Categorical => Value::Categorical(raw.to_string()),
                    CharacteristicKind::Text => Value::Text(raw.to_string()),
                })
            })
            .collect();
        studies.push(Study {
            id,
            effect,
            variance,
            values,
        });
    }
    Ok(Dataset::new(schema, studies))
}

#[derive(Deserialize)]
struct JsonDataset {
    schema: Vec<Feature>,
    studies: Vec<JsonStudy>,
}

#[derive(Deserialize)]
struct JsonStudy {
    id: String,
    effect: serde_json::Value,
    #[serde(default)]
    variance: Option<serde_json::Value>,
    #[serde(default)]
    se: Option<serde_json::Value>,
    #[serde(default)]
    characteristics: BTreeMap<String, serde_json::Value>,
}

fn json_number(v: &serde_json::Value, location: &str, field: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Parse {
            location: location.to_string(),
            message: format!("field `{field}`: expected a finite number, got {v}"),
        }),
    }
}

fn parse_json(bytes: &[u8]) -> Result<Dataset> {
    let doc: JsonDataset = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let schema = Schema::new(doc.schema);
    let mut names = HashSet::new();
    for f in &schema.features {
        if !names.insert(f.name.as_str()) {
            return Err(Error::Parse {
                location: "schema".into(),
                message: format!("characteristic `{}` appears twice", f.name),
            });
        }
    }

    let mut seen = HashSet::new();
    let mut studies = Vec::with_capacity(doc.studies.len());
    for (i, js) in doc.studies.into_iter().enumerate() {
        let location = format!("studies[{i}]");
        if js.id.trim().is_empty() {
            return Err(Error::Parse {
                location,
                message: "field `id` is empty".into(),
            });
        }
        if !seen.insert(js.id.clone()) {
            return Err(Error::DuplicateId {
                id: js.id,
                location,
            });
        }
        let effect = json_number(&js.effect, &location, "effect")?;
        let (raw, precision, field) = match (&js.se, &js.variance) {
            (Some(se), None) => (se, Precision::Se, "se"),
            (None, Some(v)) => (v, Precision::Variance, "variance"),
            (None, None) => {
                return Err(Error::MissingColumn {
                    column: format!("se|variance ({location})"),
                })
            }
            (Some(_), Some(_)) => {
                return Err(Error::Parse {
                    location,
                    message: "exactly one of `se` and `variance` may be given".into(),
                })
            }
        };
        let raw = json_number(raw, &location, field)?;
        let variance = canonical_variance(&js.id, &location, precision, raw)?;

        if let Some(unknown) = js
            .characteristics
            .keys()
            .find(|k| schema.index_of(k).is_none())
        {
            return Err(Error::Parse {
                location,
                message: format!("characteristic `{unknown}` is not in the schema"),
            });
        }
        let values = schema
            .features
            .iter()
            .map(|f| match js.characteristics.get(&f.name) {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::Number(n)) => match f.kind {
                    CharacteristicKind::Numeric => n.as_f64().map(Value::Numeric),
                    CharacteristicKind::Categorical => Some(Value::Categorical(n.to_string())),
                    CharacteristicKind::Text => Some(Value::Text(n.to_string())),
                },
                Some(serde_json::Value::String(s)) => Some(match f.kind {
                    CharacteristicKind::Categorical => Value::Categorical(s.clone()),
                    _ => Value::Text(s.clone()),
                }),
                Some(serde_json::Value::Bool(b)) => Some(match f.kind {
                    CharacteristicKind::Categorical => Value::Categorical(b.to_string()),
                    _ => Value::Text(b.to_string()),
                }),
                Some(other) => Some(Value::Text(other.to_string())),
            })
            .collect();
        studies.push(Study {
            id: js.id,
            effect,
            variance,
            values,
        });
    }
    Ok(Dataset::new(schema, studies))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    TooFewStudies,
    DuplicateId,
    InvalidVariance,
    InvalidEffect,
    KindMismatch,
    NonFinite,
    ArityMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub study: Option<String>,
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConformance {
    pub id: String,
    pub conforms: bool,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub studies: Vec<StudyConformance>,
    /// Missing-value count per characteristic, in schema order.
    pub missing_counts: Vec<(String, usize)>,
    pub errors: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut errors = Vec::new();
    let m = d.len();
    if m < 3 {
        errors.push(Finding {
            kind: FindingKind::TooFewStudies,
            study: None,
            field: None,
            message: format!("m < 3 (dataset has {m} studies; a triplet needs three)"),
        });
    }

    let mut missing_counts: Vec<(String, usize)> = d
        .schema
        .features
        .iter()
        .map(|f| (f.name.clone(), 0))
        .collect();
    let mut seen = HashSet::new();
    let mut studies = Vec::with_capacity(m);
    for s in &d.studies {
        let before = errors.len();
        let finding = |kind, field: Option<&str>, message: String| Finding {
            kind,
            study: Some(s.id.clone()),
            field: field.map(str::to_string),
            message,
        };
        if !seen.insert(s.id.as_str()) {
            errors.push(finding(
                FindingKind::DuplicateId,
                Some("id"),
                format!("id \"{}\" is not unique", s.id),
            ));
        }
        if !(s.variance > 0.0 && s.variance.is_finite()) {
            errors.push(finding(
                FindingKind::InvalidVariance,
                Some("variance"),
                format!("variance {} must be positive and finite", s.variance),
            ));
        }
        if !s.effect.is_finite() {
            errors.push(finding(
                FindingKind::InvalidEffect,
                Some("effect"),
                format!("effect {} is not finite", s.effect),
            ));
        }
        if s.values.len() != d.schema.len() {
            errors.push(finding(
                FindingKind::ArityMismatch,
                None,
                format!(
                    "{} characteristic values for a schema of {}",
                    s.values.len(),
                    d.schema.len()
                ),
            ));
        }
        let mut missing = 0;
        for (j, (feat, v)) in d.schema.features.iter().zip(&s.values).enumerate() {
            match v {
                None => {
                    missing += 1;
                    missing_counts[j].1 += 1;
                }
                Some(v) if v.kind() != feat.kind => errors.push(finding(
                    FindingKind::KindMismatch,
                    Some(&feat.name),
                    format!("expected {} value, found {} `{v}`", feat.kind, v.kind()),
                )),
                Some(Value::Numeric(x)) if !x.is_finite() => errors.push(finding(
                    FindingKind::NonFinite,
                    Some(&feat.name),
                    format!("numeric value {x} is not finite"),
                )),
                Some(_) => {}
            }
        }
        studies.push(StudyConformance {
            id: s.id.clone(),
            conforms: errors.len() == before,
            missing,
        });
    }
    ValidationReport {
        studies,
        missing_counts,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV3: &str = "id,effect,se,design:categorical,age\n\
                        S1,0.5,0.2,cohort,5\n\
                        S2,-0.1,0.3,case-control,6.5\n\
                        S3,0.2,0.1,cohort,\n";

    #[test]
    fn csv_three_rows_squares_se() {
        let d = parse_dataset(CSV3.as_bytes(), Format::Csv).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.studies[0].variance, 0.2 * 0.2);
        assert_eq!(d.studies[2].variance, 0.1 * 0.1);
        assert_eq!(d.schema.features[0].kind, CharacteristicKind::Categorical);
        assert_eq!(d.schema.features[1].kind, CharacteristicKind::Numeric);
        assert_eq!(d.studies[2].values[1], None);
        assert_eq!(d.ids().collect::<Vec<_>>(), ["S1", "S2", "S3"]);
    }

    #[test]
    fn csv_duplicate_id() {
        let csv = "id,effect,variance\nS1,0,1\nS1,1,1\nS2,1,1\n";
        let err = parse_dataset(csv.as_bytes(), Format::Csv).unwrap_err();
        match &err {
            Error::DuplicateId { id, location } => {
                assert_eq!(id, "S1");
                assert!(location.contains("row 2"), "{location}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("S1"));
    }

    #[test]
    fn csv_missing_columns() {
        let err = parse_dataset(b"id,effect\nS1,0\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { .. }));
        let err = parse_dataset(b"id,se\nS1,0.1\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column } if column == "effect"));
        let err = parse_dataset(b"id,effect,se,variance\nS1,0,1,1\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn csv_unparseable_effect_has_location() {
        let err = parse_dataset(b"id,effect,se\nS1,abc,0.1\n", Format::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("effect"), "{msg}");
    }

    #[test]
    fn json_zero_se_rejected() {
        let json = r#"{"schema":[],"studies":[
            {"id":"S1","effect":0.1,"se":0.1},
            {"id":"S2","effect":0.1,"se":0}]}"#;
        let err = parse_dataset(json.as_bytes(), Format::Json).unwrap_err();
        match err {
            Error::NonPositiveVariance { id, location, .. } => {
                assert_eq!(id, "S2");
                assert!(location.contains("studies[1]"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_characteristics_typed_by_schema() {
        let json = r#"{"schema":[{"name":"n","kind":"numeric"},{"name":"c","kind":"categorical"},{"name":"t","kind":"text"}],
            "studies":[{"id":"A","effect":1,"variance":0.5,"characteristics":{"n":3,"c":"x","t":"free text"}},
                       {"id":"B","effect":1,"variance":0.5,"characteristics":{"n":null,"c":"y"}}]}"#;
        let d = parse_dataset(json.as_bytes(), Format::Json).unwrap();
        assert_eq!(d.studies[0].values[0], Some(Value::Numeric(3.0)));
        assert_eq!(d.studies[0].values[1], Some(Value::Categorical("x".into())));
        assert_eq!(d.studies[0].values[2], Some(Value::Text("free text".into())));
        assert_eq!(d.studies[1].values, vec![None, Some(Value::Categorical("y".into())), None]);
    }

    fn conforming(m: usize) -> Dataset {
        let schema = Schema::new(vec![
            Feature {
                name: "age".into(),
                kind: CharacteristicKind::Numeric,
            },
            Feature {
                name: "design".into(),
                kind: CharacteristicKind::Categorical,
            },
        ]);
        let studies = (0..m)
            .map(|i| Study {
                id: format!("S{i}"),
                effect: i as f64 * 0.1,
                variance: 0.05,
                values: vec![
                    Some(Value::Numeric(i as f64)),
                    Some(Value::Categorical("cohort".into())),
                ],
            })
            .collect();
        Dataset::new(schema, studies)
    }

    #[test]
    fn validate_conforming() {
        let r = validate_dataset(&conforming(5));
        assert!(r.is_ok());
        assert!(r.missing_counts.iter().all(|(_, c)| *c == 0));
        assert!(r.studies.iter().all(|s| s.conforms && s.missing == 0));
    }

    #[test]
    fn validate_too_few() {
        let r = validate_dataset(&conforming(2));
        assert!(!r.is_ok());
        assert_eq!(r.errors[0].kind, FindingKind::TooFewStudies);
        assert!(r.errors[0].message.contains("m < 3"));
    }

    #[test]
    fn validate_kind_mismatch_located() {
        let mut d = conforming(4);
        d.studies[2].values[0] = Some(Value::Text("five".into()));
        let r = validate_dataset(&d);
        assert_eq!(r.errors.len(), 1);
        let f = &r.errors[0];
        assert_eq!(f.kind, FindingKind::KindMismatch);
        assert_eq!(f.study.as_deref(), Some("S2"));
        assert_eq!(f.field.as_deref(), Some("age"));
        assert!(!r.studies[2].conforms);
    }

    #[test]
    fn csv_numeric_annotation_keeps_bad_cell_for_validation() {
        let csv = "id,effect,se,age:numeric\nA,0,1,4\nB,0,1,five\nC,0,1,6\n";
        let d = parse_dataset(csv.as_bytes(), Format::Csv).unwrap();
        let r = validate_dataset(&d);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].study.as_deref(), Some("B"));
    }

    #[test]
    fn canonical_json_round_trip() {
        let d = parse_dataset(CSV3.as_bytes(), Format::Csv).unwrap();
        let json = d.to_canonical_json();
        let back = parse_dataset(json.as_bytes(), Format::Json).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn se_and_variance_ingest_agree() {
        let se = "id,effect,se\nA,0.1,0.37\nB,0.2,0.011\nC,0.3,1.9\n";
        let var = format!(
            "id,effect,variance\nA,0.1,{}\nB,0.2,{}\nC,0.3,{}\n",
            0.37f64 * 0.37,
            0.011f64 * 0.011,
            1.9f64 * 1.9
        );
        let a = parse_dataset(se.as_bytes(), Format::Csv).unwrap();
        let b = parse_dataset(var.as_bytes(), Format::Csv).unwrap();
        assert_eq!(a, b);
    }
}
