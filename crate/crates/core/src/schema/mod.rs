//! Structured-document schemas: the language used to validate outcome
//! documents and to classify schema upgrades as breaking or not.
//!
//! A schema is an ordered list of fields. Each field has one of seven kinds
//! and may carry numeric bounds, a string pattern, or an enumeration of
//! literal values. Records nest further fields; a list carries exactly one
//! element definition.

mod diff;
mod number;
mod validate;

use std::collections::HashSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

pub use diff::{diff_schemas, ChangeKind, CompatibilityReport, SchemaChange};
pub use validate::{validate, ValidationReport, Violation, ViolationCode};

pub(crate) use number::{decimal_of, is_integer_literal, numbers_equal};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema: {0}")]
    Malformed(String),
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("constraint does not match field kind at `{0}`")]
    ConstraintKindMismatch(String),
    #[error("invalid constraint at `{path}`: {reason}")]
    InvalidConstraint { path: String, reason: String },
    #[error("schema names differ: `{old}` vs `{new}`")]
    NameMismatch { old: String, new: String },
}

impl SchemaError {
    pub fn code(&self) -> &'static str {
        match self {
            SchemaError::Malformed(_) => "Malformed",
            SchemaError::DuplicateField(_) => "DuplicateField",
            SchemaError::ConstraintKindMismatch(_) => "ConstraintKindMismatch",
            SchemaError::InvalidConstraint { .. } => "InvalidConstraint",
            SchemaError::NameMismatch { .. } => "NameMismatch",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    String,
    Integer,
    Decimal,
    Boolean,
    Timestamp,
    Record,
    List,
}

impl FieldKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, FieldKind::Integer | FieldKind::Decimal)
    }

    pub fn is_scalar(self) -> bool {
        !matches!(self, FieldKind::Record | FieldKind::List)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldKind::String => "string",
            FieldKind::Integer => "integer",
            FieldKind::Decimal => "decimal",
            FieldKind::Boolean => "boolean",
            FieldKind::Timestamp => "timestamp",
            FieldKind::Record => "record",
            FieldKind::List => "list",
        };
        f.write_str(s)
    }
}

/// Full-match regular expression constraint on a string field.
#[derive(Clone, Debug)]
pub struct Pattern {
    source: String,
    regex: Regex,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, regex::Error> {
        let regex = Regex::new(&format!("^(?:{source})$"))?;
        Ok(Self {
            source: source.to_owned(),
            regex,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, s: &str) -> bool {
        self.regex.is_match(s)
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Constraints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<Number>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<Number>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<Pattern>,
    #[serde(rename = "enum", skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<Value>>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        self.min.is_none() && self.max.is_none() && self.pattern.is_none() && self.allowed.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Constraints>,
    /// Record members, or the single element definition of a list.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<FieldDef>,
}

impl FieldDef {
    pub fn element(&self) -> Option<&FieldDef> {
        match self.kind {
            FieldKind::List => self.children.first(),
            _ => None,
        }
    }

    pub fn constraints(&self) -> Option<&Constraints> {
        self.constraints.as_ref().filter(|c| !c.is_empty())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemaDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
}

impl SchemaDef {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Looks up a `/`-separated path through nested records.
    pub fn field_at_path(&self, path: &str) -> Option<&FieldDef> {
        let mut segments = path.trim_start_matches('/').split('/');
        let mut current = self.field(segments.next()?)?;
        for seg in segments {
            if current.kind != FieldKind::Record {
                return None;
            }
            current = current.children.iter().find(|f| f.name == seg)?;
        }
        Some(current)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("schema serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    name: String,
    fields: Vec<RawField>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    name: String,
    kind: FieldKind,
    #[serde(default)]
    required: bool,
    #[serde(default)]
    constraints: Option<RawConstraints>,
    #[serde(default)]
    children: Option<Vec<RawField>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    #[serde(default)]
    min: Option<Number>,
    #[serde(default)]
    max: Option<Number>,
    #[serde(default)]
    pattern: Option<String>,
    #[serde(default, rename = "enum")]
    allowed: Option<Vec<Value>>,
}

/// Parses the canonical JSON schema serialization.
pub fn parse_schema(document: &Value) -> Result<SchemaDef, SchemaError> {
    let raw: RawSchema =
        serde_json::from_value(document.clone()).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    if raw.name.is_empty() {
        return Err(SchemaError::Malformed("schema name is empty".into()));
    }
    let fields = build_fields(raw.fields, "")?;
    Ok(SchemaDef {
        name: raw.name,
        fields,
    })
}

pub fn parse_schema_str(document: &str) -> Result<SchemaDef, SchemaError> {
    let v: Value = serde_json::from_str(document).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    parse_schema(&v)
}

fn build_fields(raw: Vec<RawField>, parent: &str) -> Result<Vec<FieldDef>, SchemaError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for f in raw {
        let path = format!("{parent}/{}", f.name);
        if f.name.is_empty() || f.name.contains('/') {
            return Err(SchemaError::Malformed(format!("invalid field name at `{path}`")));
        }
        if !seen.insert(f.name.clone()) {
            return Err(SchemaError::DuplicateField(path));
        }
        out.push(build_field(f, path)?);
    }
    Ok(out)
}

fn build_field(f: RawField, path: String) -> Result<FieldDef, SchemaError> {
    let children = match (f.kind, f.children) {
        (FieldKind::Record, Some(children)) => build_fields(children, &path)?,
        (FieldKind::Record, None) => Vec::new(),
        (FieldKind::List, Some(mut children)) => {
            if children.len() != 1 {
                return Err(SchemaError::Malformed(format!(
                    "list `{path}` must declare exactly one element definition"
                )));
            }
            let mut element = build_field(children.remove(0), format!("{path}/*"))?;
            element.required = true;
            vec![element]
        }
        (FieldKind::List, None) => {
            return Err(SchemaError::Malformed(format!(
                "list `{path}` must declare its element definition"
            )))
        }
        (_, Some(_)) => return Err(SchemaError::ConstraintKindMismatch(path)),
        (_, None) => Vec::new(),
    };
    let constraints = match f.constraints {
        None => None,
        Some(c) => Some(build_constraints(f.kind, c, &path)?),
    };
    Ok(FieldDef {
        name: f.name,
        kind: f.kind,
        required: f.required,
        constraints,
        children,
    })
}

fn build_constraints(kind: FieldKind, c: RawConstraints, path: &str) -> Result<Constraints, SchemaError> {
    if (c.min.is_some() || c.max.is_some()) && !kind.is_numeric() {
        return Err(SchemaError::ConstraintKindMismatch(path.to_owned()));
    }
    if c.pattern.is_some() && kind != FieldKind::String {
        return Err(SchemaError::ConstraintKindMismatch(path.to_owned()));
    }
    if let (Some(min), Some(max)) = (&c.min, &c.max) {
        if decimal_of(min) > decimal_of(max) {
            return Err(SchemaError::InvalidConstraint {
                path: path.to_owned(),
                reason: "min exceeds max".into(),
            });
        }
    }
    let pattern = match c.pattern {
        None => None,
        Some(p) => Some(Pattern::new(&p).map_err(|e| SchemaError::InvalidConstraint {
            path: path.to_owned(),
            reason: e.to_string(),
        })?),
    };
    if let Some(allowed) = &c.allowed {
        if !kind.is_scalar() {
            return Err(SchemaError::ConstraintKindMismatch(path.to_owned()));
        }
        if allowed.is_empty() {
            return Err(SchemaError::InvalidConstraint {
                path: path.to_owned(),
                reason: "enum must list at least one literal".into(),
            });
        }
        for lit in allowed {
            if !validate::scalar_matches_kind(lit, kind) {
                return Err(SchemaError::ConstraintKindMismatch(path.to_owned()));
            }
        }
    }
    Ok(Constraints {
        min: c.min,
        max: c.max,
        pattern,
        allowed: c.allowed,
    })
}
