//! Outcome document validation.

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{decimal_of, is_integer_literal, numbers_equal, Constraints, FieldDef, FieldKind, SchemaDef};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    MissingRequired,
    TypeMismatch,
    ConstraintViolation,
    UnknownField,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            valid: violations.is_empty(),
            violations,
        }
    }
}

/// Validates a document body against a schema.
///
/// Violations come out depth-first in document order. Within one record,
/// keys present in the body are visited first (in the order they appear),
/// then missing required fields are reported in schema order.
pub fn validate(doc: &Value, schema: &SchemaDef) -> ValidationReport {
    let mut out = Vec::new();
    match doc {
        Value::Object(map) => check_record(map, &schema.fields, "", &mut out),
        other => out.push(Violation {
            path: "/".into(),
            code: ViolationCode::TypeMismatch,
            message: format!("expected a record, found {}", json_type(other)),
        }),
    }
    ValidationReport::from_violations(out)
}

fn check_record(map: &Map<String, Value>, fields: &[FieldDef], path: &str, out: &mut Vec<Violation>) {
    for (key, value) in map {
        let child = format!("{path}/{key}");
        match fields.iter().find(|f| &f.name == key) {
            Some(field) => check_value(value, field, &child, out),
            None => out.push(Violation {
                path: child,
                code: ViolationCode::UnknownField,
                message: format!("`{key}` is not declared by the schema"),
            }),
        }
    }
    for field in fields.iter().filter(|f| f.required && !map.contains_key(&f.name)) {
        out.push(Violation {
            path: format!("{path}/{}", field.name),
            code: ViolationCode::MissingRequired,
            message: format!("required {} `{}` is missing", field.kind, field.name),
        });
    }
}

fn check_value(value: &Value, field: &FieldDef, path: &str, out: &mut Vec<Violation>) {
    match field.kind {
        FieldKind::Record => match value {
            Value::Object(map) => check_record(map, &field.children, path, out),
            other => out.push(type_mismatch(path, field.kind, other)),
        },
        FieldKind::List => match value {
            Value::Array(items) => {
                let element = field.element().expect("lists carry an element definition");
                for (i, item) in items.iter().enumerate() {
                    check_value(item, element, &format!("{path}/{i}"), out);
                }
            }
            other => out.push(type_mismatch(path, field.kind, other)),
        },
        kind => {
            if !scalar_matches_kind(value, kind) {
                out.push(type_mismatch(path, kind, value));
            } else if let Some(c) = field.constraints() {
                if let Some(reason) = constraint_failure(value, c) {
                    out.push(Violation {
                        path: path.to_owned(),
                        code: ViolationCode::ConstraintViolation,
                        message: reason,
                    });
                }
            }
        }
    }
}

pub(crate) fn scalar_matches_kind(value: &Value, kind: FieldKind) -> bool {
    match (kind, value) {
        (FieldKind::String, Value::String(_)) => true,
        (FieldKind::Integer, Value::Number(n)) => is_integer_literal(n),
        (FieldKind::Decimal, Value::Number(_)) => true,
        (FieldKind::Boolean, Value::Bool(_)) => true,
        (FieldKind::Timestamp, Value::String(s)) => DateTime::parse_from_rfc3339(s).is_ok(),
        _ => false,
    }
}

/// Returns the first failing constraint, checked in the order enum, min, max, pattern.
fn constraint_failure(value: &Value, c: &Constraints) -> Option<String> {
    if let Some(allowed) = &c.allowed {
        if !allowed.iter().any(|lit| literal_equals(lit, value)) {
            return Some("value is not one of the enumerated literals".into());
        }
    }
    if let Value::Number(n) = value {
        let v = decimal_of(n);
        if let Some(min) = &c.min {
            if v < decimal_of(min) {
                return Some(format!("{n} is below the minimum {min}"));
            }
        }
        if let Some(max) = &c.max {
            if v > decimal_of(max) {
                return Some(format!("{n} is above the maximum {max}"));
            }
        }
    }
    if let (Some(p), Value::String(s)) = (&c.pattern, value) {
        if !p.is_match(s) {
            return Some(format!("value does not match pattern `{}`", p.as_str()));
        }
    }
    None
}

pub(crate) fn literal_equals(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => numbers_equal(x, y),
        _ => a == b,
    }
}

fn type_mismatch(path: &str, kind: FieldKind, found: &Value) -> Violation {
    Violation {
        path: path.to_owned(),
        code: ViolationCode::TypeMismatch,
        message: format!("expected {kind}, found {}", json_type(found)),
    }
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
