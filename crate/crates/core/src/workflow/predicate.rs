//! Routing predicates over an activity's outcome document.
//!
//! Predicates are written as prefix-notation JSON arrays:
//! `["==", "status", "pass"]`, `["and", p, q, ...]`, `["or", p, q, ...]`,
//! `["not", p]`. Field paths address nested records with `/`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::schema::decimal_of;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CompareOp::Eq,
            "!=" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            "<=" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" => CompareOp::Ge,
            _ => return None,
        })
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoutePredicate {
    Compare { op: CompareOp, field: String, literal: Value },
    And(Vec<RoutePredicate>),
    Or(Vec<RoutePredicate>),
    Not(Box<RoutePredicate>),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("field `{0}` is missing from the outcome")]
    MissingField(String),
    #[error("field `{0}` cannot be compared with the literal")]
    KindMismatch(String),
}

impl RouteError {
    pub fn code(&self) -> &'static str {
        match self {
            RouteError::MissingField(_) => "MissingField",
            RouteError::KindMismatch(_) => "KindMismatch",
        }
    }
}

impl RoutePredicate {
    pub fn compare(op: CompareOp, field: &str, literal: Value) -> Self {
        RoutePredicate::Compare {
            op,
            field: field.to_owned(),
            literal,
        }
    }

    /// Every field path the predicate reads.
    pub fn field_paths(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            RoutePredicate::Compare { field, .. } => out.push(field),
            RoutePredicate::And(ps) | RoutePredicate::Or(ps) => ps.iter().for_each(|p| p.collect_paths(out)),
            RoutePredicate::Not(p) => p.collect_paths(out),
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            RoutePredicate::Compare { op, field, literal } => {
                Value::Array(vec![op.symbol().into(), field.clone().into(), literal.clone()])
            }
            RoutePredicate::And(ps) | RoutePredicate::Or(ps) => {
                let head = if matches!(self, RoutePredicate::And(_)) { "and" } else { "or" };
                let mut arr = vec![Value::from(head)];
                arr.extend(ps.iter().map(|p| p.to_value()));
                Value::Array(arr)
            }
            RoutePredicate::Not(p) => Value::Array(vec!["not".into(), p.to_value()]),
        }
    }

    pub fn from_value(v: &Value) -> Result<Self, String> {
        let arr = v.as_array().ok_or_else(|| format!("predicate must be an array, got {v}"))?;
        let head = arr
            .first()
            .and_then(Value::as_str)
            .ok_or_else(|| "predicate must start with an operator".to_string())?;
        match head {
            "and" | "or" => {
                if arr.len() < 3 {
                    return Err(format!("`{head}` needs at least two operands"));
                }
                let ps = arr[1..].iter().map(Self::from_value).collect::<Result<Vec<_>, _>>()?;
                Ok(if head == "and" {
                    RoutePredicate::And(ps)
                } else {
                    RoutePredicate::Or(ps)
                })
            }
            "not" => {
                if arr.len() != 2 {
                    return Err("`not` takes exactly one operand".into());
                }
                Ok(RoutePredicate::Not(Box::new(Self::from_value(&arr[1])?)))
            }
            sym => {
                let op = CompareOp::from_symbol(sym).ok_or_else(|| format!("unknown operator `{sym}`"))?;
                if arr.len() != 3 {
                    return Err(format!("`{sym}` takes a field path and a literal"));
                }
                let field = arr[1].as_str().filter(|f| !f.is_empty()).ok_or("field path must be a string")?;
                let literal = &arr[2];
                if !matches!(literal, Value::String(_) | Value::Number(_) | Value::Bool(_)) {
                    return Err(format!("literal must be a string, number or boolean, got {literal}"));
                }
                Ok(RoutePredicate::compare(op, field, literal.clone()))
            }
        }
    }
}

impl fmt::Display for RoutePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_value())
    }
}

impl Serialize for RoutePredicate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RoutePredicate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_value(&v).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn lookup_field<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    path.trim_start_matches('/')
        .split('/')
        .try_fold(doc, |cur, seg| cur.as_object()?.get(seg))
}

/// Evaluates a predicate against an outcome body.
///
/// Every operand of `and`/`or` is evaluated, so a kind error anywhere in
/// the tree is reported regardless of operand order.
pub fn evaluate_route(predicate: &RoutePredicate, outcome: Option<&Value>) -> Result<bool, RouteError> {
    match predicate {
        RoutePredicate::Compare { op, field, literal } => {
            let value = outcome
                .and_then(|doc| lookup_field(doc, field))
                .ok_or_else(|| RouteError::MissingField(field.clone()))?;
            let ord = match (value, literal) {
                (Value::Number(a), Value::Number(b)) => decimal_of(a).cmp(&decimal_of(b)),
                (Value::String(a), Value::String(b)) => a.cmp(b),
                (Value::Bool(a), Value::Bool(b)) if matches!(op, CompareOp::Eq | CompareOp::Ne) => a.cmp(b),
                _ => return Err(RouteError::KindMismatch(field.clone())),
            };
            Ok(op.holds(ord))
        }
        RoutePredicate::And(ps) => {
            let results = ps.iter().map(|p| evaluate_route(p, outcome)).collect::<Result<Vec<_>, _>>()?;
            Ok(results.into_iter().all(|b| b))
        }
        RoutePredicate::Or(ps) => {
            let results = ps.iter().map(|p| evaluate_route(p, outcome)).collect::<Result<Vec<_>, _>>()?;
            Ok(results.into_iter().any(|b| b))
        }
        RoutePredicate::Not(p) => evaluate_route(p, outcome).map(|b| !b),
    }
}
