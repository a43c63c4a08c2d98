//! Compatibility classification between two versions of a schema.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use super::validate::literal_equals;
use super::{decimal_of, FieldDef, SchemaDef, SchemaError};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    AddedOptional,
    AddedRequired,
    Removed,
    KindChanged,
    ConstraintTightened,
    ConstraintRelaxed,
}

impl ChangeKind {
    pub fn is_compatible(self) -> bool {
        matches!(self, ChangeKind::AddedOptional | ChangeKind::ConstraintRelaxed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaChange {
    pub path: String,
    pub change: ChangeKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub changes: Vec<SchemaChange>,
}

/// Classifies every field-level difference between `old` and `new`.
///
/// Only added optional fields and relaxed constraints keep the new version
/// backward compatible: every document valid under `old` stays valid.
/// Pattern edits cannot be compared for language inclusion and are treated
/// as tightening unless the pattern was dropped.
pub fn diff_schemas(old: &SchemaDef, new: &SchemaDef) -> Result<CompatibilityReport, SchemaError> {
    if old.name != new.name {
        return Err(SchemaError::NameMismatch {
            old: old.name.clone(),
            new: new.name.clone(),
        });
    }
    let mut changes = Vec::new();
    diff_fields(&old.fields, &new.fields, "", &mut changes);
    Ok(CompatibilityReport {
        compatible: changes.iter().all(|c| c.change.is_compatible()),
        changes,
    })
}

fn diff_fields(old: &[FieldDef], new: &[FieldDef], parent: &str, out: &mut Vec<SchemaChange>) {
    for o in old {
        let path = format!("{parent}/{}", o.name);
        match new.iter().find(|n| n.name == o.name) {
            None => push(out, &path, ChangeKind::Removed),
            Some(n) => diff_field(o, n, &path, true, out),
        }
    }
    for n in new.iter().filter(|n| !old.iter().any(|o| o.name == n.name)) {
        let kind = if n.required {
            ChangeKind::AddedRequired
        } else {
            ChangeKind::AddedOptional
        };
        push(out, &format!("{parent}/{}", n.name), kind);
    }
}

fn diff_field(old: &FieldDef, new: &FieldDef, path: &str, check_required: bool, out: &mut Vec<SchemaChange>) {
    if old.kind != new.kind {
        push(out, path, ChangeKind::KindChanged);
        return;
    }
    if check_required && old.required != new.required {
        let kind = if new.required {
            ChangeKind::ConstraintTightened
        } else {
            ChangeKind::ConstraintRelaxed
        };
        push(out, path, kind);
    }
    let empty = Default::default();
    let oc = old.constraints.as_ref().unwrap_or(&empty);
    let nc = new.constraints.as_ref().unwrap_or(&empty);
    if let Some(kind) = bound_change(oc.min.as_ref(), nc.min.as_ref(), true) {
        push(out, path, kind);
    }
    if let Some(kind) = bound_change(oc.max.as_ref(), nc.max.as_ref(), false) {
        push(out, path, kind);
    }
    match (&oc.pattern, &nc.pattern) {
        (None, None) => {}
        (Some(_), None) => push(out, path, ChangeKind::ConstraintRelaxed),
        (Some(a), Some(b)) if a == b => {}
        _ => push(out, path, ChangeKind::ConstraintTightened),
    }
    if let Some(kind) = enum_change(oc.allowed.as_deref(), nc.allowed.as_deref()) {
        push(out, path, kind);
    }
    match (old.element(), new.element()) {
        (Some(oe), Some(ne)) => diff_field(oe, ne, &format!("{path}/*"), false, out),
        _ => diff_fields(&old.children, &new.children, path, out),
    }
}

fn bound_change(old: Option<&Number>, new: Option<&Number>, is_min: bool) -> Option<ChangeKind> {
    match (old, new) {
        (None, None) => None,
        (None, Some(_)) => Some(ChangeKind::ConstraintTightened),
        (Some(_), None) => Some(ChangeKind::ConstraintRelaxed),
        (Some(o), Some(n)) => {
            let (o, n) = (decimal_of(o), decimal_of(n));
            if o == n {
                None
            } else if (n > o) == is_min {
                Some(ChangeKind::ConstraintTightened)
            } else {
                Some(ChangeKind::ConstraintRelaxed)
            }
        }
    }
}

fn enum_change(old: Option<&[Value]>, new: Option<&[Value]>) -> Option<ChangeKind> {
    let subset = |a: &[Value], b: &[Value]| a.iter().all(|x| b.iter().any(|y| literal_equals(x, y)));
    match (old, new) {
        (None, None) => None,
        (None, Some(_)) => Some(ChangeKind::ConstraintTightened),
        (Some(_), None) => Some(ChangeKind::ConstraintRelaxed),
        (Some(o), Some(n)) => match (subset(o, n), subset(n, o)) {
            (true, true) => None,
            (true, false) => Some(ChangeKind::ConstraintRelaxed),
            _ => Some(ChangeKind::ConstraintTightened),
        },
    }
}

fn push(out: &mut Vec<SchemaChange>, path: &str, change: ChangeKind) {
    out.push(SchemaChange {
        path: path.to_owned(),
        change,
    });
}
