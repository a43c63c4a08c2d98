//! Versioned descriptions: schemas, state machines, workflow definitions and
//! item-descriptions.
//!
//! The registry here is an in-memory index. Each description is backed by an
//! item whose publication events carry the payloads; the kernel rebuilds the
//! registry from those events on startup.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::canonicalize;
use crate::ids::ItemId;
use crate::item::{validate_property_name, CollectionDecl, Property, RESERVED_PROPERTIES};
use crate::lifecycle::{LifecycleError, StateMachineDef};
use crate::schema::{diff_schemas, parse_schema, CompatibilityReport, SchemaDef, SchemaError};
use crate::workflow::{
    compile_workflow, AnyReference, CompiledComposite, CompositeActivityDef, DescriptionSource, LookupError,
    ReferenceCheck, WorkflowError,
};

/// `Type` property of the items that back descriptions.
pub const DESCRIPTION_ITEM_TYPE: &str = "Description";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DescriptionKind {
    Schema,
    StateMachine,
    WorkflowDef,
    ItemDescription,
}

impl DescriptionKind {
    /// Dependency order: a kind may only reference kinds earlier in this list.
    pub const ALL: [DescriptionKind; 4] = [
        DescriptionKind::StateMachine,
        DescriptionKind::Schema,
        DescriptionKind::WorkflowDef,
        DescriptionKind::ItemDescription,
    ];

    /// URL and bundle-directory form.
    pub fn slug(self) -> &'static str {
        match self {
            DescriptionKind::Schema => "schema",
            DescriptionKind::StateMachine => "state-machine",
            DescriptionKind::WorkflowDef => "workflow-def",
            DescriptionKind::ItemDescription => "item-description",
        }
    }

    pub fn publish_rank(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).expect("listed")
    }
}

impl fmt::Display for DescriptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DescriptionKind::Schema => "Schema",
            DescriptionKind::StateMachine => "StateMachine",
            DescriptionKind::WorkflowDef => "WorkflowDef",
            DescriptionKind::ItemDescription => "ItemDescription",
        };
        f.write_str(s)
    }
}

impl FromStr for DescriptionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.slug() == s || k.to_string() == s)
            .ok_or_else(|| format!("unknown description kind `{s}`"))
    }
}

/// Payload of an item-description: what `create_item` instantiates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemDescription {
    /// Optional; must match the published name when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub workflow_def: String,
    #[serde(default)]
    pub property_defaults: Vec<Property>,
    #[serde(default)]
    pub collection_decls: Vec<CollectionDecl>,
}

#[derive(Clone, Debug)]
pub enum ParsedPayload {
    Schema(Arc<SchemaDef>),
    StateMachine(Arc<StateMachineDef>),
    Workflow(Arc<CompiledComposite>),
    Item(Arc<ItemDescription>),
}

#[derive(Clone, Debug, Serialize)]
pub struct DescriptionVersion {
    pub kind: DescriptionKind,
    pub name: String,
    pub version: u64,
    pub payload: Value,
    /// UTC nanoseconds.
    pub published_at: u64,
    pub publisher: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compatibility: Option<CompatibilityReport>,
    #[serde(skip)]
    pub parsed: ParsedPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionSummary {
    pub version: u64,
    pub published_at: u64,
    /// `None` for non-schema kinds and for the first version.
    pub compatible: Option<bool>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PayloadError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    StateMachine(#[from] LifecycleError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("invalid item-description: {0}")]
    ItemDescription(String),
    #[error("payload names `{found}` but is published as `{expected}`")]
    NameMismatch { expected: String, found: String },
}

impl PayloadError {
    pub fn code(&self) -> &'static str {
        match self {
            PayloadError::Schema(e) => e.code(),
            PayloadError::StateMachine(e) => e.code(),
            PayloadError::Workflow(e) => e.code(),
            PayloadError::ItemDescription(_) => "InvalidItemDescription",
            PayloadError::NameMismatch { .. } => "NameMismatch",
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DescriptionError {
    #[error("invalid {kind} payload for `{name}`: {source}")]
    PayloadInvalid {
        kind: DescriptionKind,
        name: String,
        source: PayloadError,
    },
    #[error("`{name}` already exists as a {existing}")]
    KindMismatch { name: String, existing: DescriptionKind },
    #[error("unknown description `{0}`")]
    UnknownDescription(String),
    #[error("description `{name}` has no version {version}")]
    UnknownVersion { name: String, version: u64 },
    #[error("`{0}` is a reserved description name")]
    ReservedName(String),
    #[error("publishing `{name}` would break compatibility")]
    BreakingChange { name: String, report: CompatibilityReport },
}

impl DescriptionError {
    pub fn code(&self) -> &'static str {
        match self {
            DescriptionError::PayloadInvalid { .. } => "PayloadInvalid",
            DescriptionError::KindMismatch { .. } => "KindMismatch",
            DescriptionError::UnknownDescription(_) => "UnknownDescription",
            DescriptionError::UnknownVersion { .. } => "UnknownVersion",
            DescriptionError::ReservedName(_) => "ReservedName",
            DescriptionError::BreakingChange { .. } => "BreakingChange",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescriptionEntry {
    pub kind: DescriptionKind,
    pub name: String,
    pub backing_item: ItemId,
    pub versions: Vec<Arc<DescriptionVersion>>,
}

/// A payload that passed validation and is ready to commit as the next version.
#[derive(Clone, Debug)]
pub struct PreparedPublish {
    pub kind: DescriptionKind,
    pub name: String,
    pub version: u64,
    pub payload: Value,
    pub parsed: ParsedPayload,
    pub compatibility: Option<CompatibilityReport>,
}

#[derive(Clone, Debug, Default)]
pub struct DescriptionRegistry {
    entries: BTreeMap<String, DescriptionEntry>,
}

impl DescriptionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, name: &str) -> Option<&DescriptionEntry> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = &DescriptionEntry> {
        self.entries.values()
    }

    pub fn kind_of(&self, name: &str) -> Option<DescriptionKind> {
        self.entries.get(name).map(|e| e.kind)
    }

    /// Validates `payload` as the next version of (`kind`, `name`) without
    /// changing the registry.
    pub fn prepare(&self, kind: DescriptionKind, name: &str, payload: &Value) -> Result<PreparedPublish, DescriptionError> {
        if name.is_empty() || name.contains('/') || name.starts_with('$') || name == DESCRIPTION_ITEM_TYPE {
            return Err(DescriptionError::ReservedName(name.to_owned()));
        }
        let existing = self.entries.get(name);
        if let Some(e) = existing {
            if e.kind != kind {
                return Err(DescriptionError::KindMismatch {
                    name: name.to_owned(),
                    existing: e.kind,
                });
            }
        }
        let payload = canonicalize(payload);
        let invalid = |source: PayloadError| DescriptionError::PayloadInvalid {
            kind,
            name: name.to_owned(),
            source,
        };
        let parsed = parse_payload(kind, name, &payload, self).map_err(invalid)?;
        let compatibility = match (&parsed, existing.and_then(|e| e.versions.last())) {
            (ParsedPayload::Schema(new), Some(prev)) => match &prev.parsed {
                ParsedPayload::Schema(old) => Some(diff_schemas(old, new).map_err(|e| invalid(e.into()))?),
                _ => None,
            },
            _ => None,
        };
        Ok(PreparedPublish {
            kind,
            name: name.to_owned(),
            version: existing.map_or(0, |e| e.versions.len() as u64),
            payload,
            parsed,
            compatibility,
        })
    }

    pub fn commit(
        &mut self,
        prepared: PreparedPublish,
        backing_item: ItemId,
        published_at: u64,
        publisher: &str,
    ) -> Arc<DescriptionVersion> {
        let entry = self
            .entries
            .entry(prepared.name.clone())
            .or_insert_with(|| DescriptionEntry {
                kind: prepared.kind,
                name: prepared.name.clone(),
                backing_item,
                versions: Vec::new(),
            });
        debug_assert_eq!(entry.versions.len() as u64, prepared.version);
        let v = Arc::new(DescriptionVersion {
            kind: prepared.kind,
            name: prepared.name,
            version: prepared.version,
            payload: prepared.payload,
            published_at,
            publisher: publisher.to_owned(),
            compatibility: prepared.compatibility,
            parsed: prepared.parsed,
        });
        entry.versions.push(v.clone());
        v
    }

    /// Re-registers a version read back from storage. Reference checks are
    /// skipped: they held when the version was first published.
    pub fn restore(
        &mut self,
        kind: DescriptionKind,
        name: &str,
        payload: Value,
        backing_item: ItemId,
        published_at: u64,
        publisher: &str,
    ) -> Result<Arc<DescriptionVersion>, DescriptionError> {
        let parsed = parse_payload(kind, name, &payload, &AnyReference).map_err(|source| {
            DescriptionError::PayloadInvalid {
                kind,
                name: name.to_owned(),
                source,
            }
        })?;
        let compatibility = match (&parsed, self.entries.get(name).and_then(|e| e.versions.last())) {
            (ParsedPayload::Schema(new), Some(prev)) => match &prev.parsed {
                ParsedPayload::Schema(old) => diff_schemas(old, new).ok(),
                _ => None,
            },
            _ => None,
        };
        let version = self.entries.get(name).map_or(0, |e| e.versions.len() as u64);
        Ok(self.commit(
            PreparedPublish {
                kind,
                name: name.to_owned(),
                version,
                payload,
                parsed,
                compatibility,
            },
            backing_item,
            published_at,
            publisher,
        ))
    }

    pub fn get(
        &self,
        kind: DescriptionKind,
        name: &str,
        version: Option<u64>,
    ) -> Result<Arc<DescriptionVersion>, DescriptionError> {
        let entry = self
            .entries
            .get(name)
            .filter(|e| e.kind == kind)
            .ok_or_else(|| DescriptionError::UnknownDescription(name.to_owned()))?;
        match version {
            None => Ok(entry.versions.last().expect("entries hold at least one version").clone()),
            Some(v) => entry
                .versions
                .get(v as usize)
                .cloned()
                .ok_or_else(|| DescriptionError::UnknownVersion {
                    name: name.to_owned(),
                    version: v,
                }),
        }
    }

    pub fn list_versions(&self, kind: DescriptionKind, name: &str) -> Result<Vec<VersionSummary>, DescriptionError> {
        let entry = self
            .entries
            .get(name)
            .filter(|e| e.kind == kind)
            .ok_or_else(|| DescriptionError::UnknownDescription(name.to_owned()))?;
        Ok(entry
            .versions
            .iter()
            .map(|v| VersionSummary {
                version: v.version,
                published_at: v.published_at,
                compatible: v.compatibility.as_ref().map(|c| c.compatible),
            })
            .collect())
    }

    fn lookup(&self, kind: DescriptionKind, name: &str, version: Option<u64>) -> Result<Arc<DescriptionVersion>, LookupError> {
        self.get(kind, name, version).map_err(|e| match e {
            DescriptionError::UnknownVersion { .. } => LookupError::UnknownVersion,
            _ => LookupError::UnknownName,
        })
    }
}

impl ReferenceCheck for DescriptionRegistry {
    fn exists(&self, kind: DescriptionKind, name: &str) -> bool {
        self.kind_of(name) == Some(kind)
    }
}

impl DescriptionSource for DescriptionRegistry {
    fn schema(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<SchemaDef>), LookupError> {
        let v = self.lookup(DescriptionKind::Schema, name, version)?;
        match &v.parsed {
            ParsedPayload::Schema(s) => Ok((v.version, s.clone())),
            _ => Err(LookupError::UnknownName),
        }
    }

    fn state_machine(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<StateMachineDef>), LookupError> {
        let v = self.lookup(DescriptionKind::StateMachine, name, version)?;
        match &v.parsed {
            ParsedPayload::StateMachine(s) => Ok((v.version, s.clone())),
            _ => Err(LookupError::UnknownName),
        }
    }

    fn workflow(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<CompiledComposite>), LookupError> {
        let v = self.lookup(DescriptionKind::WorkflowDef, name, version)?;
        match &v.parsed {
            ParsedPayload::Workflow(w) => Ok((v.version, w.clone())),
            _ => Err(LookupError::UnknownName),
        }
    }
}

fn parse_payload(
    kind: DescriptionKind,
    name: &str,
    payload: &Value,
    refs: &dyn ReferenceCheck,
) -> Result<ParsedPayload, PayloadError> {
    let check_name = |found: &str| {
        if found == name {
            Ok(())
        } else {
            Err(PayloadError::NameMismatch {
                expected: name.to_owned(),
                found: found.to_owned(),
            })
        }
    };
    Ok(match kind {
        DescriptionKind::Schema => {
            let s = parse_schema(payload)?;
            check_name(&s.name)?;
            ParsedPayload::Schema(Arc::new(s))
        }
        DescriptionKind::StateMachine => {
            let sm = StateMachineDef::parse(payload)?;
            check_name(&sm.name)?;
            ParsedPayload::StateMachine(Arc::new(sm))
        }
        DescriptionKind::WorkflowDef => {
            let def = CompositeActivityDef::parse(payload)?;
            check_name(&def.name)?;
            ParsedPayload::Workflow(Arc::new(compile_workflow(&def, refs)?))
        }
        DescriptionKind::ItemDescription => {
            let d: ItemDescription =
                serde_json::from_value(payload.clone()).map_err(|e| PayloadError::ItemDescription(e.to_string()))?;
            if let Some(n) = &d.name {
                check_name(n)?;
            }
            if !refs.exists(DescriptionKind::WorkflowDef, &d.workflow_def) {
                return Err(WorkflowError::UnknownReference {
                    kind: DescriptionKind::WorkflowDef.to_string(),
                    name: d.workflow_def.clone(),
                }
                .into());
            }
            let mut seen = HashSet::new();
            for p in &d.property_defaults {
                validate_property_name(&p.name).map_err(PayloadError::ItemDescription)?;
                if RESERVED_PROPERTIES.contains(&p.name.as_str()) {
                    return Err(PayloadError::ItemDescription(format!("`{}` is set by the kernel", p.name)));
                }
                if !seen.insert(p.name.as_str()) {
                    return Err(PayloadError::ItemDescription(format!("duplicate property `{}`", p.name)));
                }
            }
            let mut seen = HashSet::new();
            for c in &d.collection_decls {
                if c.name.is_empty() || c.member_type.is_empty() || !seen.insert(c.name.as_str()) {
                    return Err(PayloadError::ItemDescription(format!("invalid collection `{}`", c.name)));
                }
            }
            ParsedPayload::Item(Arc::new(d))
        }
    })
}
