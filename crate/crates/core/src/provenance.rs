//! Traceability queries and PROV export.
//!
//! The export follows the PROV-JSON layout: `entity`, `activity` and `agent`
//! sections plus one section per relation kind, every map keyed by
//! identifier. Items keep their bare ids (the default namespace is
//! `urn:uuid:`); events, blobs and agents use the `event:`, `blob:` and
//! `agent:` prefixes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ids::ItemId;
use crate::kernel::{Kernel, KernelError, Result};
use crate::store::{Event, EventBody, HistoryFilter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DerivationEdge {
    pub component: ItemId,
    pub assembly: ItemId,
    /// Seq of the assembly's CollectionChanged event that made the link.
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationGraph {
    pub root: ItemId,
    pub nodes: Vec<ItemId>,
    pub edges: Vec<DerivationEdge>,
}

pub type Attributes = BTreeMap<String, Value>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvDocument {
    pub prefix: BTreeMap<String, String>,
    #[serde(default)]
    pub entity: BTreeMap<String, Attributes>,
    #[serde(default)]
    pub activity: BTreeMap<String, Attributes>,
    #[serde(default)]
    pub agent: BTreeMap<String, Attributes>,
    #[serde(default)]
    pub used: BTreeMap<String, Attributes>,
    #[serde(default, rename = "wasGeneratedBy")]
    pub was_generated_by: BTreeMap<String, Attributes>,
    #[serde(default, rename = "wasAssociatedWith")]
    pub was_associated_with: BTreeMap<String, Attributes>,
    #[serde(default, rename = "wasAttributedTo")]
    pub was_attributed_to: BTreeMap<String, Attributes>,
    #[serde(default, rename = "wasDerivedFrom")]
    pub was_derived_from: BTreeMap<String, Attributes>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvDefect {
    pub relation: String,
    pub id: String,
    pub message: String,
}

#[derive(Clone, Copy)]
enum Section {
    Entity,
    Activity,
    Agent,
}

/// Relation kinds with their endpoint attributes and the section each
/// endpoint must live in.
const RELATIONS: [(&str, [(&str, Section); 2]); 5] = [
    ("used", [("prov:activity", Section::Activity), ("prov:entity", Section::Entity)]),
    ("wasGeneratedBy", [("prov:entity", Section::Entity), ("prov:activity", Section::Activity)]),
    ("wasAssociatedWith", [("prov:activity", Section::Activity), ("prov:agent", Section::Agent)]),
    ("wasAttributedTo", [("prov:entity", Section::Entity), ("prov:agent", Section::Agent)]),
    (
        "wasDerivedFrom",
        [("prov:generatedEntity", Section::Entity), ("prov:usedEntity", Section::Entity)],
    ),
];

impl ProvDocument {
    pub fn empty() -> Self {
        let prefix = [
            ("default", "urn:uuid:"),
            ("prov", "http://www.w3.org/ns/prov#"),
            ("xsd", "http://www.w3.org/2001/XMLSchema#"),
            ("descrix", "urn:descrix:ns#"),
            ("event", "urn:descrix:event:"),
            ("blob", "urn:descrix:blob:sha256:"),
            ("agent", "urn:descrix:agent:"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
        ProvDocument {
            prefix,
            ..Default::default()
        }
    }

    pub fn relation(&self, name: &str) -> Option<&BTreeMap<String, Attributes>> {
        Some(match name {
            "used" => &self.used,
            "wasGeneratedBy" => &self.was_generated_by,
            "wasAssociatedWith" => &self.was_associated_with,
            "wasAttributedTo" => &self.was_attributed_to,
            "wasDerivedFrom" => &self.was_derived_from,
            _ => return None,
        })
    }

    fn section(&self, s: Section) -> &BTreeMap<String, Attributes> {
        match s {
            Section::Entity => &self.entity,
            Section::Activity => &self.activity,
            Section::Agent => &self.agent,
        }
    }

    pub fn relation_count(&self) -> usize {
        RELATIONS.iter().map(|(r, _)| self.relation(r).map_or(0, BTreeMap::len)).sum()
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub fn event_id(item: ItemId, seq: u64) -> String {
    format!("event:{item}:{seq}")
}

pub fn blob_id(hash: &str) -> String {
    format!("blob:{hash}")
}

pub fn agent_id(name: &str) -> String {
    format!("agent:{name}")
}

fn timestamp(ns: u64) -> String {
    let dt: DateTime<Utc> = DateTime::from_timestamp_nanos(ns as i64);
    dt.to_rfc3339_opts(SecondsFormat::Nanos, true)
}

fn relation(pairs: [(&str, String); 2]) -> Attributes {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), Value::String(v))).collect()
}

impl Kernel {
    /// Full history of an item, in seq order.
    pub fn trace(&self, id: ItemId) -> Result<Vec<Arc<Event>>> {
        self.history(id, &HistoryFilter::default())
    }

    /// Everything the item was assembled from, transitively, including the
    /// item itself.
    pub fn trace_upstream(&self, id: ItemId) -> Result<DerivationGraph> {
        let mut nodes = BTreeSet::from([id]);
        let mut edges = Vec::new();
        let mut queue = VecDeque::from([id]);
        while let Some(assembly) = queue.pop_front() {
            for (component, seq) in self.links(assembly)? {
                edges.push(DerivationEdge {
                    component,
                    assembly,
                    seq,
                });
                if nodes.insert(component) {
                    queue.push_back(component);
                }
            }
        }
        edges.sort();
        Ok(DerivationGraph {
            root: id,
            nodes: nodes.into_iter().collect(),
            edges,
        })
    }

    /// Current members of an item's collections with the seq of the event
    /// that placed each one.
    fn links(&self, assembly: ItemId) -> Result<Vec<(ItemId, u64)>> {
        let item = self.item(assembly)?;
        let mut placed: HashMap<(String, u32), u64> = HashMap::new();
        for e in self.store().events(assembly)? {
            if let EventBody::CollectionChanged { collection, slot, .. } = &e.body {
                placed.insert((collection.clone(), *slot), e.seq);
            }
        }
        let mut out = Vec::new();
        for c in item.collections.values() {
            for (slot, member) in c.members() {
                out.push((member, placed[&(c.name.clone(), slot)]));
            }
        }
        Ok(out)
    }

    /// Exports `items` as a PROV document. Items referenced through
    /// collections but not in `items` appear as external stubs.
    pub fn export_prov(&self, items: &[ItemId]) -> Result<ProvDocument> {
        let mut doc = ProvDocument::empty();
        let mut ids: Vec<ItemId> = items.to_vec();
        ids.sort();
        ids.dedup();
        for &id in &ids {
            if !self.contains(id) {
                return Err(KernelError::UnknownItem(id));
            }
        }
        for &id in &ids {
            let item = self.item(id)?;
            doc.entity.insert(
                id.to_string(),
                [
                    ("prov:type".to_owned(), json!("descrix:Item")),
                    ("descrix:name".to_owned(), json!(item.name().unwrap_or_default())),
                    ("descrix:type".to_owned(), json!(item.item_type().unwrap_or_default())),
                ]
                .into_iter()
                .collect(),
            );
        }
        for &id in &ids {
            for e in self.trace(id)? {
                match &e.body {
                    EventBody::Transition(t) => {
                        let act = event_id(id, e.seq);
                        let agent = agent_id(&e.agent);
                        let mut attrs: Attributes = [
                            ("prov:type", json!("descrix:Transition")),
                            ("prov:startTime", json!(timestamp(e.timestamp))),
                            ("prov:endTime", json!(timestamp(e.timestamp))),
                            ("descrix:item", json!(id.to_string())),
                            ("descrix:seq", json!(e.seq)),
                            ("descrix:stepPath", json!(t.step_path)),
                            ("descrix:transition", json!(t.transition)),
                            ("descrix:stateBefore", json!(t.state_before)),
                            ("descrix:stateAfter", json!(t.state_after)),
                        ]
                        .into_iter()
                        .map(|(k, v)| (k.to_owned(), v))
                        .collect();
                        if let Some(s) = &t.schema {
                            attrs.insert("descrix:schema".into(), json!(s.name));
                            attrs.insert("descrix:schemaVersion".into(), json!(s.version));
                        }
                        doc.activity.insert(act.clone(), attrs);
                        doc.agent
                            .entry(agent.clone())
                            .or_insert_with(|| [("descrix:name".to_owned(), json!(e.agent))].into_iter().collect());
                        let suffix = format!("{id}:{}", e.seq);
                        doc.was_associated_with.insert(
                            format!("_:assoc:{suffix}"),
                            relation([("prov:activity", act.clone()), ("prov:agent", agent.clone())]),
                        );
                        if let Some(hash) = &t.outcome_ref {
                            let blob = blob_id(hash);
                            doc.entity.entry(blob.clone()).or_insert_with(|| {
                                let mut a: Attributes = [
                                    ("prov:type".to_owned(), json!("descrix:Outcome")),
                                    ("descrix:sha256".to_owned(), json!(hash)),
                                ]
                                .into_iter()
                                .collect();
                                if let Some(s) = &t.schema {
                                    a.insert("descrix:schema".into(), json!(s.name));
                                }
                                a
                            });
                            doc.was_generated_by.insert(
                                format!("_:gen:{suffix}"),
                                relation([("prov:entity", blob.clone()), ("prov:activity", act)]),
                            );
                            doc.was_attributed_to.insert(
                                format!("_:attr:{suffix}"),
                                relation([("prov:entity", blob), ("prov:agent", agent)]),
                            );
                        }
                    }
                    EventBody::CollectionChanged {
                        member: Some(member), ..
                    } => {
                        let component = member.to_string();
                        if ids.binary_search(member).is_err() {
                            doc.entity.entry(component.clone()).or_insert_with(|| {
                                [
                                    ("prov:type".to_owned(), json!("descrix:Item")),
                                    ("descrix:external".to_owned(), json!(true)),
                                ]
                                .into_iter()
                                .collect()
                            });
                        }
                        doc.was_derived_from.insert(
                            format!("_:deriv:{id}:{}", e.seq),
                            relation([
                                ("prov:generatedEntity", id.to_string()),
                                ("prov:usedEntity", component),
                            ]),
                        );
                    }
                    _ => {}
                }
            }
        }
        Ok(doc)
    }
}

/// Checks that every relation endpoint names a record of the right section
/// and that `wasDerivedFrom` is acyclic. An empty result means well-formed.
pub fn verify_prov(doc: &ProvDocument) -> Vec<ProvDefect> {
    let mut defects = Vec::new();
    for (name, endpoints) in RELATIONS {
        let Some(section) = doc.relation(name) else { continue };
        for (id, attrs) in section {
            for (attr, target) in endpoints {
                match attrs.get(attr).and_then(Value::as_str) {
                    None => defects.push(ProvDefect {
                        relation: name.to_owned(),
                        id: id.clone(),
                        message: format!("missing `{attr}`"),
                    }),
                    Some(r) if !doc.section(target).contains_key(r) => defects.push(ProvDefect {
                        relation: name.to_owned(),
                        id: id.clone(),
                        message: format!("`{attr}` refers to unknown `{r}`"),
                    }),
                    Some(_) => {}
                }
            }
        }
    }

    let mut succ: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
    for (id, attrs) in &doc.was_derived_from {
        if let (Some(g), Some(u)) = (
            attrs.get("prov:generatedEntity").and_then(Value::as_str),
            attrs.get("prov:usedEntity").and_then(Value::as_str),
        ) {
            succ.entry(g).or_default().push((u, id.as_str()));
        }
    }
    // Iterative three-colour DFS; each back edge closes one cycle.
    let mut colour: HashMap<&str, u8> = HashMap::new();
    for &root in succ.keys() {
        if colour.contains_key(root) {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
        colour.insert(root, 1);
        while let Some((node, next)) = stack.pop() {
            let out = succ.get(node).map_or(&[][..], Vec::as_slice);
            if next < out.len() {
                stack.push((node, next + 1));
                let (to, rel) = out[next];
                match colour.get(to) {
                    None => {
                        colour.insert(to, 1);
                        stack.push((to, 0));
                    }
                    Some(1) => defects.push(ProvDefect {
                        relation: "wasDerivedFrom".into(),
                        id: rel.to_owned(),
                        message: format!("derivation cycle through `{to}`"),
                    }),
                    Some(_) => {}
                }
            } else {
                colour.insert(node, 2);
            }
        }
    }
    defects
}
