use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::ItemId;
use crate::item::{CollectionDecl, Property};
use crate::workflow::{DefRef, EventPayload};

/// One committed change to an item. Events are append-only and totally
/// ordered per item by `seq`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub item: ItemId,
    pub seq: u64,
    /// UTC nanoseconds since the Unix epoch.
    pub timestamp: u64,
    pub agent: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventBody {
    Created(Created),
    PropertyChanged {
        name: String,
        value: Value,
    },
    CollectionChanged {
        collection: String,
        slot: u32,
        member: Option<ItemId>,
    },
    Transition(EventPayload),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    /// Item-description the item was created from; `None` for the items
    /// backing descriptions themselves.
    pub description: Option<DefRef>,
    pub properties: Vec<Property>,
    pub collections: Vec<CollectionDecl>,
    pub pinned: BTreeMap<String, u64>,
    pub workflow: DefRef,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Created,
    PropertyChanged,
    CollectionChanged,
    Transition,
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Created" => Ok(EventKind::Created),
            "PropertyChanged" => Ok(EventKind::PropertyChanged),
            "CollectionChanged" => Ok(EventKind::CollectionChanged),
            "Transition" => Ok(EventKind::Transition),
            _ => Err(format!("unknown event kind `{s}`")),
        }
    }
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self.body {
            EventBody::Created(_) => EventKind::Created,
            EventBody::PropertyChanged { .. } => EventKind::PropertyChanged,
            EventBody::CollectionChanged { .. } => EventKind::CollectionChanged,
            EventBody::Transition(_) => EventKind::Transition,
        }
    }

    pub fn transition(&self) -> Option<&EventPayload> {
        match &self.body {
            EventBody::Transition(p) => Some(p),
            _ => None,
        }
    }
}

/// Conjunctive filter over an item's history. Empty filter matches all.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EventKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    /// Inclusive lower bound, UTC nanoseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<u64>,
    /// Inclusive upper bound, UTC nanoseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<u64>,
}

impl HistoryFilter {
    pub fn matches(&self, e: &Event) -> bool {
        if self.kind.is_some_and(|k| k != e.kind()) {
            return false;
        }
        if let Some(schema) = &self.schema {
            let hit = e
                .transition()
                .and_then(|t| t.schema.as_ref())
                .is_some_and(|s| &s.name == schema);
            if !hit {
                return false;
            }
        }
        self.from.is_none_or(|f| e.timestamp >= f) && self.to.is_none_or(|t| e.timestamp <= t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::IdGenerator;
    use crate::workflow::SchemaRef;
    use serde_json::json;

    fn transition(seq: u64, ts: u64, schema: Option<&str>) -> Event {
        Event {
            item: IdGenerator::Seeded(0).generate(0),
            seq,
            timestamp: ts,
            agent: "ann".into(),
            body: EventBody::Transition(EventPayload {
                step_path: "Measure".into(),
                transition: "Complete".into(),
                schema: schema.map(|s| SchemaRef {
                    name: s.into(),
                    version: 0,
                }),
                outcome_ref: schema.map(|_| "ab".repeat(32)),
                outcome: None,
                state_before: "Active".into(),
                state_after: "Done".into(),
            }),
        }
    }

    #[test]
    fn events_round_trip_flat() {
        let e = transition(3, 10, Some("Measurement"));
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], json!("Transition"));
        assert_eq!(v["step_path"], json!("Measure"));
        assert_eq!(serde_json::from_value::<Event>(v).unwrap(), e);

        let p = Event {
            body: EventBody::PropertyChanged {
                name: "thickness".into(),
                value: serde_json::from_str("0.7250").unwrap(),
            },
            ..e
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("0.7250"));
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), p);
    }

    #[test]
    fn filter_is_conjunctive() {
        let a = transition(1, 10, Some("Measurement"));
        let b = transition(2, 20, None);
        let f = HistoryFilter {
            schema: Some("Measurement".into()),
            from: Some(5),
            ..Default::default()
        };
        assert!(f.matches(&a));
        assert!(!f.matches(&b));
        let f = HistoryFilter {
            kind: Some(EventKind::Transition),
            to: Some(15),
            ..Default::default()
        };
        assert!(f.matches(&a));
        assert!(!f.matches(&b));
        assert!(HistoryFilter::default().matches(&b));
    }
}
