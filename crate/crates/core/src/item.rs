//! Items: identity, properties, slotted collections and the workflow instance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::to_canonical_bytes;
use crate::ids::ItemId;
use crate::workflow::WorkflowInstance;

pub const NAME_PROPERTY: &str = "Name";
pub const TYPE_PROPERTY: &str = "Type";
pub const RESERVED_PROPERTIES: [&str; 2] = [NAME_PROPERTY, TYPE_PROPERTY];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub value: Value,
    #[serde(default = "default_mutable")]
    pub mutable: bool,
}

fn default_mutable() -> bool {
    true
}

impl Property {
    pub fn new(name: impl Into<String>, value: impl Into<Value>, mutable: bool) -> Self {
        Property {
            name: name.into(),
            value: value.into(),
            mutable,
        }
    }
}

/// Declares a collection on an item-description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionDecl {
    pub name: String,
    /// Required `Type` of members.
    pub member_type: String,
    pub slot_count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub slot: u32,
    pub member: Option<ItemId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collection {
    pub name: String,
    pub member_type: String,
    pub slots: Vec<Slot>,
}

impl Collection {
    pub fn from_decl(decl: &CollectionDecl) -> Self {
        Collection {
            name: decl.name.clone(),
            member_type: decl.member_type.clone(),
            slots: (0..decl.slot_count).map(|slot| Slot { slot, member: None }).collect(),
        }
    }

    pub fn members(&self) -> impl Iterator<Item = (u32, ItemId)> + '_ {
        self.slots.iter().filter_map(|s| s.member.map(|m| (s.slot, m)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub id: ItemId,
    pub properties: BTreeMap<String, Property>,
    pub collections: BTreeMap<String, Collection>,
    /// Description name to the version this item is bound to.
    pub pinned: BTreeMap<String, u64>,
    pub workflow: WorkflowInstance,
}

/// Wire form of an item. Properties and collections are listed in name order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: ItemId,
    pub properties: Vec<Property>,
    pub collections: Vec<Collection>,
    pub pinned: BTreeMap<String, u64>,
    pub workflow: WorkflowInstance,
}

impl Item {
    pub fn name(&self) -> Option<&str> {
        self.properties.get(NAME_PROPERTY).and_then(|p| p.value.as_str())
    }

    pub fn item_type(&self) -> Option<&str> {
        self.properties.get(TYPE_PROPERTY).and_then(|p| p.value.as_str())
    }

    pub fn view(&self) -> ItemView {
        ItemView {
            id: self.id,
            properties: self.properties.values().cloned().collect(),
            collections: self.collections.values().cloned().collect(),
            pinned: self.pinned.clone(),
            workflow: self.workflow.clone(),
        }
    }

    /// Canonical serialization. Two items with equal canonical bytes are the
    /// same state.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(&self.view())
    }

    pub fn members(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.collections.values().flat_map(|c| c.members().map(|(_, m)| m))
    }
}

impl From<ItemView> for Item {
    fn from(v: ItemView) -> Self {
        Item {
            id: v.id,
            properties: v.properties.into_iter().map(|p| (p.name.clone(), p)).collect(),
            collections: v.collections.into_iter().map(|c| (c.name.clone(), c)).collect(),
            pinned: v.pinned,
            workflow: v.workflow,
        }
    }
}

pub fn validate_property_name(name: &str) -> Result<(), String> {
    if name.is_empty() {
        return Err("property names must not be empty".into());
    }
    if name.chars().any(|c| c.is_control() || c == '/') {
        return Err(format!("invalid property name `{name}`"));
    }
    Ok(())
}
