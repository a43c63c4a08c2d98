#![allow(dead_code)]

pub mod process;
pub mod schemas;

use descrix_core::item::Property;
use descrix_core::kernel::{Agent, Kernel, KernelConfig};
use descrix_core::{DescriptionKind, IdGenerator, ItemId};
use serde_json::{json, Value};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub kernel: Kernel,
}

pub fn config(dir: &std::path::Path) -> KernelConfig {
    let mut c = KernelConfig::new(dir);
    c.sync = false;
    c.ids = IdGenerator::Seeded(7);
    c
}

pub fn open(dir: &std::path::Path) -> Kernel {
    Kernel::open(config(dir)).expect("kernel opens")
}

pub fn empty() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let kernel = open(dir.path());
    Fixture { dir, kernel }
}

pub fn admin() -> Agent {
    Agent::new("admin", &["admin"])
}

pub fn operator() -> Agent {
    Agent::new("ann", &["operator"])
}

pub fn publish(k: &Kernel, kind: DescriptionKind, payload: Value) -> u64 {
    let name = payload["name"].as_str().unwrap().to_owned();
    k.publish(&admin(), kind, &name, &payload, false).expect("publish").version
}

pub fn characterisation_v0() -> Value {
    json!({"name": "Characterisation", "fields": [
        {"name": "weight", "kind": "decimal", "required": true, "constraints": {"min": 0}},
        {"name": "status", "kind": "string", "required": true, "constraints": {"enum": ["pass", "fail"]}}
    ]})
}

pub fn single_step(name: &str, activity: &str, schema: &str, role: Option<&str>) -> Value {
    let mut node = json!({"id": activity, "type": "Elementary", "schema": schema, "state_machine": "Elementary"});
    if let Some(r) = role {
        node["role"] = json!(r);
    }
    json!({"name": name, "nodes": [
        {"id": "start", "type": "Start"}, node, {"id": "end", "type": "End"}
    ], "edges": [{"from": "start", "to": activity}, {"from": activity, "to": "end"}]})
}

pub fn item_description(name: &str, workflow: &str, defaults: Value, collections: Value) -> Value {
    json!({"name": name, "workflow_def": workflow, "property_defaults": defaults, "collection_decls": collections})
}

/// Publishes Characterisation, a one-step workflow and the Crystal, Cell and
/// Module item-descriptions. Modules hold three cells.
pub fn standard() -> Fixture {
    let f = empty();
    install_standard(&f.kernel);
    f
}

pub fn install_standard(k: &Kernel) {
    publish(k, DescriptionKind::Schema, characterisation_v0());
    publish(k, DescriptionKind::WorkflowDef, single_step("Characterise", "Measure", "Characterisation", None));
    let crystal = item_description(
        "Crystal",
        "Characterise",
        json!([{"name": "Status", "value": "new", "mutable": true}]),
        json!([]),
    );
    publish(k, DescriptionKind::ItemDescription, crystal);
    publish(k, DescriptionKind::ItemDescription, item_description("Cell", "Characterise", json!([]), json!([])));
    let module = item_description(
        "Module",
        "Characterise",
        json!([]),
        json!([{"name": "cells", "member_type": "Cell", "slot_count": 3}]),
    );
    publish(k, DescriptionKind::ItemDescription, module);
}

pub fn create(k: &Kernel, desc: &str, name: &str) -> ItemId {
    k.create_item(&admin(), desc, None, name, Vec::<Property>::new()).expect("create").id
}

pub fn outcome(weight: &str, status: &str) -> Value {
    json!({"weight": serde_json::from_str::<Value>(weight).unwrap(), "status": status})
}

pub fn assert_replays(k: &Kernel, id: ItemId) {
    let live = k.item(id).unwrap();
    let replayed = k.replay(id).unwrap();
    assert_eq!(
        String::from_utf8(replayed.canonical_bytes()).unwrap(),
        String::from_utf8(live.canonical_bytes()).unwrap(),
        "replay diverged for {id}"
    );
}
