//! The kernel: items, descriptions and workflows over the event store.
//!
//! All mutations go through here. Each one validates against the current
//! snapshot, appends exactly one event (publication of a brand-new description
//! appends two) and then swaps in the new snapshot. Item state is never
//! written anywhere except as events, so `replay` can rebuild it from the log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{canonicalize, to_canonical_string};
use crate::description::{
    DescriptionError, DescriptionKind, DescriptionRegistry, DescriptionVersion, ParsedPayload, VersionSummary,
    DESCRIPTION_ITEM_TYPE,
};
use crate::ids::{IdGenerator, ItemId};
use crate::item::{
    validate_property_name, Collection, Item, Property, NAME_PROPERTY, RESERVED_PROPERTIES, TYPE_PROPERTY,
};
use crate::lifecycle::{Role, StateMachineDef, TransitionDef, DEFAULT_STATE_MACHINE};
use crate::schema::SchemaDef;
use crate::store::{Created, Event, EventBody, EventStore, HistoryFilter, RecoveryReport, StoreError, Viewpoint};
use crate::workflow::{
    compile_workflow, AnyReference, Authority, Blueprint, BuildOptions, CompiledComposite, CompositeActivityDef,
    DefRef, DescriptionSource, EnabledActivity, LookupError, OutcomeInput, SchemaRef, WorkflowError, WorkflowInstance,
};

/// Property holding the kind slug on description-backing items.
pub const KIND_PROPERTY: &str = "Kind";
/// Step path of the single activity on description-backing items.
pub const PUBLISH_STEP: &str = "publish";
pub const PUBLISH_TRANSITION: &str = "Publish";
pub const SYSTEM_AGENT: &str = "system";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub name: String,
    #[serde(default)]
    pub roles: Vec<String>,
}

impl Agent {
    pub fn new(name: impl Into<String>, roles: &[&str]) -> Self {
        Agent {
            name: name.into(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
        }
    }

    pub fn system() -> Self {
        Agent::new(SYSTEM_AGENT, &[])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("property `{0}` given twice")]
    DuplicateProperty(String),
    #[error("property `{0}` is set by the kernel")]
    ReservedProperty(String),
    #[error("{0}")]
    InvalidProperty(String),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("property `{0}` is immutable")]
    ImmutableProperty(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("collection `{collection}` has no slot {slot}")]
    SlotOutOfRange { collection: String, slot: u32 },
    #[error("slot {slot} of `{collection}` is already filled")]
    SlotOccupied { collection: String, slot: u32 },
    #[error("member has Type `{found}`, collection expects `{expected}`")]
    TypeMismatch { expected: String, found: String },
    #[error("assigning {member} into {item} would make the item contain itself")]
    CycleDetected { item: ItemId, member: ItemId },
    #[error("malformed path `{0}`")]
    MalformedPath(String),
    #[error("path `{0}` is not bound")]
    UnboundPath(String),
    #[error("path `{0}` is already bound")]
    PathAlreadyBound(String),
    #[error("item {0} backs a description and changes only through publication")]
    ReadOnlyItem(ItemId),
    #[error("entry {index} of the batch: {source}")]
    BatchEntry { index: usize, source: Box<KernelError> },
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Description(#[from] DescriptionError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl KernelError {
    pub fn code(&self) -> &'static str {
        match self {
            KernelError::UnknownItem(_) => "UnknownItem",
            KernelError::DuplicateProperty(_) => "DuplicateProperty",
            KernelError::ReservedProperty(_) => "ReservedProperty",
            KernelError::InvalidProperty(_) => "InvalidProperty",
            KernelError::UnknownProperty(_) => "UnknownProperty",
            KernelError::ImmutableProperty(_) => "ImmutableProperty",
            KernelError::UnknownCollection(_) => "UnknownCollection",
            KernelError::SlotOutOfRange { .. } => "SlotOutOfRange",
            KernelError::SlotOccupied { .. } => "SlotOccupied",
            KernelError::TypeMismatch { .. } => "TypeMismatch",
            KernelError::CycleDetected { .. } => "CycleDetected",
            KernelError::MalformedPath(_) => "MalformedPath",
            KernelError::UnboundPath(_) => "UnboundPath",
            KernelError::PathAlreadyBound(_) => "PathAlreadyBound",
            KernelError::ReadOnlyItem(_) => "ReadOnlyItem",
            KernelError::BatchEntry { source, .. } => source.code(),
            KernelError::Workflow(e) => e.code(),
            KernelError::Description(e) => e.code(),
            KernelError::Store(StoreError::UnknownItem(_)) => "UnknownItem",
            KernelError::Store(e) => e.code(),
        }
    }
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

#[derive(Clone, Debug)]
pub struct KernelConfig {
    pub data_dir: PathBuf,
    /// Flush every append to stable storage before acknowledging it.
    pub sync: bool,
    pub ids: IdGenerator,
    pub build: BuildOptions,
}

impl KernelConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        KernelConfig {
            data_dir: data_dir.into(),
            sync: true,
            ids: IdGenerator::Random,
            build: BuildOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PinEntry {
    pub kind: DescriptionKind,
    pub name: String,
    pub version: u64,
}

/// One entry on an agent's worklist.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub item: ItemId,
    pub item_name: String,
    pub item_type: String,
    pub step_path: String,
    pub state: String,
    pub allowed_transitions: Vec<String>,
    /// Schema an outcome must satisfy, for activities with outcome-bearing
    /// transitions.
    pub schema: Option<SchemaRef>,
    pub role: String,
}

/// Summary of a description for listings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionSummary {
    pub kind: DescriptionKind,
    pub name: String,
    pub latest: u64,
    pub backing_item: ItemId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishRequest {
    pub kind: DescriptionKind,
    pub name: String,
    pub payload: Value,
}

struct ItemCell {
    write: Mutex<()>,
    state: RwLock<Arc<Item>>,
    blueprint: Arc<Blueprint>,
    description: bool,
}

impl ItemCell {
    fn snapshot(&self) -> Arc<Item> {
        self.state.read().clone()
    }
}

/// The fixed lifecycle of description-backing items: one activity whose
/// self-looping `Publish` transition carries each new payload as its outcome.
struct PublicationSource {
    schema: Arc<SchemaDef>,
    state_machine: Arc<StateMachineDef>,
    workflow: Arc<CompiledComposite>,
}

impl PublicationSource {
    fn new() -> Self {
        let schema = SchemaDef {
            name: DESCRIPTION_ITEM_TYPE.into(),
            fields: Vec::new(),
        };
        let state_machine = StateMachineDef {
            name: DESCRIPTION_ITEM_TYPE.into(),
            states: ["Active".to_string()].into_iter().collect(),
            initial: "Active".into(),
            terminal: Default::default(),
            transitions: vec![TransitionDef {
                name: PUBLISH_TRANSITION.into(),
                from: "Active".into(),
                to: "Active".into(),
                requires_outcome: true,
                role: Role::Any,
            }],
        };
        let def = CompositeActivityDef::parse(&serde_json::json!({
            "name": DESCRIPTION_ITEM_TYPE,
            "nodes": [
                {"id": "start", "type": "Start"},
                {"id": PUBLISH_STEP, "type": "Elementary",
                 "schema": DESCRIPTION_ITEM_TYPE, "state_machine": DESCRIPTION_ITEM_TYPE},
                {"id": "end", "type": "End"}
            ],
            "edges": [{"from": "start", "to": PUBLISH_STEP}, {"from": PUBLISH_STEP, "to": "end"}]
        }))
        .expect("built-in workflow parses");
        PublicationSource {
            schema: Arc::new(schema),
            state_machine: Arc::new(state_machine),
            workflow: Arc::new(compile_workflow(&def, &AnyReference).expect("built-in workflow compiles")),
        }
    }

    fn blueprint(&self) -> Blueprint {
        Blueprint::build(self, DESCRIPTION_ITEM_TYPE, Some(0), None, BuildOptions::default())
            .expect("built-in blueprint builds")
    }
}

impl DescriptionSource for PublicationSource {
    fn schema(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<SchemaDef>), LookupError> {
        builtin_lookup(name, version, &self.schema)
    }

    fn state_machine(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<StateMachineDef>), LookupError> {
        builtin_lookup(name, version, &self.state_machine)
    }

    fn workflow(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<CompiledComposite>), LookupError> {
        builtin_lookup(name, version, &self.workflow)
    }
}

fn builtin_lookup<T>(name: &str, version: Option<u64>, value: &Arc<T>) -> Result<(u64, Arc<T>), LookupError> {
    match (name == DESCRIPTION_ITEM_TYPE, version) {
        (false, _) => Err(LookupError::UnknownName),
        (true, None | Some(0)) => Ok((0, value.clone())),
        (true, Some(_)) => Err(LookupError::UnknownVersion),
    }
}

fn now_nanos() -> u64 {
    chrono::Utc::now().timestamp_nanos_opt().unwrap_or_default().max(0) as u64
}

/// Checks the shape of an absolute `/`-separated path.
pub fn check_path(path: &str) -> Result<()> {
    let malformed = || KernelError::MalformedPath(path.to_owned());
    let rest = path.strip_prefix('/').ok_or_else(malformed)?;
    if rest.split('/').any(|seg| seg.is_empty()) {
        return Err(malformed());
    }
    Ok(())
}

pub struct Kernel {
    config: KernelConfig,
    store: EventStore,
    publication_blueprint: Arc<Blueprint>,
    registry: RwLock<Arc<DescriptionRegistry>>,
    description_items: RwLock<HashMap<String, ItemId>>,
    items: RwLock<HashMap<ItemId, Arc<ItemCell>>>,
    blueprints: RwLock<HashMap<String, Arc<Blueprint>>>,
    paths: RwLock<BTreeMap<String, ItemId>>,
    create_lock: Mutex<()>,
    publish_lock: Mutex<()>,
    link_lock: Mutex<()>,
    recovery: RecoveryReport,
}

impl Kernel {
    /// Opens the data directory, replays every item and publishes the default
    /// state machine if the store is new.
    pub fn open(config: KernelConfig) -> Result<Kernel> {
        let (store, recovery) = EventStore::open(&config.data_dir, config.sync)?;
        let publication_blueprint = Arc::new(PublicationSource::new().blueprint());
        let kernel = Kernel {
            config,
            store,
            publication_blueprint,
            registry: RwLock::new(Arc::new(DescriptionRegistry::new())),
            description_items: RwLock::new(HashMap::new()),
            items: RwLock::new(HashMap::new()),
            blueprints: RwLock::new(HashMap::new()),
            paths: RwLock::new(BTreeMap::new()),
            create_lock: Mutex::new(()),
            publish_lock: Mutex::new(()),
            link_lock: Mutex::new(()),
            recovery,
        };
        kernel.load()?;
        if kernel.registry().kind_of(DEFAULT_STATE_MACHINE).is_none() {
            let payload = serde_json::to_value(StateMachineDef::default_elementary()).expect("serializable");
            kernel.publish(&Agent::system(), DescriptionKind::StateMachine, DEFAULT_STATE_MACHINE, &payload, false)?;
        }
        Ok(kernel)
    }

    fn load(&self) -> Result<()> {
        let mut descriptions = Vec::new();
        let mut others = Vec::new();
        for id in self.store.item_ids() {
            let events = self.store.events(id)?;
            match &events[0].body {
                EventBody::Created(c) if c.description.is_none() => descriptions.push((id, events)),
                _ => others.push((id, events)),
            }
        }

        let mut registry = DescriptionRegistry::new();
        for (id, events) in &descriptions {
            let item = self.replay_events(events, true)?;
            let kind: DescriptionKind = item
                .properties
                .get(KIND_PROPERTY)
                .and_then(|p| p.value.as_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| KernelError::InvalidProperty(format!("description item {id} has no valid Kind")))?;
            let name = item.name().unwrap_or_default().to_owned();
            for e in events.iter().skip(1) {
                let Some(t) = e.transition() else { continue };
                let hash = t.outcome_ref.as_deref().expect("publications carry their payload");
                let payload = self.store.get_blob(hash)?;
                registry.restore(kind, &name, payload, *id, e.timestamp, &e.agent)?;
            }
            self.description_items.write().insert(name, *id);
            self.insert_cell(item, self.publication_blueprint.clone(), true);
        }
        *self.registry.write() = Arc::new(registry);

        for (_, events) in &others {
            let item = self.replay_events(events, false)?;
            let bp = self.blueprint_for(&item.workflow.def, &item.pinned)?;
            self.insert_cell(item, bp, false);
        }

        let mut paths = self.paths.write();
        for (path, item) in self.store.recovered_paths() {
            paths.insert(path.clone(), *item);
        }
        Ok(())
    }

    fn insert_cell(&self, item: Item, blueprint: Arc<Blueprint>, description: bool) {
        let id = item.id;
        self.items.write().insert(
            id,
            Arc::new(ItemCell {
                write: Mutex::new(()),
                state: RwLock::new(Arc::new(item)),
                blueprint,
                description,
            }),
        );
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    /// What opening the store had to repair.
    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Snapshot of the description registry.
    pub fn registry(&self) -> Arc<DescriptionRegistry> {
        self.registry.read().clone()
    }

    fn cell(&self, id: ItemId) -> Result<Arc<ItemCell>> {
        self.items.read().get(&id).cloned().ok_or(KernelError::UnknownItem(id))
    }

    pub fn item(&self, id: ItemId) -> Result<Arc<Item>> {
        Ok(self.cell(id)?.snapshot())
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.items.read().contains_key(&id)
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        let mut ids: Vec<ItemId> = self.items.read().keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn is_description_item(&self, id: ItemId) -> Result<bool> {
        Ok(self.cell(id)?.description)
    }

    fn blueprint_for(&self, def: &DefRef, pinned: &BTreeMap<String, u64>) -> Result<Arc<Blueprint>> {
        let key = format!(
            "{}\u{0}{}\u{0}{}",
            def.name,
            def.version,
            to_canonical_string(&serde_json::to_value(pinned).expect("serializable"))
        );
        if let Some(bp) = self.blueprints.read().get(&key) {
            return Ok(bp.clone());
        }
        let registry = self.registry();
        let bp = Arc::new(Blueprint::build(
            registry.as_ref(),
            &def.name,
            Some(def.version),
            Some(pinned),
            self.config.build,
        )?);
        self.blueprints.write().insert(key, bp.clone());
        Ok(bp)
    }

    /// Rebuilds an item from its events.
    fn replay_events<E: std::borrow::Borrow<Event>>(&self, events: &[E], description: bool) -> Result<Item> {
        let first = events.first().ok_or(StoreError::Decode {
            path: self.config.data_dir.clone(),
            source: serde::de::Error::custom("empty log"),
        })?;
        let first = first.borrow();
        let EventBody::Created(created) = &first.body else {
            return Err(KernelError::Store(StoreError::SequenceGap {
                item: first.item,
                expected: 0,
                got: first.seq,
            }));
        };
        let blueprint = if description {
            self.publication_blueprint.clone()
        } else {
            self.blueprint_for(&created.workflow, &created.pinned)?
        };
        let mut item = Item {
            id: first.item,
            properties: created
                .properties
                .iter()
                .map(|p| (p.name.clone(), p.clone()))
                .collect(),
            collections: created
                .collections
                .iter()
                .map(|c| (c.name.clone(), Collection::from_decl(c)))
                .collect(),
            pinned: created.pinned.clone(),
            workflow: blueprint.instantiate(),
        };
        let lookup = |hash: &str| self.store.get_blob(hash).ok();
        for e in events.iter().skip(1) {
            apply_event(&mut item, e.borrow(), &blueprint, &lookup)?;
        }
        Ok(item)
    }

    /// Rebuilds the item from the log on disk. Equal canonical bytes to
    /// [`item`](Self::item) is the replay guarantee.
    pub fn replay(&self, id: ItemId) -> Result<Item> {
        let cell = self.cell(id)?;
        let _guard = cell.write.lock();
        let events = self.store.read_log(id)?;
        self.replay_events(&events, cell.description)
    }

    fn next_id(&self) -> ItemId {
        let items = self.items.read();
        let mut ordinal = items.len() as u64;
        loop {
            let id = self.config.ids.generate(ordinal);
            if !items.contains_key(&id) {
                return id;
            }
            ordinal += 1;
        }
    }

    // ---- kernel model -------------------------------------------------

    /// Instantiates a new item from an item-description.
    pub fn create_item(
        &self,
        agent: &Agent,
        description: &str,
        version: Option<u64>,
        name: &str,
        initial: Vec<Property>,
    ) -> Result<Arc<Item>> {
        let registry = self.registry();
        let dv = registry.get(DescriptionKind::ItemDescription, description, version)?;
        let ParsedPayload::Item(desc) = &dv.parsed else {
            unreachable!("item-description payloads parse as item-descriptions")
        };

        let mut seen = HashSet::new();
        for p in &initial {
            if RESERVED_PROPERTIES.contains(&p.name.as_str()) {
                return Err(KernelError::ReservedProperty(p.name.clone()));
            }
            validate_property_name(&p.name).map_err(KernelError::InvalidProperty)?;
            if !seen.insert(p.name.clone()) {
                return Err(KernelError::DuplicateProperty(p.name.clone()));
            }
        }
        let mut properties: BTreeMap<String, Property> = BTreeMap::new();
        properties.insert(NAME_PROPERTY.into(), Property::new(NAME_PROPERTY, name, false));
        properties.insert(TYPE_PROPERTY.into(), Property::new(TYPE_PROPERTY, description, false));
        for p in desc.property_defaults.iter().chain(&initial) {
            properties.insert(p.name.clone(), p.clone());
        }

        let bp = Blueprint::build(registry.as_ref(), &desc.workflow_def, None, None, self.config.build)?;
        let mut pinned = bp.pinned().clone();
        pinned.insert(description.to_owned(), dv.version);
        let created = Created {
            description: Some(DefRef {
                name: description.to_owned(),
                version: dv.version,
            }),
            properties: properties.into_values().collect(),
            collections: desc.collection_decls.clone(),
            pinned,
            workflow: bp.def().clone(),
        };
        self.append_created(agent, created, false)
    }

    fn append_created(&self, agent: &Agent, created: Created, description: bool) -> Result<Arc<Item>> {
        let _create = self.create_lock.lock();
        let id = self.next_id();
        let event = Event {
            item: id,
            seq: 0,
            timestamp: now_nanos(),
            agent: agent.name.clone(),
            body: EventBody::Created(created),
        };
        let blueprint = if description {
            self.publication_blueprint.clone()
        } else {
            let EventBody::Created(c) = &event.body else { unreachable!() };
            self.blueprint_for(&c.workflow, &c.pinned)?
        };
        let item = self.replay_events(std::slice::from_ref(&event), description)?;
        self.store.append(event)?;
        self.insert_cell(item, blueprint, description);
        self.item(id)
    }

    /// Applies a mutation to one item under its write lock.
    fn mutate(
        &self,
        agent: &Agent,
        id: ItemId,
        build: impl FnOnce(&Item, &ItemCell) -> Result<EventBody>,
    ) -> Result<(Arc<Event>, Arc<Item>)> {
        let cell = self.cell(id)?;
        let _guard = cell.write.lock();
        let current = cell.snapshot();
        let body = build(&current, &cell)?;
        let event = Event {
            item: id,
            seq: self.store.event_count(id)?,
            timestamp: now_nanos(),
            agent: agent.name.clone(),
            body,
        };
        let mut next = (*current).clone();
        let lookup = |hash: &str| self.store.get_blob(hash).ok();
        apply_event(&mut next, &event, &cell.blueprint, &lookup)?;
        let event = self.store.append(event)?;
        let next = Arc::new(next);
        *cell.state.write() = next.clone();
        Ok((event, next))
    }

    pub fn set_property(&self, agent: &Agent, id: ItemId, name: &str, value: Value) -> Result<Arc<Item>> {
        let value = canonicalize(&value);
        self.mutate(agent, id, |item, _| {
            let p = item
                .properties
                .get(name)
                .ok_or_else(|| KernelError::UnknownProperty(name.to_owned()))?;
            if !p.mutable {
                return Err(KernelError::ImmutableProperty(name.to_owned()));
            }
            Ok(EventBody::PropertyChanged {
                name: name.to_owned(),
                value,
            })
        })
        .map(|(_, item)| item)
    }

    /// Fills an empty slot. Rejects assignments that would let an item
    /// contain itself.
    pub fn assign_slot(&self, agent: &Agent, id: ItemId, collection: &str, slot: u32, member: ItemId) -> Result<Arc<Item>> {
        let _links = self.link_lock.lock();
        let member_item = self.item(member)?;
        self.mutate(agent, id, |item, _| {
            let c = item
                .collections
                .get(collection)
                .ok_or_else(|| KernelError::UnknownCollection(collection.to_owned()))?;
            let s = c.slots.get(slot as usize).ok_or_else(|| KernelError::SlotOutOfRange {
                collection: collection.to_owned(),
                slot,
            })?;
            if s.member.is_some() {
                return Err(KernelError::SlotOccupied {
                    collection: collection.to_owned(),
                    slot,
                });
            }
            let found = member_item.item_type().unwrap_or_default();
            if found != c.member_type {
                return Err(KernelError::TypeMismatch {
                    expected: c.member_type.clone(),
                    found: found.to_owned(),
                });
            }
            if self.contains_transitively(member, id)? {
                return Err(KernelError::CycleDetected { item: id, member });
            }
            Ok(EventBody::CollectionChanged {
                collection: collection.to_owned(),
                slot,
                member: Some(member),
            })
        })
        .map(|(_, item)| item)
    }

    /// Whether `root` is `target` or holds it somewhere below its collections.
    fn contains_transitively(&self, root: ItemId, target: ItemId) -> Result<bool> {
        let mut stack = vec![root];
        let mut seen = HashSet::new();
        while let Some(i) = stack.pop() {
            if i == target {
                return Ok(true);
            }
            if seen.insert(i) {
                stack.extend(self.item(i)?.members());
            }
        }
        Ok(false)
    }

    pub fn bind(&self, path: &str, target: ItemId) -> Result<()> {
        check_path(path)?;
        if !self.contains(target) {
            return Err(KernelError::UnknownItem(target));
        }
        let mut paths = self.paths.write();
        if paths.contains_key(path) {
            return Err(KernelError::PathAlreadyBound(path.to_owned()));
        }
        self.store.append_path(path, target)?;
        paths.insert(path.to_owned(), target);
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> Result<ItemId> {
        check_path(path)?;
        self.paths
            .read()
            .get(path)
            .copied()
            .ok_or_else(|| KernelError::UnboundPath(path.to_owned()))
    }

    /// Bindings under `prefix` (all when empty), in path order.
    pub fn paths(&self, prefix: &str) -> Vec<(String, ItemId)> {
        self.paths
            .read()
            .iter()
            .filter(|(p, _)| p.starts_with(prefix))
            .map(|(p, i)| (p.clone(), *i))
            .collect()
    }

    // ---- workflow ------------------------------------------------------

    pub fn enabled_activities(&self, id: ItemId) -> Result<Vec<EnabledActivity>> {
        let cell = self.cell(id)?;
        Ok(cell.blueprint.enabled_activities(&cell.snapshot().workflow))
    }

    /// Fires `transition` on the activity at `step_path` of item `id`.
    pub fn fire(
        &self,
        agent: &Agent,
        id: ItemId,
        step_path: &str,
        transition: &str,
        outcome: Option<Value>,
    ) -> Result<(Arc<Event>, Arc<Item>)> {
        let cell = self.cell(id)?;
        if cell.description {
            return Err(KernelError::ReadOnlyItem(id));
        }
        let outcome = match outcome {
            Some(v) => OutcomeInput::Body(canonicalize(&v)),
            None => OutcomeInput::None,
        };
        self.fire_with(agent, &cell, id, step_path, transition, outcome, Authority::Roles(&agent.roles))
    }

    #[allow(clippy::too_many_arguments)]
    fn fire_with(
        &self,
        agent: &Agent,
        cell: &ItemCell,
        id: ItemId,
        step_path: &str,
        transition: &str,
        outcome: OutcomeInput,
        authority: Authority<'_>,
    ) -> Result<(Arc<Event>, Arc<Item>)> {
        let _guard = cell.write.lock();
        let current = cell.snapshot();
        let lookup = |hash: &str| self.store.get_blob(hash).ok();
        let fired = cell
            .blueprint
            .fire(&current.workflow, step_path, transition, outcome, authority, &lookup)?;
        if let (Some(body), Some(hash)) = (&fired.payload.outcome, &fired.payload.outcome_ref) {
            let stored = self.store.put_blob(body)?;
            debug_assert_eq!(&stored, hash);
        }
        let mut payload = fired.payload;
        payload.outcome = None;
        let event = Event {
            item: id,
            seq: self.store.event_count(id)?,
            timestamp: now_nanos(),
            agent: agent.name.clone(),
            body: EventBody::Transition(payload),
        };
        let event = self.store.append(event)?;
        let mut next = (*current).clone();
        next.workflow = fired.instance;
        let next = Arc::new(next);
        *cell.state.write() = next.clone();
        Ok((event, next))
    }

    /// Activities `agent` may act on across all items, ordered by item name
    /// then step path.
    pub fn worklist(&self, agent: &Agent) -> Vec<WorkItem> {
        let cells: Vec<(ItemId, Arc<ItemCell>)> = self
            .items
            .read()
            .iter()
            .filter(|(_, c)| !c.description)
            .map(|(id, c)| (*id, c.clone()))
            .collect();
        let mut out = Vec::new();
        for (id, cell) in cells {
            let item = cell.snapshot();
            for a in cell.blueprint.enabled_for(&item.workflow, &agent.roles) {
                let spec = cell.blueprint.activity(&a.step_path).expect("enabled activities exist");
                let schema = spec
                    .schema
                    .as_ref()
                    .filter(|_| spec.state_machine.def.requires_any_outcome())
                    .map(|s| SchemaRef {
                        name: s.name.clone(),
                        version: s.version,
                    });
                out.push(WorkItem {
                    item: id,
                    item_name: item.name().unwrap_or_default().to_owned(),
                    item_type: item.item_type().unwrap_or_default().to_owned(),
                    step_path: a.step_path,
                    state: a.state,
                    allowed_transitions: a.transitions,
                    schema,
                    role: spec.role.to_string(),
                });
            }
        }
        out.sort_by(|a, b| (&a.item_name, &a.step_path, a.item).cmp(&(&b.item_name, &b.step_path, b.item)));
        out
    }

    /// Resolves a workflow definition as a fresh item would, without creating
    /// one. Returns the initial instance and the pins it implies.
    pub fn instantiate_workflow(
        &self,
        name: &str,
        version: Option<u64>,
    ) -> Result<(WorkflowInstance, BTreeMap<String, u64>)> {
        let registry = self.registry();
        let bp = Blueprint::build(registry.as_ref(), name, version, None, self.config.build)?;
        Ok((bp.instantiate(), bp.pinned().clone()))
    }

    // ---- events --------------------------------------------------------

    pub fn history(&self, id: ItemId, filter: &HistoryFilter) -> Result<Vec<Arc<Event>>> {
        Ok(self.store.history(id, filter)?)
    }

    pub fn get_outcome(&self, id: ItemId, schema: &str, view: &str) -> Result<(Arc<Event>, Value)> {
        Ok(self.store.get_outcome(id, schema, view)?)
    }

    pub fn freeze_view(&self, id: ItemId, schema: &str, view: &str) -> Result<Viewpoint> {
        let cell = self.cell(id)?;
        let _guard = cell.write.lock();
        Ok(self.store.freeze_view(id, schema, view)?)
    }

    pub fn viewpoints(&self, id: ItemId) -> Result<Vec<Viewpoint>> {
        Ok(self.store.viewpoints(id)?)
    }

    // ---- descriptions --------------------------------------------------

    /// Publishes the next version of (`kind`, `name`). The payload is recorded
    /// as a `Publish` transition on the description's backing item.
    pub fn publish(
        &self,
        agent: &Agent,
        kind: DescriptionKind,
        name: &str,
        payload: &Value,
        forbid_breaking: bool,
    ) -> Result<Arc<DescriptionVersion>> {
        let _publish = self.publish_lock.lock();
        self.publish_locked(agent, kind, name, payload, forbid_breaking)
    }

    fn publish_locked(
        &self,
        agent: &Agent,
        kind: DescriptionKind,
        name: &str,
        payload: &Value,
        forbid_breaking: bool,
    ) -> Result<Arc<DescriptionVersion>> {
        let registry = self.registry();
        let prepared = registry.prepare(kind, name, payload)?;
        if forbid_breaking {
            if let Some(report) = prepared.compatibility.as_ref().filter(|r| !r.compatible) {
                return Err(DescriptionError::BreakingChange {
                    name: name.to_owned(),
                    report: report.clone(),
                }
                .into());
            }
        }
        let existing = self.description_items.read().get(name).copied();
        let backing = match existing {
            Some(id) => {
                let item = self.item(id)?;
                let recorded = item.properties.get(KIND_PROPERTY).and_then(|p| p.value.as_str());
                if recorded != Some(kind.slug()) {
                    let existing = recorded.and_then(|s| s.parse().ok()).unwrap_or(kind);
                    return Err(DescriptionError::KindMismatch {
                        name: name.to_owned(),
                        existing,
                    }
                    .into());
                }
                id
            }
            None => {
                let created = Created {
                    description: None,
                    properties: vec![
                        Property::new(KIND_PROPERTY, kind.slug(), false),
                        Property::new(NAME_PROPERTY, name, false),
                        Property::new(TYPE_PROPERTY, DESCRIPTION_ITEM_TYPE, false),
                    ],
                    collections: Vec::new(),
                    pinned: self.publication_blueprint.pinned().clone(),
                    workflow: self.publication_blueprint.def().clone(),
                };
                let item = self.append_created(agent, created, true)?;
                self.description_items.write().insert(name.to_owned(), item.id);
                item.id
            }
        };
        let cell = self.cell(backing)?;
        let (event, _) = self.fire_with(
            agent,
            &cell,
            backing,
            PUBLISH_STEP,
            PUBLISH_TRANSITION,
            OutcomeInput::Body(prepared.payload.clone()),
            Authority::Replay,
        )?;
        let mut next = (*registry).clone();
        let version = next.commit(prepared, backing, event.timestamp, &agent.name);
        *self.registry.write() = Arc::new(next);
        Ok(version)
    }

    /// Publishes several descriptions, all or nothing with respect to
    /// validation: every entry is checked, in order and against the entries
    /// before it, before anything is written.
    pub fn publish_batch(
        &self,
        agent: &Agent,
        entries: &[PublishRequest],
        forbid_breaking: bool,
    ) -> Result<Vec<Arc<DescriptionVersion>>> {
        let _publish = self.publish_lock.lock();
        let mut trial = (*self.registry()).clone();
        let placeholder = ItemId::from_uuid(uuid::Uuid::nil());
        for (index, e) in entries.iter().enumerate() {
            let wrap = |source: KernelError| KernelError::BatchEntry {
                index,
                source: Box::new(source),
            };
            let prepared = trial.prepare(e.kind, &e.name, &e.payload).map_err(|d| wrap(d.into()))?;
            if forbid_breaking {
                if let Some(report) = prepared.compatibility.as_ref().filter(|r| !r.compatible) {
                    return Err(wrap(
                        DescriptionError::BreakingChange {
                            name: e.name.clone(),
                            report: report.clone(),
                        }
                        .into(),
                    ));
                }
            }
            trial.commit(prepared, placeholder, 0, &agent.name);
        }
        entries
            .iter()
            .enumerate()
            .map(|(index, e)| {
                self.publish_locked(agent, e.kind, &e.name, &e.payload, forbid_breaking)
                    .map_err(|source| KernelError::BatchEntry {
                        index,
                        source: Box::new(source),
                    })
            })
            .collect()
    }

    pub fn get_description(
        &self,
        kind: DescriptionKind,
        name: &str,
        version: Option<u64>,
    ) -> Result<Arc<DescriptionVersion>> {
        Ok(self.registry().get(kind, name, version)?)
    }

    pub fn list_versions(&self, kind: DescriptionKind, name: &str) -> Result<Vec<VersionSummary>> {
        Ok(self.registry().list_versions(kind, name)?)
    }

    pub fn list_descriptions(&self, kind: Option<DescriptionKind>) -> Vec<DescriptionSummary> {
        self.registry()
            .entries()
            .filter(|e| kind.is_none_or(|k| k == e.kind))
            .map(|e| DescriptionSummary {
                kind: e.kind,
                name: e.name.clone(),
                latest: e.versions.len() as u64 - 1,
                backing_item: e.backing_item,
            })
            .collect()
    }

    /// Every description version the item is bound to, with its kind.
    pub fn pin_report(&self, id: ItemId) -> Result<Vec<PinEntry>> {
        let item = self.item(id)?;
        let registry = self.registry();
        let mut out: Vec<PinEntry> = item
            .pinned
            .iter()
            .filter_map(|(name, version)| {
                registry.kind_of(name).map(|kind| PinEntry {
                    kind,
                    name: name.clone(),
                    version: *version,
                })
            })
            .collect();
        out.sort();
        Ok(out)
    }
}

/// Applies one non-Created event to `item`.
fn apply_event(
    item: &mut Item,
    event: &Event,
    blueprint: &Blueprint,
    lookup: &dyn Fn(&str) -> Option<Value>,
) -> Result<()> {
    match &event.body {
        EventBody::Created(_) => {
            return Err(StoreError::SequenceGap {
                item: event.item,
                expected: event.seq,
                got: 0,
            }
            .into())
        }
        EventBody::PropertyChanged { name, value } => {
            let p = item
                .properties
                .get_mut(name)
                .ok_or_else(|| KernelError::UnknownProperty(name.clone()))?;
            p.value = value.clone();
        }
        EventBody::CollectionChanged {
            collection,
            slot,
            member,
        } => {
            let c = item
                .collections
                .get_mut(collection)
                .ok_or_else(|| KernelError::UnknownCollection(collection.clone()))?;
            let s = c.slots.get_mut(*slot as usize).ok_or_else(|| KernelError::SlotOutOfRange {
                collection: collection.clone(),
                slot: *slot,
            })?;
            s.member = *member;
        }
        EventBody::Transition(t) => {
            let outcome = match &t.outcome_ref {
                Some(h) => OutcomeInput::Recorded(h.clone()),
                None => OutcomeInput::None,
            };
            let fired = blueprint.fire(
                &item.workflow,
                &t.step_path,
                &t.transition,
                outcome,
                Authority::Replay,
                &|h: &str| lookup(h),
            )?;
            item.workflow = fired.instance;
        }
    }
    Ok(())
}
