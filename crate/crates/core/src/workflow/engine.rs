//! Instantiation and execution of workflows.
//!
//! A [`Blueprint`] is a workflow definition flattened across its nested
//! composites and loop bodies, with every referenced description resolved to
//! a fixed version. Execution follows token-game rules: activities holding a
//! token are enabled; gateways (splits, joins, loops, composite boundaries)
//! fire as soon as their input is satisfied, inside the same `fire` call that
//! delivered the token.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::compile::CompiledComposite;
use super::def::NodeKind;
use super::predicate::{evaluate_route, RoutePredicate};
use super::WorkflowError;
use crate::canonical::content_hash;
use crate::lifecycle::{Role, StateMachineDef};
use crate::schema::{validate, SchemaDef};

pub const DEFAULT_MAX_LOOP_ITERATIONS: u32 = 10_000;
pub const DEFAULT_MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupError {
    UnknownName,
    UnknownVersion,
}

/// Versioned access to the descriptions a workflow can reference.
pub trait DescriptionSource {
    fn schema(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<SchemaDef>), LookupError>;
    fn state_machine(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<StateMachineDef>), LookupError>;
    fn workflow(&self, name: &str, version: Option<u64>) -> Result<(u64, Arc<CompiledComposite>), LookupError>;
}

/// Retrieves previously stored outcome documents by content hash.
pub trait OutcomeLookup {
    fn outcome(&self, hash: &str) -> Option<Value>;
}

pub struct NoOutcomes;

impl OutcomeLookup for NoOutcomes {
    fn outcome(&self, _: &str) -> Option<Value> {
        None
    }
}

impl<F: Fn(&str) -> Option<Value>> OutcomeLookup for F {
    fn outcome(&self, hash: &str) -> Option<Value> {
        self(hash)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DefRef {
    pub name: String,
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchemaRef {
    pub name: String,
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRef {
    pub schema: SchemaRef,
    pub hash: String,
}

/// Runtime state of one workflow run. Serialized as part of the owning item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub def: DefRef,
    pub activity_states: BTreeMap<String, String>,
    pub tokens: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub loop_iterations: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub faults: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub last_outcomes: BTreeMap<String, OutcomeRef>,
}

impl WorkflowInstance {
    pub fn token_count(&self) -> u32 {
        self.tokens.values().sum()
    }

    fn add_token(&mut self, path: &str, n: u32) {
        *self.tokens.entry(path.to_owned()).or_default() += n;
    }

    fn take_tokens(&mut self, path: &str, n: u32) {
        let slot = self.tokens.get_mut(path).expect("token present");
        *slot -= n;
        if *slot == 0 {
            self.tokens.remove(path);
        }
    }

    fn tokens_at(&self, path: &str) -> u32 {
        self.tokens.get(path).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct ActivitySpec {
    pub role: Role,
    pub state_machine: SchemaRefOf<StateMachineDef>,
    pub schema: Option<SchemaRefOf<SchemaDef>>,
}

/// A resolved description: name, pinned version and parsed payload.
#[derive(Clone, Debug)]
pub struct SchemaRefOf<T> {
    pub name: String,
    pub version: u64,
    pub def: Arc<T>,
}

#[derive(Clone, Debug)]
enum FlatKind {
    Start,
    End,
    Pass,
    Activity(ActivitySpec),
    AndSplit,
    AndJoin { arity: u32 },
    XorSplit { predicates: Vec<RoutePredicate> },
    XorJoin,
    Loop {
        predicate: RoutePredicate,
        body_entry: usize,
        max_iterations: u32,
    },
}

#[derive(Clone, Debug)]
struct FlatNode {
    path: String,
    kind: FlatKind,
    succ: Vec<usize>,
}

/// One gateway firing, reported so callers can audit the token game.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GatewayFiring {
    Pass { path: String },
    AndSplit { path: String, branches: u32 },
    AndJoin { path: String, inputs: u32 },
    XorSplit { path: String, branch: usize },
    XorJoin { path: String },
    LoopEnter { path: String, iteration: u32 },
    LoopExit { path: String },
    LoopFault { path: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledActivity {
    pub step_path: String,
    pub state: String,
    pub transitions: Vec<String>,
}

/// Who is firing a transition.
#[derive(Clone, Copy, Debug)]
pub enum Authority<'a> {
    Roles(&'a [String]),
    /// Re-applying a committed event: roles and outcome validity were
    /// checked when it was first accepted.
    Replay,
}

#[derive(Clone, Debug)]
pub enum OutcomeInput {
    None,
    Body(Value),
    /// Content hash of an outcome already stored.
    Recorded(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    pub step_path: String,
    pub transition: String,
    pub schema: Option<SchemaRef>,
    pub outcome_ref: Option<String>,
    #[serde(skip)]
    pub outcome: Option<Value>,
    pub state_before: String,
    pub state_after: String,
}

#[derive(Clone, Debug)]
pub struct Fired {
    pub instance: WorkflowInstance,
    pub payload: EventPayload,
    pub trace: Vec<GatewayFiring>,
}

/// Resolution policy while flattening: pinned names use their recorded
/// version, everything else resolves to the latest and gets pinned.
struct Resolver<'a> {
    source: &'a dyn DescriptionSource,
    pins: BTreeMap<String, u64>,
    frozen: bool,
}

impl Resolver<'_> {
    fn version_for(&self, name: &str, requested: Option<u64>) -> Result<Option<u64>, WorkflowError> {
        match (requested, self.pins.get(name)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(v)) => Ok(Some(*v)),
            (None, None) if self.frozen => Err(WorkflowError::UnknownDefinition(format!("{name} (not pinned)"))),
            (None, None) => Ok(None),
        }
    }

    fn pin(&mut self, name: &str, version: u64) {
        self.pins.insert(name.to_owned(), version);
    }

    fn lookup_error(name: &str, version: Option<u64>, e: LookupError) -> WorkflowError {
        match (e, version) {
            (LookupError::UnknownVersion, Some(v)) => WorkflowError::UnknownVersion {
                name: name.to_owned(),
                version: v,
            },
            _ => WorkflowError::UnknownDefinition(name.to_owned()),
        }
    }

    fn workflow(&mut self, name: &str, requested: Option<u64>) -> Result<(u64, Arc<CompiledComposite>), WorkflowError> {
        let v = self.version_for(name, requested)?;
        let (version, def) = self.source.workflow(name, v).map_err(|e| Self::lookup_error(name, v, e))?;
        self.pin(name, version);
        Ok((version, def))
    }

    fn schema(&mut self, name: &str) -> Result<SchemaRefOf<SchemaDef>, WorkflowError> {
        let v = self.version_for(name, None)?;
        let (version, def) = self.source.schema(name, v).map_err(|e| Self::lookup_error(name, v, e))?;
        self.pin(name, version);
        Ok(SchemaRefOf {
            name: name.to_owned(),
            version,
            def,
        })
    }

    fn state_machine(&mut self, name: &str) -> Result<SchemaRefOf<StateMachineDef>, WorkflowError> {
        let v = self.version_for(name, None)?;
        let (version, def) = self
            .source
            .state_machine(name, v)
            .map_err(|e| Self::lookup_error(name, v, e))?;
        self.pin(name, version);
        Ok(SchemaRefOf {
            name: name.to_owned(),
            version,
            def,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Blueprint {
    def: DefRef,
    nodes: Vec<FlatNode>,
    index: HashMap<String, usize>,
    start: usize,
    pinned: BTreeMap<String, u64>,
    max_depth: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub max_depth: usize,
    pub max_loop_iterations: u32,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            max_loop_iterations: DEFAULT_MAX_LOOP_ITERATIONS,
        }
    }
}

impl Blueprint {
    /// Resolves `name` (at `version`, or latest) and everything it references.
    ///
    /// With `pins`, names present there are resolved at the pinned version and
    /// any name missing from it is an error; this is how an existing instance
    /// is reloaded.
    pub fn build(
        source: &dyn DescriptionSource,
        name: &str,
        version: Option<u64>,
        pins: Option<&BTreeMap<String, u64>>,
        options: BuildOptions,
    ) -> Result<Self, WorkflowError> {
        let mut resolver = Resolver {
            source,
            pins: pins.cloned().unwrap_or_default(),
            frozen: pins.is_some(),
        };
        let (root_version, root) = resolver.workflow(name, version)?;
        let mut bp = Blueprint {
            def: DefRef {
                name: name.to_owned(),
                version: root_version,
            },
            nodes: Vec::new(),
            index: HashMap::new(),
            start: 0,
            pinned: BTreeMap::new(),
            max_depth: options.max_depth,
        };
        let (entry, _) = bp.expand(&root, "", 0, true, &mut resolver, options)?;
        bp.start = entry;
        bp.pinned = resolver.pins;
        Ok(bp)
    }

    /// Flattens `compiled` under `prefix`; returns (entry, exit) node indices.
    fn expand(
        &mut self,
        compiled: &CompiledComposite,
        prefix: &str,
        depth: usize,
        root: bool,
        resolver: &mut Resolver<'_>,
        options: BuildOptions,
    ) -> Result<(usize, usize), WorkflowError> {
        if depth >= self.max_depth {
            return Err(WorkflowError::DepthExceeded(self.max_depth));
        }
        let base = self.nodes.len();
        let path_of = |id: &str| {
            if prefix.is_empty() {
                id.to_owned()
            } else {
                format!("{prefix}/{id}")
            }
        };
        // First pass: allocate every local node so edges can be wired by index.
        for node in &compiled.def.nodes {
            let kind = match &node.kind {
                NodeKind::Start if root => FlatKind::Start,
                NodeKind::End if root => FlatKind::End,
                NodeKind::Start | NodeKind::End | NodeKind::Composite { .. } => FlatKind::Pass,
                NodeKind::AndSplit => FlatKind::AndSplit,
                NodeKind::AndJoin => FlatKind::AndJoin { arity: 0 },
                NodeKind::XorSplit { predicates } => FlatKind::XorSplit {
                    predicates: predicates.clone(),
                },
                NodeKind::XorJoin => FlatKind::XorJoin,
                NodeKind::Elementary(a) => {
                    let state_machine = resolver.state_machine(&a.state_machine)?;
                    let schema = match &a.schema {
                        Some(s) => Some(resolver.schema(s)?),
                        None => None,
                    };
                    if schema.is_none() && state_machine.def.requires_any_outcome() {
                        return Err(WorkflowError::MissingSchema(path_of(&node.id)));
                    }
                    FlatKind::Activity(ActivitySpec {
                        role: a.role.clone(),
                        state_machine,
                        schema,
                    })
                }
                NodeKind::Loop {
                    predicate,
                    max_iterations,
                    ..
                } => FlatKind::Loop {
                    predicate: predicate.clone(),
                    body_entry: usize::MAX,
                    max_iterations: max_iterations.unwrap_or(options.max_loop_iterations),
                },
            };
            let path = path_of(&node.id);
            self.index.insert(path.clone(), self.nodes.len());
            self.nodes.push(FlatNode {
                path,
                kind,
                succ: Vec::new(),
            });
        }
        for (local, succs) in compiled.succ.iter().enumerate() {
            self.nodes[base + local].succ = succs.iter().map(|s| base + s).collect();
            if let FlatKind::AndJoin { arity } = &mut self.nodes[base + local].kind {
                *arity = compiled.pred[local].len() as u32;
            }
        }
        self.check_predicate_fields(compiled, base)?;
        // Second pass: splice nested composites and loop bodies in place.
        for (local, node) in compiled.def.nodes.iter().enumerate() {
            let idx = base + local;
            match &node.kind {
                NodeKind::Composite { workflow } => {
                    let (_, sub) = resolver.workflow(workflow, None)?;
                    let path = self.nodes[idx].path.clone();
                    let (entry, exit) = self.expand(&sub, &path, depth + 1, false, resolver, options)?;
                    let after = std::mem::replace(&mut self.nodes[idx].succ, vec![entry]);
                    self.nodes[exit].succ = after;
                }
                NodeKind::Loop { body, .. } => {
                    let (_, sub) = resolver.workflow(body, None)?;
                    let path = self.nodes[idx].path.clone();
                    let (entry, exit) = self.expand(&sub, &path, depth + 1, false, resolver, options)?;
                    if let FlatKind::Loop { body_entry, .. } = &mut self.nodes[idx].kind {
                        *body_entry = entry;
                    }
                    self.nodes[exit].succ = vec![idx];
                }
                _ => {}
            }
        }
        Ok((base + compiled.start, base + compiled.end))
    }

    /// Routing predicates directly after an activity may only read fields
    /// that activity's pinned schema declares.
    fn check_predicate_fields(&self, compiled: &CompiledComposite, base: usize) -> Result<(), WorkflowError> {
        for (local, node) in compiled.def.nodes.iter().enumerate() {
            let predicates: Vec<&RoutePredicate> = match &node.kind {
                NodeKind::XorSplit { predicates } => predicates.iter().collect(),
                NodeKind::Loop { predicate, .. } => vec![predicate],
                _ => continue,
            };
            let Some(&before) = compiled.pred[local].first() else { continue };
            if let FlatKind::Activity(spec) = &self.nodes[base + before].kind {
                let Some(schema) = &spec.schema else { continue };
                for p in predicates {
                    for field in p.field_paths() {
                        if schema.def.field_at_path(field).is_none() {
                            return Err(WorkflowError::PredicateFieldUnknown {
                                node: self.nodes[base + local].path.clone(),
                                field: field.to_owned(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn def(&self) -> &DefRef {
        &self.def
    }

    /// Every description version this blueprint resolved, by name.
    pub fn pinned(&self) -> &BTreeMap<String, u64> {
        &self.pinned
    }

    pub fn activity(&self, step_path: &str) -> Option<&ActivitySpec> {
        match &self.nodes[*self.index.get(step_path)?].kind {
            FlatKind::Activity(spec) => Some(spec),
            _ => None,
        }
    }

    pub fn activity_paths(&self) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, FlatKind::Activity(_)))
            .map(|n| n.path.as_str())
    }

    pub fn end_path(&self) -> &str {
        let end = self
            .nodes
            .iter()
            .find(|n| matches!(n.kind, FlatKind::End))
            .expect("root end node");
        &end.path
    }

    pub fn instantiate(&self) -> WorkflowInstance {
        let activity_states = self
            .nodes
            .iter()
            .filter_map(|n| match &n.kind {
                FlatKind::Activity(spec) => Some((n.path.clone(), spec.state_machine.def.initial.clone())),
                _ => None,
            })
            .collect();
        WorkflowInstance {
            def: self.def.clone(),
            activity_states,
            tokens: BTreeMap::from([(self.nodes[self.start].path.clone(), 1)]),
            loop_iterations: BTreeMap::new(),
            faults: BTreeMap::new(),
            last_outcomes: BTreeMap::new(),
        }
    }

    pub fn is_complete(&self, instance: &WorkflowInstance) -> bool {
        instance.tokens.len() == 1 && instance.tokens_at(self.end_path()) == 1
    }

    /// Activities the token game currently marks, with every transition
    /// their state machine allows from the current state. Pure.
    pub fn enabled_activities(&self, instance: &WorkflowInstance) -> Vec<EnabledActivity> {
        self.enabled_filtered(instance, None)
    }

    /// As [`enabled_activities`](Self::enabled_activities), restricted to
    /// what an agent holding `roles` may fire.
    pub fn enabled_for(&self, instance: &WorkflowInstance, roles: &[String]) -> Vec<EnabledActivity> {
        self.enabled_filtered(instance, Some(roles))
    }

    fn enabled_filtered(&self, instance: &WorkflowInstance, roles: Option<&[String]>) -> Vec<EnabledActivity> {
        let mut settled = instance.clone();
        let mut trace = Vec::new();
        let _ = self.settle(&mut settled, None, &NoOutcomes, None, false, &mut trace);
        let mut out: Vec<EnabledActivity> = settled
            .tokens
            .keys()
            .filter_map(|path| {
                let spec = self.activity(path)?;
                if roles.is_some_and(|r| !spec.role.admits(r)) {
                    return None;
                }
                let state = settled.activity_states.get(path)?.clone();
                let mut transitions: Vec<String> = spec
                    .state_machine
                    .def
                    .transitions
                    .iter()
                    .filter(|t| t.from == state && roles.is_none_or(|r| t.role.admits(r)))
                    .map(|t| t.name.clone())
                    .collect();
                transitions.sort();
                if roles.is_some() && transitions.is_empty() {
                    return None;
                }
                Some(EnabledActivity {
                    step_path: path.clone(),
                    state,
                    transitions,
                })
            })
            .collect();
        out.sort_by(|a, b| a.step_path.cmp(&b.step_path));
        out
    }

    /// Fires `transition` on the activity at `step_path`.
    ///
    /// Returns the successor instance; `instance` itself is never modified,
    /// so a rejected fire leaves no trace.
    pub fn fire(
        &self,
        instance: &WorkflowInstance,
        step_path: &str,
        transition: &str,
        outcome: OutcomeInput,
        authority: Authority<'_>,
        outcomes: &dyn OutcomeLookup,
    ) -> Result<Fired, WorkflowError> {
        let mut next = instance.clone();
        let mut trace = Vec::new();
        self.settle(&mut next, None, outcomes, None, false, &mut trace)?;

        let not_enabled = || WorkflowError::NotEnabled(step_path.to_owned());
        let spec = self.activity(step_path).ok_or_else(not_enabled)?;
        if next.tokens_at(step_path) == 0 {
            return Err(not_enabled());
        }
        let sm = &spec.state_machine.def;
        let state_before = next.activity_states.get(step_path).cloned().ok_or_else(not_enabled)?;
        let t = sm
            .transition(&state_before, transition)
            .ok_or_else(|| WorkflowError::IllegalTransition {
                step_path: step_path.to_owned(),
                state: state_before.clone(),
                transition: transition.to_owned(),
            })?;
        if let Authority::Roles(roles) = authority {
            if !spec.role.admits(roles) || !t.role.admits(roles) {
                return Err(WorkflowError::RoleDenied {
                    step_path: step_path.to_owned(),
                    transition: transition.to_owned(),
                });
            }
        }

        let (schema, outcome_ref, body) = if t.requires_outcome {
            let schema = spec.schema.as_ref().ok_or_else(|| WorkflowError::MissingSchema(step_path.to_owned()))?;
            let (hash, body) = match outcome {
                OutcomeInput::None => return Err(WorkflowError::OutcomeRequired(step_path.to_owned())),
                OutcomeInput::Body(body) => {
                    if !matches!(authority, Authority::Replay) {
                        let report = validate(&body, &schema.def);
                        if !report.valid {
                            return Err(WorkflowError::OutcomeInvalid(report));
                        }
                    }
                    (content_hash(&body), Some(body))
                }
                OutcomeInput::Recorded(hash) => (hash, None),
            };
            let sref = SchemaRef {
                name: schema.name.clone(),
                version: schema.version,
            };
            next.last_outcomes.insert(
                step_path.to_owned(),
                OutcomeRef {
                    schema: sref.clone(),
                    hash: hash.clone(),
                },
            );
            (Some(sref), Some(hash), body)
        } else {
            if !matches!(outcome, OutcomeInput::None) {
                return Err(WorkflowError::UnexpectedOutcome(step_path.to_owned()));
            }
            (None, None, None)
        };

        let state_after = t.to.clone();
        next.activity_states.insert(step_path.to_owned(), state_after.clone());
        if sm.is_terminal(&state_after) {
            let idx = self.index[step_path];
            next.take_tokens(step_path, 1);
            next.add_token(&self.nodes[self.nodes[idx].succ[0]].path, 1);
            let current = outcome_ref.as_deref().zip(body.as_ref());
            self.settle(&mut next, Some(step_path), outcomes, current, true, &mut trace)?;
        }
        Ok(Fired {
            instance: next,
            payload: EventPayload {
                step_path: step_path.to_owned(),
                transition: transition.to_owned(),
                schema,
                outcome_ref,
                outcome: body,
                state_before,
                state_after,
            },
            trace,
        })
    }

    fn trigger_outcome(
        &self,
        instance: &WorkflowInstance,
        trigger: Option<&str>,
        outcomes: &dyn OutcomeLookup,
        current: Option<(&str, &Value)>,
    ) -> Option<Value> {
        let r = instance.last_outcomes.get(trigger?)?;
        match current {
            Some((hash, body)) if hash == r.hash => Some(body.clone()),
            _ => outcomes.outcome(&r.hash),
        }
    }

    /// Fires ready gateways until none remain.
    ///
    /// Routing predicates read the latest outcome of `trigger`, the activity
    /// whose completion set this cascade off. In lenient mode an evaluation
    /// error leaves the token parked instead of failing.
    fn settle(
        &self,
        inst: &mut WorkflowInstance,
        trigger: Option<&str>,
        outcomes: &dyn OutcomeLookup,
        current: Option<(&str, &Value)>,
        strict: bool,
        trace: &mut Vec<GatewayFiring>,
    ) -> Result<(), WorkflowError> {
        let mut trigger_doc: Option<Option<Value>> = None;
        let mut progress = true;
        while progress {
            progress = false;
            for node in &self.nodes {
                let count = inst.tokens_at(&node.path);
                if count == 0 {
                    continue;
                }
                let path = node.path.as_str();
                match &node.kind {
                    FlatKind::Activity(_) | FlatKind::End => {}
                    FlatKind::Start | FlatKind::Pass => {
                        inst.take_tokens(path, count);
                        inst.add_token(&self.nodes[node.succ[0]].path, count);
                        trace.push(GatewayFiring::Pass { path: path.to_owned() });
                        progress = true;
                    }
                    FlatKind::XorJoin => {
                        inst.take_tokens(path, count);
                        inst.add_token(&self.nodes[node.succ[0]].path, count);
                        for _ in 0..count {
                            trace.push(GatewayFiring::XorJoin { path: path.to_owned() });
                        }
                        progress = true;
                    }
                    FlatKind::AndSplit => {
                        inst.take_tokens(path, count);
                        for &s in &node.succ {
                            inst.add_token(&self.nodes[s].path, count);
                        }
                        for _ in 0..count {
                            trace.push(GatewayFiring::AndSplit {
                                path: path.to_owned(),
                                branches: node.succ.len() as u32,
                            });
                        }
                        progress = true;
                    }
                    FlatKind::AndJoin { arity } => {
                        let fires = count / arity;
                        if fires > 0 {
                            inst.take_tokens(path, fires * arity);
                            inst.add_token(&self.nodes[node.succ[0]].path, fires);
                            for _ in 0..fires {
                                trace.push(GatewayFiring::AndJoin {
                                    path: path.to_owned(),
                                    inputs: *arity,
                                });
                            }
                            progress = true;
                        }
                    }
                    FlatKind::XorSplit { predicates } => {
                        let doc = trigger_doc
                            .get_or_insert_with(|| self.trigger_outcome(inst, trigger, outcomes, current))
                            .as_ref();
                        let mut branch = predicates.len();
                        let mut failed = None;
                        for (i, p) in predicates.iter().enumerate() {
                            match evaluate_route(p, doc) {
                                Ok(true) => {
                                    branch = i;
                                    break;
                                }
                                Ok(false) => {}
                                Err(e) => {
                                    failed = Some(e);
                                    break;
                                }
                            }
                        }
                        if let Some(e) = failed {
                            if strict {
                                return Err(WorkflowError::RouteEvaluation {
                                    node: path.to_owned(),
                                    source: e,
                                });
                            }
                            continue;
                        }
                        inst.take_tokens(path, 1);
                        inst.add_token(&self.nodes[node.succ[branch]].path, 1);
                        trace.push(GatewayFiring::XorSplit {
                            path: path.to_owned(),
                            branch,
                        });
                        progress = true;
                    }
                    FlatKind::Loop {
                        predicate,
                        body_entry,
                        max_iterations,
                    } => {
                        if inst.faults.contains_key(path) {
                            continue;
                        }
                        let doc = trigger_doc
                            .get_or_insert_with(|| self.trigger_outcome(inst, trigger, outcomes, current))
                            .as_ref();
                        let again = match evaluate_route(predicate, doc) {
                            Ok(b) => b,
                            Err(e) if strict => {
                                return Err(WorkflowError::RouteEvaluation {
                                    node: path.to_owned(),
                                    source: e,
                                })
                            }
                            Err(_) => continue,
                        };
                        if again {
                            let iteration = inst.loop_iterations.get(path).copied().unwrap_or(0) + 1;
                            if iteration > *max_iterations {
                                inst.faults.insert(path.to_owned(), "IterationLimitExceeded".into());
                                trace.push(GatewayFiring::LoopFault { path: path.to_owned() });
                                continue;
                            }
                            inst.loop_iterations.insert(path.to_owned(), iteration);
                            self.reset_body(inst, path);
                            inst.take_tokens(path, 1);
                            inst.add_token(&self.nodes[*body_entry].path, 1);
                            trace.push(GatewayFiring::LoopEnter {
                                path: path.to_owned(),
                                iteration,
                            });
                        } else {
                            inst.loop_iterations.remove(path);
                            inst.take_tokens(path, 1);
                            inst.add_token(&self.nodes[node.succ[0]].path, 1);
                            trace.push(GatewayFiring::LoopExit { path: path.to_owned() });
                        }
                        progress = true;
                    }
                }
            }
        }
        Ok(())
    }

    /// Returns every activity inside a loop body to its initial state.
    fn reset_body(&self, inst: &mut WorkflowInstance, loop_path: &str) {
        let prefix = format!("{loop_path}/");
        for node in self.nodes.iter().filter(|n| n.path.starts_with(&prefix)) {
            match &node.kind {
                FlatKind::Activity(spec) => {
                    inst.activity_states
                        .insert(node.path.clone(), spec.state_machine.def.initial.clone());
                }
                FlatKind::Loop { .. } => {
                    inst.loop_iterations.remove(&node.path);
                }
                _ => {}
            }
        }
    }
}
