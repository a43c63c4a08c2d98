//! Composite activity graphs, instantiation and token-based execution.

mod compile;
mod def;
mod engine;
mod predicate;

pub use compile::{compile_workflow, AnyReference, CompiledComposite, ReferenceCheck};
pub use def::{CompositeActivityDef, EdgeDef, ElementaryActivityDef, NodeDef, NodeKind};
pub use engine::{
    ActivitySpec, Authority, Blueprint, BuildOptions, DefRef, DescriptionSource, EnabledActivity, EventPayload,
    Fired, GatewayFiring, LookupError, NoOutcomes, OutcomeInput, OutcomeLookup, OutcomeRef, SchemaRef,
    SchemaRefOf, WorkflowInstance, DEFAULT_MAX_DEPTH, DEFAULT_MAX_LOOP_ITERATIONS,
};
pub use predicate::{evaluate_route, CompareOp, RouteError, RoutePredicate};

use crate::schema::ValidationReport;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("malformed workflow definition: {0}")]
    Malformed(String),
    #[error("node `{0}` declared twice")]
    DuplicateNode(String),
    #[error("edge references unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid edge {from} -> {to}")]
    InvalidEdge { from: String, to: String },
    #[error("workflow has no start node")]
    MissingStart,
    #[error("workflow has no end node")]
    MissingEnd,
    #[error("workflow has more than one start node")]
    MultipleStart,
    #[error("workflow has more than one end node")]
    MultipleEnd,
    #[error("node `{0}` is not connected to the start-to-end walk")]
    DisconnectedNode(String),
    #[error("node `{node}`: {reason}")]
    InvalidDegree { node: String, reason: String },
    #[error("split or join `{0}` is not properly matched")]
    UnmatchedSplit(String),
    #[error("routing gateway `{0}` can be reached before any activity has produced an outcome")]
    UnroutableGateway(String),
    #[error("cycle through `{0}`")]
    Cycle(String),
    #[error("unknown {kind} reference `{name}`")]
    UnknownReference { kind: String, name: String },
    #[error("unknown workflow definition `{0}`")]
    UnknownDefinition(String),
    #[error("workflow definition `{name}` has no version {version}")]
    UnknownVersion { name: String, version: u64 },
    #[error("composite nesting exceeds depth {0}")]
    DepthExceeded(usize),
    #[error("activity `{0}` requires an outcome but names no schema")]
    MissingSchema(String),
    #[error("predicate on `{node}` reads `{field}`, which the preceding activity's schema does not declare")]
    PredicateFieldUnknown { node: String, field: String },
    #[error("activity `{0}` is not enabled")]
    NotEnabled(String),
    #[error("transition `{transition}` is not allowed on `{step_path}` in state `{state}`")]
    IllegalTransition {
        step_path: String,
        state: String,
        transition: String,
    },
    #[error("roles do not permit `{transition}` on `{step_path}`")]
    RoleDenied { step_path: String, transition: String },
    #[error("transition on `{0}` requires an outcome document")]
    OutcomeRequired(String),
    #[error("outcome document is invalid")]
    OutcomeInvalid(ValidationReport),
    #[error("transition on `{0}` does not accept an outcome document")]
    UnexpectedOutcome(String),
    #[error("routing at `{node}` failed: {source}")]
    RouteEvaluation { node: String, source: RouteError },
}

impl WorkflowError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::Malformed(_) => "Malformed",
            WorkflowError::DuplicateNode(_) => "DuplicateNode",
            WorkflowError::UnknownNode(_) => "UnknownNode",
            WorkflowError::InvalidEdge { .. } => "InvalidEdge",
            WorkflowError::MissingStart => "MissingStart",
            WorkflowError::MissingEnd => "MissingEnd",
            WorkflowError::MultipleStart => "MultipleStart",
            WorkflowError::MultipleEnd => "MultipleEnd",
            WorkflowError::DisconnectedNode(_) => "DisconnectedNode",
            WorkflowError::InvalidDegree { .. } => "InvalidDegree",
            WorkflowError::UnmatchedSplit(_) => "UnmatchedSplit",
            WorkflowError::UnroutableGateway(_) => "UnroutableGateway",
            WorkflowError::Cycle(_) => "Cycle",
            WorkflowError::UnknownReference { .. } => "UnknownReference",
            WorkflowError::UnknownDefinition(_) => "UnknownDefinition",
            WorkflowError::UnknownVersion { .. } => "UnknownVersion",
            WorkflowError::DepthExceeded(_) => "DepthExceeded",
            WorkflowError::MissingSchema(_) => "MissingSchema",
            WorkflowError::PredicateFieldUnknown { .. } => "PredicateFieldUnknown",
            WorkflowError::NotEnabled(_) => "NotEnabled",
            WorkflowError::IllegalTransition { .. } => "IllegalTransition",
            WorkflowError::RoleDenied { .. } => "RoleDenied",
            WorkflowError::OutcomeRequired(_) => "OutcomeRequired",
            WorkflowError::OutcomeInvalid(_) => "OutcomeInvalid",
            WorkflowError::UnexpectedOutcome(_) => "UnexpectedOutcome",
            WorkflowError::RouteEvaluation { .. } => "RouteEvaluationError",
        }
    }
}
