//! Composite activity definitions as published.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::predicate::RoutePredicate;
use super::WorkflowError;
use crate::lifecycle::{Role, DEFAULT_STATE_MACHINE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeActivityDef {
    pub name: String,
    pub nodes: Vec<NodeDef>,
    pub edges: Vec<EdgeDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDef {
    pub id: String,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum NodeKind {
    Start,
    End,
    Elementary(ElementaryActivityDef),
    Composite {
        workflow: String,
    },
    AndSplit,
    AndJoin,
    /// Out-edges in declaration order: one per predicate, then the default branch.
    XorSplit {
        predicates: Vec<RoutePredicate>,
    },
    XorJoin,
    /// While-do loop over the referenced composite.
    Loop {
        predicate: RoutePredicate,
        body: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_iterations: Option<u32>,
    },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Start => "Start",
            NodeKind::End => "End",
            NodeKind::Elementary(_) => "Elementary",
            NodeKind::Composite { .. } => "Composite",
            NodeKind::AndSplit => "AndSplit",
            NodeKind::AndJoin => "AndJoin",
            NodeKind::XorSplit { .. } => "XorSplit",
            NodeKind::XorJoin => "XorJoin",
            NodeKind::Loop { .. } => "Loop",
        }
    }

    pub fn is_join(&self) -> bool {
        matches!(self, NodeKind::AndJoin | NodeKind::XorJoin)
    }

    pub fn is_split(&self) -> bool {
        matches!(self, NodeKind::AndSplit | NodeKind::XorSplit { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementaryActivityDef {
    /// Outcome schema, pinned at its latest version when the workflow is instantiated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default = "default_state_machine")]
    pub state_machine: String,
    #[serde(default)]
    pub role: Role,
}

fn default_state_machine() -> String {
    DEFAULT_STATE_MACHINE.to_owned()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDef {
    pub from: String,
    pub to: String,
}

impl CompositeActivityDef {
    pub fn parse(payload: &Value) -> Result<Self, WorkflowError> {
        serde_json::from_value(payload.clone()).map_err(|e| WorkflowError::Malformed(e.to_string()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("workflow definition serializes")
    }
}
