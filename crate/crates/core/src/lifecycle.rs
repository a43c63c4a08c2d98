//! Activity state machines.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Name of the state machine used by elementary activities unless they name another.
pub const DEFAULT_STATE_MACHINE: &str = "Elementary";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("transition `{transition}` is not defined from state `{state}`")]
    IllegalTransition { state: String, transition: String },
    #[error("invalid state machine: {0}")]
    Invalid(String),
}

impl LifecycleError {
    pub fn code(&self) -> &'static str {
        match self {
            LifecycleError::UnknownState(_) => "UnknownState",
            LifecycleError::IllegalTransition { .. } => "IllegalTransition",
            LifecycleError::Invalid(_) => "InvalidStateMachine",
        }
    }
}

/// Role required to fire a transition or perform an activity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Any,
    Named(String),
}

impl Role {
    pub fn admits<'a, I>(&self, roles: I) -> bool
    where
        I: IntoIterator<Item = &'a String>,
    {
        match self {
            Role::Any => true,
            Role::Named(r) => roles.into_iter().any(|x| x == r),
        }
    }
}

impl Default for Role {
    fn default() -> Self {
        Role::Any
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Any => f.write_str("ANY"),
            Role::Named(r) => f.write_str(r),
        }
    }
}

impl Serialize for Role {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "ANY" { Role::Any } else { Role::Named(s) })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDef {
    pub name: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub requires_outcome: bool,
    #[serde(default)]
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMachineDef {
    pub name: String,
    pub states: BTreeSet<String>,
    pub initial: String,
    pub terminal: BTreeSet<String>,
    pub transitions: Vec<TransitionDef>,
}

impl StateMachineDef {
    /// Waiting → Started → Finished, with suspend/resume and fail/recover detours.
    pub fn default_elementary() -> Self {
        let t = |name: &str, from: &str, to: &str, requires_outcome: bool| TransitionDef {
            name: name.into(),
            from: from.into(),
            to: to.into(),
            requires_outcome,
            role: Role::Any,
        };
        Self {
            name: DEFAULT_STATE_MACHINE.into(),
            states: ["Waiting", "Started", "Suspended", "Finished", "Error"]
                .into_iter()
                .map(String::from)
                .collect(),
            initial: "Waiting".into(),
            terminal: BTreeSet::from(["Finished".to_string()]),
            transitions: vec![
                t("Start", "Waiting", "Started", false),
                t("Complete", "Started", "Finished", true),
                t("Suspend", "Started", "Suspended", false),
                t("Resume", "Suspended", "Started", false),
                t("Fail", "Started", "Error", false),
                t("Recover", "Error", "Waiting", false),
            ],
        }
    }

    pub fn parse(payload: &Value) -> Result<Self, LifecycleError> {
        let sm: StateMachineDef =
            serde_json::from_value(payload.clone()).map_err(|e| LifecycleError::Invalid(e.to_string()))?;
        sm.check()?;
        Ok(sm)
    }

    /// Enforces the structural invariants of a state machine definition.
    pub fn check(&self) -> Result<(), LifecycleError> {
        let invalid = |m: String| Err(LifecycleError::Invalid(m));
        if self.name.is_empty() {
            return invalid("state machine name is empty".into());
        }
        if !self.states.contains(&self.initial) {
            return invalid(format!("initial state `{}` is not declared", self.initial));
        }
        if let Some(t) = self.terminal.iter().find(|t| !self.states.contains(*t)) {
            return invalid(format!("terminal state `{t}` is not declared"));
        }
        let mut seen = HashSet::new();
        for t in &self.transitions {
            if !self.states.contains(&t.from) || !self.states.contains(&t.to) {
                return invalid(format!("transition `{}` references an undeclared state", t.name));
            }
            if self.terminal.contains(&t.from) {
                return invalid(format!("transition `{}` leaves terminal state `{}`", t.name, t.from));
            }
            if !seen.insert((t.from.as_str(), t.name.as_str())) {
                return invalid(format!("transition `{}` declared twice from `{}`", t.name, t.from));
            }
        }
        Ok(())
    }

    pub fn is_terminal(&self, state: &str) -> bool {
        self.terminal.contains(state)
    }

    pub fn transition(&self, state: &str, name: &str) -> Option<&TransitionDef> {
        self.transitions.iter().find(|t| t.from == state && t.name == name)
    }

    pub fn requires_any_outcome(&self) -> bool {
        self.transitions.iter().any(|t| t.requires_outcome)
    }

    fn ensure_state(&self, state: &str) -> Result<(), LifecycleError> {
        if self.states.contains(state) {
            Ok(())
        } else {
            Err(LifecycleError::UnknownState(state.to_owned()))
        }
    }
}

/// Transitions leaving `state` that `roles` may fire, sorted by name.
pub fn allowed_transitions<'a, I>(
    sm: &StateMachineDef,
    state: &str,
    roles: I,
) -> Result<Vec<String>, LifecycleError>
where
    I: IntoIterator<Item = &'a String> + Clone,
{
    sm.ensure_state(state)?;
    let mut names: Vec<String> = sm
        .transitions
        .iter()
        .filter(|t| t.from == state && t.role.admits(roles.clone()))
        .map(|t| t.name.clone())
        .collect();
    names.sort();
    Ok(names)
}

pub fn apply_transition(sm: &StateMachineDef, state: &str, transition: &str) -> Result<String, LifecycleError> {
    sm.ensure_state(state)?;
    sm.transition(state, transition)
        .map(|t| t.to.clone())
        .ok_or_else(|| LifecycleError::IllegalTransition {
            state: state.to_owned(),
            transition: transition.to_owned(),
        })
}
