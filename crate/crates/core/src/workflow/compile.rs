//! Structural validation of composite activity graphs.
//!
//! Graphs must be block-structured: every split closes at a join of the same
//! type, branches do not escape their block, and every node lies on the walk
//! from Start to End.

use std::collections::{HashMap, HashSet, VecDeque};

use super::def::{CompositeActivityDef, NodeKind};
use super::WorkflowError;
use crate::description::DescriptionKind;

/// Answers whether a referenced description exists.
pub trait ReferenceCheck {
    fn exists(&self, kind: DescriptionKind, name: &str) -> bool;
}

impl<F: Fn(DescriptionKind, &str) -> bool> ReferenceCheck for F {
    fn exists(&self, kind: DescriptionKind, name: &str) -> bool {
        self(kind, name)
    }
}

/// Accepts every reference; used when only the graph shape matters.
pub struct AnyReference;

impl ReferenceCheck for AnyReference {
    fn exists(&self, _: DescriptionKind, _: &str) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
pub struct CompiledComposite {
    pub def: CompositeActivityDef,
    pub index: HashMap<String, usize>,
    /// Successors in edge declaration order.
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    pub start: usize,
    pub end: usize,
    /// Split node → its matching join.
    pub join_of: HashMap<usize, usize>,
    pub topo_order: Vec<usize>,
}

impl CompiledComposite {
    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn activity_count(&self) -> usize {
        self.def
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Elementary(_)))
            .count()
    }

    /// Descriptions this composite references directly, in node order.
    pub fn references(&self) -> Vec<(DescriptionKind, String)> {
        let mut out = Vec::new();
        for n in &self.def.nodes {
            match &n.kind {
                NodeKind::Elementary(a) => {
                    if let Some(s) = &a.schema {
                        out.push((DescriptionKind::Schema, s.clone()));
                    }
                    out.push((DescriptionKind::StateMachine, a.state_machine.clone()));
                }
                NodeKind::Composite { workflow } => out.push((DescriptionKind::WorkflowDef, workflow.clone())),
                NodeKind::Loop { body, .. } => out.push((DescriptionKind::WorkflowDef, body.clone())),
                _ => {}
            }
        }
        out
    }
}

pub fn compile_workflow(
    def: &CompositeActivityDef,
    refs: &dyn ReferenceCheck,
) -> Result<CompiledComposite, WorkflowError> {
    if def.name.is_empty() {
        return Err(WorkflowError::Malformed("workflow name is empty".into()));
    }
    let mut index = HashMap::new();
    for (i, n) in def.nodes.iter().enumerate() {
        if n.id.is_empty() || n.id.contains('/') {
            return Err(WorkflowError::Malformed(format!("invalid node id `{}`", n.id)));
        }
        if index.insert(n.id.clone(), i).is_some() {
            return Err(WorkflowError::DuplicateNode(n.id.clone()));
        }
    }
    let starts: Vec<usize> = positions(def, |k| matches!(k, NodeKind::Start));
    let ends: Vec<usize> = positions(def, |k| matches!(k, NodeKind::End));
    let start = match starts.as_slice() {
        [] => return Err(WorkflowError::MissingStart),
        [s] => *s,
        _ => return Err(WorkflowError::MultipleStart),
    };
    let end = match ends.as_slice() {
        [] => return Err(WorkflowError::MissingEnd),
        [e] => *e,
        _ => return Err(WorkflowError::MultipleEnd),
    };

    let n = def.nodes.len();
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    let mut seen_edges = HashSet::new();
    for e in &def.edges {
        let from = *index.get(&e.from).ok_or_else(|| WorkflowError::UnknownNode(e.from.clone()))?;
        let to = *index.get(&e.to).ok_or_else(|| WorkflowError::UnknownNode(e.to.clone()))?;
        if to == start || from == end || from == to || !seen_edges.insert((from, to)) {
            return Err(WorkflowError::InvalidEdge {
                from: e.from.clone(),
                to: e.to.clone(),
            });
        }
        succ[from].push(to);
        pred[to].push(from);
    }

    let reachable = forward_reach(start, &succ);
    if let Some(i) = (0..n).find(|i| !reachable.contains(i)) {
        return Err(WorkflowError::DisconnectedNode(def.nodes[i].id.clone()));
    }

    for (i, node) in def.nodes.iter().enumerate() {
        let (ins, outs) = (pred[i].len(), succ[i].len());
        let bad = |reason: &str| {
            Err(WorkflowError::InvalidDegree {
                node: node.id.clone(),
                reason: reason.to_owned(),
            })
        };
        match &node.kind {
            NodeKind::Start if outs != 1 => return bad("start must have exactly one successor"),
            NodeKind::Elementary(_) | NodeKind::Composite { .. } | NodeKind::Loop { .. } if ins != 1 || outs != 1 => {
                return bad("activities have exactly one predecessor and one successor")
            }
            NodeKind::AndSplit if ins != 1 || outs < 2 => return bad("and-split needs one input and two or more branches"),
            NodeKind::XorSplit { predicates } if ins != 1 || predicates.is_empty() || outs != predicates.len() + 1 => {
                return bad("xor-split needs one input and one branch per predicate plus a default")
            }
            NodeKind::AndJoin | NodeKind::XorJoin if outs != 1 => return bad("joins have exactly one successor"),
            _ => {}
        }
    }

    let mut walker = Walker {
        def,
        succ: &succ,
        pred: &pred,
        visited: HashSet::new(),
        join_of: HashMap::new(),
    };
    let (stop, _) = walker.walk(start, false)?;
    if stop != end {
        return Err(WorkflowError::UnmatchedSplit(def.nodes[stop].id.clone()));
    }
    walker.visited.insert(end);
    if let Some(i) = (0..n).find(|i| !walker.visited.contains(i)) {
        return Err(WorkflowError::DisconnectedNode(def.nodes[i].id.clone()));
    }
    let join_of = walker.join_of;

    for node in &def.nodes {
        let check = |kind: DescriptionKind, name: &String| {
            if refs.exists(kind, name) {
                Ok(())
            } else {
                Err(WorkflowError::UnknownReference {
                    kind: kind.to_string(),
                    name: name.clone(),
                })
            }
        };
        match &node.kind {
            NodeKind::Elementary(a) => {
                if let Some(s) = &a.schema {
                    check(DescriptionKind::Schema, s)?;
                }
                check(DescriptionKind::StateMachine, &a.state_machine)?;
            }
            NodeKind::Composite { workflow } => check(DescriptionKind::WorkflowDef, workflow)?,
            NodeKind::Loop { body, .. } => check(DescriptionKind::WorkflowDef, body)?,
            _ => {}
        }
    }

    let topo_order = topological_order(&succ, &pred);
    Ok(CompiledComposite {
        def: def.clone(),
        index,
        succ,
        pred,
        start,
        end,
        join_of,
        topo_order,
    })
}

fn positions(def: &CompositeActivityDef, f: impl Fn(&NodeKind) -> bool) -> Vec<usize> {
    def.nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| f(&n.kind))
        .map(|(i, _)| i)
        .collect()
}

fn forward_reach(start: usize, succ: &[Vec<usize>]) -> HashSet<usize> {
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for &s in &succ[i] {
            if seen.insert(s) {
                queue.push_back(s);
            }
        }
    }
    seen
}

fn topological_order(succ: &[Vec<usize>], pred: &[Vec<usize>]) -> Vec<usize> {
    let mut indeg: Vec<usize> = pred.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..succ.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(succ.len());
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    order
}

struct Walker<'a> {
    def: &'a CompositeActivityDef,
    succ: &'a [Vec<usize>],
    pred: &'a [Vec<usize>],
    visited: HashSet<usize>,
    join_of: HashMap<usize, usize>,
}

impl<'a> Walker<'a> {
    fn kind(&self, i: usize) -> &'a NodeKind {
        &self.def.nodes[i].kind
    }

    fn id(&self, i: usize) -> String {
        self.def.nodes[i].id.clone()
    }

    /// Follows a sequence from `from` until it reaches a join or End.
    ///
    /// `work` tracks whether an activity is guaranteed to have completed on
    /// every path to the current point; routing gateways need one to read.
    fn walk(&mut self, from: usize, mut work: bool) -> Result<(usize, bool), WorkflowError> {
        let mut cur = from;
        loop {
            let kind = self.kind(cur);
            if kind.is_join() || matches!(kind, NodeKind::End) {
                return Ok((cur, work));
            }
            if !self.visited.insert(cur) {
                return Err(WorkflowError::Cycle(self.id(cur)));
            }
            match kind {
                NodeKind::Start => cur = self.succ[cur][0],
                NodeKind::Elementary(_) | NodeKind::Composite { .. } => {
                    work = true;
                    cur = self.succ[cur][0];
                }
                NodeKind::Loop { .. } => {
                    if !work {
                        return Err(WorkflowError::UnroutableGateway(self.id(cur)));
                    }
                    cur = self.succ[cur][0];
                }
                NodeKind::AndSplit | NodeKind::XorSplit { .. } => {
                    let is_and = matches!(kind, NodeKind::AndSplit);
                    if !is_and && !work {
                        return Err(WorkflowError::UnroutableGateway(self.id(cur)));
                    }
                    let mut join = None;
                    let mut any_work = false;
                    let mut all_work = true;
                    for &branch in &self.succ[cur] {
                        let (stop, w) = self.walk(branch, work)?;
                        let matches_type = match self.kind(stop) {
                            NodeKind::AndJoin => is_and,
                            NodeKind::XorJoin => !is_and,
                            _ => false,
                        };
                        if !matches_type || join.is_some_and(|j| j != stop) {
                            return Err(WorkflowError::UnmatchedSplit(self.id(cur)));
                        }
                        join = Some(stop);
                        any_work |= w;
                        all_work &= w;
                    }
                    let j = join.expect("splits have at least two branches");
                    if self.pred[j].len() != self.succ[cur].len() || !self.visited.insert(j) {
                        return Err(WorkflowError::UnmatchedSplit(self.id(cur)));
                    }
                    self.join_of.insert(cur, j);
                    work = if is_and { any_work } else { all_work };
                    cur = self.succ[j][0];
                }
                NodeKind::End | NodeKind::AndJoin | NodeKind::XorJoin => unreachable!(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn compile(v: serde_json::Value) -> Result<CompiledComposite, WorkflowError> {
        compile_workflow(&CompositeActivityDef::parse(&v).unwrap(), &AnyReference)
    }

    fn act(id: &str) -> serde_json::Value {
        json!({"id": id, "type": "Elementary"})
    }

    fn edges(pairs: &[(&str, &str)]) -> serde_json::Value {
        pairs.iter().map(|(a, b)| json!({"from": a, "to": b})).collect()
    }

    #[test]
    fn single_activity() {
        let c = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, act("A"), {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "A"), ("A", "e")])}))
        .unwrap();
        assert_eq!(c.activity_count(), 1);
        assert_eq!(c.topo_order.len(), 3);
    }

    #[test]
    fn and_split_join() {
        let c = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, {"id": "fork", "type": "AndSplit"}, act("A"), act("B"),
            {"id": "sync", "type": "AndJoin"}, {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "fork"), ("fork", "A"), ("fork", "B"), ("A", "sync"), ("B", "sync"), ("sync", "e")])}))
        .unwrap();
        assert_eq!(c.join_of[&c.index["fork"]], c.index["sync"]);
    }

    #[test]
    fn and_split_without_join() {
        let err = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, {"id": "fork", "type": "AndSplit"}, act("A"), act("B"),
            {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "fork"), ("fork", "A"), ("fork", "B"), ("A", "e"), ("B", "e")])}))
        .unwrap_err();
        assert_eq!(err.code(), "UnmatchedSplit");
    }

    #[test]
    fn split_closed_by_wrong_join_type() {
        let err = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, act("P"), {"id": "x", "type": "XorSplit", "predicates": [["==", "k", 1]]},
            act("A"), act("B"), {"id": "j", "type": "AndJoin"}, {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "P"), ("P", "x"), ("x", "A"), ("x", "B"), ("A", "j"), ("B", "j"), ("j", "e")])}))
        .unwrap_err();
        assert_eq!(err.code(), "UnmatchedSplit");
    }

    #[test]
    fn disconnected_node() {
        let err = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, act("A"), act("Lost"), {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "A"), ("A", "e")])}))
        .unwrap_err();
        assert_eq!(err, WorkflowError::DisconnectedNode("Lost".into()));
    }

    #[test]
    fn start_and_end_cardinality() {
        let two_starts = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, {"id": "s2", "type": "Start"}, {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "e")])}));
        assert_eq!(two_starts.unwrap_err().code(), "MultipleStart");
        let two_ends = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, {"id": "e", "type": "End"}, {"id": "e2", "type": "End"}],
            "edges": edges(&[("s", "e")])}));
        assert_eq!(two_ends.unwrap_err().code(), "MultipleEnd");
    }

    #[test]
    fn edge_into_start_rejected() {
        let err = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, act("A"), {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "A"), ("A", "e"), ("A", "s")])}))
        .unwrap_err();
        assert_eq!(err.code(), "InvalidEdge");
    }

    #[test]
    fn xor_split_right_after_start_is_unroutable() {
        let err = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, {"id": "x", "type": "XorSplit", "predicates": [["==", "k", 1]]},
            act("A"), act("B"), {"id": "j", "type": "XorJoin"}, {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "x"), ("x", "A"), ("x", "B"), ("A", "j"), ("B", "j"), ("j", "e")])}))
        .unwrap_err();
        assert_eq!(err.code(), "UnroutableGateway");
    }

    #[test]
    fn unknown_reference() {
        let def = CompositeActivityDef::parse(&json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, {"id": "A", "type": "Elementary", "schema": "Nope"},
            {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "A"), ("A", "e")])}))
        .unwrap();
        let only_sms = |k: DescriptionKind, _: &str| k == DescriptionKind::StateMachine;
        let err = compile_workflow(&def, &only_sms).unwrap_err();
        assert_eq!(err.code(), "UnknownReference");
    }

    #[test]
    fn nested_blocks_with_empty_branch() {
        let c = compile(json!({"name": "W", "nodes": [
            {"id": "s", "type": "Start"}, act("P"),
            {"id": "x", "type": "XorSplit", "predicates": [["==", "k", 1]]},
            {"id": "f", "type": "AndSplit"}, act("A"), act("B"), {"id": "fj", "type": "AndJoin"},
            {"id": "xj", "type": "XorJoin"}, {"id": "e", "type": "End"}],
            "edges": edges(&[("s", "P"), ("P", "x"), ("x", "f"), ("x", "xj"), ("f", "A"), ("f", "B"),
                ("A", "fj"), ("B", "fj"), ("fj", "xj"), ("xj", "e")])}))
        .unwrap();
        assert_eq!(c.join_of.len(), 2);
    }
}
