//! Random block-structured processes and an independent interpreter for
//! them.
//!
//! A [`Shape`] is generated by proptest, then laid out into workflow
//! definitions by [`layout`]. The interpreter walks the labelled tree
//! directly and never looks at the flattened graph, so it can serve as an
//! oracle for the engine's token game.

use proptest::prelude::*;
use serde_json::{json, Value};

pub const SCHEMA: &str = "Probe";

pub fn probe_schema() -> Value {
    json!({"name": SCHEMA, "fields": [{"name": "x", "kind": "integer", "required": true}]})
}

#[derive(Clone, Debug)]
pub enum Shape {
    Act,
    Seq(Vec<Shape>),
    And(Vec<Shape>),
    /// Branch `i` is taken when `x < thresholds[i]`, first match wins; the
    /// last branch is the default.
    Xor(Vec<i64>, Vec<Shape>),
    /// while x < t do body, at most `max` times.
    Loop(i64, u32, Box<Shape>),
    Composite(Box<Shape>),
}

pub fn shape() -> impl Strategy<Value = Shape> {
    Just(Shape::Act).prop_recursive(5, 32, 4, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 2..4).prop_map(Shape::Seq),
            proptest::collection::vec(inner.clone(), 2..4).prop_map(Shape::And),
            proptest::collection::vec(inner.clone(), 2..4).prop_flat_map(|branches| {
                let n = branches.len() - 1;
                proptest::collection::vec(1i64..10, n).prop_map(move |t| Shape::Xor(t, branches.clone()))
            }),
            (1i64..10, 1u32..4, inner.clone()).prop_map(|(t, m, b)| Shape::Loop(t, m, Box::new(b))),
            inner.prop_map(|b| Shape::Composite(Box::new(b))),
        ]
    })
}

/// A shape with every activity and gateway given its step path.
#[derive(Clone, Debug)]
pub enum Labelled {
    Act(String),
    Seq(Vec<Labelled>),
    And(Vec<Labelled>),
    Xor {
        probe: String,
        thresholds: Vec<i64>,
        branches: Vec<Labelled>,
    },
    Loop {
        path: String,
        probe: String,
        threshold: i64,
        max: u32,
        body: Box<Labelled>,
    },
    Composite(Box<Labelled>),
}

/// Workflow definitions for a shape: sub-workflows first, root last.
pub struct Layout {
    pub workflows: Vec<Value>,
    pub root: String,
    pub tree: Labelled,
}

struct Builder {
    counter: usize,
    workflows: Vec<Value>,
    tag: String,
}

struct Graph {
    nodes: Vec<Value>,
    edges: Vec<Value>,
}

impl Builder {
    fn fresh(&mut self, p: &str) -> String {
        self.counter += 1;
        format!("{p}{}", self.counter)
    }

    fn path(prefix: &str, id: &str) -> String {
        if prefix.is_empty() {
            id.to_owned()
        } else {
            format!("{prefix}/{id}")
        }
    }

    fn activity(&mut self, g: &mut Graph, prefix: &str) -> (String, String) {
        let id = self.fresh("a");
        g.nodes.push(json!({"id": id, "type": "Elementary", "schema": SCHEMA}));
        let path = Self::path(prefix, &id);
        (id, path)
    }

    /// Emits `s` into `g`; returns (entry id, exit id, labelled tree).
    fn emit(&mut self, s: &Shape, g: &mut Graph, prefix: &str) -> (String, String, Labelled) {
        let edge = |g: &mut Graph, a: &str, b: &str| g.edges.push(json!({"from": a, "to": b}));
        match s {
            Shape::Act => {
                let (id, path) = self.activity(g, prefix);
                (id.clone(), id, Labelled::Act(path))
            }
            Shape::Seq(parts) => {
                let mut entry = None;
                let mut last: Option<String> = None;
                let mut kids = Vec::new();
                for p in parts {
                    let (i, o, l) = self.emit(p, g, prefix);
                    if let Some(prev) = &last {
                        edge(g, prev, &i);
                    }
                    entry.get_or_insert(i);
                    last = Some(o);
                    kids.push(l);
                }
                (entry.unwrap(), last.unwrap(), Labelled::Seq(kids))
            }
            Shape::And(parts) => {
                let split = self.fresh("s");
                let join = self.fresh("j");
                g.nodes.push(json!({"id": split, "type": "AndSplit"}));
                g.nodes.push(json!({"id": join, "type": "AndJoin"}));
                let mut kids = Vec::new();
                for p in parts {
                    let (i, o, l) = self.emit(p, g, prefix);
                    edge(g, &split, &i);
                    edge(g, &o, &join);
                    kids.push(l);
                }
                (split, join, Labelled::And(kids))
            }
            Shape::Xor(thresholds, parts) => {
                let (probe, probe_path) = self.activity(g, prefix);
                let split = self.fresh("x");
                let join = self.fresh("m");
                let predicates: Vec<Value> = thresholds.iter().map(|t| json!(["<", "x", t])).collect();
                g.nodes.push(json!({"id": split, "type": "XorSplit", "predicates": predicates}));
                g.nodes.push(json!({"id": join, "type": "XorJoin"}));
                edge(g, &probe, &split);
                let mut kids = Vec::new();
                for p in parts {
                    let (i, o, l) = self.emit(p, g, prefix);
                    edge(g, &split, &i);
                    edge(g, &o, &join);
                    kids.push(l);
                }
                let tree = Labelled::Xor {
                    probe: probe_path,
                    thresholds: thresholds.clone(),
                    branches: kids,
                };
                (probe, join, tree)
            }
            Shape::Loop(threshold, max, body) => {
                let (probe, probe_path) = self.activity(g, prefix);
                let id = self.fresh("l");
                let path = Self::path(prefix, &id);
                let (name, body_tree) = self.workflow(body, &path);
                g.nodes.push(json!({"id": id, "type": "Loop", "predicate": ["<", "x", threshold],
                    "body": name, "max_iterations": max}));
                edge(g, &probe, &id);
                let tree = Labelled::Loop {
                    path,
                    probe: probe_path,
                    threshold: *threshold,
                    max: *max,
                    body: Box::new(body_tree),
                };
                (probe, id.clone(), tree)
            }
            Shape::Composite(inner) => {
                let id = self.fresh("c");
                let path = Self::path(prefix, &id);
                let (name, tree) = self.workflow(inner, &path);
                g.nodes.push(json!({"id": id, "type": "Composite", "workflow": name}));
                (id.clone(), id, Labelled::Composite(Box::new(tree)))
            }
        }
    }

    fn workflow(&mut self, s: &Shape, prefix: &str) -> (String, Labelled) {
        let id = self.fresh("W");
        let name = format!("{}{id}", self.tag);
        let mut g = Graph {
            nodes: vec![json!({"id": "start", "type": "Start"})],
            edges: Vec::new(),
        };
        let (i, o, tree) = self.emit(s, &mut g, prefix);
        g.nodes.push(json!({"id": "end", "type": "End"}));
        g.edges.insert(0, json!({"from": "start", "to": i}));
        g.edges.push(json!({"from": o, "to": "end"}));
        self.workflows.push(json!({"name": name, "nodes": g.nodes, "edges": g.edges}));
        (name, tree)
    }
}

/// Lays `s` out as workflows whose names all start with `tag`.
pub fn layout(s: &Shape, tag: &str) -> Layout {
    let mut b = Builder {
        counter: 0,
        workflows: Vec::new(),
        tag: tag.to_owned(),
    };
    let (root, tree) = b.workflow(s, "");
    Layout {
        workflows: b.workflows,
        root,
        tree,
    }
}

/// Interpreter state for one labelled block.
#[derive(Clone, Debug)]
pub enum Run {
    Act,
    Seq(usize, Box<Run>),
    And(Vec<Option<Run>>),
    Probe,
    Branch(usize, Box<Run>),
    Body(u32, Box<Run>),
    Faulted,
    Composite(Box<Run>),
}

pub enum Step {
    NotHere,
    Running,
    Done,
}

impl Labelled {
    pub fn start(&self) -> Run {
        match self {
            Labelled::Act(_) => Run::Act,
            Labelled::Seq(parts) => Run::Seq(0, Box::new(parts[0].start())),
            Labelled::And(parts) => Run::And(parts.iter().map(|p| Some(p.start())).collect()),
            Labelled::Xor { .. } | Labelled::Loop { .. } => Run::Probe,
            Labelled::Composite(inner) => Run::Composite(Box::new(inner.start())),
        }
    }

    /// Activities holding a token, and loops stuck on their iteration limit.
    pub fn active(&self, run: &Run, acts: &mut Vec<String>, faults: &mut Vec<String>) {
        self.marking(run, acts, faults, &mut 0);
    }

    /// As [`active`](Self::active), also counting tokens parked at AND-joins
    /// by branches that have already finished.
    pub fn marking(&self, run: &Run, acts: &mut Vec<String>, faults: &mut Vec<String>, parked: &mut usize) {
        match (self, run) {
            (Labelled::Act(p), Run::Act) => acts.push(p.clone()),
            (Labelled::Seq(parts), Run::Seq(i, r)) => parts[*i].marking(r, acts, faults, parked),
            (Labelled::And(parts), Run::And(rs)) => {
                for (p, r) in parts.iter().zip(rs) {
                    match r {
                        Some(r) => p.marking(r, acts, faults, parked),
                        None => *parked += 1,
                    }
                }
            }
            (Labelled::Xor { probe, .. } | Labelled::Loop { probe, .. }, Run::Probe) => acts.push(probe.clone()),
            (Labelled::Xor { branches, .. }, Run::Branch(i, r)) => branches[*i].marking(r, acts, faults, parked),
            (Labelled::Loop { body, .. }, Run::Body(_, r)) => body.marking(r, acts, faults, parked),
            (Labelled::Loop { path, .. }, Run::Faulted) => faults.push(path.clone()),
            (Labelled::Composite(inner), Run::Composite(r)) => inner.marking(r, acts, faults, parked),
            (l, r) => panic!("interpreter state {r:?} does not fit {l:?}"),
        }
    }

    /// Completes the activity at `path` with outcome `x`.
    pub fn complete(&self, run: &mut Run, path: &str, x: i64) -> Step {
        match (self, &mut *run) {
            (Labelled::Act(p), Run::Act) => {
                if p == path {
                    Step::Done
                } else {
                    Step::NotHere
                }
            }
            (Labelled::Seq(parts), Run::Seq(i, r)) => match parts[*i].complete(r, path, x) {
                Step::Done if *i + 1 == parts.len() => Step::Done,
                Step::Done => {
                    *i += 1;
                    **r = parts[*i].start();
                    Step::Running
                }
                other => other,
            },
            (Labelled::And(parts), Run::And(rs)) => {
                for (p, slot) in parts.iter().zip(rs.iter_mut()) {
                    let Some(r) = slot else { continue };
                    match p.complete(r, path, x) {
                        Step::NotHere => continue,
                        Step::Running => return Step::Running,
                        Step::Done => {
                            *slot = None;
                            return if rs.iter().all(Option::is_none) { Step::Done } else { Step::Running };
                        }
                    }
                }
                Step::NotHere
            }
            (Labelled::Xor { probe, thresholds, branches }, Run::Probe) => {
                if probe != path {
                    return Step::NotHere;
                }
                let i = thresholds.iter().position(|t| x < *t).unwrap_or(thresholds.len());
                *run = Run::Branch(i, Box::new(branches[i].start()));
                Step::Running
            }
            (Labelled::Xor { branches, .. }, Run::Branch(i, r)) => branches[*i].complete(r, path, x),
            (Labelled::Loop { probe, .. }, Run::Probe) => {
                if probe != path {
                    return Step::NotHere;
                }
                self.decide(run, 0, x)
            }
            (Labelled::Loop { body, .. }, Run::Body(n, r)) => {
                let n = *n;
                match body.complete(r, path, x) {
                    Step::Done => self.decide(run, n, x),
                    other => other,
                }
            }
            (Labelled::Loop { .. }, Run::Faulted) => Step::NotHere,
            (Labelled::Composite(inner), Run::Composite(r)) => inner.complete(r, path, x),
            (l, r) => panic!("interpreter state {r:?} does not fit {l:?}"),
        }
    }

    fn decide(&self, run: &mut Run, done: u32, x: i64) -> Step {
        let Labelled::Loop { threshold, max, body, .. } = self else { unreachable!() };
        if x >= *threshold {
            return Step::Done;
        }
        *run = if done == *max { Run::Faulted } else { Run::Body(done + 1, Box::new(body.start())) };
        Step::Running
    }
}

/// Number of activities in the labelled tree, counting loop bodies once.
pub fn activity_count(l: &Labelled) -> usize {
    match l {
        Labelled::Act(_) => 1,
        Labelled::Seq(p) | Labelled::And(p) => p.iter().map(activity_count).sum(),
        Labelled::Xor { branches, .. } => 1 + branches.iter().map(activity_count).sum::<usize>(),
        Labelled::Loop { body, .. } => 1 + activity_count(body),
        Labelled::Composite(i) => activity_count(i),
    }
}

pub fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

pub fn x_doc(x: i64) -> Value {
    json!({"x": x})
}
