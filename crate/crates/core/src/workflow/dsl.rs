//! JSON state-machine documents in a subset of the Amazon States Language.
//!
//! Supported state types are `Task`, `Parallel`, `Choice`, `Wait` and `Pass`.
//! `Succeed`, `Fail` and `Map` are recognized by the parser but rejected by
//! [`compile`]. `InputPath`/`OutputPath`, catchers and intrinsic functions
//! are not part of the subset.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ast::{CmpOp, Literal, Node, Predicate};
use super::WorkflowError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct StateMachineDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub comment: String,
    pub start_at: String,
    pub states: BTreeMap<String, State>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct Retrier {
    #[serde(default)]
    pub error_equals: Vec<String>,
    /// Retries after the first attempt.
    pub max_attempts: u32,
    #[serde(default)]
    pub interval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct ChoiceRule {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_equals: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_less_than: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_less_than_equals: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_greater_than: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_greater_than_equals: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string_less_than: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string_less_than_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string_greater_than: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string_greater_than_equals: Option<String>,
    pub next: String,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "Type")]
pub enum State {
    #[serde(rename_all = "PascalCase")]
    Task {
        resource: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next: Option<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        end: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        retry: Vec<Retrier>,
    },
    #[serde(rename_all = "PascalCase")]
    Parallel {
        branches: Vec<StateMachineDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next: Option<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        end: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        retry: Vec<Retrier>,
    },
    #[serde(rename_all = "PascalCase")]
    Choice {
        choices: Vec<ChoiceRule>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<String>,
    },
    #[serde(rename_all = "PascalCase")]
    Wait {
        seconds: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next: Option<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        end: bool,
    },
    #[serde(rename_all = "PascalCase")]
    Pass {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next: Option<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        end: bool,
    },
    Succeed {},
    Fail {},
    Map {},
}

impl State {
    fn type_name(&self) -> &'static str {
        match self {
            State::Task { .. } => "Task",
            State::Parallel { .. } => "Parallel",
            State::Choice { .. } => "Choice",
            State::Wait { .. } => "Wait",
            State::Pass { .. } => "Pass",
            State::Succeed {} => "Succeed",
            State::Fail {} => "Fail",
            State::Map {} => "Map",
        }
    }

    fn transition(&self) -> Option<(Option<&String>, bool)> {
        match self {
            State::Task { next, end, .. }
            | State::Parallel { next, end, .. }
            | State::Wait { next, end, .. }
            | State::Pass { next, end } => Some((next.as_ref(), *end)),
            _ => None,
        }
    }

    /// Names of all states this one can transition to.
    fn successors(&self) -> Vec<&String> {
        match self {
            State::Choice { choices, default } => choices
                .iter()
                .map(|c| &c.next)
                .chain(default.iter())
                .collect(),
            other => other
                .transition()
                .and_then(|(next, _)| next)
                .into_iter()
                .collect(),
        }
    }
}

impl ChoiceRule {
    fn comparison(&self) -> Result<(CmpOp, Literal), WorkflowError> {
        let num = [
            (self.numeric_equals, CmpOp::Eq),
            (self.numeric_less_than, CmpOp::Lt),
            (self.numeric_less_than_equals, CmpOp::Le),
            (self.numeric_greater_than, CmpOp::Gt),
            (self.numeric_greater_than_equals, CmpOp::Ge),
        ];
        let text = [
            (&self.string_equals, CmpOp::Eq),
            (&self.string_less_than, CmpOp::Lt),
            (&self.string_less_than_equals, CmpOp::Le),
            (&self.string_greater_than, CmpOp::Gt),
            (&self.string_greater_than_equals, CmpOp::Ge),
        ];
        let mut found: Vec<(CmpOp, Literal)> = num
            .iter()
            .filter_map(|(v, op)| v.map(|x| (*op, Literal::Number(x))))
            .collect();
        found.extend(
            text.iter()
                .filter_map(|(v, op)| v.as_ref().map(|s| (*op, Literal::Text(s.clone())))),
        );
        match found.len() {
            1 => Ok(found.pop().expect("one comparison")),
            0 => Err(WorkflowError::Validation(format!(
                "choice rule on {} has no comparison",
                self.variable
            ))),
            _ => Err(WorkflowError::Validation(format!(
                "choice rule on {} has several comparisons",
                self.variable
            ))),
        }
    }

    fn field(&self) -> Result<&str, WorkflowError> {
        self.variable
            .strip_prefix("$.")
            .filter(|f| !f.is_empty() && !f.contains(['.', '[']))
            .ok_or_else(|| {
                WorkflowError::Validation(format!(
                    "unsupported choice variable `{}` (expected `$.field`)",
                    self.variable
                ))
            })
    }

    pub fn predicate(&self) -> Result<Predicate, WorkflowError> {
        let (op, value) = self.comparison()?;
        Ok(Predicate::new(self.field()?, op, value))
    }

    pub fn from_predicate(p: &Predicate, next: String) -> Self {
        let mut rule = ChoiceRule {
            variable: format!("$.{}", p.field),
            next,
            ..Default::default()
        };
        match (&p.value, p.op) {
            (Literal::Number(x), CmpOp::Eq) => rule.numeric_equals = Some(*x),
            (Literal::Number(x), CmpOp::Lt) => rule.numeric_less_than = Some(*x),
            (Literal::Number(x), CmpOp::Le) => rule.numeric_less_than_equals = Some(*x),
            (Literal::Number(x), CmpOp::Gt) => rule.numeric_greater_than = Some(*x),
            (Literal::Number(x), CmpOp::Ge) => rule.numeric_greater_than_equals = Some(*x),
            (Literal::Text(s), CmpOp::Eq) => rule.string_equals = Some(s.clone()),
            (Literal::Text(s), CmpOp::Lt) => rule.string_less_than = Some(s.clone()),
            (Literal::Text(s), CmpOp::Le) => rule.string_less_than_equals = Some(s.clone()),
            (Literal::Text(s), CmpOp::Gt) => rule.string_greater_than = Some(s.clone()),
            (Literal::Text(s), CmpOp::Ge) => rule.string_greater_than_equals = Some(s.clone()),
        }
        rule
    }
}

/// Parses and validates a state-machine document.
pub fn parse_state_machine(text: &str) -> Result<StateMachineDoc, WorkflowError> {
    let doc: StateMachineDoc = serde_json::from_str(text).map_err(|e| WorkflowError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    doc.validate()?;
    Ok(doc)
}

pub fn serialize_state_machine(doc: &StateMachineDoc) -> String {
    serde_json::to_string_pretty(doc).expect("documents always serialize")
}

impl StateMachineDoc {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if !self.states.contains_key(&self.start_at) {
            return Err(WorkflowError::Validation(format!(
                "StartAt names unknown state `{}`",
                self.start_at
            )));
        }
        for (name, state) in &self.states {
            if let Some((next, end)) = state.transition() {
                match (next, end) {
                    (Some(_), true) => {
                        return Err(WorkflowError::Validation(format!(
                            "state `{name}` has both Next and End"
                        )))
                    }
                    (None, false) => {
                        return Err(WorkflowError::Validation(format!(
                            "state `{name}` has neither Next nor End"
                        )))
                    }
                    _ => {}
                }
            }
            match state {
                State::Choice { choices, default } => {
                    if choices.is_empty() {
                        return Err(WorkflowError::Validation(format!(
                            "choice state `{name}` has no rules"
                        )));
                    }
                    if default.is_none() {
                        return Err(WorkflowError::Validation(format!(
                            "choice state `{name}` has no Default"
                        )));
                    }
                    for rule in choices {
                        rule.predicate()?;
                    }
                }
                State::Parallel {
                    branches, retry, ..
                } => {
                    if branches.is_empty() {
                        return Err(WorkflowError::Validation(format!(
                            "parallel state `{name}` has no branches"
                        )));
                    }
                    for b in branches {
                        b.validate()?;
                    }
                    check_retry(name, retry)?;
                }
                State::Task {
                    resource, retry, ..
                } => {
                    if resource.is_empty() {
                        return Err(WorkflowError::Validation(format!(
                            "task state `{name}` has an empty Resource"
                        )));
                    }
                    check_retry(name, retry)?;
                }
                State::Wait { seconds, .. } if !(seconds.is_finite() && *seconds >= 0.0) => {
                    return Err(WorkflowError::Validation(format!(
                        "wait state `{name}` has invalid Seconds"
                    )));
                }
                _ => {}
            }
            for succ in state.successors() {
                if !self.states.contains_key(succ) {
                    return Err(WorkflowError::Validation(format!(
                        "state `{name}` transitions to missing state `{succ}`"
                    )));
                }
            }
        }
        self.check_graph()
    }

    /// Rejects cycles and unreachable states.
    fn check_graph(&self) -> Result<(), WorkflowError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        // Iterative DFS with an explicit stack of (state, next successor index).
        let mut stack: Vec<(&str, usize)> = vec![(self.start_at.as_str(), 0)];
        marks.insert(self.start_at.as_str(), Mark::Active);
        while let Some((name, idx)) = stack.pop() {
            let succs = self.states[name].successors();
            if let Some(next) = succs.get(idx) {
                stack.push((name, idx + 1));
                match marks.get(next.as_str()) {
                    Some(Mark::Active) => {
                        return Err(WorkflowError::Validation(format!(
                            "cycle through state `{next}`"
                        )))
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(next.as_str(), Mark::Active);
                        stack.push((next.as_str(), 0));
                    }
                }
            } else {
                marks.insert(name, Mark::Done);
            }
        }
        let unreachable: BTreeSet<&str> = self
            .states
            .keys()
            .map(String::as_str)
            .filter(|n| !marks.contains_key(n))
            .collect();
        if let Some(first) = unreachable.iter().next() {
            return Err(WorkflowError::Validation(format!(
                "state `{first}` is unreachable"
            )));
        }
        Ok(())
    }

    /// Static task count: every path through choices counted, shared tails
    /// counted once per path that reaches them.
    pub fn action_count(&self) -> u64 {
        self.function_names().values().sum()
    }

    /// Multiset of task resources, counted the same way as [`Self::action_count`].
    pub fn function_names(&self) -> BTreeMap<String, u64> {
        let mut memo: BTreeMap<&str, BTreeMap<String, u64>> = BTreeMap::new();
        self.names_from(&self.start_at, &mut memo)
    }

    fn names_from<'a>(
        &'a self,
        name: &'a str,
        memo: &mut BTreeMap<&'a str, BTreeMap<String, u64>>,
    ) -> BTreeMap<String, u64> {
        if let Some(m) = memo.get(name) {
            return m.clone();
        }
        let mut out: BTreeMap<String, u64> = BTreeMap::new();
        let state = &self.states[name];
        match state {
            State::Task { resource, .. } => *out.entry(resource.clone()).or_default() += 1,
            State::Parallel { branches, .. } => {
                for b in branches {
                    merge(&mut out, b.function_names());
                }
            }
            _ => {}
        }
        for succ in state.successors() {
            merge(&mut out, self.names_from(succ, memo));
        }
        memo.insert(name, out.clone());
        out
    }
}

fn merge(into: &mut BTreeMap<String, u64>, from: BTreeMap<String, u64>) {
    for (k, v) in from {
        *into.entry(k).or_default() += v;
    }
}

fn check_retry(name: &str, retry: &[Retrier]) -> Result<(), WorkflowError> {
    if retry.len() > 1 {
        return Err(WorkflowError::Validation(format!(
            "state `{name}` has more than one retrier"
        )));
    }
    if let Some(r) = retry.first() {
        if !(r.interval_seconds.is_finite() && r.interval_seconds >= 0.0) {
            return Err(WorkflowError::Validation(format!(
                "state `{name}` has an invalid retry interval"
            )));
        }
    }
    Ok(())
}

fn seconds_to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

fn wrap_retry(node: Node, retry: &[Retrier]) -> Node {
    match retry.first() {
        Some(r) if r.max_attempts > 0 => Node::Retry {
            node: Box::new(node),
            max_attempts: r.max_attempts + 1,
            backoff_ms: seconds_to_ms(r.interval_seconds),
        },
        _ => node,
    }
}

fn collapse(mut nodes: Vec<Node>) -> Node {
    if nodes.len() == 1 {
        nodes.pop().expect("one node")
    } else {
        Node::Sequence(nodes)
    }
}

/// Translates a validated document into a composition tree. Linear chains
/// become sequences; a choice ends its chain and each arm carries the rest of
/// its own path.
pub fn compile(doc: &StateMachineDoc) -> Result<Node, WorkflowError> {
    Ok(collapse(compile_chain(doc, &doc.start_at)?))
}

fn compile_chain(doc: &StateMachineDoc, start: &str) -> Result<Vec<Node>, WorkflowError> {
    let mut out = Vec::new();
    let mut cursor = Some(start.to_string());
    while let Some(name) = cursor.take() {
        let state = doc
            .states
            .get(&name)
            .ok_or_else(|| WorkflowError::Validation(format!("missing state `{name}`")))?;
        match state {
            State::Task {
                resource, retry, ..
            } => out.push(wrap_retry(Node::Task(resource.clone()), retry)),
            State::Parallel {
                branches, retry, ..
            } => {
                let compiled = branches.iter().map(compile).collect::<Result<_, _>>()?;
                out.push(wrap_retry(Node::Parallel(compiled), retry));
            }
            State::Wait { seconds, .. } => out.push(Node::Wait(seconds_to_ms(*seconds))),
            State::Pass { .. } | State::Succeed {} => {}
            State::Choice { choices, default } => {
                let default = default
                    .as_ref()
                    .ok_or_else(|| WorkflowError::Validation("choice without Default".into()))?;
                let mut node = collapse(compile_chain(doc, default)?);
                for rule in choices.iter().rev() {
                    node = Node::choice(
                        rule.predicate()?,
                        collapse(compile_chain(doc, &rule.next)?),
                        node,
                    );
                }
                out.push(node);
                return Ok(out);
            }
            other @ (State::Fail {} | State::Map {}) => {
                return Err(WorkflowError::UnsupportedState(format!(
                    "{} state `{name}`",
                    other.type_name()
                )))
            }
        }
        cursor = state.transition().and_then(|(next, _)| next.cloned());
    }
    Ok(out)
}

/// Lowers a composition tree to a document whose states are named `1`, `2`,
/// ... in creation order. Repeats are unrolled. Retries are only expressible
/// on task and parallel nodes.
pub fn to_state_machine(node: &Node, comment: &str) -> Result<StateMachineDoc, WorkflowError> {
    let mut b = Lowering::default();
    let start = b.lower(node, None)?;
    Ok(StateMachineDoc {
        comment: comment.to_string(),
        start_at: start,
        states: b.states,
    })
}

#[derive(Default)]
struct Lowering {
    states: BTreeMap<String, State>,
    counter: usize,
}

impl Lowering {
    fn name(&mut self) -> String {
        self.counter += 1;
        self.counter.to_string()
    }

    /// Emits states for `node` continuing at `next` (or ending), returning the
    /// entry state's name.
    fn lower(&mut self, node: &Node, next: Option<String>) -> Result<String, WorkflowError> {
        let end = next.is_none();
        match node {
            Node::Task(f) => {
                let name = self.name();
                self.states.insert(
                    name.clone(),
                    State::Task {
                        resource: f.clone(),
                        next,
                        end,
                        retry: Vec::new(),
                    },
                );
                Ok(name)
            }
            Node::Wait(ms) => {
                let name = self.name();
                self.states.insert(
                    name.clone(),
                    State::Wait {
                        seconds: *ms as f64 / 1000.0,
                        next,
                        end,
                    },
                );
                Ok(name)
            }
            Node::Sequence(ns) if ns.is_empty() => {
                let name = self.name();
                self.states.insert(name.clone(), State::Pass { next, end });
                Ok(name)
            }
            Node::Sequence(ns) => {
                let mut target = next;
                for n in ns.iter().rev() {
                    target = Some(self.lower(n, target)?);
                }
                Ok(target.expect("non-empty sequence"))
            }
            Node::Repeat { count, node } => {
                let mut target = next;
                for _ in 0..*count {
                    target = Some(self.lower(node, target)?);
                }
                Ok(target.expect("count >= 1"))
            }
            Node::Parallel(branches) => {
                let name = self.name();
                let branches = branches
                    .iter()
                    .map(|b| self.lower_branch(b))
                    .collect::<Result<_, _>>()?;
                self.states.insert(
                    name.clone(),
                    State::Parallel {
                        branches,
                        next,
                        end,
                        retry: Vec::new(),
                    },
                );
                Ok(name)
            }
            Node::Choice {
                predicate,
                then,
                otherwise,
            } => {
                let name = self.name();
                let then_entry = self.lower(then, next.clone())?;
                let else_entry = self.lower(otherwise, next)?;
                self.states.insert(
                    name.clone(),
                    State::Choice {
                        choices: vec![ChoiceRule::from_predicate(predicate, then_entry)],
                        default: Some(else_entry),
                    },
                );
                Ok(name)
            }
            Node::Retry {
                node: inner,
                max_attempts,
                backoff_ms,
            } => {
                let entry = self.lower(inner, next)?;
                let retrier = Retrier {
                    error_equals: vec!["States.ALL".into()],
                    max_attempts: max_attempts - 1,
                    interval_seconds: *backoff_ms as f64 / 1000.0,
                };
                match (inner.as_ref(), self.states.get_mut(&entry)) {
                    (Node::Task(_), Some(State::Task { retry, .. }))
                    | (Node::Parallel(_), Some(State::Parallel { retry, .. })) => {
                        *retry = vec![retrier];
                        Ok(entry)
                    }
                    _ => Err(WorkflowError::UnsupportedState(
                        "retry is only expressible on Task and Parallel states".into(),
                    )),
                }
            }
        }
    }

    fn lower_branch(&mut self, node: &Node) -> Result<StateMachineDoc, WorkflowError> {
        let mut sub = Lowering {
            states: BTreeMap::new(),
            counter: self.counter,
        };
        let start = sub.lower(node, None)?;
        self.counter = sub.counter;
        Ok(StateMachineDoc {
            comment: String::new(),
            start_at: start,
            states: sub.states,
        })
    }
}

/// The chained-task machine: states `1..=nsteps`, each a task on `resource`.
pub fn sequence_machine(nsteps: u32, resource: &str) -> StateMachineDoc {
    let mut states = BTreeMap::new();
    for i in 1..=nsteps {
        states.insert(
            i.to_string(),
            State::Task {
                resource: resource.to_string(),
                next: (i != nsteps).then(|| (i + 1).to_string()),
                end: i == nsteps,
                retry: Vec::new(),
            },
        );
    }
    StateMachineDoc {
        comment: "A Sequence state machine".into(),
        start_at: "1".into(),
        states,
    }
}

/// One parallel state with `nsteps` single-task branches on `resource`.
pub fn parallel_machine(nsteps: u32, resource: &str) -> StateMachineDoc {
    let branches = (1..=nsteps)
        .map(|i| {
            let mut states = BTreeMap::new();
            states.insert(
                i.to_string(),
                State::Task {
                    resource: resource.to_string(),
                    next: None,
                    end: true,
                    retry: Vec::new(),
                },
            );
            StateMachineDoc {
                comment: String::new(),
                start_at: i.to_string(),
                states,
            }
        })
        .collect();
    let mut states = BTreeMap::new();
    states.insert(
        "Parallel".to_string(),
        State::Parallel {
            branches,
            next: None,
            end: true,
            retry: Vec::new(),
        },
    );
    StateMachineDoc {
        comment: "A state machine with par. states.".into(),
        start_at: "Parallel".into(),
        states,
    }
}

/// Convenience: JSON value form of a document (for embedding in reports).
pub fn to_value(doc: &StateMachineDoc) -> Value {
    serde_json::to_value(doc).expect("documents always serialize")
}
