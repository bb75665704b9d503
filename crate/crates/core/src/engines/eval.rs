//! Replay evaluation of a composition tree.
//!
//! Every engine drives its orchestration by re-evaluating the tree from the
//! root against the results recorded so far. Calls are identified by their
//! position in the tree, so a replay sees exactly the same call paths as the
//! run that scheduled them.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::runtime::{Millis, Payload};
use crate::workflow::Node;

pub(crate) type CallResult = Result<Payload, String>;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CallKind {
    Task(String),
    Timer(Millis),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PendingCall {
    pub path: String,
    pub kind: CallKind,
    pub input: Payload,
}

#[derive(Debug, Default)]
pub(crate) struct Evaluation {
    /// `None` while some call on the executed path has no result yet.
    pub outcome: Option<CallResult>,
    /// Calls the evaluation needs but has no result for, in tree order.
    pub pending: Vec<PendingCall>,
    /// States entered along the executed path (tasks, waits, parallels, choices).
    pub transitions: u64,
    /// Every task reached, with its call path.
    pub encountered: Vec<(String, String)>,
}

pub(crate) fn child_path(base: &str, segment: &str) -> String {
    if base.is_empty() {
        segment.to_string()
    } else {
        format!("{base}.{segment}")
    }
}

pub(crate) fn evaluate(
    spec: &Node,
    input: &Payload,
    results: &BTreeMap<String, CallResult>,
) -> Evaluation {
    let mut ev = Evaluation::default();
    ev.outcome = eval_node(spec, input.clone(), "", results, &mut ev);
    ev
}

fn eval_chain<'a>(
    nodes: impl Iterator<Item = &'a Node>,
    input: Payload,
    path: &str,
    results: &BTreeMap<String, CallResult>,
    ev: &mut Evaluation,
) -> Option<CallResult> {
    let mut value = input;
    for (i, n) in nodes.enumerate() {
        match eval_node(n, value, &child_path(path, &format!("s{i}")), results, ev)? {
            Ok(v) => value = v,
            Err(e) => return Some(Err(e)),
        }
    }
    Some(Ok(value))
}

fn eval_node(
    node: &Node,
    input: Payload,
    path: &str,
    results: &BTreeMap<String, CallResult>,
    ev: &mut Evaluation,
) -> Option<CallResult> {
    match node {
        Node::Task(f) => {
            ev.transitions += 1;
            ev.encountered.push((path.to_string(), f.clone()));
            match results.get(path) {
                Some(r) => Some(r.clone()),
                None => {
                    ev.pending.push(PendingCall {
                        path: path.to_string(),
                        kind: CallKind::Task(f.clone()),
                        input,
                    });
                    None
                }
            }
        }
        Node::Wait(ms) => {
            ev.transitions += 1;
            timer(path, *ms, input, results, ev)
        }
        Node::Sequence(ns) => eval_chain(ns.iter(), input, path, results, ev),
        Node::Repeat { count, node } => eval_chain(
            std::iter::repeat_n(node.as_ref(), *count as usize),
            input,
            path,
            results,
            ev,
        ),
        Node::Parallel(branches) => {
            ev.transitions += 1;
            let mut outs = Vec::with_capacity(branches.len());
            let mut blocked = false;
            let mut failure = None;
            for (i, b) in branches.iter().enumerate() {
                let bp = child_path(path, &format!("p{i}"));
                match eval_node(b, input.clone(), &bp, results, ev) {
                    None => blocked = true,
                    Some(Ok(v)) => outs.push(v.0),
                    Some(Err(e)) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = failure {
                Some(Err(e))
            } else if blocked {
                None
            } else {
                Some(Ok(Payload(Value::Array(outs))))
            }
        }
        Node::Choice {
            predicate,
            then,
            otherwise,
        } => {
            ev.transitions += 1;
            if predicate.eval(&input) {
                eval_node(then, input, &child_path(path, "s0"), results, ev)
            } else {
                eval_node(otherwise, input, &child_path(path, "s1"), results, ev)
            }
        }
        Node::Retry {
            node,
            max_attempts,
            backoff_ms,
        } => {
            let mut last = String::new();
            for attempt in 0..*max_attempts {
                let ap = child_path(path, &format!("s{}", 2 * attempt));
                match eval_node(node, input.clone(), &ap, results, ev)? {
                    Ok(v) => return Some(Ok(v)),
                    Err(e) => last = e,
                }
                if attempt + 1 < *max_attempts && *backoff_ms > 0 {
                    let tp = child_path(path, &format!("s{}", 2 * attempt + 1));
                    timer(&tp, *backoff_ms, Payload::empty(), results, ev)?.ok()?;
                }
            }
            Some(Err(last))
        }
    }
}

/// A timer passes its input through once fired.
fn timer(
    path: &str,
    ms: Millis,
    input: Payload,
    results: &BTreeMap<String, CallResult>,
    ev: &mut Evaluation,
) -> Option<CallResult> {
    if results.contains_key(path) {
        Some(Ok(input))
    } else {
        ev.pending.push(PendingCall {
            path: path.to_string(),
            kind: CallKind::Timer(ms),
            input: Payload::empty(),
        });
        None
    }
}

/// Evaluates `spec` directly, with `call` standing in for every task.
/// Used as the reference semantics for tests and for substitution checks.
pub fn evaluate_direct(
    spec: &Node,
    input: &Payload,
    call: &mut dyn FnMut(&str, &Payload) -> Result<Payload, String>,
) -> Result<Payload, String> {
    let mut results = BTreeMap::new();
    loop {
        let ev = evaluate(spec, input, &results);
        if let Some(out) = ev.outcome {
            return out;
        }
        for p in ev.pending {
            let r = match &p.kind {
                CallKind::Task(f) => call(f, &p.input),
                CallKind::Timer(_) => Ok(Payload::empty()),
            };
            results.insert(p.path, r);
        }
    }
}
