#![allow(dead_code)]

use std::collections::BTreeMap;

use faasflow::runtime::{read_trace, write_trace, InvocationRecord, Millis, Payload, Role};
use faasflow::workflow::{CmpOp, Literal, Node, Predicate};
use proptest::prelude::*;
use serde_json::{json, Value};

pub const TASKS: [&str; 5] = ["inc:x", "inc:y", "echo", "sleep:50", "sleep:120"];

fn leaf() -> impl Strategy<Value = Node> {
    prop_oneof![
        4 => prop::sample::select(TASKS.to_vec()).prop_map(Node::task),
        1 => (0u64..200).prop_map(Node::Wait),
    ]
}

fn predicate() -> impl Strategy<Value = Predicate> {
    (
        prop::sample::select(vec![CmpOp::Lt, CmpOp::Ge, CmpOp::Eq]),
        0i32..4,
    )
        .prop_map(|(op, v)| Predicate::new("x", op, Literal::Number(f64::from(v))))
}

/// Compositions of depth at most 4 with at most 20 actions.
pub fn arb_spec(parallel: bool) -> impl Strategy<Value = Node> {
    leaf()
        .prop_recursive(3, 24, 4, move |inner| {
            let seq = prop::collection::vec(inner.clone(), 0..4).prop_map(Node::Sequence);
            let choice = (predicate(), inner.clone(), inner.clone())
                .prop_map(|(p, a, b)| Node::choice(p, a, b));
            let retry = (prop::sample::select(TASKS.to_vec()), 1u32..3, 0u64..100)
                .prop_map(|(t, a, b)| Node::retry(Node::task(t), a, b).unwrap());
            let repeat = (1u32..3, inner.clone()).prop_map(|(c, n)| Node::repeat(c, n).unwrap());
            let par = prop::collection::vec(inner, 1..4).prop_map(|b| Node::parallel(b).unwrap());
            if parallel {
                prop_oneof![3 => seq, 1 => choice, 1 => retry, 1 => repeat, 2 => par].boxed()
            } else {
                prop_oneof![3 => seq, 1 => choice, 1 => retry, 1 => repeat].boxed()
            }
        })
        .prop_filter("at most 20 actions", |n| n.action_count() <= 20)
}

/// Linear chains of tasks only.
pub fn arb_chain() -> impl Strategy<Value = Node> {
    prop::collection::vec(
        prop::sample::select(TASKS.to_vec()).prop_map(Node::task),
        1..8,
    )
    .prop_map(Node::Sequence)
}

pub fn arb_input() -> impl Strategy<Value = Payload> {
    prop_oneof![
        Just(Payload::empty()),
        (0i64..4).prop_map(|x| Payload(json!({ "x": x }))),
    ]
}

fn call(task: &str, input: &Payload) -> Payload {
    match task.strip_prefix("inc:") {
        Some(field) => {
            let mut obj = match &input.0 {
                Value::Object(m) => m.clone(),
                _ => serde_json::Map::new(),
            };
            let cur = obj.get(field).and_then(Value::as_i64).unwrap_or(0);
            obj.insert(field.to_string(), json!(cur + 1));
            Payload(Value::Object(obj))
        }
        None => input.clone(),
    }
}

/// Straightforward recursive interpreter used as the output oracle.
pub fn interpret(node: &Node, input: &Payload) -> Payload {
    match node {
        Node::Task(t) => call(t, input),
        Node::Wait(_) => input.clone(),
        Node::Sequence(ns) => ns.iter().fold(input.clone(), |acc, n| interpret(n, &acc)),
        Node::Parallel(ns) => Payload(Value::Array(
            ns.iter().map(|n| interpret(n, input).0).collect(),
        )),
        Node::Choice {
            predicate,
            then,
            otherwise,
        } => {
            let x = input.0.get(&predicate.field).and_then(Value::as_f64);
            let Literal::Number(v) = predicate.value else {
                unreachable!()
            };
            let holds = match (x, predicate.op) {
                (None, _) => false,
                (Some(x), CmpOp::Lt) => x < v,
                (Some(x), CmpOp::Ge) => x >= v,
                (Some(x), CmpOp::Eq) => x == v,
                _ => unreachable!(),
            };
            interpret(if holds { then } else { otherwise }, input)
        }
        Node::Retry { node, .. } => interpret(node, input),
        Node::Repeat { count, node } => {
            (0..*count).fold(input.clone(), |acc, _| interpret(node, &acc))
        }
    }
}

/// Round-trips a trace through its NDJSON export.
pub fn exported(trace: &[InvocationRecord]) -> Vec<InvocationRecord> {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).unwrap();
    read_trace(buf.as_slice()).unwrap()
}

/// `a` must finish before `b` starts when their paths first differ at two
/// sequential positions with `a` earlier.
fn precedes(a: &str, b: &str) -> bool {
    let (xs, ys): (Vec<&str>, Vec<&str>) = (a.split('.').collect(), b.split('.').collect());
    for (x, y) in xs.iter().zip(&ys) {
        if x != y {
            let idx = |s: &str| s.strip_prefix('s').and_then(|n| n.parse::<u64>().ok());
            return matches!((idx(x), idx(y)), (Some(i), Some(j)) if i < j);
        }
    }
    false
}

/// Heaviest chain of function records under the precedence order, found by
/// trying every predecessor of every record.
pub fn brute_force_ideal(trace: &[InvocationRecord]) -> Millis {
    let fns: Vec<&InvocationRecord> = trace.iter().filter(|r| r.role == Role::Function).collect();
    let mut memo: BTreeMap<usize, Millis> = BTreeMap::new();
    fn best(i: usize, fns: &[&InvocationRecord], memo: &mut BTreeMap<usize, Millis>) -> Millis {
        if let Some(&v) = memo.get(&i) {
            return v;
        }
        let before = (0..fns.len())
            .filter(|&j| precedes(&fns[j].path, &fns[i].path))
            .map(|j| best(j, fns, memo))
            .max()
            .unwrap_or(0);
        let v = before + fns[i].billed_ms();
        memo.insert(i, v);
        v
    }
    (0..fns.len())
        .map(|i| best(i, &fns, &mut memo))
        .max()
        .unwrap_or(0)
}

/// Number of calls (tasks and timers) a run of `node` awaits.
pub fn awaited_calls(node: &Node, input: &Payload) -> u64 {
    match node {
        Node::Task(_) | Node::Wait(_) => 1,
        Node::Sequence(ns) => {
            let mut acc = input.clone();
            let mut calls = 0;
            for n in ns {
                calls += awaited_calls(n, &acc);
                acc = interpret(n, &acc);
            }
            calls
        }
        Node::Parallel(ns) => ns.iter().map(|n| awaited_calls(n, input)).sum(),
        Node::Choice {
            predicate,
            then,
            otherwise,
        } => {
            let arm = if predicate.eval(input) {
                then
            } else {
                otherwise
            };
            awaited_calls(arm, input)
        }
        Node::Retry { node, .. } => awaited_calls(node, input),
        Node::Repeat { count, node } => {
            let mut acc = input.clone();
            let mut calls = 0;
            for _ in 0..*count {
                calls += awaited_calls(node, &acc);
                acc = interpret(node, &acc);
            }
            calls
        }
    }
}
