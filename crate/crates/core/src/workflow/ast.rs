use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::WorkflowError;
use crate::runtime::{Millis, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Number(f64),
    Text(String),
}

/// Comparison of one top-level payload field against a literal.
///
/// Numbers compare with numbers and strings with strings; a missing field or
/// a type mismatch evaluates to false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: String,
    pub op: CmpOp,
    pub value: Literal,
}

impl Predicate {
    pub fn new(field: impl Into<String>, op: CmpOp, value: Literal) -> Self {
        Self {
            field: field.into(),
            op,
            value,
        }
    }

    pub fn eval(&self, payload: &Payload) -> bool {
        use std::cmp::Ordering;
        let ord = match (payload.field(&self.field), &self.value) {
            (Some(Value::Number(n)), Literal::Number(x)) => {
                n.as_f64().and_then(|n| n.partial_cmp(x))
            }
            (Some(Value::String(s)), Literal::Text(x)) => Some(s.as_str().cmp(x.as_str())),
            _ => None,
        };
        match (ord, self.op) {
            (None, _) => false,
            (Some(o), CmpOp::Eq) => o == Ordering::Equal,
            (Some(o), CmpOp::Lt) => o == Ordering::Less,
            (Some(o), CmpOp::Le) => o != Ordering::Greater,
            (Some(o), CmpOp::Gt) => o == Ordering::Greater,
            (Some(o), CmpOp::Ge) => o != Ordering::Less,
        }
    }
}

/// A composition tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Task(String),
    /// Runs children in order, threading the payload through. Empty is identity.
    Sequence(Vec<Node>),
    /// Runs branches on the same input; output is the array of branch outputs.
    Parallel(Vec<Node>),
    Choice {
        predicate: Predicate,
        then: Box<Node>,
        otherwise: Box<Node>,
    },
    /// Re-runs `node` after a failure, waiting `backoff_ms` between attempts.
    Retry {
        node: Box<Node>,
        max_attempts: u32,
        backoff_ms: Millis,
    },
    Repeat {
        count: u32,
        node: Box<Node>,
    },
    Wait(Millis),
}

impl Node {
    pub fn task(name: impl Into<String>) -> Self {
        Node::Task(name.into())
    }

    pub fn identity() -> Self {
        Node::Sequence(Vec::new())
    }

    pub fn choice(predicate: Predicate, then: Node, otherwise: Node) -> Self {
        Node::Choice {
            predicate,
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    pub fn retry(node: Node, max_attempts: u32, backoff_ms: Millis) -> Result<Self, WorkflowError> {
        if max_attempts == 0 {
            return Err(WorkflowError::InvalidCount(0));
        }
        Ok(Node::Retry {
            node: Box::new(node),
            max_attempts,
            backoff_ms,
        })
    }

    pub fn repeat(count: u32, node: Node) -> Result<Self, WorkflowError> {
        if count == 0 {
            return Err(WorkflowError::InvalidCount(0));
        }
        Ok(Node::Repeat {
            count,
            node: Box::new(node),
        })
    }

    pub fn parallel(branches: Vec<Node>) -> Result<Self, WorkflowError> {
        if branches.is_empty() {
            return Err(WorkflowError::InvalidCount(0));
        }
        Ok(Node::Parallel(branches))
    }

    /// Checks the structural invariants that the constructors enforce, for
    /// trees built directly or deserialized.
    pub fn validate(&self) -> Result<(), WorkflowError> {
        match self {
            Node::Task(name) if name.is_empty() => Err(WorkflowError::Validation(
                "task with empty function name".into(),
            )),
            Node::Task(_) | Node::Wait(_) => Ok(()),
            Node::Sequence(ns) => ns.iter().try_for_each(Node::validate),
            Node::Parallel(ns) => {
                if ns.is_empty() {
                    return Err(WorkflowError::InvalidCount(0));
                }
                ns.iter().try_for_each(Node::validate)
            }
            Node::Choice {
                then, otherwise, ..
            } => {
                then.validate()?;
                otherwise.validate()
            }
            Node::Retry {
                node, max_attempts, ..
            } => {
                if *max_attempts == 0 {
                    return Err(WorkflowError::InvalidCount(0));
                }
                node.validate()
            }
            Node::Repeat { count, node } => {
                if *count == 0 {
                    return Err(WorkflowError::InvalidCount(0));
                }
                node.validate()
            }
        }
    }

    /// Number of task occurrences with repeats expanded. Both arms of a choice
    /// count, and a retried node counts once.
    pub fn action_count(&self) -> u64 {
        match self {
            Node::Task(_) => 1,
            Node::Wait(_) => 0,
            Node::Sequence(ns) | Node::Parallel(ns) => ns.iter().map(Node::action_count).sum(),
            Node::Choice {
                then, otherwise, ..
            } => then.action_count() + otherwise.action_count(),
            Node::Retry { node, .. } => node.action_count(),
            Node::Repeat { count, node } => u64::from(*count) * node.action_count(),
        }
    }

    /// Multiset of referenced function names, repeats expanded.
    pub fn function_names(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        self.collect_names(1, &mut out);
        out
    }

    fn collect_names(&self, times: u64, out: &mut BTreeMap<String, u64>) {
        match self {
            Node::Task(name) => *out.entry(name.clone()).or_default() += times,
            Node::Wait(_) => {}
            Node::Sequence(ns) | Node::Parallel(ns) => {
                ns.iter().for_each(|n| n.collect_names(times, out))
            }
            Node::Choice {
                then, otherwise, ..
            } => {
                then.collect_names(times, out);
                otherwise.collect_names(times, out);
            }
            Node::Retry { node, .. } => node.collect_names(times, out),
            Node::Repeat { count, node } => node.collect_names(times * u64::from(*count), out),
        }
    }

    pub fn contains_parallel(&self) -> bool {
        match self {
            Node::Parallel(_) => true,
            Node::Task(_) | Node::Wait(_) => false,
            Node::Sequence(ns) => ns.iter().any(Node::contains_parallel),
            Node::Choice {
                then, otherwise, ..
            } => then.contains_parallel() || otherwise.contains_parallel(),
            Node::Retry { node, .. } | Node::Repeat { node, .. } => node.contains_parallel(),
        }
    }

    /// Task names in execution order if the tree is a plain chain of tasks
    /// (sequences and repeats only).
    pub fn as_linear_chain(&self) -> Option<Vec<String>> {
        let mut out = Vec::new();
        fn walk(n: &Node, out: &mut Vec<String>) -> bool {
            match n {
                Node::Task(f) => {
                    out.push(f.clone());
                    true
                }
                Node::Sequence(ns) => ns.iter().all(|c| walk(c, out)),
                Node::Repeat { count, node } => (0..*count).all(|_| walk(node, out)),
                _ => false,
            }
        }
        walk(self, &mut out).then_some(out)
    }

    /// Canonical form: nested sequences flattened, single-element sequences
    /// and one-shot repeats unwrapped, nested repeats multiplied.
    pub fn normalize(&self) -> Node {
        match self {
            Node::Task(_) | Node::Wait(_) => self.clone(),
            Node::Sequence(ns) => {
                let mut flat = Vec::with_capacity(ns.len());
                for n in ns {
                    match n.normalize() {
                        Node::Sequence(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                if flat.len() == 1 {
                    flat.pop().expect("one element")
                } else {
                    Node::Sequence(flat)
                }
            }
            Node::Parallel(ns) => Node::Parallel(ns.iter().map(Node::normalize).collect()),
            Node::Choice {
                predicate,
                then,
                otherwise,
            } => Node::Choice {
                predicate: predicate.clone(),
                then: Box::new(then.normalize()),
                otherwise: Box::new(otherwise.normalize()),
            },
            Node::Retry {
                node,
                max_attempts,
                backoff_ms,
            } => {
                let inner = node.normalize();
                if *max_attempts == 1 {
                    inner
                } else {
                    Node::Retry {
                        node: Box::new(inner),
                        max_attempts: *max_attempts,
                        backoff_ms: *backoff_ms,
                    }
                }
            }
            Node::Repeat { count, node } => match (count, node.normalize()) {
                (1, inner) => inner,
                (_, Node::Sequence(ns)) if ns.is_empty() => Node::Sequence(ns),
                (c, Node::Repeat { count: c2, node }) => Node::Repeat {
                    count: c * c2,
                    node,
                },
                (c, inner) => Node::Repeat {
                    count: *c,
                    node: Box::new(inner),
                },
            },
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Task(name) => write!(f, "{name}"),
            Node::Wait(ms) => write!(f, "wait({ms})"),
            Node::Sequence(ns) | Node::Parallel(ns) => {
                let tag = if matches!(self, Node::Sequence(_)) {
                    "seq"
                } else {
                    "par"
                };
                write!(f, "{tag}[")?;
                for (i, n) in ns.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{n}")?;
                }
                write!(f, "]")
            }
            Node::Choice {
                then, otherwise, ..
            } => write!(f, "if(?, {then}, {otherwise})"),
            Node::Retry {
                node, max_attempts, ..
            } => write!(f, "retry({max_attempts}, {node})"),
            Node::Repeat { count, node } => write!(f, "repeat({count}, {node})"),
        }
    }
}

/// `count` back-to-back invocations of `task`.
pub fn seq(count: u32, task: &str) -> Result<Node, WorkflowError> {
    Node::repeat(count, Node::task(task))
}

/// `count` concurrent invocations of `task`; output is the ordered array of
/// branch results.
pub fn fan_out(count: u32, task: &str) -> Result<Node, WorkflowError> {
    if count == 0 {
        return Err(WorkflowError::InvalidCount(0));
    }
    Node::parallel((0..count).map(|_| Node::task(task)).collect())
}
