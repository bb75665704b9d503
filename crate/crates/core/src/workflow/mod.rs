//! Composition trees, builders and the JSON state-machine front end.

mod ast;
mod dsl;

use thiserror::Error;

pub use ast::{fan_out, seq, CmpOp, Literal, Node, Predicate};
pub use dsl::{
    compile, parallel_machine, parse_state_machine, sequence_machine, serialize_state_machine,
    to_state_machine, to_value, ChoiceRule, Retrier, State, StateMachineDoc,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("count must be at least 1 (got {0})")]
    InvalidCount(u64),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid state machine: {0}")]
    Validation(String),
    #[error("unsupported state: {0}")]
    UnsupportedState(String),
}

/// Reads a workflow file and compiles it.
pub fn load_workflow(text: &str) -> Result<Node, WorkflowError> {
    compile(&parse_state_machine(text)?)
}
