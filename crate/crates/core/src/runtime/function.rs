use std::cell::Cell;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::clock::Millis;
use super::payload::Payload;
use super::RuntimeError;
use crate::engines::{Engine, EventSourcingHooks};
use crate::workflow::Node;

/// One step of a scripted function body. Steps run in order against the
/// current value, which starts as the invocation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStep {
    Sleep(Millis),
    /// Sets `field` on an object value (a non-object value becomes `{}` first).
    SetField {
        field: String,
        value: Value,
    },
    /// Adds `by` to a numeric field, treating a missing field as 0.
    Increment {
        field: String,
        by: i64,
    },
    /// Replaces the value with `{ field: value }`.
    Wrap {
        field: String,
    },
    /// Suspends the invocation until an event on `key` arrives; the event
    /// payload becomes the current value.
    AwaitEvent {
        key: String,
    },
    Fail {
        message: String,
    },
}

/// A composition registered as an ordinary function.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub engine: Engine,
    pub spec: Arc<Node>,
    pub extended_sessions: bool,
    pub hooks: Option<Arc<EventSourcingHooks>>,
}

impl Composition {
    pub fn new(engine: Engine, spec: Node) -> Self {
        Self {
            engine,
            spec: Arc::new(spec),
            extended_sessions: false,
            hooks: None,
        }
    }

    pub fn with_extended_sessions(mut self, on: bool) -> Self {
        self.extended_sessions = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Sleep(Millis),
    Echo,
    Scripted(Vec<ScriptStep>),
    Composition(Composition),
}

impl Behavior {
    pub(crate) fn script(&self) -> Option<Vec<ScriptStep>> {
        match self {
            Behavior::Sleep(ms) => Some(vec![ScriptStep::Sleep(*ms)]),
            Behavior::Echo => Some(Vec::new()),
            Behavior::Scripted(steps) => Some(steps.clone()),
            Behavior::Composition(_) => None,
        }
    }

    /// Output of a non-composition behavior computed without the clock:
    /// sleeps are skipped. `None` for compositions and event waits.
    pub fn direct_output(&self, input: &Payload) -> Option<Result<Payload, String>> {
        let steps = self.script()?;
        let mut value = input.clone();
        let mut pc = 0;
        loop {
            pc = run_pure_steps(&steps, pc, &mut value);
            match steps.get(pc) {
                None => return Some(Ok(value)),
                Some(ScriptStep::Sleep(_)) => pc += 1,
                Some(ScriptStep::Fail { message }) => return Some(Err(message.clone())),
                Some(_) => return None,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub behavior: Behavior,
    pub max_payload_bytes: Option<u64>,
    /// Sealed functions report any inspection of their behavior.
    pub sealed: bool,
}

impl FunctionDef {
    pub fn new(name: impl Into<String>, behavior: Behavior) -> Self {
        Self {
            name: name.into(),
            behavior,
            max_payload_bytes: None,
            sealed: false,
        }
    }

    pub fn sleep(name: impl Into<String>, ms: Millis) -> Self {
        Self::new(name, Behavior::Sleep(ms))
    }

    pub fn echo(name: impl Into<String>) -> Self {
        Self::new(name, Behavior::Echo)
    }

    pub fn scripted(name: impl Into<String>, steps: Vec<ScriptStep>) -> Self {
        Self::new(name, Behavior::Scripted(steps))
    }

    pub fn with_payload_limit(mut self, bytes: u64) -> Self {
        self.max_payload_bytes = Some(bytes);
        self
    }

    pub fn sealed(mut self) -> Self {
        self.sealed = true;
        self
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    functions: BTreeMap<String, FunctionDef>,
    introspections: Cell<u64>,
}

impl Registry {
    pub fn register(&mut self, def: FunctionDef) -> Result<String, RuntimeError> {
        if def.name.is_empty() {
            return Err(RuntimeError::InvalidFunction("empty name".into()));
        }
        if self.functions.contains_key(&def.name) {
            return Err(RuntimeError::DuplicateName(def.name));
        }
        let name = def.name.clone();
        self.functions.insert(name.clone(), def);
        Ok(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    /// Reads a function's definition. Reading a sealed function counts as an
    /// introspection.
    pub fn inspect(&self, name: &str) -> Option<&FunctionDef> {
        let def = self.functions.get(name)?;
        if def.sealed {
            self.introspections.set(self.introspections.get() + 1);
        }
        Some(def)
    }

    pub fn introspection_count(&self) -> u64 {
        self.introspections.get()
    }

    /// Access used by the runtime itself to execute a function.
    pub(crate) fn for_execution(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.get(name)
    }
}

/// Runs the non-blocking steps of a script starting at `pc`. Returns the
/// index of the first blocking step (sleep, await, fail) or `steps.len()`.
pub(crate) fn run_pure_steps(steps: &[ScriptStep], mut pc: usize, value: &mut Payload) -> usize {
    while let Some(step) = steps.get(pc) {
        match step {
            ScriptStep::SetField { field, value: v } => {
                as_object(value).insert(field.clone(), v.clone());
            }
            ScriptStep::Increment { field, by } => {
                let obj = as_object(value);
                let cur = obj.get(field).and_then(Value::as_i64).unwrap_or(0);
                obj.insert(field.clone(), Value::from(cur + by));
            }
            ScriptStep::Wrap { field } => {
                let inner = std::mem::take(&mut value.0);
                let mut map = serde_json::Map::new();
                map.insert(field.clone(), inner);
                value.0 = Value::Object(map);
            }
            ScriptStep::Sleep(_) | ScriptStep::AwaitEvent { .. } | ScriptStep::Fail { .. } => {
                return pc
            }
        }
        pc += 1;
    }
    pc
}

fn as_object(value: &mut Payload) -> &mut serde_json::Map<String, Value> {
    if !value.0.is_object() {
        value.0 = Value::Object(serde_json::Map::new());
    }
    value.0.as_object_mut().expect("object")
}
