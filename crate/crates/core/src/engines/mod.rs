//! Orchestration engines behind one entry point, [`run`].
//!
//! | engine      | composition is a function | parallel | orchestrator billing       |
//! |-------------|---------------------------|----------|----------------------------|
//! | `asf`       | no                        | yes      | none (external scheduler)  |
//! | `composer`  | yes                       | no       | one slice per conductor run|
//! | `sequences` | yes                       | no       | none                       |
//! | `adf`       | yes                       | yes      | one slice per episode      |
//! | `suspend`   | yes                       | yes      | running time, waits excluded |
//! | `inline`    | yes                       | yes      | running time, waits included |

mod eval;
mod history;
mod instance;
mod profile;

use std::sync::Arc;

use thiserror::Error;

pub use eval::evaluate_direct;
pub use history::{EventLog, HistoryEvent, HistoryKind};
pub use profile::{DispatchMode, Engine, EngineProfile, Profiles, RateLimit};

pub(crate) use instance::{Instance, InstanceStatus, Owner, Wake};

use crate::runtime::{
    Behavior, Composition, FunctionDef, InvocationRecord, Millis, Payload, RuntimeError, Simulation,
};
use crate::workflow::{Node, WorkflowError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("state of {size} bytes exceeds the {limit}-byte limit")]
    StateTooLarge { size: u64, limit: u64 },
    #[error("transition rate limit exceeded")]
    RateLimited,
    #[error("composition has {count} actions, the limit is {limit}")]
    TooManyActions { count: u64, limit: u64 },
    #[error("{0} does not support parallel composition")]
    ParallelUnsupported(Engine),
    #[error("unsupported composition: {0}")]
    UnsupportedSpec(String),
    #[error("nondeterministic orchestrator: {0}")]
    NondeterminismDetected(String),
    #[error("corrupt history: {0}")]
    CorruptHistory(String),
    #[error("workflow failed: {0}")]
    WorkflowFailed(String),
    #[error("orchestration did not complete")]
    Incomplete,
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// Test hooks for the event-sourcing engine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventSourcingHooks {
    /// Swap the orchestrator code for a different one after this many episodes.
    pub mutate_after_episode: Option<u64>,
    /// Start from this history instead of an empty one.
    pub resume_from: Option<EventLog>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub extended_sessions: bool,
    pub hooks: Option<Arc<EventSourcingHooks>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowResult {
    pub engine: Engine,
    pub output: Payload,
    pub wall_time_ms: Millis,
    /// Records created by this run, orchestrator records included.
    pub trace: Vec<InvocationRecord>,
    /// State transitions over every orchestration in the run.
    pub transitions: u64,
    /// History of the outermost event-sourced orchestration, if any.
    pub history: Option<EventLog>,
    /// Stored (post-compression) history bytes over every orchestration.
    pub history_stored_bytes: u64,
    pub replay_count: u64,
}

/// Registers `spec` as a function named `name` executed by `engine`.
pub fn register_composition(
    sim: &mut Simulation,
    name: &str,
    engine: Engine,
    spec: Node,
    opts: &RunOptions,
) -> Result<String, EngineError> {
    spec.validate()?;
    let comp = Composition {
        hooks: opts.hooks.clone(),
        ..Composition::new(engine, spec).with_extended_sessions(opts.extended_sessions)
    };
    Ok(sim.register_function(FunctionDef::new(name, Behavior::Composition(comp)))?)
}

/// Runs `spec` on `engine` inside `sim` until its result is delivered.
///
/// Wall time is measured from the call to the delivery of the result to the
/// caller. Engines whose compositions are functions run the composition as
/// an invocation; the client scheduler runs it outside any function.
pub fn run(
    sim: &mut Simulation,
    engine: Engine,
    spec: &Node,
    input: Payload,
    opts: &RunOptions,
) -> Result<WorkflowResult, EngineError> {
    spec.validate()?;
    sim.take_engine_errors();
    let t0 = sim.now();
    let first_record = sim.records().len();
    let first_instance = sim.instance_count();
    let key = sim.fresh_key("result");
    let profile = sim.profiles().get(engine).clone();
    if profile.composition_is_function {
        let name = sim.fresh_key(&format!("{engine}-composition"));
        register_composition(sim, &name, engine, spec.clone(), opts)?;
        sim.invoke_async(&name, input, &key)?;
    } else {
        let comp = Composition {
            hooks: opts.hooks.clone(),
            ..Composition::new(engine, spec.clone()).with_extended_sessions(opts.extended_sessions)
        };
        sim.spawn_instance(Instance::new(
            profile,
            &comp,
            input,
            Owner::Root { key: key.clone() },
            String::new(),
        ));
    }
    if !sim.run_until(|s| s.latched(&key).is_some())? {
        return Err(EngineError::Incomplete);
    }
    let event = sim.take_latched(&key).expect("checked above");
    if let Some(err) = sim.take_engine_errors().into_iter().next() {
        return Err(err);
    }
    if let Some(msg) = event.error {
        return Err(EngineError::WorkflowFailed(msg));
    }
    let mut transitions = 0;
    let mut replay_count = 0;
    let mut history = None;
    let mut history_stored_bytes = 0;
    for inst in sim.instances_since(first_instance) {
        transitions += inst.transitions();
        replay_count += inst.replay_count();
        if inst.engine() == Engine::EventSourcing {
            history_stored_bytes += inst.history().stored_bytes();
            if history.is_none() {
                history = Some(inst.history().clone());
            }
        }
    }
    Ok(WorkflowResult {
        engine,
        output: event.payload,
        wall_time_ms: event.fire_time - t0,
        trace: sim.records()[first_record..].to_vec(),
        transitions,
        history,
        history_stored_bytes,
        replay_count,
    })
}

pub fn run_client_scheduler(
    sim: &mut Simulation,
    spec: &Node,
    input: Payload,
) -> Result<WorkflowResult, EngineError> {
    run(
        sim,
        Engine::ClientScheduler,
        spec,
        input,
        &RunOptions::default(),
    )
}

pub fn run_reactive_conductor(
    sim: &mut Simulation,
    spec: &Node,
    input: Payload,
) -> Result<WorkflowResult, EngineError> {
    run(
        sim,
        Engine::ReactiveConductor,
        spec,
        input,
        &RunOptions::default(),
    )
}

/// Chains `functions` statically; an empty list is the identity.
pub fn run_sequence_native(
    sim: &mut Simulation,
    functions: &[&str],
    input: Payload,
) -> Result<WorkflowResult, EngineError> {
    let spec = Node::Sequence(functions.iter().map(|f| Node::task(*f)).collect());
    run(sim, Engine::Sequences, &spec, input, &RunOptions::default())
}

pub fn run_event_sourcing(
    sim: &mut Simulation,
    spec: &Node,
    input: Payload,
    extended_sessions: bool,
) -> Result<WorkflowResult, EngineError> {
    let opts = RunOptions {
        extended_sessions,
        hooks: None,
    };
    run(sim, Engine::EventSourcing, spec, input, &opts)
}

pub fn run_suspend_orchestrator(
    sim: &mut Simulation,
    spec: &Node,
    input: Payload,
) -> Result<WorkflowResult, EngineError> {
    run(sim, Engine::Suspend, spec, input, &RunOptions::default())
}

pub fn run_inline_orchestrator(
    sim: &mut Simulation,
    spec: &Node,
    input: Payload,
) -> Result<WorkflowResult, EngineError> {
    run(sim, Engine::Inline, spec, input, &RunOptions::default())
}
