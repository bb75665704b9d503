//! Deterministic discrete-event simulation of a FaaS platform.
//!
//! A [`Simulation`] owns a virtual clock, a function registry, the invocation
//! records produced so far and the event bus used for completions and for the
//! suspend/resume protocol. Everything runs on one thread; two simulations
//! built the same way produce identical traces.

mod clock;
mod function;
mod latency;
mod payload;
mod record;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Millis, VirtualClock};
pub use function::{Behavior, Composition, FunctionDef, Registry, ScriptStep};
pub use latency::{LatencyModel, PayloadCliff};
pub use payload::Payload;
pub use record::{
    read_trace, trace_to_string, write_trace, Interval, InvocationId, InvocationRecord,
    InvocationState, Role,
};

use crate::engines::{EngineError, Instance, InstanceStatus, Owner, Profiles, Wake};
use function::run_pure_steps;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("function `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid function definition: {0}")]
    InvalidFunction(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("payload of {size} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge { limit: u64, size: u64 },
    #[error("invocation {0} is not running")]
    NotRunning(InvocationId),
    #[error("invocation {0} exceeded the suspension time limit")]
    SuspendLimitExceeded(InvocationId),
    #[error("action budget of {0} exhausted")]
    LivelockGuard(u64),
    #[error("unknown invocation {0}")]
    UnknownInvocation(InvocationId),
    #[error("invocation {id} failed: {message}")]
    InvocationFailed { id: InvocationId, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A keyed notification on the event bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub key: String,
    pub payload: Payload,
    pub fire_time: Millis,
    /// Set when the event reports a failed invocation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Event {
    pub fn new(key: impl Into<String>, payload: Payload) -> Self {
        Self {
            key: key.into(),
            payload,
            fire_time: 0,
            error: None,
        }
    }
}

/// Result of a self-suspension request.
#[derive(Debug, Clone, PartialEq)]
pub enum SuspendOutcome {
    Suspended,
    /// The event had already fired; the invocation keeps running.
    Resumed(Event),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seed for the jitter generator.
    pub seed: u64,
    /// Upper bound of the uniform noise added to dispatch and delivery delays.
    pub jitter_ms: Millis,
    pub action_budget: u64,
    pub suspend_limit_ms: Millis,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jitter_ms: 0,
            action_budget: 50_000_000,
            suspend_limit_ms: 24 * 3600 * 1000,
        }
    }
}

/// Where an invocation sits in a composition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CallContext {
    pub parent: Option<InvocationId>,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct InstanceId(pub usize);

type Callback = Box<dyn FnOnce(&mut Simulation)>;

enum Action {
    Start(InvocationId),
    Continue(InvocationId),
    Fire(Event),
    Resume { id: InvocationId, event: Event },
    SuspendTimeout { id: InvocationId, epoch: u64 },
    Wake { instance: InstanceId, wake: Wake },
    Call(Callback),
}

enum ExecKind {
    Script {
        steps: Arc<[ScriptStep]>,
        pc: usize,
        value: Payload,
    },
    Composition {
        instance: Option<InstanceId>,
        input: Option<Payload>,
    },
}

struct Exec {
    kind: ExecKind,
    completion_key: Option<String>,
    running_since: Option<Millis>,
    suspend_epoch: u64,
}

pub struct Simulation {
    clock: VirtualClock<Action>,
    registry: Registry,
    latency: LatencyModel,
    config: SimConfig,
    profiles: Profiles,
    records: Vec<InvocationRecord>,
    execs: BTreeMap<InvocationId, Exec>,
    waiters: BTreeMap<String, Vec<InvocationId>>,
    latched: BTreeMap<String, Event>,
    listeners: BTreeMap<String, InstanceId>,
    instances: Vec<Option<Instance>>,
    engine_errors: Vec<EngineError>,
    rng: ChaCha8Rng,
    actions_run: u64,
    next_key: u64,
}

impl Simulation {
    pub fn new(latency: LatencyModel) -> Self {
        Self::with_config(latency, SimConfig::default())
    }

    pub fn with_config(latency: LatencyModel, config: SimConfig) -> Self {
        Self {
            clock: VirtualClock::new(),
            registry: Registry::default(),
            latency,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            profiles: Profiles::default(),
            records: Vec::new(),
            execs: BTreeMap::new(),
            waiters: BTreeMap::new(),
            latched: BTreeMap::new(),
            listeners: BTreeMap::new(),
            instances: Vec::new(),
            engine_errors: Vec::new(),
            actions_run: 0,
            next_key: 0,
        }
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn profiles(&self) -> &Profiles {
        &self.profiles
    }

    pub fn profiles_mut(&mut self) -> &mut Profiles {
        &mut self.profiles
    }

    pub fn records(&self) -> &[InvocationRecord] {
        &self.records
    }

    pub fn record(&self, id: InvocationId) -> Option<&InvocationRecord> {
        self.records.get(id.0 as usize)
    }

    pub fn register_function(&mut self, def: FunctionDef) -> Result<String, RuntimeError> {
        if let Behavior::Composition(c) = &def.behavior {
            if !self.profiles.get(c.engine).composition_is_function {
                return Err(RuntimeError::InvalidFunction(format!(
                    "{} compositions are not functions",
                    c.engine
                )));
            }
        }
        self.registry.register(def)
    }

    /// A fresh event key, unique within this simulation.
    pub fn fresh_key(&mut self, prefix: &str) -> String {
        self.next_key += 1;
        format!("{prefix}#{}", self.next_key)
    }

    // ---- scheduling -------------------------------------------------------

    pub fn schedule_at(&mut self, at: Millis, f: impl FnOnce(&mut Simulation) + 'static) {
        self.clock.schedule_at(at, Action::Call(Box::new(f)));
    }

    pub fn schedule_in(&mut self, delay: Millis, f: impl FnOnce(&mut Simulation) + 'static) {
        self.clock.schedule_in(delay, Action::Call(Box::new(f)));
    }

    pub(crate) fn schedule_wake(&mut self, at: Millis, instance: InstanceId, wake: Wake) {
        self.clock.schedule_at(at, Action::Wake { instance, wake });
    }

    pub(crate) fn schedule_fire(&mut self, at: Millis, event: Event) {
        self.clock.schedule_at(at, Action::Fire(event));
    }

    /// Adds configured jitter to a base delay.
    pub(crate) fn jitter(&mut self, base: Millis) -> Millis {
        if self.config.jitter_ms == 0 {
            base
        } else {
            base + self.rng.gen_range(0..=self.config.jitter_ms)
        }
    }

    /// Executes one action. Returns `false` when the queue is empty.
    pub fn step(&mut self) -> Result<bool, RuntimeError> {
        let Some((now, action)) = self.clock.pop() else {
            return Ok(false);
        };
        self.actions_run += 1;
        if self.actions_run > self.config.action_budget {
            return Err(RuntimeError::LivelockGuard(self.config.action_budget));
        }
        match action {
            Action::Start(id) => self.start_invocation(id),
            Action::Continue(id) => self.continue_script(id),
            Action::Fire(mut event) => {
                event.fire_time = now;
                self.trigger_event(event);
            }
            Action::Resume { id, event } => self.resume(id, event),
            Action::SuspendTimeout { id, epoch } => self.suspend_timeout(id, epoch),
            Action::Wake { instance, wake } => self.wake_instance(instance, wake),
            Action::Call(f) => f(self),
        }
        Ok(true)
    }

    /// Runs every scheduled action in `(fire_time, sequence_no)` order.
    pub fn run_until_idle(&mut self) -> Result<Millis, RuntimeError> {
        while self.step()? {}
        Ok(self.now())
    }

    /// Steps until `done` holds or the queue drains. Returns whether `done` held.
    pub fn run_until(
        &mut self,
        mut done: impl FnMut(&Simulation) -> bool,
    ) -> Result<bool, RuntimeError> {
        loop {
            if done(self) {
                return Ok(true);
            }
            if !self.step()? {
                return Ok(done(self));
            }
        }
    }

    // ---- invocation -------------------------------------------------------

    /// Invokes `function` and runs the simulation until it finishes.
    pub fn invoke(
        &mut self,
        function: &str,
        input: Payload,
        caller: Option<InvocationId>,
    ) -> Result<InvocationRecord, RuntimeError> {
        let id = self.invoke_async_with(
            function,
            input,
            None,
            CallContext {
                parent: caller,
                path: String::new(),
            },
        )?;
        self.run_until(|s| s.records[id.0 as usize].state.is_terminal())?;
        let rec = self.records[id.0 as usize].clone();
        match rec.state {
            InvocationState::Completed => Ok(rec),
            InvocationState::Failed => Err(RuntimeError::InvocationFailed {
                id,
                message: rec.error.unwrap_or_default(),
            }),
            _ => Err(RuntimeError::NotRunning(id)),
        }
    }

    /// Starts `function` asynchronously; its output is published on
    /// `completion_key` once it finishes.
    pub fn invoke_async(
        &mut self,
        function: &str,
        input: Payload,
        completion_key: &str,
    ) -> Result<InvocationId, RuntimeError> {
        self.invoke_async_with(
            function,
            input,
            Some(completion_key.to_string()),
            CallContext::default(),
        )
    }

    pub fn invoke_async_with(
        &mut self,
        function: &str,
        input: Payload,
        completion_key: Option<String>,
        ctx: CallContext,
    ) -> Result<InvocationId, RuntimeError> {
        let def = self
            .registry
            .for_execution(function)
            .ok_or_else(|| RuntimeError::UnknownFunction(function.to_string()))?;
        let size = input.size_bytes();
        if let Some(limit) = def.max_payload_bytes {
            if size > limit {
                return Err(RuntimeError::PayloadTooLarge { limit, size });
            }
        }
        let (role, kind) = match &def.behavior {
            Behavior::Composition(_) => (
                Role::Orchestrator,
                ExecKind::Composition {
                    instance: None,
                    input: Some(input),
                },
            ),
            other => (
                Role::Function,
                ExecKind::Script {
                    steps: other.script().expect("script behavior").into(),
                    pc: 0,
                    value: input,
                },
            ),
        };
        let id = InvocationId(self.records.len() as u64);
        let now = self.now();
        self.records.push(InvocationRecord {
            id,
            function: function.to_string(),
            parent: ctx.parent,
            role,
            path: ctx.path,
            submit_time: now,
            start_time: None,
            end_time: None,
            billed_intervals: Vec::new(),
            state: InvocationState::Pending,
            input_bytes: size,
            output_bytes: 0,
            output: Payload::empty(),
            error: None,
        });
        self.execs.insert(
            id,
            Exec {
                kind,
                completion_key,
                running_since: None,
                suspend_epoch: 0,
            },
        );
        let delay = self.latency.dispatch_ms(size);
        let delay = self.jitter(delay);
        self.clock.schedule_in(delay, Action::Start(id));
        Ok(id)
    }

    fn start_invocation(&mut self, id: InvocationId) {
        let now = self.now();
        let rec = &mut self.records[id.0 as usize];
        if rec.state != InvocationState::Pending {
            return;
        }
        rec.state = InvocationState::Running;
        rec.start_time = Some(now);
        let function = rec.function.clone();
        let exec = self.execs.get_mut(&id).expect("exec for pending record");
        match &mut exec.kind {
            ExecKind::Script { value, .. } => {
                exec.running_since = Some(now);
                let transfer = self.latency.transfer_ms(value.size_bytes());
                self.clock.schedule_in(transfer, Action::Continue(id));
            }
            ExecKind::Composition { input, .. } => {
                let input = input.take().unwrap_or_default();
                let Some(Behavior::Composition(comp)) = self
                    .registry
                    .for_execution(&function)
                    .map(|d| d.behavior.clone())
                else {
                    unreachable!("composition record without composition behavior");
                };
                let profile = self.profiles.get(comp.engine).clone();
                if profile.bills_continuously() {
                    exec.running_since = Some(now);
                }
                let path = self.records[id.0 as usize].path.clone();
                let instance = self.spawn_instance(Instance::new(
                    profile,
                    &comp,
                    input,
                    Owner::Record(id),
                    path,
                ));
                if let Some(Exec {
                    kind: ExecKind::Composition { instance: slot, .. },
                    ..
                }) = self.execs.get_mut(&id)
                {
                    *slot = Some(instance);
                }
            }
        }
    }

    fn continue_script(&mut self, id: InvocationId) {
        loop {
            let Some(exec) = self.execs.get_mut(&id) else {
                return;
            };
            let ExecKind::Script { steps, pc, value } = &mut exec.kind else {
                return;
            };
            let steps = steps.clone();
            *pc = run_pure_steps(&steps, *pc, value);
            match steps.get(*pc) {
                None => {
                    let out = value.clone();
                    self.finish(id, Ok(out));
                    return;
                }
                Some(ScriptStep::Sleep(ms)) => {
                    *pc += 1;
                    let ms = *ms;
                    self.clock.schedule_in(ms, Action::Continue(id));
                    return;
                }
                Some(ScriptStep::Fail { message }) => {
                    let message = message.clone();
                    self.finish(id, Err(message));
                    return;
                }
                Some(ScriptStep::AwaitEvent { key }) => {
                    *pc += 1;
                    let key = key.clone();
                    match self.suspend(id, &key) {
                        Ok(SuspendOutcome::Resumed(ev)) => {
                            if let Some(Exec {
                                kind: ExecKind::Script { value, .. },
                                ..
                            }) = self.execs.get_mut(&id)
                            {
                                *value = ev.payload;
                            }
                        }
                        Ok(SuspendOutcome::Suspended) | Err(_) => return,
                    }
                }
                Some(_) => unreachable!("pure steps are consumed by run_pure_steps"),
            }
        }
    }

    /// Closes the open billed interval of `id`, if any.
    fn close_interval(&mut self, id: InvocationId) {
        let now = self.now();
        if let Some(exec) = self.execs.get_mut(&id) {
            if let Some(from) = exec.running_since.take() {
                if now > from {
                    self.records[id.0 as usize]
                        .billed_intervals
                        .push(Interval { from, to: now });
                }
            }
        }
    }

    /// Adds a billed slice to an orchestrator record whose engine bills
    /// discrete episodes rather than continuous running time.
    pub(crate) fn bill_slice(&mut self, id: InvocationId, from: Millis, to: Millis) {
        if to <= from {
            return;
        }
        let rec = &mut self.records[id.0 as usize];
        match rec.billed_intervals.last_mut() {
            Some(last) if last.to == from => last.to = to,
            _ => rec.billed_intervals.push(Interval { from, to }),
        }
    }

    /// Completes or fails a running invocation and publishes its result.
    pub(crate) fn finish(&mut self, id: InvocationId, outcome: Result<Payload, String>) {
        self.close_interval(id);
        let now = self.now();
        let Some(exec) = self.execs.remove(&id) else {
            return;
        };
        let rec = &mut self.records[id.0 as usize];
        rec.end_time = Some(now);
        let (payload, error) = match outcome {
            Ok(p) => {
                rec.state = InvocationState::Completed;
                rec.output_bytes = p.size_bytes();
                rec.output = p.clone();
                (p, None)
            }
            Err(e) => {
                rec.state = InvocationState::Failed;
                rec.error = Some(e.clone());
                (Payload::empty(), Some(e))
            }
        };
        if let Some(key) = exec.completion_key {
            let delay = self.latency.delivery_ms(payload.size_bytes());
            let delay = self.jitter(delay);
            self.clock.schedule_in(
                delay,
                Action::Fire(Event {
                    key,
                    payload,
                    fire_time: 0,
                    error,
                }),
            );
        }
    }

    // ---- suspend API ------------------------------------------------------

    /// Suspends a running invocation until an event on `key` arrives.
    ///
    /// If an event on `key` was already published and latched, it is consumed
    /// and returned immediately; the invocation never leaves `Running`, but
    /// its billed time restarts as a new interval.
    pub fn suspend(&mut self, id: InvocationId, key: &str) -> Result<SuspendOutcome, RuntimeError> {
        let rec = self
            .records
            .get(id.0 as usize)
            .ok_or(RuntimeError::UnknownInvocation(id))?;
        if rec.state != InvocationState::Running || !self.execs.contains_key(&id) {
            return Err(RuntimeError::NotRunning(id));
        }
        if let Some(ev) = self.latched.remove(key) {
            let now = self.now();
            if let Some(exec) = self.execs.get_mut(&id) {
                if exec.running_since.is_some_and(|from| from < now) {
                    self.close_interval(id);
                    self.execs
                        .get_mut(&id)
                        .expect("checked above")
                        .running_since = Some(now);
                }
            }
            return Ok(SuspendOutcome::Resumed(ev));
        }
        self.close_interval(id);
        self.records[id.0 as usize].state = InvocationState::Suspended;
        let exec = self.execs.get_mut(&id).expect("checked above");
        exec.suspend_epoch += 1;
        let epoch = exec.suspend_epoch;
        self.waiters.entry(key.to_string()).or_default().push(id);
        self.clock.schedule_in(
            self.config.suspend_limit_ms,
            Action::SuspendTimeout { id, epoch },
        );
        Ok(SuspendOutcome::Suspended)
    }

    /// Publishes an event. Suspended invocations waiting on the key resume
    /// after the queue latency; with no waiter the event is latched (latest
    /// payload wins). Returns the ids that will resume.
    pub fn trigger_event(&mut self, event: Event) -> Vec<InvocationId> {
        if let Some(instance) = self.listeners.remove(&event.key) {
            let now = self.now();
            self.schedule_wake(now, instance, Wake::Event(event));
            return Vec::new();
        }
        let ids = self.waiters.remove(&event.key).unwrap_or_default();
        if ids.is_empty() {
            self.latched.insert(event.key.clone(), event);
            return ids;
        }
        let delay = self.latency.queue_latency_ms;
        for &id in &ids {
            self.clock.schedule_in(
                delay,
                Action::Resume {
                    id,
                    event: event.clone(),
                },
            );
        }
        ids
    }

    pub fn latched(&self, key: &str) -> Option<&Event> {
        self.latched.get(key)
    }

    pub fn take_latched(&mut self, key: &str) -> Option<Event> {
        self.latched.remove(key)
    }

    /// Routes the next event on `key` to an orchestration instance instead of
    /// the waiter list. An already latched event is delivered right away.
    pub(crate) fn listen(&mut self, key: String, instance: InstanceId) {
        if let Some(ev) = self.latched.remove(&key) {
            let now = self.now();
            self.schedule_wake(now, instance, Wake::Event(ev));
        } else {
            self.listeners.insert(key, instance);
        }
    }

    fn resume(&mut self, id: InvocationId, event: Event) {
        if self.records[id.0 as usize].state != InvocationState::Suspended {
            return;
        }
        let now = self.now();
        self.records[id.0 as usize].state = InvocationState::Running;
        let Some(exec) = self.execs.get_mut(&id) else {
            return;
        };
        match &mut exec.kind {
            ExecKind::Script { value, .. } => {
                exec.running_since = Some(now);
                *value = event.payload;
                self.continue_script(id);
            }
            ExecKind::Composition { instance, .. } => {
                let instance = *instance;
                exec.running_since = Some(now);
                if let Some(inst) = instance {
                    self.wake_instance(inst, Wake::Resumed(event));
                }
            }
        }
    }

    fn suspend_timeout(&mut self, id: InvocationId, epoch: u64) {
        let Some(exec) = self.execs.get(&id) else {
            return;
        };
        if exec.suspend_epoch != epoch
            || self.records[id.0 as usize].state != InvocationState::Suspended
        {
            return;
        }
        for ids in self.waiters.values_mut() {
            ids.retain(|w| *w != id);
        }
        self.waiters.retain(|_, ids| !ids.is_empty());
        if let ExecKind::Composition {
            instance: Some(inst),
            ..
        } = exec.kind
        {
            if let Some(Some(instance)) = self.instances.get_mut(inst.0) {
                instance.abandon();
            }
        }
        let err = RuntimeError::SuspendLimitExceeded(id);
        self.engine_errors.push(EngineError::Runtime(err.clone()));
        self.finish(id, Err(err.to_string()));
    }

    // ---- orchestration instances -----------------------------------------

    pub(crate) fn spawn_instance(&mut self, instance: Instance) -> InstanceId {
        let id = InstanceId(self.instances.len());
        let delay = instance.profile().instance_start_ms;
        self.instances.push(Some(instance));
        let at = self.now() + delay;
        self.schedule_wake(at, id, Wake::Start);
        id
    }

    fn wake_instance(&mut self, id: InstanceId, wake: Wake) {
        let Some(slot) = self.instances.get_mut(id.0) else {
            return;
        };
        let Some(mut instance) = slot.take() else {
            return;
        };
        match instance.handle(self, id, wake) {
            Ok(InstanceStatus::Running | InstanceStatus::Finished) => {}
            Err(e) => {
                let msg = e.to_string();
                self.engine_errors.push(e);
                instance.fail(self, msg);
            }
        }
        self.instances[id.0] = Some(instance);
    }

    pub(crate) fn instances_since(&self, first: usize) -> impl Iterator<Item = &Instance> {
        self.instances[first.min(self.instances.len())..]
            .iter()
            .flatten()
    }

    pub(crate) fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub(crate) fn take_engine_errors(&mut self) -> Vec<EngineError> {
        std::mem::take(&mut self.engine_errors)
    }

    /// Reports that the body of a composition finished.
    pub(crate) fn composition_done(&mut self, owner: &Owner, outcome: Result<Payload, String>) {
        match owner {
            Owner::Record(id) => self.finish(*id, outcome),
            Owner::Root { key } => {
                let (payload, error) = match outcome {
                    Ok(p) => (p, None),
                    Err(e) => (Payload::empty(), Some(e)),
                };
                let delay = self.latency.delivery_ms(payload.size_bytes());
                let delay = self.jitter(delay);
                let at = self.now() + delay;
                self.schedule_fire(
                    at,
                    Event {
                        key: key.clone(),
                        payload,
                        fire_time: 0,
                        error,
                    },
                );
            }
        }
    }
}
