//! One running orchestration. All engines share the replay evaluator and
//! differ in what each step costs and where the orchestrator is billed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::eval::{self, child_path, CallKind, CallResult, PendingCall};
use super::history::{EventLog, HistoryKind, Storage};
use super::profile::{DispatchMode, Engine, EngineProfile, TokenBucket};
use super::{EngineError, EventSourcingHooks};
use crate::runtime::{
    CallContext, Composition, Event, InstanceId, InvocationId, Millis, Payload, Simulation,
    SuspendOutcome,
};
use crate::workflow::Node;

/// Who receives the result of an orchestration.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Owner {
    /// The composition's own invocation record.
    Record(InvocationId),
    /// No record: the result is published on `key`.
    Root { key: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InstanceStatus {
    Running,
    Finished,
}

#[derive(Debug, Clone)]
pub(crate) enum Wake {
    Start,
    /// A completion routed to this instance through a listener.
    Event(Event),
    /// The orchestrator record was resumed by this event.
    Resumed(Event),
    Dispatch(String),
    Apply {
        path: String,
        result: CallResult,
    },
    Episode,
}

pub(crate) struct Instance {
    profile: EngineProfile,
    spec: Arc<Node>,
    input: Payload,
    owner: Owner,
    base_path: String,
    extended_sessions: bool,
    hooks: Option<Arc<EventSourcingHooks>>,
    results: BTreeMap<String, CallResult>,
    /// completion key -> (call path, function), for calls in flight.
    keys: BTreeMap<String, (String, Option<String>)>,
    /// Keys in the order their calls were issued.
    order: Vec<String>,
    /// Calls waiting for a log write before dispatch.
    planned: BTreeMap<String, PendingCall>,
    issued: BTreeSet<String>,
    /// Completions seen so far per enclosing parallel.
    joined: BTreeMap<String, u64>,
    finished: bool,
    transitions: u64,
    charged: u64,
    history: EventLog,
    replay_count: u64,
    episodes: u64,
    requested: u64,
    busy_until: Millis,
    bucket: Option<TokenBucket>,
    state_bytes: u64,
}

impl Instance {
    pub(crate) fn new(
        profile: EngineProfile,
        comp: &Composition,
        input: Payload,
        owner: Owner,
        base_path: String,
    ) -> Self {
        Self {
            state_bytes: input.size_bytes(),
            profile,
            spec: comp.spec.clone(),
            input,
            owner,
            base_path,
            extended_sessions: comp.extended_sessions,
            hooks: comp.hooks.clone(),
            results: BTreeMap::new(),
            keys: BTreeMap::new(),
            order: Vec::new(),
            planned: BTreeMap::new(),
            issued: BTreeSet::new(),
            joined: BTreeMap::new(),
            finished: false,
            transitions: 0,
            charged: 0,
            history: EventLog::new(),
            replay_count: 0,
            episodes: 0,
            requested: 0,
            busy_until: 0,
            bucket: None,
        }
    }

    pub(crate) fn profile(&self) -> &EngineProfile {
        &self.profile
    }

    pub(crate) fn engine(&self) -> Engine {
        self.profile.name
    }

    pub(crate) fn transitions(&self) -> u64 {
        self.transitions
    }

    pub(crate) fn replay_count(&self) -> u64 {
        self.replay_count
    }

    pub(crate) fn history(&self) -> &EventLog {
        &self.history
    }

    fn record(&self) -> Option<InvocationId> {
        match self.owner {
            Owner::Record(id) => Some(id),
            Owner::Root { .. } => None,
        }
    }

    fn storage(&self) -> Storage {
        Storage {
            threshold: self.profile.compression_threshold_bytes,
            ratio: self.profile.compression_ratio,
        }
    }

    fn uses_suspend(&self) -> bool {
        self.engine() == Engine::Suspend && self.record().is_some()
    }

    pub(crate) fn handle(
        &mut self,
        sim: &mut Simulation,
        id: InstanceId,
        wake: Wake,
    ) -> Result<InstanceStatus, EngineError> {
        if !self.finished {
            match wake {
                Wake::Start => self.start(sim, id)?,
                Wake::Event(ev) | Wake::Resumed(ev) => self.on_completion(sim, id, ev)?,
                Wake::Dispatch(path) => {
                    if let Some(call) = self.planned.remove(&path) {
                        self.dispatch_now(sim, id, call)?;
                    }
                }
                Wake::Apply { path, result } => {
                    self.apply(path, result);
                    self.request_episode(sim, id);
                }
                Wake::Episode => self.episode(sim, id)?,
            }
        }
        Ok(if self.finished {
            InstanceStatus::Finished
        } else {
            InstanceStatus::Running
        })
    }

    pub(crate) fn fail(&mut self, sim: &mut Simulation, message: String) {
        if self.finished {
            return;
        }
        self.finished = true;
        sim.composition_done(&self.owner, Err(message));
    }

    pub(crate) fn abandon(&mut self) {
        self.finished = true;
    }

    fn check_state(&self, bytes: u64) -> Result<(), EngineError> {
        match self.profile.max_state_bytes {
            Some(limit) if bytes > limit => Err(EngineError::StateTooLarge { size: bytes, limit }),
            _ => Ok(()),
        }
    }

    fn check_spec(&self) -> Result<(), EngineError> {
        let spec = self.spec.as_ref();
        if !self.profile.supports_parallel && spec.contains_parallel() {
            return Err(EngineError::ParallelUnsupported(self.engine()));
        }
        if self.engine() == Engine::Sequences && spec.as_linear_chain().is_none() {
            return Err(EngineError::UnsupportedSpec(
                "sequences accept only a linear chain of tasks".into(),
            ));
        }
        if let Some(limit) = self.profile.max_actions {
            let count = spec.action_count();
            if count > limit {
                return Err(EngineError::TooManyActions { count, limit });
            }
        }
        Ok(())
    }

    fn start(&mut self, sim: &mut Simulation, id: InstanceId) -> Result<(), EngineError> {
        self.check_spec()?;
        self.check_state(self.input.size_bytes())?;
        let now = sim.now();
        self.busy_until = now;
        self.bucket = self
            .profile
            .transition_rate_limit
            .map(|limit| TokenBucket::new(limit, now));
        if self.engine() == Engine::EventSourcing {
            match self.hooks.as_ref().and_then(|h| h.resume_from.clone()) {
                Some(prefix) if !prefix.is_empty() => {
                    prefix.validate().map_err(EngineError::CorruptHistory)?;
                    self.results = prefix.results();
                    self.history = prefix;
                }
                _ => {
                    let storage = self.storage();
                    self.history.append(
                        HistoryKind::OrchestrationStarted,
                        None,
                        None,
                        self.input.clone(),
                        None,
                        storage,
                        now,
                    );
                }
            }
        }
        self.request_episode(sim, id);
        Ok(())
    }

    /// Schedules the next orchestrator step, paying whatever it costs on
    /// this engine.
    fn request_episode(&mut self, sim: &mut Simulation, id: InstanceId) {
        let now = sim.now();
        let exec = self.profile.orchestrator_exec_ms;
        match self.engine() {
            Engine::ClientScheduler | Engine::Sequences => {
                sim.schedule_wake(now, id, Wake::Episode)
            }
            Engine::ReactiveConductor => {
                // The conductor is a separate activation carrying the state.
                let start = self.busy_until.max(now);
                let dispatch = sim.latency().dispatch_ms(self.state_bytes);
                let from = start + sim.jitter(dispatch);
                let to = from + exec;
                if let Some(rec) = self.record() {
                    sim.bill_slice(rec, from, to);
                }
                self.busy_until = to;
                sim.schedule_wake(to, id, Wake::Episode);
            }
            Engine::EventSourcing => {
                let start = self.busy_until.max(now);
                let mut cost = exec;
                if self.requested > 0 && !self.extended_sessions {
                    self.replay_count += 1;
                    let events = self.history.len() as f64;
                    cost += (self.profile.replay_ms_per_event * events).round() as Millis;
                    let latency = sim.latency();
                    cost += self
                        .history
                        .events()
                        .iter()
                        .filter(|e| e.compressed)
                        .map(|e| latency.transfer_ms(e.raw_bytes))
                        .sum::<Millis>();
                }
                self.requested += 1;
                if let Some(rec) = self.record() {
                    sim.bill_slice(rec, start, start + cost);
                }
                self.busy_until = start + cost;
                sim.schedule_wake(start + cost, id, Wake::Episode);
            }
            Engine::Suspend | Engine::Inline => sim.schedule_wake(now + exec, id, Wake::Episode),
        }
    }

    fn episode(&mut self, sim: &mut Simulation, id: InstanceId) -> Result<(), EngineError> {
        self.episodes += 1;
        let ev = eval::evaluate(&self.spec, &self.input, &self.results);
        if self.engine() == Engine::EventSourcing {
            self.check_determinism(&ev.encountered)?;
            if let Some(h) = &self.hooks {
                if h.mutate_after_episode == Some(self.episodes) {
                    self.spec = Arc::new(rename_tasks(&self.spec));
                }
            }
        }
        if ev.transitions > self.charged {
            let fresh = ev.transitions - self.charged;
            if let Some(bucket) = &mut self.bucket {
                if !bucket.take(fresh, sim.now()) {
                    return Err(EngineError::RateLimited);
                }
            }
            self.charged = ev.transitions;
        }
        self.transitions = ev.transitions;
        if let Some(out) = ev.outcome {
            if let Ok(p) = &out {
                self.check_state(p.size_bytes())?;
            }
            self.finish(sim, out);
            return Ok(());
        }
        for call in ev.pending {
            if self.issued.contains(&call.path) {
                continue;
            }
            self.issue(sim, id, call)?;
        }
        if self.uses_suspend() {
            self.wait_next(sim, id)?;
        }
        Ok(())
    }

    fn check_determinism(&self, encountered: &[(String, String)]) -> Result<(), EngineError> {
        let seen: BTreeMap<&str, &str> = encountered
            .iter()
            .map(|(p, f)| (p.as_str(), f.as_str()))
            .collect();
        for (call, activity) in self.history.scheduled() {
            match seen.get(call.as_str()) {
                Some(f) if *f == activity => {}
                other => {
                    return Err(EngineError::NondeterminismDetected(format!(
                        "history scheduled `{activity}` at {call}, replay reached {}",
                        other.map_or("nothing".to_string(), |f| format!("`{f}`"))
                    )))
                }
            }
        }
        Ok(())
    }

    fn finish(&mut self, sim: &mut Simulation, out: CallResult) {
        self.finished = true;
        // A history resumed after completion already records the outcome.
        let recorded = self
            .history
            .events()
            .last()
            .is_some_and(|e| e.kind == HistoryKind::OrchestrationCompleted);
        if self.engine() == Engine::EventSourcing && !recorded {
            let storage = self.storage();
            let (payload, error) = match &out {
                Ok(p) => (p.clone(), None),
                Err(e) => (Payload::empty(), Some(e.clone())),
            };
            self.history.append(
                HistoryKind::OrchestrationCompleted,
                None,
                None,
                payload,
                error,
                storage,
                sim.now(),
            );
        }
        sim.composition_done(&self.owner, out);
    }

    fn issue(
        &mut self,
        sim: &mut Simulation,
        id: InstanceId,
        call: PendingCall,
    ) -> Result<(), EngineError> {
        self.issued.insert(call.path.clone());
        let now = sim.now();
        let function = match &call.kind {
            CallKind::Timer(ms) => {
                let key = sim.fresh_key("timer");
                self.track(sim, id, key.clone(), call.path.clone(), None);
                sim.schedule_fire(now + ms, Event::new(key, Payload::empty()));
                return Ok(());
            }
            CallKind::Task(f) => f.clone(),
        };
        let bytes = call.input.size_bytes();
        self.check_state(bytes)?;
        match self.engine() {
            Engine::ClientScheduler => {
                let read = sim.latency().log_op_ms(bytes);
                let at = match self.profile.parallel_dispatch {
                    DispatchMode::Concurrent if in_parallel(&call.path) => now + read,
                    _ => {
                        self.busy_until = self.busy_until.max(now) + read;
                        self.busy_until
                    }
                };
                self.planned.insert(call.path.clone(), call.clone());
                sim.schedule_wake(at, id, Wake::Dispatch(call.path));
            }
            Engine::EventSourcing if !self.history.is_scheduled(&call.path) => {
                let storage = self.storage();
                let stored = storage.stored_size(bytes).0;
                self.busy_until = self.busy_until.max(now) + sim.latency().log_op_ms(stored);
                let at = self.busy_until;
                self.history.append(
                    HistoryKind::ActivityScheduled,
                    Some(function),
                    Some(call.path.clone()),
                    call.input.clone(),
                    None,
                    storage,
                    at,
                );
                self.planned.insert(call.path.clone(), call.clone());
                sim.schedule_wake(at, id, Wake::Dispatch(call.path));
            }
            _ => self.dispatch_now(sim, id, call)?,
        }
        Ok(())
    }

    fn dispatch_now(
        &mut self,
        sim: &mut Simulation,
        id: InstanceId,
        call: PendingCall,
    ) -> Result<(), EngineError> {
        let CallKind::Task(function) = &call.kind else {
            return Ok(());
        };
        let key = sim.fresh_key("call");
        let ctx = CallContext {
            parent: self.record(),
            path: child_path(&self.base_path, &call.path),
        };
        sim.invoke_async_with(function, call.input.clone(), Some(key.clone()), ctx)?;
        let function = function.clone();
        self.track(sim, id, key, call.path, Some(function));
        Ok(())
    }

    fn track(
        &mut self,
        sim: &mut Simulation,
        id: InstanceId,
        key: String,
        path: String,
        function: Option<String>,
    ) {
        self.keys.insert(key.clone(), (path, function));
        self.order.push(key.clone());
        if !self.uses_suspend() {
            sim.listen(key, id);
        }
    }

    fn on_completion(
        &mut self,
        sim: &mut Simulation,
        id: InstanceId,
        ev: Event,
    ) -> Result<(), EngineError> {
        let Some((path, function)) = self.keys.remove(&ev.key) else {
            return Ok(());
        };
        self.order.retain(|k| *k != ev.key);
        let result = match ev.error {
            Some(e) => Err(e),
            None => Ok(ev.payload),
        };
        let bytes = result.as_ref().map_or(0, Payload::size_bytes);
        self.check_state(bytes)?;
        let timer = function.is_none();
        let now = sim.now();
        let siblings = self.note_join(&path);
        let join = (self.profile.join_ms_per_entry * siblings as f64).round() as Millis;
        match self.engine() {
            Engine::ClientScheduler if !timer => {
                self.busy_until = self.busy_until.max(now) + sim.latency().log_op_ms(bytes) + join;
                sim.schedule_wake(self.busy_until, id, Wake::Apply { path, result });
            }
            Engine::EventSourcing => {
                let storage = self.storage();
                let (kind, activity, cost) = if timer {
                    (HistoryKind::TimerFired, None, 0)
                } else {
                    let stored = storage.stored_size(bytes).0;
                    (
                        HistoryKind::ActivityCompleted,
                        function,
                        sim.latency().log_op_ms(stored) + join,
                    )
                };
                self.busy_until = self.busy_until.max(now) + cost;
                let (payload, error) = match &result {
                    Ok(p) => (p.clone(), None),
                    Err(e) => (Payload::empty(), Some(e.clone())),
                };
                self.history.append(
                    kind,
                    activity,
                    Some(path.clone()),
                    payload,
                    error,
                    storage,
                    self.busy_until,
                );
                sim.schedule_wake(self.busy_until, id, Wake::Apply { path, result });
            }
            _ => {
                self.apply(path, result);
                self.request_episode(sim, id);
            }
        }
        Ok(())
    }

    /// Counts a completion against its enclosing parallel and returns how
    /// many siblings had completed before it.
    fn note_join(&mut self, path: &str) -> u64 {
        let Some(scope) = parallel_scope(path) else {
            return 0;
        };
        let n = self.joined.entry(scope).or_default();
        let before = *n;
        *n += 1;
        before
    }

    fn apply(&mut self, path: String, result: CallResult) {
        if let Ok(p) = &result {
            self.state_bytes = p.size_bytes();
        }
        self.issued.remove(&path);
        self.results.insert(path, result);
    }

    /// Suspends the orchestrator on its oldest outstanding call. Results that
    /// arrived early are latched and consumed without leaving `Running`.
    fn wait_next(&mut self, sim: &mut Simulation, id: InstanceId) -> Result<(), EngineError> {
        let Some(rec) = self.record() else {
            return Ok(());
        };
        let Some(key) = self.order.first().cloned() else {
            return Ok(());
        };
        match sim.suspend(rec, &key)? {
            SuspendOutcome::Suspended => Ok(()),
            SuspendOutcome::Resumed(ev) => self.on_completion(sim, id, ev),
        }
    }
}

fn in_parallel(path: &str) -> bool {
    parallel_scope(path).is_some()
}

/// Path prefix of the innermost parallel enclosing `path`.
fn parallel_scope(path: &str) -> Option<String> {
    let segs: Vec<&str> = path.split('.').collect();
    let i = segs.iter().rposition(|s| s.starts_with('p'))?;
    Some(segs[..i].join("."))
}

/// The test hook's mutation: every task now calls a different function.
fn rename_tasks(node: &Node) -> Node {
    match node {
        Node::Task(f) => Node::Task(format!("{f}~v2")),
        Node::Wait(ms) => Node::Wait(*ms),
        Node::Sequence(ns) => Node::Sequence(ns.iter().map(rename_tasks).collect()),
        Node::Parallel(ns) => Node::Parallel(ns.iter().map(rename_tasks).collect()),
        Node::Choice {
            predicate,
            then,
            otherwise,
        } => Node::choice(
            predicate.clone(),
            rename_tasks(then),
            rename_tasks(otherwise),
        ),
        Node::Retry {
            node,
            max_attempts,
            backoff_ms,
        } => Node::Retry {
            node: Box::new(rename_tasks(node)),
            max_attempts: *max_attempts,
            backoff_ms: *backoff_ms,
        },
        Node::Repeat { count, node } => Node::Repeat {
            count: *count,
            node: Box::new(rename_tasks(node)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_of_nested_paths() {
        assert_eq!(parallel_scope("s0"), None);
        assert_eq!(parallel_scope("p3").as_deref(), Some(""));
        assert_eq!(parallel_scope("s1.p2.s0").as_deref(), Some("s1"));
        assert_eq!(parallel_scope("p0.s1.p4").as_deref(), Some("p0.s1"));
    }
}
