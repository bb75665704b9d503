mod common;

use std::sync::Arc;

use common::{
    arb_chain, arb_input, arb_spec, awaited_calls, brute_force_ideal, exported, interpret,
};
use faasflow::accounting::detect_double_billing;
use faasflow::bench::{overhead, register_for, CalibrationProfile};
use faasflow::engines::{
    run, Engine, EngineError, EventSourcingHooks, HistoryEvent, HistoryKind, RunOptions,
    WorkflowResult,
};
use faasflow::runtime::{LatencyModel, Payload, Role, SimConfig, Simulation};
use faasflow::workflow::{fan_out, seq, Node};
use proptest::prelude::*;

fn run_on(
    engine: Engine,
    spec: &Node,
    input: Payload,
    opts: &RunOptions,
) -> Result<WorkflowResult, EngineError> {
    let mut sim = CalibrationProfile::default_for(engine)
        .simulation(engine, SimConfig::default())
        .unwrap();
    register_for(&mut sim, spec).unwrap();
    run(&mut sim, engine, spec, input, opts)
}

fn plain(engine: Engine, spec: &Node, input: Payload) -> WorkflowResult {
    run_on(engine, spec, input, &RunOptions::default()).unwrap()
}

/// History without timestamps, for comparing runs that start at different times.
fn shape(events: &[HistoryEvent]) -> Vec<(HistoryKind, Option<String>, Option<String>, Payload)> {
    events
        .iter()
        .map(|e| {
            (
                e.kind,
                e.activity.clone(),
                e.call.clone(),
                e.payload.clone(),
            )
        })
        .collect()
}

const GENERAL: [Engine; 5] = [
    Engine::ClientScheduler,
    Engine::ReactiveConductor,
    Engine::EventSourcing,
    Engine::Suspend,
    Engine::Inline,
];
const PARALLEL: [Engine; 4] = [
    Engine::ClientScheduler,
    Engine::EventSourcing,
    Engine::Suspend,
    Engine::Inline,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engines_agree_with_the_interpreter(spec in arb_spec(false), input in arb_input()) {
        let want = interpret(&spec, &input);
        for engine in GENERAL {
            prop_assert_eq!(&plain(engine, &spec, input.clone()).output, &want, "{}", engine);
        }
    }

    #[test]
    fn sequences_agree_on_chains(spec in arb_chain(), input in arb_input()) {
        let want = interpret(&spec, &input);
        for engine in Engine::ALL {
            prop_assert_eq!(&plain(engine, &spec, input.clone()).output, &want, "{}", engine);
        }
    }

    #[test]
    fn parallel_engines_agree_with_the_interpreter(spec in arb_spec(true), input in arb_input()) {
        let want = interpret(&spec, &input);
        for engine in PARALLEL {
            prop_assert_eq!(&plain(engine, &spec, input.clone()).output, &want, "{}", engine);
        }
    }

    #[test]
    fn overhead_is_never_negative_and_matches_the_trace(spec in arb_spec(true)) {
        for engine in PARALLEL {
            let r = plain(engine, &spec, Payload::empty());
            let o = overhead(&r).unwrap();
            prop_assert_eq!(o, r.wall_time_ms - brute_force_ideal(&exported(&r.trace)));
        }
    }

    #[test]
    fn replay_is_deterministic_and_resumable(spec in arb_spec(true), input in arb_input(), cut in 0.0f64..1.0) {
        let a = plain(Engine::EventSourcing, &spec, input.clone());
        let b = plain(Engine::EventSourcing, &spec, input.clone());
        let ha = a.history.clone().unwrap();
        prop_assert_eq!(&ha, b.history.as_ref().unwrap());
        let replays = ha.count(HistoryKind::ActivityCompleted) + ha.count(HistoryKind::TimerFired);
        prop_assert_eq!(a.replay_count, replays as u64);

        let k = ((ha.len() as f64) * cut) as usize;
        let hooks = EventSourcingHooks { resume_from: Some(ha.truncated(k)), ..Default::default() };
        let opts = RunOptions { hooks: Some(Arc::new(hooks)), ..Default::default() };
        let resumed = run_on(Engine::EventSourcing, &spec, input, &opts).unwrap();
        prop_assert_eq!(&resumed.output, &a.output);
        let hr = resumed.history.unwrap();
        prop_assert_eq!(&hr.events()[..k], &ha.events()[..k]);
        let (mut got, mut want) = (shape(hr.events()), shape(ha.events()));
        if spec.contains_parallel() {
            // Re-dispatched branches may finish in another order.
            got.sort_by_key(|e| format!("{e:?}"));
            want.sort_by_key(|e| format!("{e:?}"));
        }
        prop_assert_eq!(got, want);

        let ext = RunOptions { extended_sessions: true, ..Default::default() };
        prop_assert_eq!(run_on(Engine::EventSourcing, &spec, Payload::empty(), &ext).unwrap().replay_count, 0);
    }

    #[test]
    fn suspend_orchestrator_bills_only_its_slices(spec in arb_spec(true), input in arb_input()) {
        let r = plain(Engine::Suspend, &spec, input.clone());
        let exec = CalibrationProfile::default_for(Engine::Suspend)
            .profile_for(Engine::Suspend).unwrap().orchestrator_exec_ms;
        // One slice to start, one per awaited completion.
        let slices = 1 + awaited_calls(&spec, &input);
        let orch = r.trace.iter().find(|x| x.role == Role::Orchestrator).unwrap();
        prop_assert_eq!(orch.billed_ms(), exec * slices);
        prop_assert!(detect_double_billing(&r.trace, 1).is_empty());
    }
}

#[test]
fn event_sourcing_history_of_a_sequence() {
    let r = plain(
        Engine::EventSourcing,
        &seq(5, "sleepAction").unwrap(),
        Payload::empty(),
    );
    let h = r.history.unwrap();
    assert_eq!(r.replay_count, 5);
    assert_eq!(h.count(HistoryKind::OrchestrationStarted), 1);
    assert_eq!(h.count(HistoryKind::ActivityScheduled), 5);
    assert_eq!(h.count(HistoryKind::ActivityCompleted), 5);
    assert_eq!(h.count(HistoryKind::OrchestrationCompleted), 1);
    assert_eq!(h.len(), 12);
}

#[test]
fn mutated_orchestrator_is_detected() {
    let hooks = EventSourcingHooks {
        mutate_after_episode: Some(2),
        ..Default::default()
    };
    let opts = RunOptions {
        hooks: Some(Arc::new(hooks)),
        ..Default::default()
    };
    let err = run_on(
        Engine::EventSourcing,
        &seq(3, "echo").unwrap(),
        Payload::empty(),
        &opts,
    )
    .unwrap_err();
    assert!(
        matches!(err, EngineError::NondeterminismDetected(_)),
        "{err}"
    );
}

#[test]
fn zero_latency_suspend_fan_out_has_no_overhead() {
    for n in [1, 5, 80] {
        let mut sim = CalibrationProfile::builtin("zero")
            .unwrap()
            .simulation(Engine::Suspend, SimConfig::default())
            .unwrap();
        let spec = fan_out(n, "sleep20").unwrap();
        register_for(&mut sim, &spec).unwrap();
        let r = run(
            &mut sim,
            Engine::Suspend,
            &spec,
            Payload::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(r.wall_time_ms, 20_000);
        assert_eq!(overhead(&r).unwrap(), 0);
    }
}

#[test]
fn inline_bills_while_waiting() {
    let mut sim = Simulation::new(LatencyModel::zero());
    let spec = seq(2, "sleepAction").unwrap();
    register_for(&mut sim, &spec).unwrap();
    let r = run(
        &mut sim,
        Engine::Inline,
        &spec,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    let orch = r
        .trace
        .iter()
        .find(|x| x.role == Role::Orchestrator)
        .unwrap();
    assert!(orch.billed_ms() >= 2000);
    let empty = Node::identity();
    let r = run(
        &mut sim,
        Engine::Inline,
        &empty,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    assert!(detect_double_billing(&r.trace, 1).is_empty());
}

#[test]
fn nested_sequences_and_suspend_compositions() {
    for engine in [Engine::Sequences, Engine::Suspend] {
        let mut sim = CalibrationProfile::default_for(engine)
            .simulation(engine, SimConfig::default())
            .unwrap();
        let inner = seq(2, "inc:x").unwrap();
        register_for(&mut sim, &inner).unwrap();
        faasflow::engines::register_composition(
            &mut sim,
            "inner",
            engine,
            inner,
            &RunOptions::default(),
        )
        .unwrap();
        let outer = Node::Sequence(vec![
            Node::task("inner"),
            Node::task("inc:x"),
            Node::task("inner"),
        ]);
        let r = run(
            &mut sim,
            engine,
            &outer,
            Payload::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(r.output.0, serde_json::json!({ "x": 5 }), "{engine}");
    }
}

#[test]
fn sequence_overhead_grows_with_n() {
    for engine in Engine::ALL {
        let mut last = 0;
        for n in [1, 2, 5, 10, 20] {
            let o = overhead(&plain(
                engine,
                &seq(n, "sleep:10").unwrap(),
                Payload::empty(),
            ))
            .unwrap();
            assert!(o >= last, "{engine} n={n}");
            last = o;
        }
    }
}
