use faasflow::accounting::{
    check_substitution, compute_billing, detect_double_billing, verify_trilemma, PricingModel,
};
use faasflow::bench::{register_for, CalibrationProfile};
use faasflow::engines::{register_composition, run, Engine, RunOptions};
use faasflow::runtime::{Interval, LatencyModel, Payload, SimConfig, Simulation};
use faasflow::workflow::{fan_out, seq, Node};
use proptest::prelude::*;

fn sim_for(engine: Engine) -> Simulation {
    CalibrationProfile::default_for(engine)
        .simulation(engine, SimConfig::default())
        .unwrap()
}

#[test]
fn trilemma_matrix() {
    let spec = seq(3, "sleepAction").unwrap();
    let expect = [
        (Engine::ClientScheduler, true, false, true),
        (Engine::ReactiveConductor, true, true, true),
        (Engine::Sequences, true, true, true),
        (Engine::EventSourcing, true, true, true),
        (Engine::Suspend, true, true, true),
        (Engine::Inline, true, true, false),
    ];
    for (engine, bb, sub, ndb) in expect {
        let v = verify_trilemma(engine, &spec, Payload::empty()).unwrap();
        assert_eq!(
            (v.black_box, v.substitution, v.no_double_billing),
            (bb, sub, ndb),
            "{engine}: {:?}",
            v.evidence
        );
        assert_eq!(v.st_safe, bb && sub && ndb);
    }
}

#[test]
fn substitution_examples() {
    let spec = seq(2, "inc:x").unwrap();
    assert!(!check_substitution(Engine::ClientScheduler, &spec));
    assert!(check_substitution(Engine::ReactiveConductor, &spec));
    assert!(check_substitution(Engine::Suspend, &spec));
}

fn inline_vs_suspend(engine: Engine) -> usize {
    let mut sim = Simulation::new(LatencyModel::zero());
    let spec = seq(2, "sleepAction").unwrap();
    register_for(&mut sim, &spec).unwrap();
    let r = run(
        &mut sim,
        engine,
        &spec,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    detect_double_billing(&r.trace, 1).len()
}

#[test]
fn double_billing_pairs() {
    assert_eq!(inline_vs_suspend(Engine::Inline), 2);
    assert_eq!(inline_vs_suspend(Engine::Suspend), 0);
}

#[test]
fn inline_fan_out_overlaps_every_branch() {
    let mut sim = Simulation::new(LatencyModel::zero());
    let spec = fan_out(3, "sleepAction").unwrap();
    register_for(&mut sim, &spec).unwrap();
    let r = run(
        &mut sim,
        Engine::Inline,
        &spec,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    let pairs = detect_double_billing(&r.trace, 1);
    assert_eq!(pairs.len(), 3);
    assert!(pairs.iter().all(|p| p.overlap_ms == 1000));
}

#[test]
fn client_scheduler_transition_charges() {
    let mut sim = sim_for(Engine::ClientScheduler);
    let spec = seq(5, "echo").unwrap();
    register_for(&mut sim, &spec).unwrap();
    let r = run(
        &mut sim,
        Engine::ClientScheduler,
        &spec,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(r.transitions, 5);
    let b = compute_billing(&r, &PricingModel::default());
    assert_eq!(b.transition_usd, 5.0 * 0.000025);
}

#[test]
fn thousand_client_scheduler_transitions() {
    let mut sim = Simulation::new(LatencyModel::zero());
    let spec = Node::repeat(1000, Node::task("echo")).unwrap();
    register_for(&mut sim, &spec).unwrap();
    let r = run(
        &mut sim,
        Engine::ClientScheduler,
        &spec,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    let b = compute_billing(&r, &PricingModel::default());
    assert_eq!(b.transitions, 1000);
    assert_eq!(b.transition_usd, 0.025);
}

/// Billing of a nested run equals the inner composition run on its own,
/// plus the remaining task run on its own, plus the outer orchestrator.
fn additivity(engine: Engine) {
    let pricing = PricingModel::default();
    let inner = seq(3, "inc:x").unwrap();
    let fresh = || {
        let mut sim = sim_for(engine);
        register_for(&mut sim, &inner).unwrap();
        sim.register_function(faasflow::runtime::FunctionDef::sleep("tail", 250))
            .unwrap();
        sim
    };

    let mut sim = fresh();
    register_composition(
        &mut sim,
        "inner",
        engine,
        inner.clone(),
        &RunOptions::default(),
    )
    .unwrap();
    let outer = Node::Sequence(vec![Node::task("inner"), Node::task("tail")]);
    let nested = run(
        &mut sim,
        engine,
        &outer,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    let whole = compute_billing(&nested, &pricing);

    let mut sim = fresh();
    let alone = run(
        &mut sim,
        engine,
        &inner,
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();
    let mut sim = fresh();
    let tail = run(
        &mut sim,
        engine,
        &Node::task("tail"),
        Payload::empty(),
        &RunOptions::default(),
    )
    .unwrap();

    // Own charges of the outer orchestrator: its record, its two transitions
    // and its own history.
    let root = nested.trace.iter().find(|r| r.parent.is_none()).unwrap();
    let own_history = nested.history.as_ref().map_or(0, |h| h.stored_bytes());
    let own =
        faasflow::accounting::bill_trace(std::slice::from_ref(root), 2, own_history, &pricing);
    let tail_parts = faasflow::accounting::bill_trace(
        &tail
            .trace
            .iter()
            .filter(|r| !r.is_orchestrator())
            .cloned()
            .collect::<Vec<_>>(),
        0,
        0,
        &pricing,
    );
    let sum = compute_billing(&alone, &pricing)
        .combine(&tail_parts, &pricing)
        .combine(&own, &pricing);
    assert_eq!(whole.transitions, sum.transitions, "{engine}");
    assert_eq!(whole.function_ms, sum.function_ms, "{engine}");
    assert_eq!(whole.orchestrator_ms, sum.orchestrator_ms, "{engine}");
    assert_eq!(whole, sum, "{engine}");
}

#[test]
fn billing_additivity_on_nested_compositions() {
    for engine in [
        Engine::Suspend,
        Engine::ReactiveConductor,
        Engine::Sequences,
        Engine::EventSourcing,
    ] {
        additivity(engine);
    }
}

fn arb_interval() -> impl Strategy<Value = Interval> {
    (0u64..500, 0u64..200).prop_map(|(from, len)| Interval {
        from,
        to: from + len,
    })
}

proptest! {
    #[test]
    fn raising_epsilon_never_adds_findings(
        orch in prop::collection::vec(arb_interval(), 0..4),
        kids in prop::collection::vec(prop::collection::vec(arb_interval(), 0..3), 0..5),
        e1 in 0u64..100,
        de in 0u64..100,
    ) {
        let mut trace = Vec::new();
        let mut sim = Simulation::new(LatencyModel::zero());
        sim.register_function(faasflow::runtime::FunctionDef::echo("e")).unwrap();
        let base = sim.invoke("e", Payload::empty(), None).unwrap();
        let mut root = base.clone();
        root.role = faasflow::runtime::Role::Orchestrator;
        root.billed_intervals = orch;
        trace.push(root);
        for (i, iv) in kids.into_iter().enumerate() {
            let mut k = base.clone();
            k.id = faasflow::runtime::InvocationId(100 + i as u64);
            k.parent = Some(base.id);
            k.billed_intervals = iv;
            trace.push(k);
        }
        let a = detect_double_billing(&trace, e1).len();
        let b = detect_double_billing(&trace, e1 + de).len();
        prop_assert!(b <= a);
    }

    #[test]
    fn verdicts_do_not_depend_on_latency(i in 0u64..20, q in 0u64..20, l in 0u64..20) {
        let latency = LatencyModel { invoke_latency_ms: i, queue_latency_ms: q, log_write_ms: l, ..LatencyModel::zero() };
        let spec = seq(2, "sleep:50").unwrap();
        for engine in Engine::ALL {
            let mut p = CalibrationProfile::default_for(engine);
            p.latency = latency.clone();
            let v = faasflow::accounting::verify_trilemma_with(&p, engine, &spec, Payload::empty()).unwrap();
            let base = verify_trilemma(engine, &spec, Payload::empty()).unwrap();
            prop_assert_eq!((v.black_box, v.substitution, v.no_double_billing),
                (base.black_box, base.substitution, base.no_double_billing));
        }
    }
}
