use std::collections::BTreeMap;

use serde::Serialize;

use crate::bench::{register_for, CalibrationProfile};
use crate::engines::{evaluate_direct, register_composition, run, Engine, EngineError, RunOptions};
use crate::runtime::{
    FunctionDef, InvocationId, InvocationRecord, Millis, Payload, SimConfig, Simulation,
};
use crate::workflow::Node;

/// Overlap allowed between an orchestrator and its descendants, covering
/// the dispatch slice of an orchestrator that suspends right after calling.
pub const DEFAULT_EPSILON_MS: Millis = 1;

const PROBE: &str = "trilemma-probe";
const NESTED: &str = "trilemma-nested";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DoubleBilling {
    pub orchestrator: InvocationId,
    pub child: InvocationId,
    pub overlap_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DoubleBilling(DoubleBilling),
    NestingFailure { reason: String },
    Introspection { count: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrilemmaVerdict {
    pub engine: Engine,
    pub black_box: bool,
    pub substitution: bool,
    pub no_double_billing: bool,
    pub st_safe: bool,
    pub evidence: Vec<Finding>,
}

/// Every (orchestrator, descendant) pair where some billed interval of the
/// orchestrator overlaps one of the descendant's by more than `epsilon_ms`.
/// The reported overlap is the total over all their intervals.
pub fn detect_double_billing(trace: &[InvocationRecord], epsilon_ms: Millis) -> Vec<DoubleBilling> {
    let by_id: BTreeMap<InvocationId, &InvocationRecord> =
        trace.iter().map(|r| (r.id, r)).collect();
    let mut found = Vec::new();
    for child in trace {
        let mut ancestor = child.parent;
        while let Some(id) = ancestor {
            let Some(orch) = by_id.get(&id) else { break };
            if orch.is_orchestrator() {
                let overlaps: Vec<Millis> = orch
                    .billed_intervals
                    .iter()
                    .flat_map(|a| child.billed_intervals.iter().map(move |b| a.overlap(b)))
                    .collect();
                if overlaps.iter().any(|&o| o > epsilon_ms) {
                    let overlap = overlaps.iter().sum();
                    found.push(DoubleBilling {
                        orchestrator: orch.id,
                        child: child.id,
                        overlap_ms: overlap,
                    });
                }
            }
            ancestor = orch.parent;
        }
    }
    found.sort_by_key(|d| (d.orchestrator, d.child));
    found
}

fn simulation(profile: &CalibrationProfile, engine: Engine) -> Result<Simulation, EngineError> {
    profile
        .simulation(engine, SimConfig::default())
        .map_err(|e| EngineError::UnsupportedSpec(e.to_string()))
}

/// Expected output of `spec`, computed without the simulator. Calls to
/// compositions recurse into their specs.
fn expected(sim: &Simulation, spec: &Node, input: &Payload) -> Result<Payload, String> {
    let mut call = |name: &str, input: &Payload| -> Result<Payload, String> {
        let def = sim
            .registry()
            .for_execution(name)
            .ok_or_else(|| format!("unknown function {name}"))?;
        match &def.behavior {
            crate::runtime::Behavior::Composition(c) => expected(sim, &c.spec, input),
            b => b
                .direct_output(input)
                .unwrap_or_else(|| Err(format!("{name} has no direct output"))),
        }
    };
    evaluate_direct(spec, input, &mut call)
}

fn substitution_failure(
    profile: &CalibrationProfile,
    engine: Engine,
    spec: &Node,
    input: &Payload,
) -> Option<String> {
    let mut sim = match simulation(profile, engine) {
        Ok(s) => s,
        Err(e) => return Some(e.to_string()),
    };
    if let Err(e) = register_for(&mut sim, spec) {
        return Some(e.to_string());
    }
    if let Err(e) = register_composition(
        &mut sim,
        NESTED,
        engine,
        spec.clone(),
        &RunOptions::default(),
    ) {
        return Some(format!(
            "cannot register the composition as a function: {e}"
        ));
    }
    let want = match expected(&sim, spec, input) {
        Ok(v) => v,
        Err(e) => return Some(format!("composition has no defined output: {e}")),
    };
    match sim.invoke(NESTED, input.clone(), None) {
        Ok(rec) if rec.output == want => {}
        Ok(rec) => {
            return Some(format!(
                "invoking the composition returned {} instead of {}",
                rec.output.0, want.0
            ))
        }
        Err(e) => return Some(format!("cannot invoke the composition: {e}")),
    }
    let outer = Node::Sequence(vec![Node::task(NESTED), Node::task(NESTED)]);
    let want = match expected(&sim, &outer, input) {
        Ok(v) => v,
        Err(e) => return Some(format!("nested composition has no defined output: {e}")),
    };
    match run(
        &mut sim,
        engine,
        &outer,
        input.clone(),
        &RunOptions::default(),
    ) {
        Ok(r) if r.output == want => None,
        Ok(r) => Some(format!(
            "nested composition returned {} instead of {}",
            r.output.0, want.0
        )),
        Err(e) => Some(format!("cannot nest the composition as a task: {e}")),
    }
}

/// Whether `engine` compositions are functions: they register and invoke
/// like one and work as a task of another composition.
pub fn check_substitution(engine: Engine, spec: &Node) -> bool {
    check_substitution_with(&CalibrationProfile::default_for(engine), engine, spec)
}

pub fn check_substitution_with(profile: &CalibrationProfile, engine: Engine, spec: &Node) -> bool {
    substitution_failure(profile, engine, spec, &Payload::empty()).is_none()
}

/// Checks the three trilemma constraints for `engine` on `spec`.
pub fn verify_trilemma(
    engine: Engine,
    spec: &Node,
    input: Payload,
) -> Result<TrilemmaVerdict, EngineError> {
    verify_trilemma_with(
        &CalibrationProfile::default_for(engine),
        engine,
        spec,
        input,
    )
}

pub fn verify_trilemma_with(
    profile: &CalibrationProfile,
    engine: Engine,
    spec: &Node,
    input: Payload,
) -> Result<TrilemmaVerdict, EngineError> {
    let mut evidence = Vec::new();

    // The probe flags any read of its definition outside execution.
    let mut sim = simulation(profile, engine)?;
    register_for(&mut sim, spec)?;
    sim.register_function(FunctionDef::echo(PROBE).sealed())?;
    let probed = Node::Sequence(vec![spec.clone(), Node::task(PROBE)]);
    let before = sim.registry().introspection_count();
    let result = run(
        &mut sim,
        engine,
        &probed,
        input.clone(),
        &RunOptions::default(),
    )?;
    let introspections = sim.registry().introspection_count() - before;
    if introspections > 0 {
        evidence.push(Finding::Introspection {
            count: introspections,
        });
    }

    let overlaps = detect_double_billing(&result.trace, DEFAULT_EPSILON_MS);
    let no_double_billing = overlaps.is_empty();
    evidence.extend(overlaps.into_iter().map(Finding::DoubleBilling));

    let failure = substitution_failure(profile, engine, spec, &input);
    let substitution = failure.is_none();
    evidence.extend(failure.map(|reason| Finding::NestingFailure { reason }));

    let black_box = introspections == 0;
    Ok(TrilemmaVerdict {
        engine,
        black_box,
        substitution,
        no_double_billing,
        st_safe: black_box && substitution && no_double_billing,
        evidence,
    })
}
