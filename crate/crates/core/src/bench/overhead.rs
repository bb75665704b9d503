use std::collections::BTreeMap;

use super::BenchError;
use crate::engines::WorkflowResult;
use crate::runtime::{InvocationRecord, Millis, Role};

#[derive(Default)]
struct Trie {
    own: Millis,
    kids: BTreeMap<String, Trie>,
}

impl Trie {
    fn insert(&mut self, path: &str, billed: Millis) {
        let mut node = self;
        for seg in path.split('.').filter(|s| !s.is_empty()) {
            node = node.kids.entry(seg.to_string()).or_default();
        }
        node.own += billed;
    }

    /// Sequential children add up, parallel children overlap.
    fn critical(&self) -> Millis {
        let mut seq = 0;
        let mut par = 0;
        for (seg, kid) in &self.kids {
            let t = kid.critical();
            if seg.starts_with('p') {
                par = par.max(t);
            } else {
                seq += t;
            }
        }
        self.own + seq + par
    }
}

/// Time the composed functions need with zero orchestration cost: billed
/// durations summed along sequences and maxed across parallel branches.
pub fn ideal_time(trace: &[InvocationRecord]) -> Result<Millis, BenchError> {
    let mut trie = Trie::default();
    for r in trace.iter().filter(|r| r.role == Role::Function) {
        if !r.state.is_terminal() || r.end_time.is_none() {
            return Err(BenchError::IncompleteTrace(format!(
                "{} ({}) did not finish",
                r.id, r.function
            )));
        }
        trie.insert(&r.path, r.billed_ms());
    }
    Ok(trie.critical())
}

/// Everything outside the composed functions: wall time minus the ideal
/// time. For a sequence this is wall time minus the summed function time;
/// orchestrator execution, dispatch, logging and waits all count.
pub fn overhead(result: &WorkflowResult) -> Result<Millis, BenchError> {
    let ideal = ideal_time(&result.trace)?;
    result.wall_time_ms.checked_sub(ideal).ok_or_else(|| {
        BenchError::IncompleteTrace(format!(
            "wall time {} below function time {ideal}",
            result.wall_time_ms
        ))
    })
}
