use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::clock::Millis;
use super::payload::Payload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InvocationId(pub u64);

impl fmt::Display for InvocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inv-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationState {
    Pending,
    Running,
    Suspended,
    Completed,
    Failed,
}

impl InvocationState {
    pub fn is_terminal(self) -> bool {
        matches!(self, InvocationState::Completed | InvocationState::Failed)
    }
}

/// Whether a record is a composed function or an orchestrator acting on
/// behalf of a composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Function,
    Orchestrator,
}

/// Half-open billed interval `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub from: Millis,
    pub to: Millis,
}

impl Interval {
    pub fn len(&self) -> Millis {
        self.to - self.from
    }

    pub fn is_empty(&self) -> bool {
        self.to <= self.from
    }

    pub fn overlap(&self, other: &Interval) -> Millis {
        let lo = self.from.max(other.from);
        let hi = self.to.min(other.to);
        hi.saturating_sub(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub id: InvocationId,
    pub function: String,
    pub parent: Option<InvocationId>,
    pub role: Role,
    /// Position of the call inside its composition: dot-separated segments,
    /// `sN` for sequential children and `pN` for parallel branches.
    pub path: String,
    pub submit_time: Millis,
    pub start_time: Option<Millis>,
    pub end_time: Option<Millis>,
    pub billed_intervals: Vec<Interval>,
    pub state: InvocationState,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub output: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InvocationRecord {
    pub fn billed_ms(&self) -> Millis {
        self.billed_intervals.iter().map(Interval::len).sum()
    }

    pub fn is_orchestrator(&self) -> bool {
        self.role == Role::Orchestrator
    }
}

/// Writes one JSON record per line.
pub fn write_trace<W: Write>(mut out: W, records: &[InvocationRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(records: &[InvocationRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_trace<R: BufRead>(input: R) -> io::Result<Vec<InvocationRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_is_half_open() {
        let a = Interval { from: 0, to: 10 };
        assert_eq!(a.overlap(&Interval { from: 10, to: 20 }), 0);
        assert_eq!(a.overlap(&Interval { from: 5, to: 20 }), 5);
        assert_eq!(a.overlap(&Interval { from: 2, to: 3 }), 1);
    }

    #[test]
    fn trace_round_trip() {
        let rec = InvocationRecord {
            id: InvocationId(3),
            function: "f".into(),
            parent: Some(InvocationId(1)),
            role: Role::Function,
            path: "s0.p1".into(),
            submit_time: 0,
            start_time: Some(1),
            end_time: Some(9),
            billed_intervals: vec![Interval { from: 1, to: 9 }],
            state: InvocationState::Completed,
            input_bytes: 0,
            output_bytes: 0,
            output: Payload::empty(),
            error: None,
        };
        let text = trace_to_string(std::slice::from_ref(&rec));
        assert!(text.ends_with('\n'));
        assert!(text.contains("\"submit_time\":0"));
        assert_eq!(read_trace(text.as_bytes()).unwrap(), vec![rec]);
    }
}
