use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::eval::CallResult;
use crate::runtime::{Millis, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistoryKind {
    OrchestrationStarted,
    ActivityScheduled,
    ActivityCompleted,
    TimerFired,
    ExternalEvent,
    OrchestrationCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub seq: u64,
    pub kind: HistoryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<String>,
    /// Call path of the activity or timer inside the orchestration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<String>,
    pub payload: Payload,
    pub raw_bytes: u64,
    /// Bytes actually persisted; smaller than `raw_bytes` when compressed.
    pub stored_bytes: u64,
    pub compressed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub time: Millis,
}

/// Append-only orchestration history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventLog {
    events: Vec<HistoryEvent>,
}

/// How payloads are persisted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Storage {
    pub threshold: Option<u64>,
    pub ratio: f64,
}

impl Storage {
    pub fn stored_size(&self, raw: u64) -> (u64, bool) {
        match self.threshold {
            Some(t) if raw > t => ((raw as f64 * self.ratio).ceil() as u64, true),
            _ => (raw, false),
        }
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<HistoryEvent>) -> Self {
        Self { events }
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: HistoryKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn raw_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.raw_bytes).sum()
    }

    pub fn stored_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.stored_bytes).sum()
    }

    /// The first `k` events.
    pub fn truncated(&self, k: usize) -> EventLog {
        Self {
            events: self.events[..k.min(self.events.len())].to_vec(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn append(
        &mut self,
        kind: HistoryKind,
        activity: Option<String>,
        call: Option<String>,
        payload: Payload,
        error: Option<String>,
        storage: Storage,
        time: Millis,
    ) -> &HistoryEvent {
        let raw = payload.size_bytes();
        let (stored, compressed) = storage.stored_size(raw);
        let seq = self.events.last().map_or(0, |e| e.seq + 1);
        self.events.push(HistoryEvent {
            seq,
            kind,
            activity,
            call,
            payload,
            raw_bytes: raw,
            stored_bytes: stored,
            compressed,
            error,
            time,
        });
        self.events.last().expect("just pushed")
    }

    pub fn is_scheduled(&self, call: &str) -> bool {
        self.events
            .iter()
            .any(|e| e.kind == HistoryKind::ActivityScheduled && e.call.as_deref() == Some(call))
    }

    /// Results recorded for completed activities and fired timers.
    pub(crate) fn results(&self) -> BTreeMap<String, CallResult> {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    HistoryKind::ActivityCompleted | HistoryKind::TimerFired
                )
            })
            .filter_map(|e| {
                let call = e.call.clone()?;
                let r = match &e.error {
                    Some(err) => Err(err.clone()),
                    None => Ok(e.payload.clone()),
                };
                Some((call, r))
            })
            .collect()
    }

    /// (call, activity) pairs of every scheduled activity.
    pub fn scheduled(&self) -> Vec<(String, String)> {
        self.events
            .iter()
            .filter(|e| e.kind == HistoryKind::ActivityScheduled)
            .filter_map(|e| Some((e.call.clone()?, e.activity.clone()?)))
            .collect()
    }

    /// Checks the structural invariants: strictly increasing sequence numbers
    /// and every completion preceded by its scheduling.
    pub fn validate(&self) -> Result<(), String> {
        let mut scheduled = BTreeSet::new();
        for (i, e) in self.events.iter().enumerate() {
            if i > 0 && e.seq <= self.events[i - 1].seq {
                return Err(format!("sequence number {} does not increase", e.seq));
            }
            match e.kind {
                HistoryKind::ActivityScheduled => {
                    scheduled.insert(e.call.clone());
                }
                HistoryKind::ActivityCompleted if !scheduled.contains(&e.call) => {
                    return Err(format!(
                        "completion of {:?} without a prior scheduling",
                        e.call
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                serde_json::from_str(&line)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            );
        }
        Ok(Self { events })
    }
}
