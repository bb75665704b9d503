//! Virtual time for the simulator.
//!
//! The clock owns the pending-action queue. Actions fire in `(fire_time,
//! sequence_no)` order, so two actions scheduled for the same instant run in
//! the order they were submitted.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Virtual milliseconds.
pub type Millis = u64;

struct Scheduled<A> {
    at: Millis,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Scheduled<A> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<A> Eq for Scheduled<A> {}

impl<A> PartialOrd for Scheduled<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Scheduled<A> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct VirtualClock<A> {
    now: Millis,
    next_seq: u64,
    pending: BinaryHeap<Reverse<Scheduled<A>>>,
}

impl<A> Default for VirtualClock<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> VirtualClock<A> {
    pub fn new() -> Self {
        Self {
            now: 0,
            next_seq: 0,
            pending: BinaryHeap::new(),
        }
    }

    #[inline]
    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    /// Schedules `action` at absolute time `at` and returns its sequence number.
    /// Times in the past are clamped to `now`; the clock never runs backward.
    pub fn schedule_at(&mut self, at: Millis, action: A) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Reverse(Scheduled {
            at: at.max(self.now),
            seq,
            action,
        }));
        seq
    }

    pub fn schedule_in(&mut self, delay: Millis, action: A) -> u64 {
        self.schedule_at(self.now.saturating_add(delay), action)
    }

    /// Fire time of the next pending action.
    pub fn peek_time(&self) -> Option<Millis> {
        self.pending.peek().map(|Reverse(s)| s.at)
    }

    /// Removes the next action and advances `now` to its fire time.
    pub fn pop(&mut self) -> Option<(Millis, A)> {
        let Reverse(next) = self.pending.pop()?;
        debug_assert!(next.at >= self.now);
        self.now = next.at;
        Some((next.at, next.action))
    }
}
