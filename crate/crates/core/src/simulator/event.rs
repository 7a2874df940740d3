use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cluster::ReplicaId;
use crate::domain::VersionId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Arrival { model: usize },
    Departure { replica: ReplicaId, request: u64 },
    Release { model: usize, version: VersionId },
    SpawnComplete { replica: ReplicaId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time_ms: f64,
    /// Insertion counter; breaks ties between equal timestamps.
    pub sequence: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_ms
            .total_cmp(&self.time_ms)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Future event set ordered by `(time, sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, time_ms: f64, kind: EventKind) -> u64 {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Event {
            time_ms,
            sequence,
            kind,
        });
        sequence
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time_ms)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(5.0, EventKind::Arrival { model: 0 });
        q.schedule(1.0, EventKind::Arrival { model: 1 });
        q.schedule(5.0, EventKind::Arrival { model: 2 });
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.kind {
                EventKind::Arrival { model } => model,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(order, vec![1, 0, 2]);
    }

    proptest! {
        #[test]
        fn pops_are_lexicographic(times in proptest::collection::vec(0u32..50, 1..200)) {
            let mut q = EventQueue::new();
            for t in &times {
                q.schedule(*t as f64, EventKind::Arrival { model: 0 });
            }
            let mut last = (f64::NEG_INFINITY, 0u64);
            while let Some(e) = q.pop() {
                prop_assert!(e.time_ms > last.0 || (e.time_ms == last.0 && e.sequence > last.1));
                last = (e.time_ms, e.sequence);
            }
        }
    }
}
