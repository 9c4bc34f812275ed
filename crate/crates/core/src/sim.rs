//! Discrete-event engine: an integer-nanosecond clock and an ordered event
//! queue with insertion-order tie-breaking.
//!
//! The engine is generic over the event payload. Handlers receive the queue
//! itself so they can schedule follow-up events while the loop is running.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Simulation time in whole nanoseconds since the start of the run.
pub type SimTime = u64;

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending events keyed by `(time, insertion sequence)`.
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    processed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            now: 0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            processed: 0,
        }
    }

    /// Current clock.
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events still pending.
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Total events handled since construction.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Time of the earliest pending event.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    /// Enqueue `event` at absolute time `at`.
    ///
    /// # Panics
    ///
    /// Scheduling before the current clock is a logic error in the caller and
    /// aborts the simulation.
    pub fn schedule(&mut self, event: E, at: SimTime) {
        assert!(
            at >= self.now,
            "event in past: scheduled for t={at} ns but clock is at t={} ns",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
    }

    /// Process every event with time `<= deadline`, in `(time, seq)` order,
    /// then move the clock to `deadline` (never backwards). Returns the clock.
    pub fn run_until<H>(&mut self, deadline: SimTime, mut handler: H) -> SimTime
    where
        H: FnMut(&mut Self, E),
    {
        while let Some(at) = self.peek_time() {
            if at > deadline {
                break;
            }
            let entry = self.heap.pop().expect("peeked entry");
            self.now = entry.at;
            self.processed += 1;
            handler(self, entry.event);
        }
        self.now = self.now.max(deadline);
        self.now
    }

    /// Pop and handle exactly one event, if any. Returns its time.
    pub fn step<H>(&mut self, handler: H) -> Option<SimTime>
    where
        H: FnOnce(&mut Self, E),
    {
        let entry = self.heap.pop()?;
        self.now = entry.at;
        self.processed += 1;
        handler(self, entry.event);
        Some(entry.at)
    }
}
