//! Discrete-event scheduler and seeded random-number streams.
//!
//! Events are ordered by `(time, sequence)`: equal timestamps dispatch in
//! insertion order, so a run is a pure function of its configuration and seed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulation time in seconds.
pub type SimTime = f64;

/// Random generator used by every stochastic feature of the simulator.
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("event scheduled in the past: now={now}, requested={requested}")]
    InPast { now: SimTime, requested: SimTime },
    #[error("event time is not finite: {0}")]
    NotFinite(SimTime),
}

/// Handle returned by [`Scheduler::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

struct Entry<E> {
    time: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Single-threaded event queue with a monotone clock.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Entry<E>>,
    pending: HashSet<u64>,
    dispatched: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashSet::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events dispatched so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Number of live (not cancelled, not dispatched) events.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, time: SimTime, payload: E) -> Result<EventHandle, ScheduleError> {
        if !time.is_finite() {
            return Err(ScheduleError::NotFinite(time));
        }
        if time < self.now {
            return Err(ScheduleError::InPast {
                now: self.now,
                requested: time,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Entry { time, seq, payload });
        self.pending.insert(seq);
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> Result<EventHandle, ScheduleError> {
        self.schedule(self.now + delay, payload)
    }

    /// Cancels a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    /// Time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.skip_cancelled();
        self.queue.peek().map(|e| e.time)
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.queue.peek() {
            if self.pending.contains(&top.seq) {
                break;
            }
            self.queue.pop();
        }
    }

    /// Pops the next live event with `time <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        self.skip_cancelled();
        let top = self.queue.peek()?;
        if top.time > t_end {
            return None;
        }
        let entry = self.queue.pop().expect("peeked entry");
        self.pending.remove(&entry.seq);
        self.now = entry.time;
        self.dispatched += 1;
        Some((entry.time, entry.payload))
    }

    /// Dispatches every event with `time <= t_end` and leaves the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, E),
    {
        let result: Result<SimTime, std::convert::Infallible> = self.try_run_until(t_end, |s, e| {
            handler(s, e);
            Ok(())
        });
        match result {
            Ok(t) => t,
            Err(never) => match never {},
        }
    }

    /// Like [`Scheduler::run_until`] but stops at the first handler error.
    pub fn try_run_until<F, Err>(&mut self, t_end: SimTime, mut handler: F) -> Result<SimTime, Err>
    where
        F: FnMut(&mut Self, E) -> Result<(), Err>,
    {
        assert!(t_end >= self.now, "run_until target {t_end} precedes clock {}", self.now);
        while let Some((_, payload)) = self.pop_until(t_end) {
            handler(self, payload)?;
        }
        self.now = t_end;
        Ok(self.now)
    }
}

/// Named random streams derived from a master seed.
///
/// Each purpose label gets its own ChaCha stream, so adding draws for one
/// feature leaves every other feature's sample sequence untouched.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, label: &str) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(label_hash(label));
        rng
    }
}

// FNV-1a; stable across platforms and releases, unlike std's hasher.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
