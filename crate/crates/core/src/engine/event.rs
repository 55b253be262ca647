use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimTime;

struct Scheduled<E> {
    time: SimTime,
    sequence: u64,
    payload: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.sequence == other.sequence
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Future event list ordered by `(time, sequence)`.
///
/// The sequence number is assigned at scheduling time, so events sharing a
/// timestamp are dispatched in the order they were scheduled.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    now: SimTime,
    next_sequence: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_sequence: 0,
        }
    }

    /// Current simulated clock: the timestamp of the last dispatched event.
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueues `payload` at `time`.
    ///
    /// # Panics
    ///
    /// Scheduling before the current clock is a simulator bug and aborts.
    pub fn schedule(&mut self, time: SimTime, payload: E) {
        assert!(
            time >= self.now,
            "event scheduled in the past: {} < {}",
            time,
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Scheduled {
            time,
            sequence,
            payload,
        });
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|s| s.time)
    }

    /// Removes the next event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let next = self.heap.pop()?;
        self.now = next.time;
        Some((next.time, next.payload))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Pending payloads in unspecified order.
    pub fn pending(&self) -> impl Iterator<Item = &E> {
        self.heap.iter().map(|s| &s.payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut EventQueue<&'static str>) -> Vec<&'static str> {
        std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect()
    }

    #[test]
    fn earlier_time_dispatched_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(5), "five");
        q.schedule(SimTime::from_secs(3), "three");
        assert_eq!(drain(&mut q), ["three", "five"]);
    }

    #[test]
    fn equal_times_keep_scheduling_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(5), "A");
        q.schedule(SimTime::from_secs(5), "B");
        assert_eq!(drain(&mut q), ["A", "B"]);
    }

    #[test]
    fn event_at_current_clock_precedes_later_events() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(2), "first");
        q.pop();
        q.schedule(SimTime::from_secs(9), "later");
        q.schedule(SimTime::from_secs(2), "now");
        assert_eq!(drain(&mut q), ["now", "later"]);
        assert_eq!(q.now(), SimTime::from_secs(9));
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(2), ());
        q.pop();
        q.schedule(SimTime::from_secs(1), ());
    }
}
