//! Virtual time and the ordered event queue that drives the networked harness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Simulated time in microseconds. Never runs backward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now_us: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn now_ms(&self) -> f64 {
        self.now_us as f64 / 1000.0
    }

    /// Move to `t_us`.
    ///
    /// # Panics
    /// If `t_us` is earlier than the current time.
    pub fn advance_to(&mut self, t_us: u64) {
        assert!(
            t_us >= self.now_us,
            "virtual clock moved backward: {} -> {t_us}",
            self.now_us
        );
        self.now_us = t_us;
    }
}

/// Ordering key of a scheduled event. Events fire by timestamp, then by
/// class (so e.g. deliveries land before a timer at the same instant), then
/// by `(module_id, seq)`, then in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventKey {
    pub at_us: u64,
    pub class: u8,
    pub module_id: u32,
    pub seq: u64,
}

struct Entry<E> {
    key: EventKey,
    order: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.key, self.order) == (other.key, other.order)
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap
        (other.key, other.order).cmp(&(self.key, self.order))
    }
}

pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    clock: VirtualClock,
    inserted: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), clock: VirtualClock::new(), inserted: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> VirtualClock {
        self.clock
    }

    /// Schedule an event. Events in the past are pulled forward to now.
    pub fn schedule(&mut self, mut key: EventKey, event: E) {
        key.at_us = key.at_us.max(self.clock.now_us());
        self.heap.push(Entry { key, order: self.inserted, event });
        self.inserted += 1;
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<(EventKey, E)> {
        let e = self.heap.pop()?;
        self.clock.advance_to(e.key.at_us);
        Some((e.key, e.event))
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

    fn key(at_us: u64, class: u8, module_id: u32, seq: u64) -> EventKey {
        EventKey { at_us, class, module_id, seq }
    }

    #[test]
    fn pops_in_key_order_with_stable_ties() {
        let mut q = EventQueue::new();
        q.schedule(key(10, 1, 0, 0), "late");
        q.schedule(key(5, 2, 1, 0), "timer m1");
        q.schedule(key(5, 2, 0, 0), "timer m0");
        q.schedule(key(5, 1, 0, 3), "deliver s3");
        q.schedule(key(5, 1, 0, 2), "deliver s2");
        q.schedule(key(5, 1, 0, 2), "deliver s2 again");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(
            order,
            ["deliver s2", "deliver s2 again", "deliver s3", "timer m0", "timer m1", "late"]
        );
        assert_eq!(q.clock().now_us(), 10);
    }

    #[test]
    fn past_events_fire_now() {
        let mut q = EventQueue::new();
        q.schedule(key(100, 0, 0, 0), 1);
        q.pop();
        q.schedule(key(50, 0, 0, 0), 2);
        let (k, _) = q.pop().unwrap();
        assert_eq!(k.at_us, 100);
    }

    #[test]
    #[should_panic(expected = "backward")]
    fn clock_refuses_to_rewind() {
        let mut c = VirtualClock::new();
        c.advance_to(5);
        c.advance_to(4);
    }
}
