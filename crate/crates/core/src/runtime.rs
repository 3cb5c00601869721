//! Slave-side emulation: segment buffering, timer-driven linear
//! interpolation and servo pulse generation.

use std::collections::BTreeMap;

use crate::angle::JOINT_LIMIT;
use crate::error::{Error, Result};
use crate::gaits::JOINTS;
use crate::transport::message::{decode, JointVector, StatusMessage, TrajectorySegmentMessage};

pub const DEFAULT_CAPACITY: usize = 64;
pub const DEFAULT_TIMER_PERIOD_MS: u64 = 10;

pub const PULSE_MIN_US: u16 = 500;
pub const PULSE_MID_US: u16 = 1500;
pub const PULSE_MAX_US: u16 = 2500;

/// Map a joint angle onto a servo pulse width: the joint range
/// `[-3pi/4, 3pi/4]` spans `[500, 2500]` us linearly. Out-of-range and
/// infinite inputs saturate; NaN maps to the neutral pulse.
pub fn pwm_map(q: f64) -> u16 {
    if q.is_nan() {
        return PULSE_MID_US;
    }
    let half_span = (PULSE_MAX_US - PULSE_MID_US) as f64;
    let pulse = (PULSE_MID_US as f64 + q * (half_span / JOINT_LIMIT)).round();
    pulse.clamp(PULSE_MIN_US as f64, PULSE_MAX_US as f64) as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServoCommand {
    pub pulse_us: [u16; JOINTS],
}

impl ServoCommand {
    pub fn from_angles(q: &JointVector) -> Self {
        Self { pulse_us: q.map(pwm_map) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Inserted,
    Duplicate,
    Stale,
    /// Inserted after dropping the oldest unconsumed segment.
    Overflow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub inserted: u64,
    pub duplicates: u64,
    pub stale: u64,
    pub overflow_drops: u64,
    pub decode_errors: u64,
}

/// Result of looking up the buffer at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub q: JointVector,
    /// Segment the value came from, `None` when holding.
    pub seq: Option<u64>,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    module_id: u32,
    segments: BTreeMap<u64, TrajectorySegmentMessage>,
    last_applied: JointVector,
    capacity: usize,
    stats: BufferStats,
}

impl TrajectoryBuffer {
    pub fn new(module_id: u32, capacity: usize) -> Self {
        Self {
            module_id,
            segments: BTreeMap::new(),
            last_applied: [0.0; JOINTS],
            capacity: capacity.max(1),
            stats: BufferStats::default(),
        }
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    pub fn stats(&self) -> BufferStats {
        self.stats
    }

    pub fn last_applied(&self) -> JointVector {
        self.last_applied
    }

    pub fn segments(&self) -> impl Iterator<Item = &TrajectorySegmentMessage> {
        self.segments.values()
    }

    /// Store a segment unless it is a duplicate or already in the past.
    pub fn ingest(&mut self, msg: TrajectorySegmentMessage, now_ms: f64) -> Result<IngestOutcome> {
        if msg.module_id != self.module_id {
            return Err(Error::Routing { expected: self.module_id, got: msg.module_id });
        }
        if self.segments.contains_key(&msg.start_time_ms)
            || self.segments.values().any(|s| s.seq == msg.seq)
        {
            self.stats.duplicates += 1;
            return Ok(IngestOutcome::Duplicate);
        }
        if (msg.end_time_ms() as f64) < now_ms {
            self.stats.stale += 1;
            return Ok(IngestOutcome::Stale);
        }
        let mut outcome = IngestOutcome::Inserted;
        if self.segments.len() >= self.capacity {
            self.segments.pop_first();
            self.stats.overflow_drops += 1;
            outcome = IngestOutcome::Overflow;
        }
        self.segments.insert(msg.start_time_ms, msg);
        self.stats.inserted += 1;
        Ok(outcome)
    }

    /// Interpolated targets at `t_ms`, or the last applied targets when no
    /// stored data covers `t_ms`.
    pub fn sample(&self, t_ms: f64) -> Sampled {
        self.lookup(t_ms).unwrap_or(Sampled {
            q: self.last_applied,
            seq: None,
            held: true,
        })
    }

    fn lookup(&self, t_ms: f64) -> Option<Sampled> {
        if !(t_ms >= 0.0) {
            return None;
        }
        let (_, seg) = self.segments.range(..=t_ms.floor() as u64).next_back()?;
        let period = seg.sample_period_ms as f64;
        let local = (t_ms - seg.start_time_ms as f64) / period;
        let idx = local.floor() as usize;
        let frac = local - idx as f64;
        let n = seg.samples.len();
        let lerp = |a: &JointVector, b: &JointVector| -> JointVector {
            std::array::from_fn(|k| a[k] + frac * (b[k] - a[k]))
        };
        let q = if idx + 1 < n {
            lerp(&seg.samples[idx], &seg.samples[idx + 1])
        } else if idx + 1 == n {
            if frac == 0.0 {
                seg.samples[idx]
            } else {
                let next = self.segments.get(&seg.end_time_ms())?;
                lerp(&seg.samples[idx], &next.samples[0])
            }
        } else {
            return None;
        };
        Some(Sampled { q, seq: Some(seg.seq), held: false })
    }

    /// Apply the targets for `t_ms`: sample, remember them for hold-last,
    /// and evict segments that ended at or before `t_ms`.
    pub fn apply(&mut self, t_ms: f64) -> Sampled {
        let s = self.sample(t_ms);
        self.last_applied = s.q;
        while let Some((_, first)) = self.segments.first_key_value() {
            if (first.end_time_ms() as f64) <= t_ms {
                self.segments.pop_first();
            } else {
                break;
            }
        }
        s
    }
}

/// One timer tick of a slave.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t_ms: u64,
    pub q: JointVector,
    pub pulse: ServoCommand,
    pub seq_active: Option<u64>,
    /// Cumulative number of hold-last ticks.
    pub holds: u64,
}

/// The module-side controller: decodes incoming payloads and runs the
/// interpolation timer.
#[derive(Debug, Clone)]
pub struct Slave {
    module_id: u32,
    buffer: TrajectoryBuffer,
    holds: u64,
    last_seq_applied: Option<u64>,
    applied: Vec<u64>,
    trace: Vec<TraceRow>,
}

impl Slave {
    pub fn new(module_id: u32, capacity: usize) -> Self {
        Self {
            module_id,
            buffer: TrajectoryBuffer::new(module_id, capacity),
            holds: 0,
            last_seq_applied: None,
            applied: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn module_id(&self) -> u32 {
        self.module_id
    }

    pub fn buffer(&self) -> &TrajectoryBuffer {
        &self.buffer
    }

    pub fn on_payload(&mut self, payload: &[u8], now_ms: f64) -> Result<IngestOutcome> {
        match decode(payload) {
            Ok(msg) => self.buffer.ingest(msg, now_ms),
            Err(e) => {
                self.buffer.stats.decode_errors += 1;
                Err(e)
            }
        }
    }

    pub fn on_timer(&mut self, t_ms: u64) -> &TraceRow {
        let s = self.buffer.apply(t_ms as f64);
        if s.held {
            self.holds += 1;
        }
        if let Some(seq) = s.seq {
            if self.applied.last() != Some(&seq) {
                self.applied.push(seq);
            }
            self.last_seq_applied = Some(seq);
        }
        self.trace.push(TraceRow {
            t_ms,
            q: s.q,
            pulse: ServoCommand::from_angles(&s.q),
            seq_active: s.seq,
            holds: self.holds,
        });
        self.trace.last().unwrap()
    }

    pub fn status(&self, clock_ms: u64) -> StatusMessage {
        StatusMessage {
            module_id: self.module_id,
            last_seq_applied: self.last_seq_applied,
            buffer_depth: self.buffer.depth() as u32,
            clock_ms,
        }
    }

    /// Distinct segment sequence numbers in the order they were applied.
    pub fn applied_seqs(&self) -> &[u64] {
        &self.applied
    }

    pub fn holds(&self) -> u64 {
        self.holds
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRow> {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn seg(seq: u64, start: u64, base: f64) -> TrajectorySegmentMessage {
        TrajectorySegmentMessage {
            module_id: 0,
            seq,
            start_time_ms: start,
            sample_period_ms: 10,
            samples: (0..5).map(|i| [base + i as f64 * 0.1; JOINTS]).collect(),
        }
    }

    #[test]
    fn pwm_examples() {
        assert_eq!(pwm_map(0.0), 1500);
        assert_eq!(pwm_map(0.75 * PI), 2500);
        assert_eq!(pwm_map(-0.75 * PI), 500);
        // 1500 + (pi/2) * 1000 / (3pi/4) = 1500 + 2000/3
        assert_eq!(pwm_map(PI / 2.0), (1500.0f64 + 2000.0 / 3.0).round() as u16);
        assert_eq!(pwm_map(PI / 2.0), 2167);
        assert_eq!(pwm_map(10.0), 2500);
        assert_eq!(pwm_map(f64::NEG_INFINITY), 500);
        assert_eq!(pwm_map(f64::NAN), 1500);
    }

    #[test]
    fn duplicate_is_ignored() {
        let mut b = TrajectoryBuffer::new(0, 8);
        assert_eq!(b.ingest(seg(0, 50, 0.0), 0.0).unwrap(), IngestOutcome::Inserted);
        let before = b.clone();
        assert_eq!(b.ingest(seg(0, 50, 0.0), 0.0).unwrap(), IngestOutcome::Duplicate);
        assert_eq!(b.segments().collect::<Vec<_>>(), before.segments().collect::<Vec<_>>());
        assert_eq!(b.stats().duplicates, 1);
    }

    #[test]
    fn stale_segment_is_counted() {
        let mut b = TrajectoryBuffer::new(0, 8);
        assert_eq!(b.ingest(seg(0, 50, 0.0), 101.0).unwrap(), IngestOutcome::Stale);
        assert_eq!(b.depth(), 0);
        assert_eq!(b.stats().stale, 1);
    }

    #[test]
    fn wrong_module_is_a_routing_error() {
        let mut b = TrajectoryBuffer::new(3, 8);
        assert!(matches!(b.ingest(seg(0, 50, 0.0), 0.0), Err(Error::Routing { expected: 3, got: 0 })));
    }

    #[test]
    fn overflow_drops_oldest() {
        let mut b = TrajectoryBuffer::new(0, 2);
        b.ingest(seg(0, 50, 0.0), 0.0).unwrap();
        b.ingest(seg(1, 100, 0.0), 0.0).unwrap();
        assert_eq!(b.ingest(seg(2, 150, 0.0), 0.0).unwrap(), IngestOutcome::Overflow);
        assert_eq!(b.segments().map(|s| s.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(b.stats().overflow_drops, 1);
    }

    #[test]
    fn out_of_order_arrival_is_sorted() {
        let mut b = TrajectoryBuffer::new(0, 8);
        for (seq, start) in [(2, 150), (0, 50), (1, 100)] {
            b.ingest(seg(seq, start, 0.0), 0.0).unwrap();
        }
        let starts: Vec<_> = b.segments().map(|s| s.start_time_ms).collect();
        assert_eq!(starts, vec![50, 100, 150]);
    }

    #[test]
    fn sample_instants_and_midpoints() {
        let mut b = TrajectoryBuffer::new(0, 8);
        b.ingest(seg(0, 50, 0.0), 0.0).unwrap();
        b.ingest(seg(1, 100, 1.0), 0.0).unwrap();
        assert_eq!(b.sample(70.0).q, [0.2; JOINTS]);
        assert_eq!(b.sample(50.0).seq, Some(0));
        let mid = b.sample(75.0).q[0];
        assert!((mid - 0.25).abs() < 1e-15);
        // across the boundary: last of seg 0 (0.4) to first of seg 1 (1.0)
        let cross = b.sample(95.0);
        assert!((cross.q[0] - 0.7).abs() < 1e-15);
        assert_eq!(cross.seq, Some(0));
        assert_eq!(b.sample(100.0).q, [1.0; JOINTS]);
    }

    #[test]
    fn holds_last_applied_on_gaps() {
        let mut b = TrajectoryBuffer::new(0, 8);
        b.ingest(seg(0, 50, 0.0), 0.0).unwrap();
        assert!(b.sample(20.0).held);
        assert_eq!(b.sample(20.0).q, [0.0; JOINTS]);
        let s = b.apply(90.0);
        assert!(!s.held);
        // next segment missing: last sample instant is covered, beyond it holds
        let hold = b.sample(95.0);
        assert!(hold.held);
        assert_eq!(hold.q, [0.4; JOINTS]);
        assert_eq!(b.apply(100.0).q, [0.4; JOINTS]);
        assert_eq!(b.depth(), 0);
    }

    #[test]
    fn slave_trace_and_status() {
        let mut slave = Slave::new(0, 8);
        let payload = crate::transport::encode(&seg(0, 50, 0.0));
        slave.on_payload(&payload, 5.0).unwrap();
        assert!(slave.on_payload(b"{", 5.0).is_err());
        assert_eq!(slave.buffer().stats().decode_errors, 1);
        for t in (0..=100).step_by(10) {
            slave.on_timer(t);
        }
        let trace = slave.trace();
        assert_eq!(trace.len(), 11);
        assert_eq!(trace[0].seq_active, None);
        assert_eq!(trace[5].seq_active, Some(0));
        assert_eq!(trace[5].pulse.pulse_us, [1500; JOINTS]);
        assert_eq!(slave.applied_seqs(), &[0]);
        let st = slave.status(100);
        assert_eq!((st.last_seq_applied, st.buffer_depth), (Some(0), 0));
        assert_eq!(slave.holds(), 6);
    }

    proptest! {
        #[test]
        fn pwm_is_monotone_and_in_range(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(pwm_map(lo) <= pwm_map(hi));
            prop_assert!((PULSE_MIN_US..=PULSE_MAX_US).contains(&pwm_map(a)));
            let clamped = a.clamp(-JOINT_LIMIT, JOINT_LIMIT);
            prop_assert_eq!(pwm_map(clamped), pwm_map(a));
        }

        #[test]
        fn ingest_commutes_over_arrival_order(perm in Just((0..6u64).collect::<Vec<_>>()).prop_shuffle()) {
            let mut sorted = TrajectoryBuffer::new(0, 16);
            let mut shuffled = TrajectoryBuffer::new(0, 16);
            for i in 0..6u64 {
                sorted.ingest(seg(i, 50 * (i + 1), i as f64), 0.0).unwrap();
            }
            for i in perm {
                shuffled.ingest(seg(i, 50 * (i + 1), i as f64), 0.0).unwrap();
            }
            prop_assert_eq!(sorted, shuffled);
        }

        #[test]
        fn sample_is_continuous_over_contiguous_data(t in 50.0f64..289.0) {
            let mut b = TrajectoryBuffer::new(0, 16);
            for i in 0..5u64 {
                b.ingest(seg(i, 50 * (i + 1), i as f64 * 0.5), 0.0).unwrap();
            }
            let (a, c) = (b.sample(t), b.sample(t + 1e-6));
            prop_assert!(!a.held && !c.held);
            prop_assert!((a.q[0] - c.q[0]).abs() < 1e-6 * 100.0);
        }
    }
}
