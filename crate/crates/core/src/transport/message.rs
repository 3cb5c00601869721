use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::angle::JOINT_LIMIT;
use crate::error::{Error, Result};
use crate::gaits::JOINTS;

/// Joint targets of one module at one instant, rad.
pub type JointVector = [f64; JOINTS];

/// Angles travel with six fractional digits.
pub const QUANTUM: f64 = 1e-6;

/// A run of evenly spaced joint targets for one module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySegmentMessage {
    pub module_id: u32,
    pub seq: u64,
    pub start_time_ms: u64,
    pub sample_period_ms: u32,
    pub samples: Vec<JointVector>,
}

impl TrajectorySegmentMessage {
    pub fn duration_ms(&self) -> u64 {
        self.samples.len() as u64 * self.sample_period_ms as u64
    }

    /// Half-open end of the segment: the next segment starts here.
    pub fn end_time_ms(&self) -> u64 {
        self.start_time_ms + self.duration_ms()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidMessage("segment has no samples".into()));
        }
        if self.sample_period_ms == 0 {
            return Err(Error::InvalidMessage("sample period must be > 0".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if let Some(q) = s.iter().find(|q| !q.is_finite() || q.abs() > JOINT_LIMIT + QUANTUM) {
                return Err(Error::InvalidMessage(format!(
                    "sample {i}: angle {q} outside the joint range"
                )));
            }
        }
        Ok(())
    }

    /// The message as a receiver sees it after encoding.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            for q in s.iter_mut() {
                *q = fixed6(*q).parse().expect("fixed-point text parses");
            }
        }
        out
    }
}

/// Periodic feedback from a module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusMessage {
    pub module_id: u32,
    pub last_seq_applied: Option<u64>,
    pub buffer_depth: u32,
    pub clock_ms: u64,
}

fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Canonical JSON encoding: fields in declaration order, no whitespace,
/// angles with exactly six fractional digits.
pub fn encode(msg: &TrajectorySegmentMessage) -> Vec<u8> {
    let mut s = String::with_capacity(96 + msg.samples.len() * 64);
    write!(
        s,
        "{{\"module_id\":{},\"seq\":{},\"start_time_ms\":{},\"sample_period_ms\":{},\"samples\":[",
        msg.module_id, msg.seq, msg.start_time_ms, msg.sample_period_ms
    )
    .unwrap();
    for (i, sample) in msg.samples.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        for (k, q) in sample.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push_str(&fixed6(*q));
        }
        s.push(']');
    }
    s.push_str("]}");
    s.into_bytes()
}

/// Byte offset of the character at a serde_json error position.
fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    let line_start = input
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(line.saturating_sub(2))
        .map_or(0, |(i, _)| i + 1);
    let start = if line <= 1 { 0 } else { line_start };
    (start + column.saturating_sub(1)).min(input.len())
}

fn parse<'a, T: Deserialize<'a>>(input: &'a [u8]) -> Result<T> {
    serde_json::from_slice(input).map_err(|e| Error::Parse {
        offset: if e.is_eof() { input.len() } else { byte_offset(input, e.line(), e.column()) },
        message: e.to_string(),
    })
}

pub fn decode(input: &[u8]) -> Result<TrajectorySegmentMessage> {
    let msg: TrajectorySegmentMessage = parse(input)?;
    msg.validate()?;
    Ok(msg)
}

pub fn encode_status(msg: &StatusMessage) -> Vec<u8> {
    serde_json::to_vec(msg).expect("status serializes")
}

pub fn decode_status(input: &[u8]) -> Result<StatusMessage> {
    parse(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_msg() -> TrajectorySegmentMessage {
        TrajectorySegmentMessage {
            module_id: 1,
            seq: 42,
            start_time_ms: 150,
            sample_period_ms: 10,
            samples: vec![[0.1234567, -1.0, 0.0, 2.0, -0.0000001]; 2],
        }
    }

    #[test]
    fn canonical_layout() {
        let text = String::from_utf8(encode(&sample_msg())).unwrap();
        assert_eq!(
            text,
            "{\"module_id\":1,\"seq\":42,\"start_time_ms\":150,\"sample_period_ms\":10,\"samples\":[\
             [0.123457,-1.000000,0.000000,2.000000,0.000000],\
             [0.123457,-1.000000,0.000000,2.000000,0.000000]]}"
        );
    }

    #[test]
    fn round_trip_quantizes() {
        let m = sample_msg();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back, m.quantized());
        assert_eq!(back.samples[0][0], 0.123457);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode(&sample_msg());
        let cut = &bytes[..40];
        match decode(cut) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 40),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn offset_accounts_for_lines() {
        let text = b"{\n  \"module_id\": 0,\n  \"seq\": x\n}";
        match decode(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(text[offset], b'x'),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let unknown = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":10,"samples":[[0,0,0,0,0]],"qos":1}"#;
        assert!(matches!(decode(unknown), Err(Error::Parse { .. })));
        let arity = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":10,"samples":[[0,0,0,0]]}"#;
        assert!(matches!(decode(arity), Err(Error::Parse { .. })));
        let huge = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":10,"samples":[[1e999,0,0,0,0]]}"#;
        assert!(decode(huge).is_err());
        let nan = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":10,"samples":[[NaN,0,0,0,0]]}"#;
        assert!(decode(nan).is_err());
        let empty = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":10,"samples":[]}"#;
        assert!(matches!(decode(empty), Err(Error::InvalidMessage(_))));
        let zero = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":0,"samples":[[0,0,0,0,0]]}"#;
        assert!(matches!(decode(zero), Err(Error::InvalidMessage(_))));
        let range = br#"{"module_id":0,"seq":0,"start_time_ms":0,"sample_period_ms":10,"samples":[[3,0,0,0,0]]}"#;
        assert!(matches!(decode(range), Err(Error::InvalidMessage(_))));
    }

    #[test]
    fn status_round_trip() {
        let s = StatusMessage { module_id: 3, last_seq_applied: Some(9), buffer_depth: 2, clock_ms: 500 };
        assert_eq!(
            String::from_utf8(encode_status(&s)).unwrap(),
            r#"{"module_id":3,"last_seq_applied":9,"buffer_depth":2,"clock_ms":500}"#
        );
        assert_eq!(decode_status(&encode_status(&s)).unwrap(), s);
        assert!(decode_status(br#"{"module_id":3}"#).is_err());
    }

    proptest! {
        #[test]
        fn decode_encode_within_quantum(
            seq in any::<u32>(),
            start in 0u64..1_000_000,
            samples in proptest::collection::vec(proptest::array::uniform5(-2.35f64..2.35), 1..8),
        ) {
            let m = TrajectorySegmentMessage { module_id: 0, seq: seq as u64, start_time_ms: start, sample_period_ms: 10, samples };
            let back = decode(&encode(&m)).unwrap();
            prop_assert_eq!(back.seq, m.seq);
            prop_assert_eq!(back.start_time_ms, m.start_time_ms);
            for (a, b) in back.samples.iter().zip(&m.samples) {
                for k in 0..JOINTS {
                    prop_assert!((a[k] - b[k]).abs() <= 0.5 * QUANTUM + 1e-15);
                }
            }
            prop_assert_eq!(encode(&back), encode(&m));
        }
    }
}
