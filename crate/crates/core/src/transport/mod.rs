//! Simulated master/slave trajectory streaming: wire format, lossy channel,
//! virtual clock and the 20 Hz master scheduler.

pub mod bridge;
pub mod channel;
pub mod clock;
pub mod master;
pub mod message;

pub use channel::{channel_deliver, Channel, ChannelConfig, ChannelStats, Delivery};
pub use clock::{EventKey, EventQueue, VirtualClock};
pub use master::{Master, MasterConfig};
pub use message::{
    decode, decode_status, encode, encode_status, JointVector, StatusMessage,
    TrajectorySegmentMessage,
};

pub fn trajectory_topic(module_id: u32) -> String {
    format!("modules/{module_id}/traj")
}

pub fn status_topic(module_id: u32) -> String {
    format!("modules/{module_id}/status")
}
