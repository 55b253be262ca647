use super::SimTime;

pub type FlowId = usize;

/// Size of a pure acknowledgement on the wire.
pub const ACK_BYTES: u32 = 40;

/// Maximum number of selective-ack blocks carried by one acknowledgement.
pub const MAX_SACK_BLOCKS: usize = 3;

/// Acknowledgement contents: the next expected segment plus, for SACK
/// receivers, up to [`MAX_SACK_BLOCKS`] half-open ranges `[start, end)` of
/// segments held out of order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AckInfo {
    pub cumulative: u64,
    pub sack_blocks: Vec<(u64, u64)>,
}

/// A packet in flight. Sequence numbers count segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    pub size: u32,
    pub ack: Option<AckInfo>,
    pub send_time: SimTime,
    /// Index of the link the packet is currently traversing within its route.
    pub(crate) hop: usize,
}

impl Packet {
    pub fn data(flow: FlowId, seq: u64, size: u32, send_time: SimTime) -> Self {
        assert!(size > 0, "packet size must be positive");
        Packet {
            flow,
            seq,
            size,
            ack: None,
            send_time,
            hop: 0,
        }
    }

    pub fn ack(flow: FlowId, info: AckInfo, send_time: SimTime) -> Self {
        Packet {
            flow,
            seq: info.cumulative,
            size: ACK_BYTES,
            ack: Some(info),
            send_time,
            hop: 0,
        }
    }

    pub fn is_ack(&self) -> bool {
        self.ack.is_some()
    }
}
