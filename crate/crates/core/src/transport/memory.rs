//! RAM footprint model of the communication layer on a mote.

use serde::Serialize;

use crate::network::NetworkConfig;
use crate::transport::synaptic::CHANNEL_CONTROL_BUDGET;
use crate::wire::MAX_FRAME;

/// Fixed cost: variables and structures other than buffers and channels.
pub const BASE_BYTES: usize = 450;
/// One buffered frame.
pub const MSG_BYTES: usize = MAX_FRAME;
/// One synaptic channel.
pub const SYN_CHANNEL_BYTES: usize = CHANNEL_CONTROL_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub base: usize,
    pub buffer_slots: usize,
    pub buffers: usize,
    pub channels: usize,
    pub channel_bytes: usize,
    pub total: usize,
}

/// `base + b * msg + s * syn_ch`, with `b` the sum of the four buffer capacities.
pub fn comm_memory(cfg: &NetworkConfig, syn_channels: usize) -> MemoryReport {
    let buffer_slots = cfg.total_slots();
    let buffers = buffer_slots * MSG_BYTES;
    let channel_bytes = syn_channels * SYN_CHANNEL_BYTES;
    MemoryReport {
        base: BASE_BYTES,
        buffer_slots,
        buffers,
        channels: syn_channels,
        channel_bytes,
        total: BASE_BYTES + buffers + channel_bytes,
    }
}
