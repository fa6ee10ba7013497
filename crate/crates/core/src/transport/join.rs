//! Join protocol state: the mote side that asks to enter an island and the
//! sink side that admits it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{DevId, MoteDescriptor, RubiconAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JoinPhase {
    Idle,
    AwaitReply,
    Done,
    Failed,
}

/// Mote-side join progress.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinState {
    pub phase: JoinPhase,
    /// 1-based attempt number of the request in flight.
    pub attempt: u8,
    pub request_seq: u16,
    pub chosen_sink: Option<RubiconAddress>,
    /// Island time minus local time at the moment the reply was accepted.
    pub island_time_offset: i64,
    pub(crate) descr: MoteDescriptor,
    pub(crate) deadline: Option<u64>,
    pub(crate) next_request_seq: u16,
}

impl Default for JoinState {
    fn default() -> Self {
        Self {
            phase: JoinPhase::Idle,
            attempt: 0,
            request_seq: 0,
            chosen_sink: None,
            island_time_offset: 0,
            descr: MoteDescriptor::default(),
            deadline: None,
            next_request_seq: 0,
        }
    }
}

impl JoinState {
    pub(crate) fn fresh_seq(&mut self) -> u16 {
        let s = self.next_request_seq;
        self.next_request_seq = self.next_request_seq.wrapping_add(1);
        s
    }

    pub fn deadline(&self) -> Option<u64> {
        self.deadline
    }
}

/// A request the sink has answered but whose ack has not arrived yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingJoin {
    pub request_seq: u16,
    pub descr: MoteDescriptor,
}

#[derive(Debug, Clone, Default)]
pub struct SinkJoinTable {
    pub(crate) pending: BTreeMap<DevId, PendingJoin>,
}

impl SinkJoinTable {
    pub fn pending(&self, devid: DevId) -> Option<&PendingJoin> {
        self.pending.get(&devid)
    }
}
