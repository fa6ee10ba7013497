//! Synaptic channels: clocked point-to-point streams of value slots.
//!
//! This module is the per-node channel table only. Sending the produced
//! pdus and driving the clock is the job of [`Stack`](super::Stack).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::TransportError;
use crate::types::{Fixed, RubiconAddress};
use crate::wire::{SynPdu, MAX_PAYLOAD};

/// Largest number of slots whose full emission fits one frame
/// (TRANSID + APPID + synaptic body <= 114 bytes).
pub const MAX_CHANNEL_SIZE: usize = (MAX_PAYLOAD - 2 - SynPdu::FIXED_LEN) / SynPdu::ENTRY_LEN;

/// Per-channel memory budget used by the memory model.
pub const CHANNEL_CONTROL_BUDGET: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Reliable,
    PowerSave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Freshness {
    New,
    Stale,
}

/// Status reported with each `synData_received` signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynStatus {
    /// A pdu arrived during the last cycle.
    New,
    /// Power-save channel with no arrival: the previous values still hold.
    Unchanged,
    /// Reliable channel with no arrival: the remote readings are missing.
    Missing,
}

#[derive(Debug, Clone)]
pub struct SynapticChannel {
    pub id: u16,
    pub direction: Direction,
    pub peer: RubiconAddress,
    pub modality: Modality,
    pub started: bool,
    slots: Vec<Fixed>,
    last_sent: Vec<Fixed>,
    freshness: Vec<Freshness>,
    /// OUT: ticks emitted since creation. IN: last tick index received.
    tick_index: u32,
    /// IN only: the sender's channel id, bound on first arrival.
    remote_id: Option<u16>,
    arrived_this_cycle: bool,
    missed_ticks: u64,
}

impl SynapticChannel {
    pub fn size(&self) -> usize {
        self.slots.len()
    }

    pub fn missed_ticks(&self) -> u64 {
        self.missed_ticks
    }

    /// Serialized control block (everything except the slot arrays).
    /// `id(2) dir(1) modality(1) started(1) peer.pid(4) peer.devid(2)
    /// size(1) tick_index(4) remote_id(2)`.
    pub fn control_block(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(18);
        b.extend_from_slice(&self.id.to_le_bytes());
        b.push(self.direction as u8);
        b.push(self.modality as u8);
        b.push(self.started as u8);
        b.extend_from_slice(&self.peer.pid.to_le_bytes());
        b.extend_from_slice(&self.peer.devid.to_le_bytes());
        b.push(self.slots.len() as u8);
        b.extend_from_slice(&self.tick_index.to_le_bytes());
        b.extend_from_slice(&self.remote_id.unwrap_or(u16::MAX).to_le_bytes());
        b
    }
}

/// A pdu the table wants sent at this tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub peer: RubiconAddress,
    pub pdu: SynPdu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectedPdu {
    /// No IN channel from this source accepts the sender's channel id.
    NoChannel,
    /// An entry names a slot beyond the channel size.
    BadPosition,
}

#[derive(Debug, Clone)]
pub struct ChannelTable {
    channels: BTreeMap<u16, SynapticChannel>,
    next_id: u16,
    max_in: usize,
    max_out: usize,
}

impl ChannelTable {
    pub fn new(max_in: usize, max_out: usize) -> Self {
        Self { channels: BTreeMap::new(), next_id: 1, max_in, max_out }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn get(&self, id: u16) -> Option<&SynapticChannel> {
        self.channels.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.channels.keys().copied()
    }

    pub fn any_started(&self) -> bool {
        self.channels.values().any(|c| c.started)
    }

    fn count(&self, direction: Direction) -> usize {
        self.channels.values().filter(|c| c.direction == direction).count()
    }

    pub fn create(&mut self, direction: Direction, peer: RubiconAddress, size: usize, modality: Modality) -> Result<u16, TransportError> {
        if size == 0 || size > MAX_CHANNEL_SIZE {
            return Err(TransportError::InvalidSize(size));
        }
        let max = match direction {
            Direction::In => self.max_in,
            Direction::Out => self.max_out,
        };
        if self.count(direction) >= max {
            return Err(TransportError::ChannelTableFull);
        }
        // Ids are never reused, so a disposed id can never be signaled again.
        let id = self.next_id;
        self.next_id = self.next_id.checked_add(1).ok_or(TransportError::ChannelTableFull)?;
        self.channels.insert(
            id,
            SynapticChannel {
                id,
                direction,
                peer,
                modality,
                started: false,
                slots: vec![Fixed::ZERO; size],
                last_sent: vec![Fixed::ZERO; size],
                freshness: vec![Freshness::Stale; size],
                tick_index: 0,
                remote_id: None,
                arrived_this_cycle: false,
                missed_ticks: 0,
            },
        );
        Ok(id)
    }

    fn channel_mut(&mut self, id: u16) -> Result<&mut SynapticChannel, TransportError> {
        self.channels.get_mut(&id).ok_or(TransportError::UnknownChannel(id))
    }

    pub fn dispose(&mut self, id: u16) -> Result<(), TransportError> {
        self.channels.remove(&id).map(|_| ()).ok_or(TransportError::UnknownChannel(id))
    }

    pub fn start(&mut self, id: u16) -> Result<(), TransportError> {
        let c = self.channel_mut(id)?;
        if !c.started {
            c.started = true;
            c.arrived_this_cycle = false;
            c.freshness.iter_mut().for_each(|f| *f = Freshness::Stale);
        }
        Ok(())
    }

    pub fn stop(&mut self, id: u16) -> Result<(), TransportError> {
        self.channel_mut(id)?.started = false;
        Ok(())
    }

    pub fn start_all(&mut self) {
        let ids: Vec<u16> = self.channels.keys().copied().collect();
        for id in ids {
            let _ = self.start(id);
        }
    }

    pub fn stop_all(&mut self) {
        self.channels.values_mut().for_each(|c| c.started = false);
    }

    pub fn write(&mut self, id: u16, pos: usize, value: Fixed) -> Result<(), TransportError> {
        let c = self.channel_mut(id)?;
        if c.direction != Direction::Out {
            return Err(TransportError::WrongDirection);
        }
        let size = c.slots.len();
        *c.slots.get_mut(pos).ok_or(TransportError::PositionOutOfRange { pos, size })? = value;
        Ok(())
    }

    pub fn read(&self, id: u16, pos: usize) -> Result<Fixed, TransportError> {
        let c = self.channels.get(&id).ok_or(TransportError::UnknownChannel(id))?;
        if c.direction != Direction::In {
            return Err(TransportError::WrongDirection);
        }
        c.slots.get(pos).copied().ok_or(TransportError::PositionOutOfRange { pos, size: c.slots.len() })
    }

    pub fn freshness(&self, id: u16, pos: usize) -> Result<Freshness, TransportError> {
        let c = self.channels.get(&id).ok_or(TransportError::UnknownChannel(id))?;
        if c.direction != Direction::In {
            return Err(TransportError::WrongDirection);
        }
        c.freshness.get(pos).copied().ok_or(TransportError::PositionOutOfRange { pos, size: c.slots.len() })
    }

    /// Build this tick's pdus for every started OUT channel. Reliable
    /// channels always send every slot; power-save channels send only the
    /// slots that differ from what was last sent, and nothing at all if no
    /// slot changed.
    pub fn emissions(&mut self) -> Vec<(u16, Emission)> {
        let mut out = Vec::new();
        for c in self.channels.values_mut().filter(|c| c.started && c.direction == Direction::Out) {
            let tick_index = c.tick_index;
            c.tick_index = c.tick_index.wrapping_add(1);
            let entries: Vec<(u8, Fixed)> = match c.modality {
                Modality::Reliable => c.slots.iter().enumerate().map(|(p, v)| (p as u8, *v)).collect(),
                Modality::PowerSave => c
                    .slots
                    .iter()
                    .zip(&c.last_sent)
                    .enumerate()
                    .filter(|(_, (v, sent))| v != sent)
                    .map(|(p, (v, _))| (p as u8, *v))
                    .collect(),
            };
            if entries.is_empty() {
                continue;
            }
            out.push((c.id, Emission { peer: c.peer, pdu: SynPdu { channel_id: c.id, tick_index, entries } }));
        }
        out
    }

    /// Record that an emission left the node; power-save change detection
    /// compares against these values from now on.
    pub fn mark_sent(&mut self, id: u16, entries: &[(u8, Fixed)]) {
        if let Some(c) = self.channels.get_mut(&id) {
            for &(pos, v) in entries {
                if let Some(slot) = c.last_sent.get_mut(usize::from(pos)) {
                    *slot = v;
                }
            }
        }
    }

    /// Store an arriving pdu in the matching IN channel. A channel from
    /// `src` binds to the sender's channel id the first time it hears it.
    pub fn on_pdu(&mut self, src: RubiconAddress, pdu: &SynPdu) -> Result<u16, RejectedPdu> {
        let id = self
            .channels
            .values()
            .find(|c| c.direction == Direction::In && c.peer == src && c.remote_id == Some(pdu.channel_id))
            .or_else(|| self.channels.values().find(|c| c.direction == Direction::In && c.peer == src && c.remote_id.is_none()))
            .map(|c| c.id)
            .ok_or(RejectedPdu::NoChannel)?;
        let c = self.channels.get_mut(&id).expect("id just found");
        if pdu.entries.iter().any(|(p, _)| usize::from(*p) >= c.slots.len()) {
            return Err(RejectedPdu::BadPosition);
        }
        if let Some(prev) = c.remote_id.map(|_| c.tick_index) {
            let gap = pdu.tick_index.wrapping_sub(prev).wrapping_sub(1);
            if c.modality == Modality::Reliable && gap > 0 && gap < u32::MAX / 2 {
                c.missed_ticks += u64::from(gap);
            }
        }
        c.remote_id = Some(pdu.channel_id);
        c.tick_index = pdu.tick_index;
        for &(pos, v) in &pdu.entries {
            c.slots[usize::from(pos)] = v;
            c.freshness[usize::from(pos)] = Freshness::New;
        }
        c.arrived_this_cycle = true;
        Ok(id)
    }

    /// One `synData_received` per started IN channel, whether or not
    /// anything arrived since the previous tick.
    pub fn signals(&mut self) -> Vec<(u16, SynStatus)> {
        let mut out = Vec::new();
        for c in self.channels.values_mut().filter(|c| c.started && c.direction == Direction::In) {
            let status = match (c.arrived_this_cycle, c.modality) {
                (true, _) => SynStatus::New,
                (false, Modality::PowerSave) => SynStatus::Unchanged,
                (false, Modality::Reliable) => SynStatus::Missing,
            };
            out.push((c.id, status));
            c.arrived_this_cycle = false;
            c.freshness.iter_mut().for_each(|f| *f = Freshness::Stale);
        }
        out
    }
}
