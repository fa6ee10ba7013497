//! The Transport level.
//!
//! [`Stack`] is one node's complete communication layer: it owns the
//! [`NetworkLevel`] and layers the message dispatcher, connectionless
//! messaging, acknowledgements, synaptic channels and component
//! management on top of it. Like the network level it is sans-IO: the
//! caller supplies the current time and drives timers through
//! [`Stack::next_timeout`] / [`Stack::handle_timeout`].

pub mod join;
pub mod memory;
pub mod synaptic;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{NetError, TransportError, WireError};
use crate::network::{Inbound, NetEvent, NetworkConfig, NetworkLevel};
use crate::types::{
    AmType, AppId, DevId, Fixed, MoteDescriptor, Pid, Role, RubiconAddress, TransId, BROADCAST_DEVID, SINK_DEVID, UNASSIGNED_PID,
};
use crate::wire::{AckBody, AppPayload, Frame, JoinMsg, SynPdu, TransportPdu, MAX_PAYLOAD};

pub use join::{JoinPhase, JoinState, PendingJoin, SinkJoinTable};
pub use memory::{comm_memory, MemoryReport};
pub use synaptic::{ChannelTable, Direction, Freshness, Modality, SynStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub ack_timeout_ms: u64,
    pub join_timeout_ms: u64,
    pub join_attempts: u8,
    pub max_in_channels: usize,
    pub max_out_channels: usize,
    pub time_step_ms: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { ack_timeout_ms: 1000, join_timeout_ms: 2000, join_attempts: 4, max_in_channels: 4, max_out_channels: 4, time_step_ms: 500 }
    }
}

/// Reliable message waiting for its acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingReliable {
    pub seq: u16,
    pub dst: RubiconAddress,
    pub appid: AppId,
    pub deadline: u64,
    /// Always 0: the application decides whether to send again.
    pub retries_remaining: u8,
}

/// Events for the application sitting on top of the stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppEvent {
    ClReceive { src: RubiconAddress, appid: AppId, body: Vec<u8>, seq: u16, reliable: bool },
    AckResult { seq: u16, appid: AppId, dst: RubiconAddress, success: bool },
    SynData { channel: u16, status: SynStatus },
    Joined { island: Pid, mote: RubiconAddress, success: bool },
    MoteJoined { island: Pid, mote: RubiconAddress, descr: MoteDescriptor },
}

/// Transport-internal happenings worth a trace record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackEvent {
    UnknownTransId {
        src: RubiconAddress,
        code: u8,
    },
    Malformed {
        src: RubiconAddress,
        error: WireError,
    },
    UnknownAck {
        src: RubiconAddress,
        seq: u16,
    },
    LateAck {
        src: RubiconAddress,
        seq: u16,
    },
    AckSent {
        dst: RubiconAddress,
        seq: u16,
    },
    Tick {
        index: u64,
    },
    SynEmit {
        channel: u16,
        peer: RubiconAddress,
        tick_index: u32,
        entries: usize,
    },
    SynSendError {
        channel: u16,
        error: NetError,
    },
    SynSignal {
        channel: u16,
        status: SynStatus,
    },
    SynRejected {
        src: RubiconAddress,
        channel: u16,
    },
    JoinRequest {
        attempt: u8,
        request_seq: u16,
    },
    JoinReply {
        mote: DevId,
        request_seq: u16,
    },
    JoinIgnored {
        mote: DevId,
    },
    JoinAckSent {
        sink: RubiconAddress,
        request_seq: u16,
    },
    /// Network-level event, interleaved in the order it happened.
    Net(NetEvent),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportCounters {
    pub unknown_transid: u64,
    pub malformed: u64,
    pub unknown_acks: u64,
    pub late_acks: u64,
    pub acks_sent: u64,
    pub acks_ok: u64,
    pub acks_failed: u64,
    pub syn_emitted: u64,
    pub syn_send_errors: u64,
    pub syn_signals: u64,
    pub syn_rejected: u64,
    pub join_replies: u64,
    pub join_ignored: u64,
}

#[derive(Debug, Clone, Copy)]
struct Clock {
    step: u64,
    next_tick: Option<u64>,
    last_tick: Option<u64>,
    count: u64,
}

/// How many expired sequence numbers are remembered to tell late acks
/// from acks that match nothing.
const EXPIRED_MEMORY: usize = 256;

#[derive(Debug)]
pub struct Stack {
    net: NetworkLevel,
    cfg: TransportConfig,
    pending: BTreeMap<u16, PendingReliable>,
    expired: VecDeque<u16>,
    channels: ChannelTable,
    clock: Clock,
    join: JoinState,
    sink_joins: SinkJoinTable,
    /// Mote: offset applied after joining. Sink: its island clock offset.
    time_offset: i64,
    counters: TransportCounters,
    app_events: Vec<AppEvent>,
    events: Vec<StackEvent>,
}

impl Stack {
    pub fn new(role: Role, addr: RubiconAddress, net_cfg: NetworkConfig, cfg: TransportConfig) -> Self {
        Self {
            net: NetworkLevel::new(role, addr, net_cfg),
            cfg,
            pending: BTreeMap::new(),
            expired: VecDeque::new(),
            channels: ChannelTable::new(cfg.max_in_channels, cfg.max_out_channels),
            clock: Clock { step: cfg.time_step_ms.max(1), next_tick: None, last_tick: None, count: 0 },
            join: JoinState::default(),
            sink_joins: SinkJoinTable::default(),
            time_offset: 0,
            counters: TransportCounters::default(),
            app_events: Vec::new(),
            events: Vec::new(),
        }
    }

    /// A mote that has not joined yet: only its TinyOS id is known.
    pub fn new_mote(devid: DevId, net_cfg: NetworkConfig, cfg: TransportConfig) -> Self {
        Self::new(Role::Mote, RubiconAddress::new(UNASSIGNED_PID, devid), net_cfg, cfg)
    }

    pub fn new_sink(pid: Pid, net_cfg: NetworkConfig, cfg: TransportConfig) -> Self {
        Self::new(Role::Sink, RubiconAddress::sink(pid), net_cfg, cfg)
    }

    pub fn new_basestation(pid: Pid, net_cfg: NetworkConfig, cfg: TransportConfig) -> Self {
        Self::new(Role::Basestation, RubiconAddress::basestation(pid), net_cfg, cfg)
    }

    pub fn net(&self) -> &NetworkLevel {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut NetworkLevel {
        &mut self.net
    }

    pub fn config(&self) -> &TransportConfig {
        &self.cfg
    }

    pub fn address(&self) -> RubiconAddress {
        self.net.address()
    }

    pub fn role(&self) -> Role {
        self.net.role()
    }

    pub fn counters(&self) -> TransportCounters {
        self.counters
    }

    pub fn channels(&self) -> &ChannelTable {
        &self.channels
    }

    pub fn pending_reliable(&self) -> impl Iterator<Item = &PendingReliable> {
        self.pending.values()
    }

    pub fn drain_app_events(&mut self) -> Vec<AppEvent> {
        std::mem::take(&mut self.app_events)
    }

    pub fn drain_events(&mut self) -> Vec<StackEvent> {
        std::mem::take(&mut self.events)
    }

    /// Local time translated to island time.
    pub fn island_time(&self, now: u64) -> i64 {
        now as i64 + self.time_offset
    }

    // ---- message dispatcher ----------------------------------------------

    fn send_pdu(&mut self, am: AmType, dst: RubiconAddress, transid: TransId, body: &[u8], reliable: bool) -> Result<u16, TransportError> {
        if body.len() + 1 > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge(body.len() + 1).into());
        }
        let pdu = TransportPdu::new(transid, body.to_vec()).encode();
        let r = self.net.net_send(am, dst, &pdu, reliable);
        self.sync_net();
        Ok(r?)
    }

    fn sync_net(&mut self) {
        self.events.extend(self.net.drain_events().into_iter().map(StackEvent::Net));
    }

    /// Prepend the TRANSID and hand the result to the network level.
    pub fn dispatcher_send(&mut self, dst: RubiconAddress, body: &[u8], reliable: bool, transid: TransId) -> Result<u16, TransportError> {
        self.send_pdu(AmType::Network, dst, transid, body, reliable)
    }

    /// Route one frame that passed island filtering by its TRANSID.
    pub fn dispatcher_receive(&mut self, now: u64, inbound: Inbound) {
        let Inbound { frame, .. } = inbound;
        let pdu = match TransportPdu::decode(&frame.payload) {
            Ok(p) => p,
            Err(WireError::UnknownTransId(code)) => {
                self.counters.unknown_transid += 1;
                self.events.push(StackEvent::UnknownTransId { src: frame.src, code });
                return;
            }
            Err(error) => return self.malformed(frame.src, error),
        };
        match (frame.am_type, pdu.transid) {
            (AmType::Join, TransId::ComponentMgmt) => self.on_join_msg(now, &frame, &pdu.body),
            (AmType::Join, _) | (_, TransId::ComponentMgmt) => {
                self.malformed(frame.src, WireError::Malformed { what: "join pdu outside JOIN frame", len: frame.nbytes() })
            }
            (_, TransId::Connless) => self.cl_receive(now, &frame, &pdu.body),
            (_, TransId::RubiconAck) => self.on_ack(now, frame.src, &pdu.body),
            (_, TransId::SynChannel) => self.on_syn(frame.src, &pdu.body),
        }
    }

    /// Drain the network level's ingoing buffers through the dispatcher.
    pub fn process(&mut self, now: u64) {
        let inbound = self.net.process_ingoing();
        self.sync_net();
        for inbound in inbound {
            self.dispatcher_receive(now, inbound);
        }
    }

    fn malformed(&mut self, src: RubiconAddress, error: WireError) {
        self.counters.malformed += 1;
        self.events.push(StackEvent::Malformed { src, error });
    }

    // ---- connectionless ---------------------------------------------------

    /// Send `body` to `dst` tagged with `appid`. A reliable send registers a
    /// pending entry; its outcome arrives later as [`AppEvent::AckResult`].
    /// Failed sends are never retransmitted by the layer.
    pub fn cl_send(&mut self, now: u64, dst: RubiconAddress, body: &[u8], reliable: bool, appid: AppId) -> Result<u16, TransportError> {
        let app = AppPayload::new(appid, body.to_vec()).encode();
        let seq = self.net.peek_seq();
        if reliable && self.pending.contains_key(&seq) {
            return Err(TransportError::DuplicatePending(seq));
        }
        let seq = self.dispatcher_send(dst, &app, reliable, TransId::Connless)?;
        if reliable {
            self.pending.insert(seq, PendingReliable { seq, dst, appid, deadline: now + self.cfg.ack_timeout_ms, retries_remaining: 0 });
        }
        Ok(seq)
    }

    fn cl_receive(&mut self, _now: u64, frame: &Frame, body: &[u8]) {
        let app = match AppPayload::decode(body) {
            Ok(a) => a,
            Err(e) => return self.malformed(frame.src, e),
        };
        // The ack goes out before the application sees the message.
        if frame.reliable {
            let _ = self.ack_send(frame.src, frame.seq, app.appid);
        }
        self.app_events.push(AppEvent::ClReceive {
            src: frame.src,
            appid: app.appid,
            body: app.body,
            seq: frame.seq,
            reliable: frame.reliable,
        });
    }

    // ---- rubicon ack -----------------------------------------------------

    /// Acknowledge `seq` back to `dst`. Acks themselves are never reliable.
    pub fn ack_send(&mut self, dst: RubiconAddress, seq: u16, appid: AppId) -> Result<u16, TransportError> {
        let body = AckBody { seq, appid }.encode();
        let r = self.send_pdu(AmType::Ack, dst, TransId::RubiconAck, &body, false);
        if r.is_ok() {
            self.counters.acks_sent += 1;
            self.events.push(StackEvent::AckSent { dst, seq });
        }
        r
    }

    fn on_ack(&mut self, now: u64, src: RubiconAddress, body: &[u8]) {
        let ack = match AckBody::decode(body) {
            Ok(a) => a,
            Err(e) => return self.malformed(src, e),
        };
        self.expire_acks(now);
        match self.pending.get(&ack.seq) {
            Some(p) if p.dst == src || p.dst.is_broadcast() => {
                let p = self.pending.remove(&ack.seq).expect("present");
                self.counters.acks_ok += 1;
                self.app_events.push(AppEvent::AckResult { seq: p.seq, appid: p.appid, dst: p.dst, success: true });
            }
            _ if self.expired.contains(&ack.seq) => {
                self.expired.retain(|s| *s != ack.seq);
                self.counters.late_acks += 1;
                self.events.push(StackEvent::LateAck { src, seq: ack.seq });
            }
            _ => {
                self.counters.unknown_acks += 1;
                self.events.push(StackEvent::UnknownAck { src, seq: ack.seq });
            }
        }
    }

    fn expire_acks(&mut self, now: u64) {
        let mut due: Vec<PendingReliable> = self.pending.values().filter(|p| p.deadline <= now).copied().collect();
        due.sort_by_key(|p| (p.deadline, p.seq));
        for p in due {
            self.pending.remove(&p.seq);
            if self.expired.len() == EXPIRED_MEMORY {
                self.expired.pop_front();
            }
            self.expired.push_back(p.seq);
            self.counters.acks_failed += 1;
            self.app_events.push(AppEvent::AckResult { seq: p.seq, appid: p.appid, dst: p.dst, success: false });
        }
    }

    // ---- synaptic channels -----------------------------------------------

    pub fn create_syn_channel_out(&mut self, dest: RubiconAddress, size: usize, modality: Modality) -> Result<u16, TransportError> {
        self.channels.create(Direction::Out, dest, size, modality)
    }

    pub fn create_syn_channel_in(&mut self, src: RubiconAddress, size: usize, modality: Modality) -> Result<u16, TransportError> {
        self.channels.create(Direction::In, src, size, modality)
    }

    pub fn dispose_syn_channel(&mut self, id: u16) -> Result<(), TransportError> {
        self.channels.dispose(id)
    }

    fn arm_clock(&mut self, now: u64) {
        if self.clock.next_tick.is_none() && self.channels.any_started() {
            self.clock.next_tick = Some(now);
        }
    }

    pub fn start_syn_channel(&mut self, now: u64, id: u16) -> Result<(), TransportError> {
        self.channels.start(id)?;
        self.arm_clock(now);
        Ok(())
    }

    pub fn stop_syn_channel(&mut self, id: u16) -> Result<(), TransportError> {
        self.channels.stop(id)
    }

    pub fn start_all_syn_channels(&mut self, now: u64) {
        self.channels.start_all();
        self.arm_clock(now);
    }

    pub fn stop_all_syn_channels(&mut self) {
        self.channels.stop_all();
    }

    pub fn write_output_value(&mut self, id: u16, pos: usize, value: Fixed) -> Result<(), TransportError> {
        self.channels.write(id, pos, value)
    }

    pub fn read_input_value(&self, id: u16, pos: usize) -> Result<Fixed, TransportError> {
        self.channels.read(id, pos)
    }

    /// Set the duty-cycle period. The next tick lands `clock_ms` after the
    /// last one.
    pub fn set_time_step(&mut self, clock_ms: u64) -> Result<(), TransportError> {
        if clock_ms == 0 {
            return Err(TransportError::InvalidPeriod);
        }
        self.clock.step = clock_ms;
        if let (Some(_), Some(last)) = (self.clock.next_tick, self.clock.last_tick) {
            self.clock.next_tick = Some(last + clock_ms);
        }
        Ok(())
    }

    pub fn time_step(&self) -> u64 {
        self.clock.step
    }

    pub fn next_tick(&self) -> Option<u64> {
        self.clock.next_tick
    }

    /// Whether a tick fires at `now`; callers use this to write output
    /// values right before the emission.
    pub fn tick_due(&self, now: u64) -> bool {
        self.clock.next_tick.is_some_and(|t| t <= now)
    }

    /// Ticks performed so far.
    pub fn tick_count(&self) -> u64 {
        self.clock.count
    }

    fn tick(&mut self, now: u64) {
        if !self.channels.any_started() {
            self.clock.next_tick = None;
            return;
        }
        let index = self.clock.count;
        self.clock.count += 1;
        self.clock.last_tick = Some(now);
        self.clock.next_tick = Some(now + self.clock.step);
        self.events.push(StackEvent::Tick { index });

        for (id, em) in self.channels.emissions() {
            let body = AppPayload::new(AppId::LEARNING, em.pdu.encode()).encode();
            match self.dispatcher_send(em.peer, &body, false, TransId::SynChannel) {
                Ok(_) => {
                    self.channels.mark_sent(id, &em.pdu.entries);
                    self.counters.syn_emitted += 1;
                    self.events.push(StackEvent::SynEmit {
                        channel: id,
                        peer: em.peer,
                        tick_index: em.pdu.tick_index,
                        entries: em.pdu.entries.len(),
                    });
                }
                Err(TransportError::Net(error)) => {
                    self.counters.syn_send_errors += 1;
                    self.events.push(StackEvent::SynSendError { channel: id, error });
                }
                Err(_) => unreachable!("dispatcher only fails with network errors"),
            }
        }
        for (channel, status) in self.channels.signals() {
            self.counters.syn_signals += 1;
            self.events.push(StackEvent::SynSignal { channel, status });
            self.app_events.push(AppEvent::SynData { channel, status });
        }
    }

    fn on_syn(&mut self, src: RubiconAddress, body: &[u8]) {
        let pdu = match AppPayload::decode(body).and_then(|a| SynPdu::decode(&a.body)) {
            Ok(p) => p,
            Err(e) => return self.malformed(src, e),
        };
        if self.channels.on_pdu(src, &pdu).is_err() {
            self.counters.syn_rejected += 1;
            self.events.push(StackEvent::SynRejected { src, channel: pdu.channel_id });
        }
    }

    // ---- component management --------------------------------------------

    pub fn join_state(&self) -> &JoinState {
        &self.join
    }

    pub fn sink_joins(&self) -> &SinkJoinTable {
        &self.sink_joins
    }

    /// Start the join protocol with `descr`. The outcome is reported by
    /// [`AppEvent::Joined`].
    pub fn join_island(&mut self, now: u64, descr: MoteDescriptor) -> Result<(), TransportError> {
        if self.role() != Role::Mote {
            return Err(TransportError::WrongRole("mote"));
        }
        if !matches!(self.join.phase, JoinPhase::Idle | JoinPhase::Failed) {
            return Err(TransportError::JoinBusy);
        }
        self.join.descr = descr;
        self.join.attempt = 0;
        self.join.chosen_sink = None;
        self.send_join_request(now);
        Ok(())
    }

    fn send_join_request(&mut self, now: u64) {
        self.join.attempt += 1;
        self.join.phase = JoinPhase::AwaitReply;
        self.join.request_seq = self.join.fresh_seq();
        self.join.deadline = Some(now + self.cfg.join_timeout_ms);
        let msg = JoinMsg::Request { request_seq: self.join.request_seq, descr: self.join.descr }.encode();
        let dst = RubiconAddress::new(UNASSIGNED_PID, BROADCAST_DEVID);
        // A lost or unsendable request is covered by the join timer.
        let _ = self.send_pdu(AmType::Join, dst, TransId::ComponentMgmt, &msg, false);
        self.events.push(StackEvent::JoinRequest { attempt: self.join.attempt, request_seq: self.join.request_seq });
    }

    /// Forget the current island so the mote can join again.
    pub fn leave_island(&mut self) {
        let devid = self.address().devid;
        self.net.set_address(RubiconAddress::new(UNASSIGNED_PID, devid));
        self.join.phase = JoinPhase::Idle;
        self.join.deadline = None;
        self.join.chosen_sink = None;
        self.time_offset = 0;
    }

    /// Sink-side administrative removal of a departed mote.
    pub fn remove_mote(&mut self, devid: DevId) -> bool {
        self.sink_joins.pending.remove(&devid);
        self.net.remove_known_mote(devid)
    }

    fn on_join_msg(&mut self, now: u64, frame: &Frame, body: &[u8]) {
        let msg = match JoinMsg::decode(body) {
            Ok(m) => m,
            Err(e) => return self.malformed(frame.src, e),
        };
        match (self.role(), msg) {
            (Role::Sink, JoinMsg::Request { request_seq, descr }) => self.sink_handle_join(now, frame.src.devid, request_seq, descr),
            (Role::Sink, JoinMsg::Ack { request_seq, island_pid }) => self.sink_handle_join_ack(frame.src.devid, request_seq, island_pid),
            (Role::Mote, JoinMsg::Reply { request_seq, island_pid, devid, island_time }) => {
                self.mote_handle_reply(now, request_seq, island_pid, devid, island_time)
            }
            _ => {}
        }
    }

    fn sink_handle_join(&mut self, now: u64, devid: DevId, request_seq: u16, descr: MoteDescriptor) {
        if self.net.known_motes().contains(&devid) {
            self.counters.join_ignored += 1;
            self.events.push(StackEvent::JoinIgnored { mote: devid });
            return;
        }
        self.sink_joins.pending.insert(devid, PendingJoin { request_seq, descr });
        let island_pid = self.net.island_pid();
        let island_time = self.island_time(now) as u32;
        let reply = JoinMsg::Reply { request_seq, island_pid, devid, island_time }.encode();
        let dst = RubiconAddress::new(UNASSIGNED_PID, devid);
        if self.send_pdu(AmType::Join, dst, TransId::ComponentMgmt, &reply, false).is_ok() {
            self.counters.join_replies += 1;
            self.events.push(StackEvent::JoinReply { mote: devid, request_seq });
        }
    }

    fn sink_handle_join_ack(&mut self, devid: DevId, request_seq: u16, island_pid: Pid) {
        let pid = self.net.island_pid();
        if island_pid != pid {
            return;
        }
        match self.sink_joins.pending.get(&devid) {
            Some(p) if p.request_seq == request_seq => {
                let descr = p.descr;
                self.sink_joins.pending.remove(&devid);
                self.net.add_known_mote(devid);
                self.app_events.push(AppEvent::MoteJoined { island: pid, mote: RubiconAddress::new(pid, devid), descr });
            }
            _ => {}
        }
    }

    fn mote_handle_reply(&mut self, now: u64, request_seq: u16, island_pid: Pid, devid: DevId, island_time: u32) {
        let me = self.address();
        // First matching reply wins; later ones (e.g. from a second sink) are ignored.
        if self.join.phase != JoinPhase::AwaitReply || request_seq != self.join.request_seq || devid != me.devid {
            return;
        }
        let addr = RubiconAddress::new(island_pid, devid);
        let sink = RubiconAddress::new(island_pid, SINK_DEVID);
        self.net.set_address(addr);
        self.join.chosen_sink = Some(sink);
        self.join.phase = JoinPhase::Done;
        self.join.deadline = None;
        self.join.island_time_offset = i64::from(island_time) - now as i64;
        self.time_offset = self.join.island_time_offset;
        let ack = JoinMsg::Ack { request_seq, island_pid }.encode();
        let _ = self.send_pdu(AmType::Join, sink, TransId::ComponentMgmt, &ack, false);
        self.events.push(StackEvent::JoinAckSent { sink, request_seq });
        self.app_events.push(AppEvent::Joined { island: island_pid, mote: addr, success: true });
    }

    // ---- timers ----------------------------------------------------------

    /// Earliest instant at which [`handle_timeout`](Self::handle_timeout)
    /// has work to do.
    pub fn next_timeout(&self) -> Option<u64> {
        [self.pending.values().map(|p| p.deadline).min(), self.join.deadline, self.clock.next_tick].into_iter().flatten().min()
    }

    pub fn handle_timeout(&mut self, now: u64) {
        self.expire_acks(now);
        if self.join.deadline.is_some_and(|d| d <= now) {
            if self.join.attempt < self.cfg.join_attempts {
                self.send_join_request(now);
            } else {
                self.join.phase = JoinPhase::Failed;
                self.join.deadline = None;
                let me = self.address();
                self.app_events.push(AppEvent::Joined { island: me.pid, mote: me, success: false });
            }
        }
        if self.tick_due(now) {
            self.tick(now);
        }
    }
}
