//! The Network level: buffered send/receive over the radio, serial and
//! whiteboard interfaces, interface power management, and the island
//! filtering performed by motes and sinks on every received frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::buffer::CircularBuffer;
use crate::error::{NetError, WireError};
use crate::types::{AmType, DevId, Pid, Role, RubiconAddress, BASESTATION_DEVID, SINK_DEVID};
use crate::wire::{self, Frame, SerialEnvelope, TransitEnvelope, MAX_PAYLOAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub in_radio_cap: usize,
    pub out_radio_cap: usize,
    pub in_serial_cap: usize,
    pub out_serial_cap: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { in_radio_cap: 4, out_radio_cap: 4, in_serial_cap: 2, out_serial_cap: 2 }
    }
}

impl NetworkConfig {
    /// Total number of frame slots over the four buffers.
    pub fn total_slots(&self) -> usize {
        self.in_radio_cap + self.out_radio_cap + self.in_serial_cap + self.out_serial_cap
    }

    pub fn is_valid(&self) -> bool {
        self.in_radio_cap >= 1 && self.out_radio_cap >= 1 && self.in_serial_cap >= 1 && self.out_serial_cap >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceState {
    pub radio_on: bool,
    pub serial_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Iface {
    Radio,
    Serial,
    Whiteboard,
}

/// What goes over the simulated air: the encoded frame plus the link
/// metadata a real MAC header would carry (source/destination island and
/// whether a sink is relaying a frame that came in from the whiteboard).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadioPacket {
    pub src_pid: Pid,
    pub dst_pid: Pid,
    pub relayed: bool,
    pub bytes: Vec<u8>,
}

impl RadioPacket {
    pub fn decode(&self) -> Result<Frame, WireError> {
        wire::decode_frame(&self.bytes, self.src_pid, self.dst_pid)
    }
}

/// A unit handed to the medium by [`NetworkLevel::pop_outgoing`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outgoing {
    Radio(RadioPacket),
    /// Encoded [`SerialEnvelope`].
    Serial(Vec<u8>),
    /// Basestation publication to `transit/<dst_pid>`.
    Transit(TransitEnvelope),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RouteDecision {
    DeliverLocal,
    ForwardToBasestation,
    Ignore,
    /// JOIN frames bypass island filtering and go to component management.
    Join,
}

/// Reception decision of a sink for a frame heard on the radio.
/// `frame.src.pid` is the sender's island as carried by the link.
pub fn sink_route(island_pid: Pid, frame: &Frame, relayed: bool) -> RouteDecision {
    if frame.am_type == AmType::Join {
        return RouteDecision::Join;
    }
    // Relayed frames were put on the air by a sink; never pick them up again.
    if relayed || frame.src.pid != island_pid {
        return RouteDecision::Ignore;
    }
    if frame.dst.pid != island_pid {
        return RouteDecision::ForwardToBasestation;
    }
    match frame.dst.devid {
        SINK_DEVID => RouteDecision::DeliverLocal,
        BASESTATION_DEVID => RouteDecision::ForwardToBasestation,
        d if d == crate::types::BROADCAST_DEVID => RouteDecision::DeliverLocal,
        _ => RouteDecision::Ignore,
    }
}

/// Reception decision of an ordinary mote.
pub fn mote_route(me: RubiconAddress, frame: &Frame, relayed: bool) -> RouteDecision {
    if frame.am_type == AmType::Join {
        return if frame.dst.devid == me.devid || frame.dst.is_broadcast() { RouteDecision::Join } else { RouteDecision::Ignore };
    }
    if frame.dst.pid != me.pid {
        return RouteDecision::Ignore;
    }
    if frame.dst.devid != me.devid && !frame.dst.is_broadcast() {
        return RouteDecision::Ignore;
    }
    // A foreign-island sender reaches us only through our own sink.
    if frame.src.pid != me.pid && !relayed {
        return RouteDecision::Ignore;
    }
    RouteDecision::DeliverLocal
}

/// Compact description of a frame, used for trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub am: AmType,
    pub src: RubiconAddress,
    pub dst: RubiconAddress,
    pub seq: u16,
    pub reliable: bool,
    pub nbytes: usize,
}

impl From<&Frame> for FrameInfo {
    fn from(f: &Frame) -> Self {
        Self { am: f.am_type, src: f.src, dst: f.dst, seq: f.seq, reliable: f.reliable, nbytes: f.nbytes() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetEvent {
    /// Frame accepted into an outgoing buffer (or published, for transit).
    Accepted { iface: Iface, info: FrameInfo, forwarded: bool },
    /// Frame handed to the medium.
    Transmitted { iface: Iface, info: FrameInfo },
    /// Frame arrived while the interface was off.
    DropOff { iface: Iface, info: Option<FrameInfo> },
    /// Ingoing buffer full on arrival, or outgoing buffer full on a forward.
    DropFull { iface: Iface, info: Option<FrameInfo> },
    /// Island filtering discarded the frame.
    Filtered { info: FrameInfo },
    /// Undecodable bytes.
    Malformed { iface: Iface, error: WireError },
    /// Frame handed to the transport level.
    Delivered { iface: Iface, info: FrameInfo },
    /// Destination unreachable from this node (e.g. basestation with no sink).
    NoRoute { info: FrameInfo },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetCounters {
    pub accepted: u64,
    pub rejected_full: u64,
    pub transmitted: u64,
    pub delivered: u64,
    pub filtered: u64,
    pub forwarded: u64,
    pub dropped_full: u64,
    pub lost_off: u64,
    pub malformed: u64,
}

/// A frame passed up to the transport level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inbound {
    pub frame: Frame,
    pub iface: Iface,
}

/// Per-node Network level state machine.
///
/// Nothing here knows about time or the medium. The owner pushes arrivals
/// in with the `receive_*` methods, pulls transmissions out with
/// [`pop_outgoing`](Self::pop_outgoing), and drains upcalls with
/// [`process_ingoing`](Self::process_ingoing).
#[derive(Debug)]
pub struct NetworkLevel {
    role: Role,
    addr: RubiconAddress,
    cfg: NetworkConfig,
    iface: InterfaceState,
    serial_attached: bool,
    known_motes: BTreeSet<DevId>,
    next_seq: u16,
    out_radio: CircularBuffer<RadioPacket>,
    out_serial: CircularBuffer<Vec<u8>>,
    in_radio: CircularBuffer<RadioPacket>,
    in_serial: CircularBuffer<Vec<u8>>,
    in_transit: Vec<TransitEnvelope>,
    transit_out: Vec<TransitEnvelope>,
    counters: NetCounters,
    events: Vec<NetEvent>,
}

impl NetworkLevel {
    pub fn new(role: Role, addr: RubiconAddress, cfg: NetworkConfig) -> Self {
        Self {
            role,
            addr,
            cfg,
            iface: InterfaceState { radio_on: true, serial_on: true },
            serial_attached: role != Role::Mote,
            known_motes: BTreeSet::new(),
            next_seq: 0,
            out_radio: CircularBuffer::new(cfg.out_radio_cap),
            out_serial: CircularBuffer::new(cfg.out_serial_cap),
            in_radio: CircularBuffer::new(cfg.in_radio_cap),
            in_serial: CircularBuffer::new(cfg.in_serial_cap),
            in_transit: Vec::new(),
            transit_out: Vec::new(),
            counters: NetCounters::default(),
            events: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn address(&self) -> RubiconAddress {
        self.addr
    }

    pub fn island_pid(&self) -> Pid {
        self.addr.pid
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Adopt the address handed out by the join protocol.
    pub fn set_address(&mut self, addr: RubiconAddress) {
        self.addr = addr;
    }

    /// Whether a serial peer exists (sink's basestation, basestation's sink).
    pub fn set_serial_attached(&mut self, attached: bool) {
        self.serial_attached = attached;
    }

    pub fn serial_attached(&self) -> bool {
        self.serial_attached
    }

    pub fn known_motes(&self) -> &BTreeSet<DevId> {
        &self.known_motes
    }

    pub fn add_known_mote(&mut self, devid: DevId) -> bool {
        debug_assert_eq!(self.role, Role::Sink);
        self.known_motes.insert(devid)
    }

    pub fn remove_known_mote(&mut self, devid: DevId) -> bool {
        self.known_motes.remove(&devid)
    }

    pub fn radio_set(&mut self, on: bool) {
        self.iface.radio_on = on;
    }

    pub fn serial_set(&mut self, on: bool) {
        self.iface.serial_on = on;
    }

    pub fn interface_status(&self) -> InterfaceState {
        self.iface
    }

    pub fn counters(&self) -> NetCounters {
        self.counters
    }

    pub fn drain_events(&mut self) -> Vec<NetEvent> {
        std::mem::take(&mut self.events)
    }

    /// Sequence number the next originated frame will carry.
    pub fn peek_seq(&self) -> u16 {
        self.next_seq
    }

    pub fn pending_outgoing(&self, iface: Iface) -> usize {
        match iface {
            Iface::Radio => self.out_radio.len(),
            Iface::Serial => self.out_serial.len(),
            Iface::Whiteboard => self.transit_out.len(),
        }
    }

    /// Whether a transmission opportunity on `iface` would do anything.
    pub fn can_transmit(&self, iface: Iface) -> bool {
        match iface {
            Iface::Radio => self.iface.radio_on && !self.out_radio.is_empty(),
            Iface::Serial => self.iface.serial_on && !self.out_serial.is_empty(),
            Iface::Whiteboard => !self.transit_out.is_empty(),
        }
    }

    fn route_out(&self, dst: RubiconAddress) -> Result<Iface, NetError> {
        match self.role {
            Role::Mote => Ok(Iface::Radio),
            Role::Sink => {
                if dst.pid == self.addr.pid && dst.devid != BASESTATION_DEVID {
                    Ok(Iface::Radio)
                } else if self.serial_attached {
                    Ok(Iface::Serial)
                } else {
                    Err(NetError::NoRoute(dst))
                }
            }
            Role::Basestation => {
                if dst.pid != self.addr.pid {
                    Ok(Iface::Whiteboard)
                } else if dst.devid != BASESTATION_DEVID && self.serial_attached {
                    Ok(Iface::Serial)
                } else {
                    Err(NetError::NoRoute(dst))
                }
            }
        }
    }

    /// Queue an originated frame. Returns the sequence number it carries.
    ///
    /// The only failures are a full outgoing buffer, an interface that is
    /// off, an oversized payload, or a destination with no route at all.
    pub fn net_send(&mut self, am_type: AmType, dst: RubiconAddress, payload: &[u8], reliable: bool) -> Result<u16, NetError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge(payload.len()).into());
        }
        // Join traffic happens before the mote has an island; always on air.
        let iface = if am_type == AmType::Join && self.role != Role::Basestation { Iface::Radio } else { self.route_out(dst)? };
        match iface {
            Iface::Radio if !self.iface.radio_on => return Err(NetError::InterfaceOff),
            Iface::Serial if !self.iface.serial_on => return Err(NetError::InterfaceOff),
            Iface::Radio if self.out_radio.is_full() => {
                self.counters.rejected_full += 1;
                return Err(NetError::BufferFull);
            }
            Iface::Serial if self.out_serial.is_full() => {
                self.counters.rejected_full += 1;
                return Err(NetError::BufferFull);
            }
            _ => {}
        }
        let seq = self.next_seq;
        let frame = Frame { am_type, src: self.addr, dst, seq, reliable, payload: payload.to_vec() };
        self.enqueue(iface, &frame, false).map_err(|_| NetError::BufferFull)?;
        self.next_seq = self.next_seq.wrapping_add(1);
        Ok(seq)
    }

    fn enqueue(&mut self, iface: Iface, frame: &Frame, relayed: bool) -> Result<(), ()> {
        let bytes = wire::encode_frame(frame).map_err(|_| ())?;
        let info = FrameInfo::from(frame);
        let queued = match iface {
            Iface::Radio => {
                let pkt = RadioPacket { src_pid: frame.src.pid, dst_pid: frame.dst.pid, relayed, bytes };
                self.out_radio.push(pkt).map(|_| ()).map_err(|_| ())
            }
            Iface::Serial => {
                let far = if self.role == Role::Sink { frame.dst.pid } else { frame.src.pid };
                let env = SerialEnvelope { island_pid: far, frame: bytes }.encode();
                self.out_serial.push(env).map(|_| ()).map_err(|_| ())
            }
            Iface::Whiteboard => {
                self.transit_out.push(TransitEnvelope { src_pid: frame.src.pid, dst_pid: frame.dst.pid, frame: bytes });
                Ok(())
            }
        };
        match queued {
            Ok(()) => {
                self.counters.accepted += 1;
                if relayed || frame.src != self.addr {
                    self.counters.forwarded += 1;
                }
                self.events.push(NetEvent::Accepted { iface, info, forwarded: frame.src != self.addr });
                Ok(())
            }
            Err(()) => Err(()),
        }
    }

    /// Take the next unit to transmit on `iface`, if the interface is on.
    pub fn pop_outgoing(&mut self, iface: Iface) -> Option<Outgoing> {
        let (out, info) = match iface {
            Iface::Radio => {
                if !self.iface.radio_on {
                    return None;
                }
                let pkt = self.out_radio.pop()?;
                let info = pkt.decode().ok().map(|f| FrameInfo::from(&f));
                (Outgoing::Radio(pkt), info)
            }
            Iface::Serial => {
                if !self.iface.serial_on {
                    return None;
                }
                let env = self.out_serial.pop()?;
                let info = SerialEnvelope::decode(&env).ok().and_then(|e| {
                    let (s, d) = if self.role == Role::Sink { (self.addr.pid, e.island_pid) } else { (e.island_pid, self.addr.pid) };
                    wire::decode_frame(&e.frame, s, d).ok().map(|f| FrameInfo::from(&f))
                });
                (Outgoing::Serial(env), info)
            }
            Iface::Whiteboard => {
                if self.transit_out.is_empty() {
                    return None;
                }
                let env = self.transit_out.remove(0);
                let info = wire::decode_frame(&env.frame, env.src_pid, env.dst_pid).ok().map(|f| FrameInfo::from(&f));
                (Outgoing::Transit(env), info)
            }
        };
        self.counters.transmitted += 1;
        if let Some(info) = info {
            self.events.push(NetEvent::Transmitted { iface, info });
        }
        Some(out)
    }

    pub fn receive_radio(&mut self, pkt: RadioPacket) {
        if !self.iface.radio_on {
            self.counters.lost_off += 1;
            let info = pkt.decode().ok().map(|f| FrameInfo::from(&f));
            self.events.push(NetEvent::DropOff { iface: Iface::Radio, info });
            return;
        }
        if let Err(pkt) = self.in_radio.push(pkt) {
            self.counters.dropped_full += 1;
            let info = pkt.decode().ok().map(|f| FrameInfo::from(&f));
            self.events.push(NetEvent::DropFull { iface: Iface::Radio, info });
        }
    }

    pub fn receive_serial(&mut self, envelope: Vec<u8>) {
        if !self.iface.serial_on {
            self.counters.lost_off += 1;
            self.events.push(NetEvent::DropOff { iface: Iface::Serial, info: None });
            return;
        }
        if self.in_serial.push(envelope).is_err() {
            self.counters.dropped_full += 1;
            self.events.push(NetEvent::DropFull { iface: Iface::Serial, info: None });
        }
    }

    pub fn receive_transit(&mut self, env: TransitEnvelope) {
        self.in_transit.push(env);
    }

    pub fn pending_ingoing(&self) -> usize {
        self.in_radio.len() + self.in_serial.len() + self.in_transit.len()
    }

    /// Drain ingoing buffers, apply island filtering and forwarding, and
    /// return the frames destined for this node's transport level.
    pub fn process_ingoing(&mut self) -> Vec<Inbound> {
        let mut up = Vec::new();
        while let Some(pkt) = self.in_radio.pop() {
            self.handle_radio(pkt, &mut up);
        }
        while let Some(env) = self.in_serial.pop() {
            self.handle_serial(env, &mut up);
        }
        for env in std::mem::take(&mut self.in_transit) {
            self.handle_transit(env, &mut up);
        }
        up
    }

    fn malformed(&mut self, iface: Iface, error: WireError) {
        self.counters.malformed += 1;
        self.events.push(NetEvent::Malformed { iface, error });
    }

    fn deliver(&mut self, iface: Iface, frame: Frame, up: &mut Vec<Inbound>) {
        self.counters.delivered += 1;
        self.events.push(NetEvent::Delivered { iface, info: FrameInfo::from(&frame) });
        up.push(Inbound { frame, iface });
    }

    fn filter(&mut self, frame: &Frame) {
        self.counters.filtered += 1;
        self.events.push(NetEvent::Filtered { info: FrameInfo::from(frame) });
    }

    fn forward(&mut self, iface: Iface, frame: &Frame, relayed: bool) {
        let blocked = match iface {
            Iface::Radio => !self.iface.radio_on,
            Iface::Serial => !self.iface.serial_on,
            Iface::Whiteboard => false,
        };
        if blocked {
            self.counters.lost_off += 1;
            self.events.push(NetEvent::DropOff { iface, info: Some(FrameInfo::from(frame)) });
        } else if self.enqueue(iface, frame, relayed).is_err() {
            self.counters.dropped_full += 1;
            self.events.push(NetEvent::DropFull { iface, info: Some(FrameInfo::from(frame)) });
        }
    }

    fn handle_radio(&mut self, pkt: RadioPacket, up: &mut Vec<Inbound>) {
        let frame = match pkt.decode() {
            Ok(f) => f,
            Err(e) => return self.malformed(Iface::Radio, e),
        };
        let decision = match self.role {
            Role::Sink => sink_route(self.addr.pid, &frame, pkt.relayed),
            Role::Mote => mote_route(self.addr, &frame, pkt.relayed),
            Role::Basestation => RouteDecision::Ignore,
        };
        match decision {
            RouteDecision::DeliverLocal | RouteDecision::Join => self.deliver(Iface::Radio, frame, up),
            RouteDecision::ForwardToBasestation => self.forward(Iface::Serial, &frame, false),
            RouteDecision::Ignore => self.filter(&frame),
        }
    }

    fn handle_serial(&mut self, raw: Vec<u8>, up: &mut Vec<Inbound>) {
        let env = match SerialEnvelope::decode(&raw) {
            Ok(e) => e,
            Err(e) => return self.malformed(Iface::Serial, e),
        };
        match self.role {
            Role::Sink => {
                let frame = match wire::decode_frame(&env.frame, env.island_pid, self.addr.pid) {
                    Ok(f) => f,
                    Err(e) => return self.malformed(Iface::Serial, e),
                };
                if frame.dst.devid == SINK_DEVID {
                    self.deliver(Iface::Serial, frame, up);
                } else {
                    if frame.dst.is_broadcast() {
                        self.deliver(Iface::Serial, frame.clone(), up);
                    }
                    self.forward(Iface::Radio, &frame, true);
                }
            }
            Role::Basestation => {
                let frame = match wire::decode_frame(&env.frame, self.addr.pid, env.island_pid) {
                    Ok(f) => f,
                    Err(e) => return self.malformed(Iface::Serial, e),
                };
                if frame.dst == self.addr {
                    self.deliver(Iface::Serial, frame, up);
                } else if frame.dst.pid != self.addr.pid {
                    self.forward(Iface::Whiteboard, &frame, false);
                } else {
                    self.filter(&frame);
                }
            }
            Role::Mote => self.malformed(Iface::Serial, WireError::Malformed { what: "serial on mote", len: raw.len() }),
        }
    }

    fn handle_transit(&mut self, env: TransitEnvelope, up: &mut Vec<Inbound>) {
        let frame = match wire::decode_frame(&env.frame, env.src_pid, env.dst_pid) {
            Ok(f) => f,
            Err(e) => return self.malformed(Iface::Whiteboard, e),
        };
        if frame.dst.pid != self.addr.pid {
            return self.filter(&frame);
        }
        if frame.dst.devid == BASESTATION_DEVID {
            self.deliver(Iface::Whiteboard, frame, up);
        } else if self.serial_attached {
            self.forward(Iface::Serial, &frame, false);
        } else {
            self.events.push(NetEvent::NoRoute { info: FrameInfo::from(&frame) });
        }
    }
}
