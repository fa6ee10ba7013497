//! Deterministic discrete-event simulator.
//!
//! Each node owns a [`Stack`] plus a small scripted application. The
//! engine moves frames between nodes over a [`LinkModel`] radio medium,
//! point-to-point serial lines (sink to basestation) and the shared
//! [`Whiteboard`], and records everything in a [`Trace`]. Events are
//! ordered by `(time_ms, insertion order)` and all randomness comes from
//! one seeded ChaCha stream, so a scenario and a seed fix the trace.

pub mod bundled;
pub mod link;
pub mod scenario;
pub mod trace;

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::network::{FrameInfo, Iface, NetEvent, Outgoing, RadioPacket};
use crate::transport::{AppEvent, Direction, Stack, StackEvent};
use crate::types::{AppId, DevId, Fixed, Pid, Role, RubiconAddress, TransId, BASESTATION_DEVID, SINK_DEVID};
use crate::whiteboard::proxy::{JoinedConverter, UpdatesConverter, JOINED};
use crate::whiteboard::{descr_key, render_descr, Notification, Proxy, Tuple, Whiteboard, TRANSIT_PREFIX};
use crate::wire::{self, AckBody, AppPayload, Frame, JoinMsg, SerialEnvelope, SynPdu, TransitEnvelope, TransportPdu};

pub use link::{LinkModel, NodeIdx};
pub use scenario::{Action, AutoChannel, Diagnostic, MoteSpec, NodeKind, Scenario, ScenarioError, StreamSpec, Target, TimedAction};
pub use trace::{Trace, TraceEvent, TraceKind};

/// CL body code a basestation sends its sink to drop a mote from the
/// island listing.
pub const ADMIN_REMOVE: u8 = 0x10;

/// Whiteboard key through which a basestation takes admin removals.
pub fn admin_remove_key(pid: Pid) -> String {
    format!("island/{pid}/admin/remove")
}

/// A connectionless message as seen by the receiving application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Received {
    pub time_ms: u64,
    pub src: RubiconAddress,
    pub appid: AppId,
    pub body: Vec<u8>,
    pub seq: u16,
    pub reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckOutcome {
    pub time_ms: u64,
    pub seq: u16,
    pub dst: RubiconAddress,
    pub success: bool,
}

#[derive(Debug, Clone)]
enum Ev {
    Boot(NodeIdx),
    Action(Action),
    Wake { node: NodeIdx, gen: u64 },
    Tx { node: NodeIdx, iface: Iface },
    Radio { to: NodeIdx, from: NodeIdx, pkt: RadioPacket },
    Serial { to: NodeIdx, from: NodeIdx, bytes: Vec<u8> },
    WbPublish { from: NodeIdx, env: TransitEnvelope },
    Updates { node: NodeIdx, gen: u64 },
}

#[derive(Debug)]
struct MoteApp {
    spec: MoteSpec,
    out_channels: Vec<u16>,
    value_cursor: usize,
    updates_gen: u64,
    updates_sent: u64,
}

#[derive(Debug)]
struct SinkApp {
    auto: Option<AutoChannel>,
    in_channels: BTreeMap<DevId, u16>,
}

#[derive(Debug)]
enum App {
    Mote(Box<MoteApp>),
    Sink(SinkApp),
    Basestation { proxy: Option<Proxy> },
    Peer,
}

#[derive(Debug)]
struct Node {
    name: String,
    kind: NodeKind,
    stack: Stack,
    app: App,
    stalled: bool,
    wake_gen: u64,
    wake_at: Option<u64>,
    tx_pending: [bool; 3],
    inbox: Vec<Received>,
    acks: Vec<AckOutcome>,
}

fn iface_slot(i: Iface) -> usize {
    match i {
        Iface::Radio => 0,
        Iface::Serial => 1,
        Iface::Whiteboard => 2,
    }
}

/// Per-node counters derived from a trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub node: String,
    pub role: String,
    pub pid: Pid,
    pub devid: DevId,
    pub sends: usize,
    pub receives: usize,
    pub drop_loss: usize,
    pub drop_full: usize,
    pub drop_off: usize,
    pub filtered: usize,
    pub acks_ok: usize,
    pub acks_fail: usize,
    pub ticks: usize,
    pub syn_emit: usize,
    pub syn_signal: usize,
    pub cl_recv: usize,
    pub joined_ms: Option<u64>,
}

pub struct Simulator {
    nodes: Vec<Node>,
    names: BTreeMap<String, NodeIdx>,
    link: LinkModel,
    rng: ChaCha8Rng,
    wb: Whiteboard,
    queue: BTreeMap<(u64, u64), Ev>,
    next_seq: u64,
    now: u64,
    trace: Trace,
    serial_peer: BTreeMap<NodeIdx, NodeIdx>,
    pid_owner: BTreeMap<Pid, NodeIdx>,
    sink_of: BTreeMap<Pid, NodeIdx>,
    island_of: Vec<Option<Pid>>,
    step_ms: u64,
    tx_budget: usize,
    tx_enabled: bool,
}

/// Run `scenario` with `seed` until `until_ms` (exclusive) and return the trace.
pub fn run(scenario: &Scenario, seed: u64, until_ms: u64) -> Trace {
    let mut sim = Simulator::new(scenario, seed);
    sim.run_until(until_ms);
    sim.into_trace()
}

impl Simulator {
    pub fn new(sc: &Scenario, seed: u64) -> Self {
        let mut sim = Simulator {
            nodes: Vec::new(),
            names: BTreeMap::new(),
            link: LinkModel::new(sc.link.loss_prob, sc.link.delay_ms, seed),
            rng: ChaCha8Rng::seed_from_u64(seed),
            wb: Whiteboard::new(),
            queue: BTreeMap::new(),
            next_seq: 0,
            now: 0,
            trace: Trace::default(),
            serial_peer: BTreeMap::new(),
            pid_owner: BTreeMap::new(),
            sink_of: BTreeMap::new(),
            island_of: Vec::new(),
            step_ms: sc.step_ms.max(1),
            tx_budget: sc.tx_budget.max(1),
            tx_enabled: true,
        };
        sim.link.serial_delay_ms = sc.link.serial_delay_ms;
        sim.link.whiteboard_delay_ms = sc.link.whiteboard_delay_ms;

        let net = sc.network;
        let tcfg = sc.transport;
        for isl in &sc.islands {
            let pid = isl.pid;
            let mut sink_cfg = tcfg;
            if let Some(n) = isl.sink_max_in {
                sink_cfg.max_in_channels = n;
            }
            let mut sink = Stack::new_sink(pid, net, sink_cfg);
            sink.net_mut().set_serial_attached(isl.basestation);
            for m in isl.motes.iter().filter(|m| m.preassigned) {
                sink.net_mut().add_known_mote(m.devid);
            }
            let s = sim.add_node(
                isl.sink_name(),
                NodeKind::Sink,
                Some(pid),
                sink,
                App::Sink(SinkApp { auto: isl.auto_channel, in_channels: BTreeMap::new() }),
            );
            sim.sink_of.insert(pid, s);
            if isl.basestation {
                let proxy = isl.proxy.then(Proxy::with_standard_converters);
                let b = sim.add_node(
                    isl.basestation_name(),
                    NodeKind::Basestation,
                    Some(pid),
                    Stack::new_basestation(pid, net, tcfg),
                    App::Basestation { proxy },
                );
                sim.serial_peer.insert(s, b);
                sim.serial_peer.insert(b, s);
                sim.pid_owner.insert(pid, b);
                sim.wb.register_basestation(pid).expect("valid key");
                sim.wb.subscribe(&admin_remove_key(pid), pid).expect("valid key");
                if isl.proxy {
                    sim.wb.subscribe(&format!("proxy/ctrl/{pid}/*/*"), pid).expect("valid key");
                }
            }
            for m in &isl.motes {
                let stack = if m.preassigned {
                    Stack::new(Role::Mote, RubiconAddress::new(pid, m.devid), net, tcfg)
                } else {
                    Stack::new_mote(m.devid, net, tcfg)
                };
                let app = MoteApp { spec: m.clone(), out_channels: Vec::new(), value_cursor: 0, updates_gen: 0, updates_sent: 0 };
                sim.add_node(m.name.clone(), NodeKind::Mote, Some(pid), stack, App::Mote(Box::new(app)));
            }
        }
        for p in &sc.peers {
            let mut stack = Stack::new_basestation(p.pid, net, tcfg);
            stack.net_mut().set_serial_attached(false);
            let i = sim.add_node(p.name.clone(), NodeKind::Peer, None, stack, App::Peer);
            sim.pid_owner.insert(p.pid, i);
            sim.wb.register_basestation(p.pid).expect("valid key");
        }

        // Radio range.
        let radio: Vec<NodeIdx> = (0..sim.nodes.len()).filter(|&i| matches!(sim.nodes[i].kind, NodeKind::Mote | NodeKind::Sink)).collect();
        for (x, &a) in radio.iter().enumerate() {
            for &b in &radio[x + 1..] {
                let same = sim.island_of[a].is_some() && sim.island_of[a] == sim.island_of[b];
                if same || sc.link.range == scenario::RangeMode::All {
                    sim.link.connect(a, b);
                }
            }
        }
        for (a, b) in &sc.link.extra_range {
            sim.link.connect(sim.names[a], sim.names[b]);
        }
        for (a, b) in &sc.link.cut {
            sim.link.cut(sim.names[a], sim.names[b]);
        }
        for (a, b, ms) in &sc.link.delays {
            sim.link.set_delay(sim.names[a], sim.names[b], *ms);
        }
        sim.link.add_jitter(sc.link.jitter_ms);

        for i in 0..sim.nodes.len() {
            sim.push(0, Ev::Boot(i));
        }
        let mut joins: Vec<(u64, String)> =
            sc.islands.iter().flat_map(|i| &i.motes).filter_map(|m| m.join_at.map(|t| (t, m.name.clone()))).collect();
        joins.sort();
        let mut script: Vec<TimedAction> = joins.into_iter().map(|(at, node)| TimedAction { at, action: Action::Join { node } }).collect();
        script.extend(sc.actions.iter().cloned());
        // Stable: scripted joins precede file actions at the same instant.
        script.sort_by_key(|a| a.at);
        for a in script {
            sim.push(a.at, Ev::Action(a.action));
        }
        sim
    }

    fn add_node(&mut self, name: String, kind: NodeKind, island: Option<Pid>, stack: Stack, app: App) -> NodeIdx {
        let i = self.nodes.len();
        self.names.insert(name.clone(), i);
        self.island_of.push(island);
        self.nodes.push(Node {
            name,
            kind,
            stack,
            app,
            stalled: false,
            wake_gen: 0,
            wake_at: None,
            tx_pending: [false; 3],
            inbox: Vec::new(),
            acks: Vec::new(),
        });
        i
    }

    fn push(&mut self, t: u64, ev: Ev) {
        self.next_seq += 1;
        self.queue.insert((t, self.next_seq), ev);
    }

    // ---- public API ------------------------------------------------------

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn whiteboard(&self) -> &Whiteboard {
        &self.wb
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub fn node_index(&self, name: &str) -> Option<NodeIdx> {
        self.names.get(name).copied()
    }

    pub fn stack(&self, name: &str) -> Option<&Stack> {
        self.node_index(name).map(|i| &self.nodes[i].stack)
    }

    pub fn stack_mut(&mut self, name: &str) -> Option<&mut Stack> {
        self.node_index(name).map(|i| &mut self.nodes[i].stack)
    }

    /// Connectionless messages delivered to `name`'s application.
    pub fn inbox(&self, name: &str) -> &[Received] {
        self.node_index(name).map_or(&[], |i| &self.nodes[i].inbox)
    }

    pub fn ack_outcomes(&self, name: &str) -> &[AckOutcome] {
        self.node_index(name).map_or(&[], |i| &self.nodes[i].acks)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Freeze or resume every outgoing interface. While frozen, frames
    /// stay in the outgoing buffers and new sends can fill them up.
    pub fn set_transmission(&mut self, enabled: bool) {
        self.tx_enabled = enabled;
        if enabled {
            for i in 0..self.nodes.len() {
                self.schedule_tx(i);
            }
        }
    }

    /// Time of the next queued event, if any.
    pub fn next_event_time(&self) -> Option<u64> {
        self.queue.first_key_value().map(|(&(t, _), _)| t)
    }

    /// Schedule an ad-hoc action at `at` (or now, if `at` is in the past).
    pub fn inject(&mut self, at: u64, action: Action) {
        self.push(at.max(self.now), Ev::Action(action));
    }

    /// Process one queued event. Returns its time, or `None` if the queue
    /// is empty (time does not move).
    pub fn step(&mut self) -> Option<u64> {
        let ((t, _), ev) = self.queue.pop_first()?;
        self.now = t;
        self.handle(ev);
        Some(t)
    }

    /// Process every event strictly before `until_ms`.
    pub fn run_until(&mut self, until_ms: u64) {
        while let Some((&(t, _), _)) = self.queue.first_key_value() {
            if t >= until_ms {
                break;
            }
            self.step();
        }
    }

    pub fn summary(&self) -> Vec<NodeSummary> {
        let mut rows: Vec<NodeSummary> = self
            .nodes
            .iter()
            .map(|n| {
                let a = n.stack.address();
                NodeSummary {
                    node: n.name.clone(),
                    role: format!("{:?}", n.kind).to_lowercase(),
                    pid: a.pid,
                    devid: a.devid,
                    ..NodeSummary::default()
                }
            })
            .collect();
        for e in &self.trace.events {
            let Some(&i) = self.names.get(&e.node) else { continue };
            let r = &mut rows[i];
            match e.kind {
                TraceKind::Send => r.sends += 1,
                TraceKind::Recv => r.receives += 1,
                TraceKind::DropLoss => r.drop_loss += 1,
                TraceKind::DropFull => r.drop_full += 1,
                TraceKind::DropOff => r.drop_off += 1,
                TraceKind::Filtered => r.filtered += 1,
                TraceKind::AckOk => r.acks_ok += 1,
                TraceKind::AckFail => r.acks_fail += 1,
                TraceKind::Tick => r.ticks += 1,
                TraceKind::SynEmit => r.syn_emit += 1,
                TraceKind::SynSignal => r.syn_signal += 1,
                TraceKind::ClRecv => r.cl_recv += 1,
                TraceKind::Joined if r.joined_ms.is_none() => r.joined_ms = Some(e.time_ms),
                _ => {}
            }
        }
        rows
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.summary() {
            out.serialize(row).map_err(io::Error::other)?;
        }
        out.flush()
    }

    // ---- event handling --------------------------------------------------

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Boot(i) => self.boot(i),
            Ev::Action(a) => self.action(a),
            Ev::Wake { node, gen } => {
                if self.nodes[node].wake_gen != gen {
                    return;
                }
                self.nodes[node].wake_at = None;
                let now = self.now;
                if self.nodes[node].stack.tick_due(now) {
                    self.before_tick(node);
                }
                self.nodes[node].stack.handle_timeout(now);
                self.settle(node);
            }
            Ev::Tx { node, iface } => self.transmit_opportunity(node, iface),
            Ev::Radio { to, from, pkt } => self.radio_arrival(to, from, pkt),
            Ev::Serial { to, from, bytes } => self.serial_arrival(to, from, bytes),
            Ev::WbPublish { from, env } => {
                let mut e = TraceEvent::new(self.now, self.nodes[from].name.clone(), TraceKind::TupleWrite);
                e.key = Some(crate::whiteboard::transit_key(env.dst_pid));
                e.data = Some(scenario::encode_hex(&env.encode()));
                if let Ok(f) = wire::decode_frame(&env.frame, env.src_pid, env.dst_pid) {
                    fill_frame(&mut e, &f);
                }
                self.trace.events.push(e);
                let notes = self.wb.publish_transit(&env, self.now).expect("transit key is nonempty");
                self.dispatch(notes);
            }
            Ev::Updates { node, gen } => self.send_updates(node, gen),
        }
    }

    fn boot(&mut self, i: NodeIdx) {
        match &self.nodes[i].app {
            App::Mote(m) if m.spec.preassigned => {
                self.start_stream(i);
                self.schedule_updates(i);
            }
            App::Sink(s) => {
                let Some(auto) = s.auto else { return };
                let pid = self.nodes[i].stack.address().pid;
                let pre: Vec<DevId> = self.nodes[i].stack.net().known_motes().iter().copied().collect();
                for devid in pre {
                    self.open_in_channel(i, RubiconAddress::new(pid, devid), auto);
                }
            }
            _ => {}
        }
        self.settle(i);
    }

    fn idx(&self, name: &str) -> NodeIdx {
        self.names[name]
    }

    fn action(&mut self, a: Action) {
        let now = self.now;
        let i = a.node().and_then(|n| self.names.get(n).copied());
        let info = |sim: &mut Self, node: NodeIdx, note: String| {
            let mut e = TraceEvent::new(now, sim.nodes[node].name.clone(), TraceKind::Info);
            e.note = Some(note);
            sim.trace.events.push(e);
        };
        match a {
            Action::Join { node } => {
                let i = self.idx(&node);
                let descr = match &self.nodes[i].app {
                    App::Mote(m) => m.spec.descr,
                    _ => Default::default(),
                };
                if let Err(e) = self.nodes[i].stack.join_island(now, descr) {
                    self.send_error(i, None, e.to_string());
                }
            }
            Action::Leave { node } => {
                let i = self.idx(&node);
                self.nodes[i].stack.leave_island();
                if let App::Mote(m) = &mut self.nodes[i].app {
                    m.updates_gen += 1;
                    for id in std::mem::take(&mut m.out_channels) {
                        let _ = self.nodes[i].stack.dispose_syn_channel(id);
                    }
                }
                info(self, i, "left island".into());
            }
            Action::Send { node, to, appid, body, reliable } => {
                let i = self.idx(&node);
                let dst = match to {
                    Target::Node(n) => self.nodes[self.idx(&n)].stack.address(),
                    Target::Addr(a) => a,
                };
                if let Err(e) = self.nodes[i].stack.cl_send(now, dst, &body, reliable, appid) {
                    self.send_error(i, Some(dst), e.to_string());
                }
            }
            Action::Radio { node, on } => {
                let i = self.idx(&node);
                self.nodes[i].stack.net_mut().radio_set(on);
                info(self, i, format!("radio {}", if on { "on" } else { "off" }));
            }
            Action::Serial { node, on } => {
                let i = self.idx(&node);
                self.nodes[i].stack.net_mut().serial_set(on);
                info(self, i, format!("serial {}", if on { "on" } else { "off" }));
            }
            Action::Stall { node, on } => {
                let i = self.idx(&node);
                self.nodes[i].stalled = on;
                info(self, i, format!("stall {}", if on { "on" } else { "off" }));
            }
            Action::Write { node, channel, slot, value } => {
                let i = self.idx(&node);
                let id = self.out_channel(i, channel);
                let r = match id {
                    Some(id) => self.nodes[i].stack.write_output_value(id, slot, Fixed::from_f64(value)),
                    None => Err(crate::error::TransportError::UnknownChannel(channel as u16)),
                };
                if let Err(e) = r {
                    self.send_error(i, None, e.to_string());
                }
            }
            Action::TimeStep { node, ms } => {
                let i = self.idx(&node);
                if let Err(e) = self.nodes[i].stack.set_time_step(ms) {
                    self.send_error(i, None, e.to_string());
                }
            }
            Action::StartChannels { node } => {
                let i = self.idx(&node);
                self.nodes[i].stack.start_all_syn_channels(now);
            }
            Action::StopChannels { node } => {
                let i = self.idx(&node);
                self.nodes[i].stack.stop_all_syn_channels();
            }
            Action::DisposeChannels { node } => {
                let i = self.idx(&node);
                let ids: Vec<u16> = self.nodes[i].stack.channels().ids().collect();
                for id in ids {
                    let _ = self.nodes[i].stack.dispose_syn_channel(id);
                }
                if let App::Mote(m) = &mut self.nodes[i].app {
                    m.out_channels.clear();
                }
            }
            Action::Publish { node, key, data } => {
                let writer = node.map(|n| self.idx(&n));
                let creator = writer.map_or(0, |w| self.nodes[w].stack.address().pid);
                self.publish(writer, Tuple::new(key, data.into_bytes(), now, creator));
            }
        }
        if let Some(i) = i {
            self.settle(i);
        }
    }

    fn out_channel(&self, i: NodeIdx, nth: usize) -> Option<u16> {
        let t = self.nodes[i].stack.channels();
        t.ids().filter(|id| t.get(*id).is_some_and(|c| c.direction == Direction::Out)).nth(nth)
    }

    fn send_error(&mut self, i: NodeIdx, dst: Option<RubiconAddress>, note: String) {
        let mut e = TraceEvent::new(self.now, self.nodes[i].name.clone(), TraceKind::SendError);
        e.dst = dst;
        e.note = Some(note);
        self.trace.events.push(e);
    }

    /// Let a node process whatever arrived, record what it did, and
    /// schedule its transmissions and timers.
    fn settle(&mut self, i: NodeIdx) {
        if !self.nodes[i].stalled {
            let now = self.now;
            self.nodes[i].stack.process(now);
        }
        self.drain(i);
        self.schedule_tx(i);
        self.schedule_wake(i);
    }

    fn drain(&mut self, i: NodeIdx) {
        loop {
            let sev = self.nodes[i].stack.drain_events();
            let nev = self.nodes[i].stack.net_mut().drain_events();
            let aev = self.nodes[i].stack.drain_app_events();
            if sev.is_empty() && nev.is_empty() && aev.is_empty() {
                break;
            }
            for e in sev {
                self.record_stack(i, e);
            }
            for e in nev {
                self.record_net(i, None, e);
            }
            for e in aev {
                self.app_event(i, e);
            }
        }
    }

    fn schedule_tx(&mut self, i: NodeIdx) {
        if !self.tx_enabled {
            return;
        }
        for iface in [Iface::Radio, Iface::Serial, Iface::Whiteboard] {
            let slot = iface_slot(iface);
            if !self.nodes[i].tx_pending[slot] && self.nodes[i].stack.net().can_transmit(iface) {
                self.nodes[i].tx_pending[slot] = true;
                self.push(self.now, Ev::Tx { node: i, iface });
            }
        }
    }

    fn schedule_wake(&mut self, i: NodeIdx) {
        let next = self.nodes[i].stack.next_timeout();
        if next != self.nodes[i].wake_at {
            self.nodes[i].wake_gen += 1;
            self.nodes[i].wake_at = next;
            if let Some(t) = next {
                let gen = self.nodes[i].wake_gen;
                self.push(t.max(self.now), Ev::Wake { node: i, gen });
            }
        }
    }

    fn transmit_opportunity(&mut self, i: NodeIdx, iface: Iface) {
        self.nodes[i].tx_pending[iface_slot(iface)] = false;
        if !self.tx_enabled {
            return;
        }
        for _ in 0..self.tx_budget {
            match self.nodes[i].stack.net_mut().pop_outgoing(iface) {
                Some(out) => self.transmit(i, out),
                None => break,
            }
        }
        // Transmitted events are covered by the SEND records.
        let _ = self.nodes[i].stack.net_mut().drain_events();
        if self.nodes[i].stack.net().can_transmit(iface) {
            self.nodes[i].tx_pending[iface_slot(iface)] = true;
            self.push(self.now + self.step_ms, Ev::Tx { node: i, iface });
        }
    }

    fn transmit(&mut self, i: NodeIdx, out: Outgoing) {
        let now = self.now;
        match out {
            Outgoing::Radio(pkt) => {
                let frame = pkt.decode().ok();
                let intended = frame.as_ref().and_then(|f| self.intended_receiver(i, f, pkt.relayed));
                let mut e = TraceEvent::new(now, self.nodes[i].name.clone(), TraceKind::Send);
                e.iface = Some(Iface::Radio);
                e.peer = intended.map(|j| self.nodes[j].name.clone());
                if let Some(f) = &frame {
                    fill_frame(&mut e, f);
                }
                if pkt.relayed {
                    e.note = Some("relayed".into());
                }
                self.trace.events.push(e);
                for j in self.link.neighbours(i) {
                    let lost = self.rng.gen_bool(self.link.loss_prob);
                    if lost {
                        let mut d = TraceEvent::new(now, self.nodes[j].name.clone(), TraceKind::DropLoss);
                        d.iface = Some(Iface::Radio);
                        d.peer = Some(self.nodes[i].name.clone());
                        if let Some(f) = &frame {
                            fill_frame(&mut d, f);
                        }
                        self.trace.events.push(d);
                    } else {
                        let t = now + self.link.radio_delay(i, j);
                        self.push(t, Ev::Radio { to: j, from: i, pkt: pkt.clone() });
                    }
                }
            }
            Outgoing::Serial(bytes) => {
                let Some(&j) = self.serial_peer.get(&i) else { return };
                let mut e = TraceEvent::new(now, self.nodes[i].name.clone(), TraceKind::Send);
                e.iface = Some(Iface::Serial);
                e.peer = Some(self.nodes[j].name.clone());
                if let Some(f) = self.serial_frame(i, &bytes) {
                    fill_frame(&mut e, &f);
                }
                self.trace.events.push(e);
                self.push(now + self.link.serial_delay_ms, Ev::Serial { to: j, from: i, bytes });
            }
            Outgoing::Transit(env) => {
                let mut e = TraceEvent::new(now, self.nodes[i].name.clone(), TraceKind::Send);
                e.iface = Some(Iface::Whiteboard);
                e.peer = self.pid_owner.get(&env.dst_pid).map(|&j| self.nodes[j].name.clone());
                if let Ok(f) = wire::decode_frame(&env.frame, env.src_pid, env.dst_pid) {
                    fill_frame(&mut e, &f);
                }
                self.trace.events.push(e);
                self.push(now + self.link.whiteboard_delay_ms, Ev::WbPublish { from: i, env });
            }
        }
    }

    /// Decode a serial envelope as sent by node `sender`.
    fn serial_frame(&self, sender: NodeIdx, bytes: &[u8]) -> Option<Frame> {
        let env = SerialEnvelope::decode(bytes).ok()?;
        let own = self.nodes[sender].stack.address().pid;
        let (s, d) = if self.nodes[sender].kind == NodeKind::Sink { (own, env.island_pid) } else { (env.island_pid, own) };
        wire::decode_frame(&env.frame, s, d).ok()
    }

    fn mote_at(&self, addr: RubiconAddress) -> Option<NodeIdx> {
        (0..self.nodes.len()).find(|&j| self.nodes[j].kind == NodeKind::Mote && self.nodes[j].stack.address() == addr)
    }

    /// The node a unicast radio frame is meant for on this hop, if any.
    fn intended_receiver(&self, from: NodeIdx, f: &Frame, relayed: bool) -> Option<NodeIdx> {
        if f.dst.is_broadcast() {
            return None;
        }
        if f.am_type == crate::types::AmType::Join {
            return if f.dst.devid == SINK_DEVID {
                self.sink_of.get(&f.dst.pid).copied()
            } else {
                (0..self.nodes.len()).find(|&j| self.nodes[j].kind == NodeKind::Mote && self.nodes[j].stack.address().devid == f.dst.devid)
            };
        }
        match self.nodes[from].kind {
            NodeKind::Sink => {
                let _ = relayed;
                self.mote_at(f.dst)
            }
            _ if f.dst.pid == f.src.pid => match f.dst.devid {
                SINK_DEVID | BASESTATION_DEVID => self.sink_of.get(&f.dst.pid).copied(),
                _ => self.mote_at(f.dst),
            },
            _ => self.sink_of.get(&f.src.pid).copied(),
        }
    }

    fn radio_arrival(&mut self, to: NodeIdx, from: NodeIdx, pkt: RadioPacket) {
        let frame = pkt.decode().ok();
        self.nodes[to].stack.net_mut().receive_radio(pkt);
        self.arrived(to, from, Iface::Radio, frame);
    }

    fn serial_arrival(&mut self, to: NodeIdx, from: NodeIdx, bytes: Vec<u8>) {
        let frame = self.serial_frame(from, &bytes);
        self.nodes[to].stack.net_mut().receive_serial(bytes);
        self.arrived(to, from, Iface::Serial, frame);
    }

    fn arrived(&mut self, to: NodeIdx, from: NodeIdx, iface: Iface, frame: Option<Frame>) {
        let evs = self.nodes[to].stack.net_mut().drain_events();
        let peer = self.nodes[from].name.clone();
        if evs.is_empty() {
            let mut e = TraceEvent::new(self.now, self.nodes[to].name.clone(), TraceKind::Recv);
            e.iface = Some(iface);
            e.peer = Some(peer);
            if let Some(f) = &frame {
                fill_frame(&mut e, f);
            }
            self.trace.events.push(e);
        } else {
            for ev in evs {
                let mut e = self.net_event(to, ev);
                e.peer = Some(peer.clone());
                if let Some(f) = &frame {
                    fill_frame(&mut e, f);
                }
                self.trace.events.push(e);
            }
        }
        self.settle(to);
    }

    fn publish(&mut self, writer: Option<NodeIdx>, t: Tuple) {
        let node = writer.map_or_else(|| "whiteboard".to_owned(), |w| self.nodes[w].name.clone());
        let mut e = TraceEvent::new(self.now, node, TraceKind::TupleWrite);
        e.key = Some(t.key.clone());
        e.data = Some(String::from_utf8_lossy(&t.data).into_owned());
        self.trace.events.push(e);
        match self.wb.publish(t) {
            Ok(notes) => self.dispatch(notes),
            Err(err) => {
                let mut e = TraceEvent::new(self.now, "whiteboard", TraceKind::Malformed);
                e.note = Some(err.to_string());
                self.trace.events.push(e);
            }
        }
    }

    fn dispatch(&mut self, notes: Vec<Notification>) {
        for n in notes {
            let Some(&owner) = self.pid_owner.get(&n.subscriber) else { continue };
            if n.tuple.key.starts_with(TRANSIT_PREFIX) {
                let Some(res) = self.wb.take_transit(n.subscriber) else { continue };
                match res {
                    Ok(env) => {
                        let frame = wire::decode_frame(&env.frame, env.src_pid, env.dst_pid).ok();
                        let mut e = TraceEvent::new(self.now, self.nodes[owner].name.clone(), TraceKind::Recv);
                        e.iface = Some(Iface::Whiteboard);
                        e.peer = self.pid_owner.get(&env.src_pid).map(|&j| self.nodes[j].name.clone());
                        if let Some(f) = &frame {
                            fill_frame(&mut e, f);
                        }
                        self.trace.events.push(e);
                        self.nodes[owner].stack.net_mut().receive_transit(env);
                        self.settle(owner);
                    }
                    Err(err) => {
                        let mut e = TraceEvent::new(self.now, self.nodes[owner].name.clone(), TraceKind::Malformed);
                        e.iface = Some(Iface::Whiteboard);
                        e.note = Some(err.to_string());
                        self.trace.events.push(e);
                    }
                }
                continue;
            }
            let mut e = TraceEvent::new(self.now, self.nodes[owner].name.clone(), TraceKind::Notify);
            e.key = Some(n.tuple.key.clone());
            e.data = Some(String::from_utf8_lossy(&n.tuple.data).into_owned());
            self.trace.events.push(e);
            self.notified(owner, &n.tuple);
        }
    }

    /// Basestation reactions to whiteboard notifications.
    fn notified(&mut self, i: NodeIdx, t: &Tuple) {
        let pid = self.nodes[i].stack.address().pid;
        let text = String::from_utf8_lossy(&t.data).trim().to_owned();
        let now = self.now;
        let command = if t.key == admin_remove_key(pid) {
            match text.parse::<DevId>() {
                Ok(devid) => {
                    let mut body = vec![ADMIN_REMOVE];
                    body.extend_from_slice(&devid.to_le_bytes());
                    Ok((RubiconAddress::sink(pid), body))
                }
                Err(_) => Err(format!("bad devid {text:?}")),
            }
        } else {
            let parts: Vec<&str> = t.key.split('/').collect();
            match (&self.nodes[i].app, parts.as_slice()) {
                (App::Basestation { proxy: Some(p) }, ["proxy", "ctrl", _, devid, name]) => {
                    match (devid.parse::<DevId>(), p.command(name, &text)) {
                        (Ok(d), Ok(body)) => Ok((RubiconAddress::new(pid, d), body)),
                        (Err(_), _) => Err(format!("bad devid in {}", t.key)),
                        (_, Err(e)) => Err(e.to_string()),
                    }
                }
                _ => return,
            }
        };
        match command {
            Ok((dst, body)) => {
                if let Err(e) = self.nodes[i].stack.cl_send(now, dst, &body, false, AppId::CL) {
                    self.send_error(i, Some(dst), e.to_string());
                }
            }
            Err(note) => self.send_error(i, None, note),
        }
        self.settle(i);
    }

    // ---- applications ----------------------------------------------------

    fn app_event(&mut self, i: NodeIdx, ev: AppEvent) {
        let now = self.now;
        let name = self.nodes[i].name.clone();
        match ev {
            AppEvent::ClReceive { src, appid, body, seq, reliable } => {
                let mut e = TraceEvent::new(now, name, TraceKind::ClRecv);
                e.src = Some(src);
                e.appid = Some(appid.0);
                e.seq = Some(seq);
                e.reliable = Some(reliable);
                e.nbytes = Some(body.len());
                e.data = Some(scenario::encode_hex(&body));
                self.trace.events.push(e);
                self.nodes[i].inbox.push(Received { time_ms: now, src, appid, body: body.clone(), seq, reliable });
                self.on_cl(i, src, &body);
            }
            AppEvent::AckResult { seq, appid, dst, success } => {
                let mut e = TraceEvent::new(now, name, if success { TraceKind::AckOk } else { TraceKind::AckFail });
                e.dst = Some(dst);
                e.ref_seq = Some(seq);
                e.appid = Some(appid.0);
                self.trace.events.push(e);
                self.nodes[i].acks.push(AckOutcome { time_ms: now, seq, dst, success });
            }
            AppEvent::SynData { .. } => {}
            AppEvent::Joined { island, mote, success } => {
                let mut e = TraceEvent::new(now, name, if success { TraceKind::Joined } else { TraceKind::JoinFail });
                e.src = Some(mote);
                e.note = Some(format!("island={island}"));
                self.trace.events.push(e);
                if success {
                    self.start_stream(i);
                    self.schedule_updates(i);
                }
            }
            AppEvent::MoteJoined { island, mote, descr } => {
                let mut e = TraceEvent::new(now, name, TraceKind::MoteJoined);
                e.src = Some(mote);
                e.data = Some(render_descr(mote, &descr));
                self.trace.events.push(e);
                if self.nodes[i].stack.net().serial_attached() {
                    let body = JoinedConverter::body(mote.devid, &descr);
                    let bs = RubiconAddress::basestation(island);
                    if let Err(err) = self.nodes[i].stack.cl_send(now, bs, &body, false, AppId::CL) {
                        self.send_error(i, Some(bs), err.to_string());
                    }
                }
                if let App::Sink(SinkApp { auto: Some(auto), .. }) = &self.nodes[i].app {
                    let auto = *auto;
                    self.open_in_channel(i, mote, auto);
                }
            }
        }
    }

    fn open_in_channel(&mut self, i: NodeIdx, mote: RubiconAddress, auto: AutoChannel) {
        let now = self.now;
        let stack = &mut self.nodes[i].stack;
        let r = stack.create_syn_channel_in(mote, auto.size, auto.modality).and_then(|id| stack.start_syn_channel(now, id).map(|_| id));
        match r {
            Ok(id) => {
                if let App::Sink(s) = &mut self.nodes[i].app {
                    s.in_channels.insert(mote.devid, id);
                }
                let mut e = TraceEvent::new(now, self.nodes[i].name.clone(), TraceKind::Info);
                e.channel = Some(id);
                e.src = Some(mote);
                e.note = Some("in channel created".into());
                self.trace.events.push(e);
            }
            Err(err) => self.send_error(i, Some(mote), err.to_string()),
        }
    }

    fn on_cl(&mut self, i: NodeIdx, src: RubiconAddress, body: &[u8]) {
        let now = self.now;
        let me = self.nodes[i].stack.address();
        match &mut self.nodes[i].app {
            App::Sink(s) => {
                if body.len() == 3 && body[0] == ADMIN_REMOVE && src == RubiconAddress::basestation(me.pid) {
                    let devid = u16::from_le_bytes([body[1], body[2]]);
                    let ch = s.in_channels.remove(&devid);
                    let removed = self.nodes[i].stack.remove_mote(devid);
                    if let Some(id) = ch {
                        let _ = self.nodes[i].stack.dispose_syn_channel(id);
                    }
                    let mut e = TraceEvent::new(now, self.nodes[i].name.clone(), TraceKind::Info);
                    e.src = Some(RubiconAddress::new(me.pid, devid));
                    e.note = Some(if removed { "mote removed" } else { "mote not listed" }.into());
                    self.trace.events.push(e);
                }
            }
            App::Basestation { proxy } => {
                let mut tuples = Vec::new();
                if body.first() == Some(&JOINED) && src == RubiconAddress::sink(me.pid) {
                    if let Ok((devid, d)) = JoinedConverter::parse(body) {
                        let mote = RubiconAddress::new(me.pid, devid);
                        tuples.push(Tuple::new(descr_key(me.pid, devid), render_descr(mote, &d).into_bytes(), now, me.pid));
                        if let Some(p) = proxy {
                            tuples.push(p.translate(mote, body, now, me.pid));
                        }
                    }
                } else if let Some(p) = proxy {
                    tuples.push(p.translate(src, body, now, me.pid));
                }
                for t in tuples {
                    self.publish(Some(i), t);
                }
            }
            App::Mote(_) | App::Peer => {}
        }
    }

    fn start_stream(&mut self, i: NodeIdx) {
        let now = self.now;
        let App::Mote(m) = &self.nodes[i].app else { return };
        let Some(stream) = m.spec.stream.clone() else { return };
        let stack = &mut self.nodes[i].stack;
        let sink = stack.join_state().chosen_sink.unwrap_or(RubiconAddress::sink(stack.address().pid));
        if let Some(ms) = stream.time_step_ms {
            let _ = stack.set_time_step(ms);
        }
        let r =
            stack.create_syn_channel_out(sink, stream.size, stream.modality).and_then(|id| stack.start_syn_channel(now, id).map(|_| id));
        match r {
            Ok(id) => {
                if let App::Mote(m) = &mut self.nodes[i].app {
                    m.out_channels.push(id);
                }
                let mut e = TraceEvent::new(now, self.nodes[i].name.clone(), TraceKind::Info);
                e.channel = Some(id);
                e.dst = Some(sink);
                e.note = Some(match &stream.transducer {
                    Some(t) => format!("out channel created transducer={t}"),
                    None => "out channel created".into(),
                });
                self.trace.events.push(e);
            }
            Err(err) => self.send_error(i, Some(sink), err.to_string()),
        }
    }

    /// Scripted writes due by now, then the counter, right before a tick.
    fn before_tick(&mut self, i: NodeIdx) {
        let now = self.now;
        let ticks = self.nodes[i].stack.tick_count();
        let Node { app, stack, .. } = &mut self.nodes[i];
        let App::Mote(m) = app else { return };
        let (Some(stream), Some(&id)) = (&m.spec.stream, m.out_channels.first()) else { return };
        while let Some(&(at, slot, v)) = stream.values.get(m.value_cursor) {
            if at > now {
                break;
            }
            let _ = stack.write_output_value(id, slot, Fixed::from_f64(v));
            m.value_cursor += 1;
        }
        if stream.counter {
            let _ = stack.write_output_value(id, 0, Fixed::from_f64(ticks as f64));
        }
    }

    fn schedule_updates(&mut self, i: NodeIdx) {
        let App::Mote(m) = &mut self.nodes[i].app else { return };
        let Some(every) = m.spec.updates_every_ms else { return };
        m.updates_gen += 1;
        let gen = m.updates_gen;
        self.push(self.now + every, Ev::Updates { node: i, gen });
    }

    fn send_updates(&mut self, i: NodeIdx, gen: u64) {
        let now = self.now;
        let App::Mote(m) = &mut self.nodes[i].app else { return };
        if m.updates_gen != gen {
            return;
        }
        m.updates_sent += 1;
        let reading = (m.updates_sent % i16::MAX as u64) as i16;
        let every = m.spec.updates_every_ms.unwrap_or(1).max(1);
        let body = UpdatesConverter::body(&[(0, reading)]);
        let bs = RubiconAddress::basestation(self.nodes[i].stack.address().pid);
        if let Err(e) = self.nodes[i].stack.cl_send(now, bs, &body, false, AppId::CL) {
            self.send_error(i, Some(bs), e.to_string());
        }
        self.push(now + every, Ev::Updates { node: i, gen });
        self.settle(i);
    }

    // ---- trace conversion ------------------------------------------------

    fn net_event(&self, i: NodeIdx, ev: NetEvent) -> TraceEvent {
        let name = self.nodes[i].name.clone();
        let with = |kind: TraceKind, iface: Option<Iface>, info: Option<FrameInfo>| {
            let mut e = TraceEvent::new(self.now, name.clone(), kind);
            e.iface = iface;
            if let Some(info) = info {
                fill_info(&mut e, &info);
            }
            e
        };
        match ev {
            NetEvent::Accepted { iface, info, forwarded } => {
                let mut e = with(TraceKind::Enqueue, Some(iface), Some(info));
                if forwarded {
                    e.note = Some("forwarded".into());
                }
                e
            }
            NetEvent::Transmitted { iface, info } => with(TraceKind::Info, Some(iface), Some(info)),
            NetEvent::DropOff { iface, info } => with(TraceKind::DropOff, Some(iface), info),
            NetEvent::DropFull { iface, info } => with(TraceKind::DropFull, Some(iface), info),
            NetEvent::Filtered { info } => with(TraceKind::Filtered, None, Some(info)),
            NetEvent::Malformed { iface, error } => {
                let mut e = with(TraceKind::Malformed, Some(iface), None);
                e.note = Some(error.to_string());
                e
            }
            NetEvent::Delivered { iface, info } => with(TraceKind::Deliver, Some(iface), Some(info)),
            NetEvent::NoRoute { info } => with(TraceKind::NoRoute, None, Some(info)),
        }
    }

    fn record_net(&mut self, i: NodeIdx, peer: Option<String>, ev: NetEvent) {
        if matches!(ev, NetEvent::Transmitted { .. }) {
            return;
        }
        let mut e = self.net_event(i, ev);
        e.peer = peer;
        self.trace.events.push(e);
    }

    fn record_stack(&mut self, i: NodeIdx, ev: StackEvent) {
        let mut e = TraceEvent::new(self.now, self.nodes[i].name.clone(), TraceKind::Info);
        match ev {
            StackEvent::Net(n) => return self.record_net(i, None, n),
            StackEvent::UnknownTransId { src, code } => {
                e.kind = TraceKind::UnknownTransid;
                e.src = Some(src);
                e.note = Some(format!("transid={code:#04x}"));
            }
            StackEvent::Malformed { src, error } => {
                e.kind = TraceKind::Malformed;
                e.src = Some(src);
                e.note = Some(error.to_string());
            }
            StackEvent::UnknownAck { src, seq } => {
                e.kind = TraceKind::UnknownAck;
                e.src = Some(src);
                e.ref_seq = Some(seq);
            }
            StackEvent::LateAck { src, seq } => {
                e.kind = TraceKind::LateAck;
                e.src = Some(src);
                e.ref_seq = Some(seq);
            }
            StackEvent::AckSent { dst, seq } => {
                e.kind = TraceKind::AckSent;
                e.dst = Some(dst);
                e.ref_seq = Some(seq);
            }
            StackEvent::Tick { index } => {
                e.kind = TraceKind::Tick;
                e.note = Some(format!("index={index}"));
            }
            StackEvent::SynEmit { channel, peer, tick_index, entries } => {
                e.kind = TraceKind::SynEmit;
                e.channel = Some(channel);
                e.dst = Some(peer);
                e.nbytes = Some(entries);
                e.note = Some(format!("tick_index={tick_index}"));
            }
            StackEvent::SynSendError { channel, error } => {
                e.kind = TraceKind::SendError;
                e.channel = Some(channel);
                e.note = Some(error.to_string());
            }
            StackEvent::SynSignal { channel, status } => {
                e.kind = TraceKind::SynSignal;
                e.channel = Some(channel);
                e.status = Some(status);
            }
            StackEvent::SynRejected { src, channel } => {
                e.kind = TraceKind::SynRejected;
                e.src = Some(src);
                e.channel = Some(channel);
            }
            StackEvent::JoinRequest { attempt, request_seq } => {
                e.kind = TraceKind::JoinRequest;
                e.seq = Some(request_seq);
                e.note = Some(format!("attempt={attempt}"));
            }
            StackEvent::JoinReply { mote, request_seq } => {
                e.kind = TraceKind::JoinReply;
                e.dst = Some(RubiconAddress::new(0, mote));
                e.seq = Some(request_seq);
            }
            StackEvent::JoinIgnored { mote } => {
                e.kind = TraceKind::JoinIgnored;
                e.src = Some(RubiconAddress::new(0, mote));
            }
            StackEvent::JoinAckSent { sink, request_seq } => {
                e.kind = TraceKind::JoinAck;
                e.dst = Some(sink);
                e.seq = Some(request_seq);
            }
        }
        self.trace.events.push(e);
    }
}

fn fill_info(e: &mut TraceEvent, info: &FrameInfo) {
    e.am = Some(info.am);
    e.src = Some(info.src);
    e.dst = Some(info.dst);
    e.seq = Some(info.seq);
    e.reliable = Some(info.reliable);
    e.nbytes = Some(info.nbytes);
}

/// Header fields plus whatever the payload says about appid, acked seq,
/// synaptic channel or join message kind.
fn fill_frame(e: &mut TraceEvent, f: &Frame) {
    fill_info(e, &FrameInfo::from(f));
    let Ok(pdu) = TransportPdu::decode(&f.payload) else { return };
    match pdu.transid {
        TransId::Connless => {
            if let Ok(a) = AppPayload::decode(&pdu.body) {
                e.appid = Some(a.appid.0);
            }
        }
        TransId::RubiconAck => {
            if let Ok(a) = AckBody::decode(&pdu.body) {
                e.appid = Some(a.appid.0);
                e.ref_seq = Some(a.seq);
            }
        }
        TransId::SynChannel => {
            if let Ok(a) = AppPayload::decode(&pdu.body) {
                if let Ok(s) = SynPdu::decode(&a.body) {
                    e.channel = Some(s.channel_id);
                }
            }
        }
        TransId::ComponentMgmt => {
            if let Ok(m) = JoinMsg::decode(&pdu.body) {
                let (kind, seq) = match m {
                    JoinMsg::Request { request_seq, .. } => ("join_request", request_seq),
                    JoinMsg::Reply { request_seq, .. } => ("join_reply", request_seq),
                    JoinMsg::Ack { request_seq, .. } => ("join_ack", request_seq),
                };
                e.note = Some(kind.into());
                e.ref_seq = Some(seq);
            }
        }
    }
}
