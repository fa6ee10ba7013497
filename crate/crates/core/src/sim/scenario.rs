//! Scenario files: TOML in, a validated [`Scenario`] out.
//!
//! Validation reports every problem it finds, each with the line and
//! column of the offending value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::network::NetworkConfig;
use crate::transport::synaptic::MAX_CHANNEL_SIZE;
use crate::transport::{Modality, TransportConfig};
use crate::types::{AppId, DevId, MoteDescriptor, Pid, RubiconAddress, BASESTATION_DEVID, BROADCAST_DEVID, SINK_DEVID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario:\n{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
pub struct ScenarioError(pub Vec<Diagnostic>);

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, col)
}

// ---- raw TOML shape --------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    link: RawLink,
    #[serde(default)]
    network: Option<Spanned<NetworkConfig>>,
    #[serde(default)]
    transport: Option<Spanned<TransportConfig>>,
    #[serde(default)]
    island: Vec<Spanned<RawIsland>>,
    #[serde(default)]
    peer: Vec<Spanned<RawPeer>>,
    #[serde(default)]
    action: Vec<Spanned<RawAction>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    seed: Option<u64>,
    duration_ms: Option<Spanned<u64>>,
    step_ms: Option<Spanned<u64>>,
    tx_budget: Option<Spanned<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    loss_prob: Option<Spanned<f64>>,
    #[serde(default)]
    delay_ms: u64,
    #[serde(default)]
    serial_delay_ms: u64,
    #[serde(default)]
    whiteboard_delay_ms: u64,
    #[serde(default)]
    jitter_ms: u64,
    range: Option<Spanned<String>>,
    #[serde(default)]
    extra_range: Vec<Spanned<Vec<String>>>,
    #[serde(default)]
    cut: Vec<Spanned<Vec<String>>>,
    #[serde(default)]
    delay: Vec<Spanned<RawDelay>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelay {
    from: String,
    to: String,
    ms: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIsland {
    pid: Spanned<u32>,
    #[serde(default = "yes")]
    basestation: bool,
    #[serde(default)]
    proxy: bool,
    sink_max_in: Option<Spanned<usize>>,
    auto_channel: Option<Spanned<RawAutoChannel>>,
    #[serde(default)]
    mote: Vec<Spanned<RawMote>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAutoChannel {
    #[serde(default = "one")]
    size: usize,
    #[serde(default = "reliable")]
    modality: Modality,
}

fn one() -> usize {
    1
}

fn reliable() -> Modality {
    Modality::Reliable
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDescr {
    #[serde(default, rename = "type")]
    mote_type: u8,
    #[serde(default)]
    transducers: u16,
    #[serde(default)]
    actuators: u8,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMote {
    name: Option<Spanned<String>>,
    devid: Spanned<u16>,
    join_at: Option<Spanned<u64>>,
    #[serde(default)]
    preassigned: bool,
    #[serde(default)]
    descr: RawDescr,
    stream: Option<Spanned<RawStream>>,
    updates_every_ms: Option<Spanned<u64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStream {
    #[serde(default = "one")]
    size: usize,
    #[serde(default = "reliable")]
    modality: Modality,
    time_step_ms: Option<u64>,
    #[serde(default)]
    counter: bool,
    transducer: Option<String>,
    #[serde(default)]
    values: Vec<RawValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValue {
    at: u64,
    #[serde(default)]
    slot: usize,
    value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPeer {
    name: Spanned<String>,
    pid: Spanned<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    at: Spanned<u64>,
    kind: Spanned<String>,
    node: Option<Spanned<String>>,
    to: Option<Spanned<String>>,
    to_pid: Option<u32>,
    to_devid: Option<u16>,
    appid: Option<u8>,
    body: Option<String>,
    body_hex: Option<Spanned<String>>,
    reliable: Option<bool>,
    on: Option<bool>,
    channel: Option<usize>,
    slot: Option<usize>,
    value: Option<f64>,
    ms: Option<Spanned<u64>>,
    key: Option<Spanned<String>>,
    data: Option<String>,
}

// ---- validated model -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeMode {
    /// Nodes hear each other only within their own island.
    Island,
    /// Every radio node hears every other.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub loss_prob: f64,
    pub delay_ms: u64,
    pub serial_delay_ms: u64,
    pub whiteboard_delay_ms: u64,
    /// Upper bound of a constant extra delay drawn once per directed edge.
    pub jitter_ms: u64,
    pub range: RangeMode,
    pub extra_range: Vec<(String, String)>,
    pub cut: Vec<(String, String)>,
    pub delays: Vec<(String, String, u64)>,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            loss_prob: 0.0,
            delay_ms: 0,
            serial_delay_ms: 0,
            whiteboard_delay_ms: 0,
            jitter_ms: 0,
            range: RangeMode::Island,
            extra_range: Vec::new(),
            cut: Vec::new(),
            delays: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub size: usize,
    pub modality: Modality,
    pub time_step_ms: Option<u64>,
    /// Write the emission count into slot 0 before every tick.
    pub counter: bool,
    pub transducer: Option<String>,
    /// `(at_ms, slot, value)`, sorted by time.
    pub values: Vec<(u64, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoteSpec {
    pub name: String,
    pub devid: DevId,
    pub descr: MoteDescriptor,
    pub join_at: Option<u64>,
    /// Starts with its island address and is already listed by the sink.
    pub preassigned: bool,
    pub stream: Option<StreamSpec>,
    pub updates_every_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutoChannel {
    pub size: usize,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandSpec {
    pub pid: Pid,
    pub basestation: bool,
    pub proxy: bool,
    pub sink_max_in: Option<usize>,
    pub auto_channel: Option<AutoChannel>,
    pub motes: Vec<MoteSpec>,
}

impl IslandSpec {
    pub fn sink_name(&self) -> String {
        format!("sink{}", self.pid)
    }

    pub fn basestation_name(&self) -> String {
        format!("bs{}", self.pid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerSpec {
    pub name: String,
    pub pid: Pid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Node(String),
    Addr(RubiconAddress),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Join {
        node: String,
    },
    Leave {
        node: String,
    },
    Send {
        node: String,
        to: Target,
        appid: AppId,
        body: Vec<u8>,
        reliable: bool,
    },
    Radio {
        node: String,
        on: bool,
    },
    Serial {
        node: String,
        on: bool,
    },
    /// Hold arriving frames in the ingoing buffers without processing them.
    Stall {
        node: String,
        on: bool,
    },
    Write {
        node: String,
        channel: usize,
        slot: usize,
        value: f64,
    },
    TimeStep {
        node: String,
        ms: u64,
    },
    StartChannels {
        node: String,
    },
    StopChannels {
        node: String,
    },
    DisposeChannels {
        node: String,
    },
    Publish {
        node: Option<String>,
        key: String,
        data: String,
    },
}

impl Action {
    pub fn node(&self) -> Option<&str> {
        match self {
            Action::Join { node }
            | Action::Leave { node }
            | Action::Send { node, .. }
            | Action::Radio { node, .. }
            | Action::Serial { node, .. }
            | Action::Stall { node, .. }
            | Action::Write { node, .. }
            | Action::TimeStep { node, .. }
            | Action::StartChannels { node }
            | Action::StopChannels { node }
            | Action::DisposeChannels { node } => Some(node),
            Action::Publish { node, .. } => node.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedAction {
    pub at: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    pub duration_ms: Option<u64>,
    pub step_ms: u64,
    pub tx_budget: usize,
    pub link: LinkSpec,
    pub network: NetworkConfig,
    pub transport: TransportConfig,
    pub islands: Vec<IslandSpec>,
    pub peers: Vec<PeerSpec>,
    pub actions: Vec<TimedAction>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::new(),
            seed: None,
            duration_ms: None,
            step_ms: 1,
            tx_budget: 1,
            link: LinkSpec::default(),
            network: NetworkConfig::default(),
            transport: TransportConfig::default(),
            islands: Vec::new(),
            peers: Vec::new(),
            actions: Vec::new(),
        }
    }
}

/// Per-node role as seen by the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Mote,
    Sink,
    Basestation,
    Peer,
}

impl Scenario {
    /// Parse and validate scenario text.
    pub fn parse(src: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| {
            let (line, col) = e.span().map(|s| line_col(src, s.start)).unwrap_or((1, 1));
            ScenarioError(vec![Diagnostic { line, col, message: e.message().trim().to_owned() }])
        })?;
        Validator { src, diags: Vec::new() }.run(raw)
    }

    /// All node names with their kinds, in simulator order: for each
    /// island its sink, basestation and motes; then the peers.
    pub fn nodes(&self) -> Vec<(String, NodeKind)> {
        let mut out = Vec::new();
        for isl in &self.islands {
            out.push((isl.sink_name(), NodeKind::Sink));
            if isl.basestation {
                out.push((isl.basestation_name(), NodeKind::Basestation));
            }
            out.extend(isl.motes.iter().map(|m| (m.name.clone(), NodeKind::Mote)));
        }
        out.extend(self.peers.iter().map(|p| (p.name.clone(), NodeKind::Peer)));
        out
    }

    pub fn find_mote(&self, name: &str) -> Option<(&IslandSpec, &MoteSpec)> {
        self.islands.iter().find_map(|i| i.motes.iter().find(|m| m.name == name).map(|m| (i, m)))
    }
}

struct Validator<'a> {
    src: &'a str,
    diags: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn err(&mut self, span: Range<usize>, message: impl Into<String>) {
        let (line, col) = line_col(self.src, span.start);
        self.diags.push(Diagnostic { line, col, message: message.into() });
    }

    fn run(mut self, raw: RawScenario) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario { name: raw.name.unwrap_or_default(), seed: raw.sim.seed, ..Scenario::default() };

        if let Some(d) = raw.sim.duration_ms {
            if *d.get_ref() == 0 {
                self.err(d.span(), "duration_ms must be positive");
            }
            sc.duration_ms = Some(*d.get_ref());
        }
        if let Some(s) = raw.sim.step_ms {
            if *s.get_ref() == 0 {
                self.err(s.span(), "step_ms must be positive");
            }
            sc.step_ms = (*s.get_ref()).max(1);
        }
        if let Some(b) = raw.sim.tx_budget {
            if *b.get_ref() == 0 {
                self.err(b.span(), "tx_budget must be at least 1");
            }
            sc.tx_budget = (*b.get_ref()).max(1);
        }
        if let Some(n) = raw.network {
            if !n.get_ref().is_valid() {
                self.err(n.span(), "every buffer capacity must be at least 1");
            }
            sc.network = *n.get_ref();
        }
        if let Some(t) = raw.transport {
            let c = *t.get_ref();
            if c.ack_timeout_ms == 0 || c.join_timeout_ms == 0 || c.time_step_ms == 0 || c.join_attempts == 0 {
                self.err(t.span(), "timeouts, time step and join attempts must be positive");
            }
            sc.transport = c;
        }

        let mut names: BTreeMap<String, NodeKind> = BTreeMap::new();
        let mut pids = BTreeSet::new();
        let mut devids = BTreeSet::new();
        for isl in raw.island {
            let span = isl.span();
            let isl = isl.into_inner();
            let pid = *isl.pid.get_ref();
            if pid == 0 {
                self.err(isl.pid.span(), "pid 0 is reserved for motes without an island");
            } else if !pids.insert(pid) {
                self.err(isl.pid.span(), format!("duplicate pid {pid}"));
            }
            if isl.proxy && !isl.basestation {
                self.err(span.clone(), "proxy requires a basestation");
            }
            let mut spec = IslandSpec {
                pid,
                basestation: isl.basestation,
                proxy: isl.proxy,
                sink_max_in: None,
                auto_channel: None,
                motes: Vec::new(),
            };
            if let Some(m) = isl.sink_max_in {
                if *m.get_ref() == 0 {
                    self.err(m.span(), "sink_max_in must be at least 1");
                }
                spec.sink_max_in = Some(*m.get_ref());
            }
            if let Some(a) = isl.auto_channel {
                let size = a.get_ref().size;
                if size == 0 || size > MAX_CHANNEL_SIZE {
                    self.err(a.span(), format!("channel size must be in 1..={MAX_CHANNEL_SIZE}"));
                }
                spec.auto_channel = Some(AutoChannel { size, modality: a.get_ref().modality });
            }
            for (n, kind) in [(spec.sink_name(), NodeKind::Sink), (spec.basestation_name(), NodeKind::Basestation)] {
                if kind == NodeKind::Basestation && !spec.basestation {
                    continue;
                }
                if names.insert(n.clone(), kind).is_some() {
                    self.err(isl.pid.span(), format!("duplicate node name {n}"));
                }
            }
            for m in isl.mote {
                let mspan = m.span();
                let m = m.into_inner();
                let devid = *m.devid.get_ref();
                if [BASESTATION_DEVID, SINK_DEVID, BROADCAST_DEVID].contains(&devid) {
                    self.err(m.devid.span(), format!("devid {devid} is reserved"));
                } else if !devids.insert(devid) {
                    self.err(m.devid.span(), format!("duplicate devid {devid}"));
                }
                let name = match &m.name {
                    Some(n) if n.get_ref().is_empty() => {
                        self.err(n.span(), "name must be nonempty");
                        n.get_ref().clone()
                    }
                    Some(n) => n.get_ref().clone(),
                    None => format!("m{devid}"),
                };
                if names.insert(name.clone(), NodeKind::Mote).is_some() {
                    let span = m.name.as_ref().map_or(mspan.clone(), |n| n.span());
                    self.err(span, format!("duplicate node name {name}"));
                }
                if m.preassigned && m.join_at.is_some() {
                    self.err(mspan.clone(), "a preassigned mote cannot also join");
                }
                let stream = m.stream.map(|s| {
                    let sspan = s.span();
                    let s = s.into_inner();
                    if s.size == 0 || s.size > MAX_CHANNEL_SIZE {
                        self.err(sspan.clone(), format!("stream size must be in 1..={MAX_CHANNEL_SIZE}"));
                    }
                    if s.time_step_ms == Some(0) {
                        self.err(sspan.clone(), "time_step_ms must be positive");
                    }
                    if s.values.iter().any(|v| v.slot >= s.size) {
                        self.err(sspan.clone(), "value slot out of range for the stream size");
                    }
                    if s.values.iter().any(|v| !v.value.is_finite()) {
                        self.err(sspan.clone(), "values must be finite");
                    }
                    if s.values.windows(2).any(|w| w[1].at < w[0].at) {
                        self.err(sspan.clone(), "value times must be nondecreasing");
                    }
                    StreamSpec {
                        size: s.size,
                        modality: s.modality,
                        time_step_ms: s.time_step_ms,
                        counter: s.counter,
                        transducer: s.transducer,
                        values: s.values.iter().map(|v| (v.at, v.slot, v.value)).collect(),
                    }
                });
                if let Some(u) = &m.updates_every_ms {
                    if *u.get_ref() == 0 {
                        self.err(u.span(), "updates_every_ms must be positive");
                    }
                }
                spec.motes.push(MoteSpec {
                    name,
                    devid,
                    descr: MoteDescriptor { mote_type: m.descr.mote_type, transducers: m.descr.transducers, actuators: m.descr.actuators },
                    join_at: m.join_at.map(|j| *j.get_ref()),
                    preassigned: m.preassigned,
                    stream,
                    updates_every_ms: m.updates_every_ms.map(|u| *u.get_ref()),
                });
            }
            sc.islands.push(spec);
        }
        for p in raw.peer {
            let p = p.into_inner();
            let pid = *p.pid.get_ref();
            if pid == 0 {
                self.err(p.pid.span(), "pid 0 is reserved for motes without an island");
            } else if !pids.insert(pid) {
                self.err(p.pid.span(), format!("duplicate pid {pid}"));
            }
            if p.name.get_ref().is_empty() || names.insert(p.name.get_ref().clone(), NodeKind::Peer).is_some() {
                self.err(p.name.span(), format!("bad or duplicate node name {:?}", p.name.get_ref()));
            }
            sc.peers.push(PeerSpec { name: p.name.into_inner(), pid });
        }

        sc.link = self.link(raw.link, &names);
        let mut last_at = 0;
        for a in raw.action {
            let span = a.span();
            let a = a.into_inner();
            let at = *a.at.get_ref();
            if at < last_at {
                self.err(a.at.span(), format!("action time {at} precedes the previous action at {last_at}"));
            }
            last_at = last_at.max(at);
            if let Some(action) = self.action(a, span, &names) {
                sc.actions.push(TimedAction { at, action });
            }
        }

        if self.diags.is_empty() {
            Ok(sc)
        } else {
            Err(ScenarioError(self.diags))
        }
    }

    fn link(&mut self, l: RawLink, names: &BTreeMap<String, NodeKind>) -> LinkSpec {
        let mut spec = LinkSpec {
            delay_ms: l.delay_ms,
            serial_delay_ms: l.serial_delay_ms,
            whiteboard_delay_ms: l.whiteboard_delay_ms,
            jitter_ms: l.jitter_ms,
            ..LinkSpec::default()
        };
        if let Some(p) = l.loss_prob {
            let v = *p.get_ref();
            if !(0.0..=1.0).contains(&v) {
                self.err(p.span(), format!("loss_prob {v} outside [0, 1]"));
            }
            spec.loss_prob = v.clamp(0.0, 1.0);
        }
        if let Some(r) = l.range {
            spec.range = match r.get_ref().as_str() {
                "island" => RangeMode::Island,
                "all" => RangeMode::All,
                other => {
                    self.err(r.span(), format!("range must be \"island\" or \"all\", got {other:?}"));
                    RangeMode::Island
                }
            };
        }
        let radio = |n: &str| matches!(names.get(n), Some(NodeKind::Mote | NodeKind::Sink));
        for (list, out) in [(l.extra_range, &mut spec.extra_range), (l.cut, &mut spec.cut)] {
            for pair in list {
                match pair.get_ref().as_slice() {
                    [a, b] if radio(a) && radio(b) && a != b => out.push((a.clone(), b.clone())),
                    _ => self.err(pair.span(), "expected a pair of distinct mote/sink names"),
                }
            }
        }
        for d in l.delay {
            let (f, t) = (&d.get_ref().from, &d.get_ref().to);
            if !radio(f) || !radio(t) {
                self.err(d.span(), "delay override needs two mote/sink names");
            } else {
                spec.delays.push((f.clone(), t.clone(), d.get_ref().ms));
            }
        }
        spec
    }

    fn action(&mut self, a: RawAction, span: Range<usize>, names: &BTreeMap<String, NodeKind>) -> Option<Action> {
        let kind = a.kind.get_ref().as_str();
        let node_of = |v: &mut Self, allowed: &[NodeKind]| -> Option<String> {
            let Some(n) = &a.node else {
                v.err(span.clone(), format!("action {kind} needs a node"));
                return None;
            };
            match names.get(n.get_ref()) {
                None => {
                    v.err(n.span(), format!("undeclared node {:?}", n.get_ref()));
                    None
                }
                Some(k) if !allowed.contains(k) => {
                    v.err(n.span(), format!("action {kind} is not valid for node {:?}", n.get_ref()));
                    None
                }
                Some(_) => Some(n.get_ref().clone()),
            }
        };
        let need_on = |v: &mut Self| {
            if a.on.is_none() {
                v.err(span.clone(), format!("action {kind} needs on = true|false"));
            }
            a.on.unwrap_or(false)
        };
        use NodeKind::*;
        let all = [Mote, Sink, Basestation, Peer];
        Some(match kind {
            "join" => Action::Join { node: node_of(self, &[Mote])? },
            "leave" => Action::Leave { node: node_of(self, &[Mote])? },
            "radio" => {
                let on = need_on(self);
                Action::Radio { node: node_of(self, &[Mote, Sink])?, on }
            }
            "serial" => {
                let on = need_on(self);
                Action::Serial { node: node_of(self, &[Sink, Basestation])?, on }
            }
            "stall" => {
                let on = need_on(self);
                Action::Stall { node: node_of(self, &all)?, on }
            }
            "start_channels" => Action::StartChannels { node: node_of(self, &all)? },
            "stop_channels" => Action::StopChannels { node: node_of(self, &all)? },
            "dispose_channels" => Action::DisposeChannels { node: node_of(self, &all)? },
            "time_step" => {
                let ms = match &a.ms {
                    Some(m) if *m.get_ref() > 0 => *m.get_ref(),
                    Some(m) => {
                        self.err(m.span(), "ms must be positive");
                        return None;
                    }
                    None => {
                        self.err(span, "time_step needs ms");
                        return None;
                    }
                };
                Action::TimeStep { node: node_of(self, &all)?, ms }
            }
            "write" => {
                let (Some(slot), Some(value)) = (a.slot, a.value) else {
                    self.err(span, "write needs slot and value");
                    return None;
                };
                if !value.is_finite() {
                    self.err(span, "value must be finite");
                    return None;
                }
                Action::Write { node: node_of(self, &[Mote, Sink])?, channel: a.channel.unwrap_or(0), slot, value }
            }
            "publish" => {
                let Some(key) = &a.key else {
                    self.err(span, "publish needs a key");
                    return None;
                };
                if crate::whiteboard::Pattern::parse(key.get_ref()).is_err() || key.get_ref().contains('*') {
                    self.err(key.span(), format!("malformed key {:?}", key.get_ref()));
                    return None;
                }
                let node = if a.node.is_some() { Some(node_of(self, &[Basestation, Peer])?) } else { None };
                Action::Publish { node, key: key.get_ref().clone(), data: a.data.clone().unwrap_or_default() }
            }
            "send" => {
                let node = node_of(self, &all)?;
                let to = match (&a.to, a.to_pid, a.to_devid) {
                    (Some(t), None, None) => {
                        if !names.contains_key(t.get_ref()) {
                            self.err(t.span(), format!("undeclared node {:?}", t.get_ref()));
                            return None;
                        }
                        Target::Node(t.get_ref().clone())
                    }
                    (None, Some(pid), Some(devid)) => Target::Addr(RubiconAddress::new(pid, devid)),
                    _ => {
                        self.err(span, "send needs either to = <node> or both to_pid and to_devid");
                        return None;
                    }
                };
                let body = match (&a.body, &a.body_hex) {
                    (Some(b), None) => b.as_bytes().to_vec(),
                    (None, Some(h)) => match decode_hex(h.get_ref()) {
                        Some(b) => b,
                        None => {
                            self.err(h.span(), "body_hex must be an even number of hex digits");
                            return None;
                        }
                    },
                    (None, None) => Vec::new(),
                    (Some(_), Some(h)) => {
                        self.err(h.span(), "give body or body_hex, not both");
                        return None;
                    }
                };
                Action::Send { node, to, appid: AppId(a.appid.unwrap_or(AppId::CL.0)), body, reliable: a.reliable.unwrap_or(false) }
            }
            other => {
                self.err(a.kind.span(), format!("unknown action kind {other:?}"));
                return None;
            }
        })
    }
}

pub fn decode_hex(s: &str) -> Option<Vec<u8>> {
    let s = s.trim();
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok()).collect()
}

pub fn encode_hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}
