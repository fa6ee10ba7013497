//! Ordered trace records and their NDJSON/CSV renderings.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::network::Iface;
use crate::transport::SynStatus;
use crate::types::{AmType, RubiconAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceKind {
    /// Frame handed to the medium (radio, serial line or whiteboard).
    Send,
    /// Frame taken into a receiver's ingoing buffer.
    Recv,
    DropLoss,
    DropFull,
    DropOff,
    AckOk,
    AckFail,
    Joined,
    MoteJoined,
    Tick,
    SynEmit,
    SynSignal,
    TupleWrite,
    /// Frame accepted into an outgoing buffer.
    Enqueue,
    /// Frame passed island filtering and reached the transport level.
    Deliver,
    Filtered,
    Malformed,
    NoRoute,
    /// An application-level send was refused by the stack.
    SendError,
    ClRecv,
    AckSent,
    LateAck,
    UnknownAck,
    UnknownTransid,
    SynRejected,
    JoinRequest,
    JoinReply,
    JoinIgnored,
    JoinAck,
    JoinFail,
    /// Whiteboard notification handed to a subscriber.
    Notify,
    /// Informational record from a scenario action or application.
    Info,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::Send => "SEND",
            TraceKind::Recv => "RECV",
            TraceKind::DropLoss => "DROP_LOSS",
            TraceKind::DropFull => "DROP_FULL",
            TraceKind::DropOff => "DROP_OFF",
            TraceKind::AckOk => "ACK_OK",
            TraceKind::AckFail => "ACK_FAIL",
            TraceKind::Joined => "JOINED",
            TraceKind::MoteJoined => "MOTE_JOINED",
            TraceKind::Tick => "TICK",
            TraceKind::SynEmit => "SYN_EMIT",
            TraceKind::SynSignal => "SYN_SIGNAL",
            TraceKind::TupleWrite => "TUPLE_WRITE",
            TraceKind::Enqueue => "ENQUEUE",
            TraceKind::Deliver => "DELIVER",
            TraceKind::Filtered => "FILTERED",
            TraceKind::Malformed => "MALFORMED",
            TraceKind::NoRoute => "NO_ROUTE",
            TraceKind::SendError => "SEND_ERROR",
            TraceKind::ClRecv => "CL_RECV",
            TraceKind::AckSent => "ACK_SENT",
            TraceKind::LateAck => "LATE_ACK",
            TraceKind::UnknownAck => "UNKNOWN_ACK",
            TraceKind::UnknownTransid => "UNKNOWN_TRANSID",
            TraceKind::SynRejected => "SYN_REJECTED",
            TraceKind::JoinRequest => "JOIN_REQUEST",
            TraceKind::JoinReply => "JOIN_REPLY",
            TraceKind::JoinIgnored => "JOIN_IGNORED",
            TraceKind::JoinAck => "JOIN_ACK",
            TraceKind::JoinFail => "JOIN_FAIL",
            TraceKind::Notify => "NOTIFY",
            TraceKind::Info => "INFO",
        }
    }
}

/// One trace record. Which optional fields are filled depends on `kind`;
/// FORMATS.md lists them per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_ms: u64,
    pub node: String,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iface: Option<Iface>,
    /// Other end of a hop: receiver for SEND, sender for RECV/DROP_*.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub am: Option<AmType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<RubiconAddress>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<RubiconAddress>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliable: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbytes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appid: Option<u8>,
    /// The acknowledged sequence number carried by an ack frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_seq: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<SynStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TraceEvent {
    pub fn new(time_ms: u64, node: impl Into<String>, kind: TraceKind) -> Self {
        Self {
            time_ms,
            node: node.into(),
            kind,
            iface: None,
            peer: None,
            am: None,
            src: None,
            dst: None,
            seq: None,
            reliable: None,
            nbytes: None,
            appid: None,
            ref_seq: None,
            channel: None,
            status: None,
            key: None,
            data: None,
            note: None,
        }
    }
}

pub const CSV_COLUMNS: [&str; 18] = [
    "time_ms", "node", "kind", "iface", "peer", "am", "src", "dst", "seq", "reliable", "nbytes", "appid", "ref_seq", "channel", "status",
    "key", "data", "note",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn addr(a: &Option<RubiconAddress>) -> String {
    a.map(|a| format!("{}.{}", a.pid, a.devid)).unwrap_or_default()
}

fn iface_str(i: Iface) -> &'static str {
    match i {
        Iface::Radio => "radio",
        Iface::Serial => "serial",
        Iface::Whiteboard => "whiteboard",
    }
}

fn status_str(s: SynStatus) -> &'static str {
    match s {
        SynStatus::New => "new",
        SynStatus::Unchanged => "unchanged",
        SynStatus::Missing => "missing",
    }
}

fn am_str(a: AmType) -> &'static str {
    match a {
        AmType::Network => "NETWORK",
        AmType::Ack => "ACK",
        AmType::Join => "JOIN",
    }
}

/// Full ordered trace of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn at_node<'a>(&'a self, node: &'a str, kind: TraceKind) -> impl Iterator<Item = &'a TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind && e.node == node)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        for e in &self.events {
            out.write_record([
                e.time_ms.to_string(),
                e.node.clone(),
                e.kind.as_str().to_owned(),
                e.iface.map(iface_str).unwrap_or_default().to_owned(),
                e.peer.clone().unwrap_or_default(),
                e.am.map(am_str).unwrap_or_default().to_owned(),
                addr(&e.src),
                addr(&e.dst),
                opt(&e.seq),
                opt(&e.reliable),
                opt(&e.nbytes),
                opt(&e.appid),
                opt(&e.ref_seq),
                opt(&e.channel),
                e.status.map(status_str).unwrap_or_default().to_owned(),
                e.key.clone().unwrap_or_default(),
                e.data.clone().unwrap_or_default(),
                e.note.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_ndjson(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_csv(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut e = TraceEvent::new(500, "m2", TraceKind::Send);
        e.iface = Some(Iface::Radio);
        e.src = Some(RubiconAddress::new(10, 2));
        e.dst = Some(RubiconAddress::sink(10));
        e.seq = Some(3);
        let mut k = TraceEvent::new(600, "bs10", TraceKind::TupleWrite);
        k.key = Some("a,b".into());
        Trace { events: vec![e, k] }
    }

    #[test]
    fn ndjson_round_trips() {
        let t = sample();
        let text = String::from_utf8(t.to_ndjson()).unwrap();
        let back: Vec<TraceEvent> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, t.events);
        assert!(text.starts_with(r#"{"time_ms":500,"node":"m2","kind":"SEND","iface":"radio""#));
    }

    #[test]
    fn csv_has_fixed_columns() {
        let text = String::from_utf8(sample().to_csv()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "500,m2,SEND,radio,,,10.2,10.1,3,,,,,,,,,");
        assert_eq!(lines.next().unwrap(), "600,bs10,TUPLE_WRITE,,,,,,,,,,,,,\"a,b\",,");
    }
}
