//! Bit-exact encodings for every layer of encapsulation.
//!
//! All multi-byte integers are little-endian. The byte-level layouts are
//! documented in `FORMATS.md` at the repository root.

use crate::error::WireError;
use crate::types::{AmType, AppId, DevId, Fixed, MoteDescriptor, Pid, RubiconAddress, TransId};

/// Radio header size.
pub const HEADER_LEN: usize = 8;
/// Largest payload a single frame carries.
pub const MAX_PAYLOAD: usize = 114;
/// Largest serialized frame.
pub const MAX_FRAME: usize = HEADER_LEN + MAX_PAYLOAD;
/// Largest CONNLESS application body: one byte each for TRANSID and APPID.
pub const MAX_APP_BODY: usize = MAX_PAYLOAD - 2;

const FLAG_RELIABLE: u8 = 0x01;

/// A network-level frame.
///
/// The 8-byte radio header only carries the devid halves of the addresses;
/// the pids travel out of band (the simulated link envelope on radio, the
/// serial envelope between sink and basestation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub am_type: AmType,
    pub src: RubiconAddress,
    pub dst: RubiconAddress,
    pub seq: u16,
    pub reliable: bool,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn nbytes(&self) -> usize {
        self.payload.len()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// Header: `am_type(1) dst.devid(2) src.devid(2) seq(2) flags(1)`, where
/// flags bit 0 is the reliable flag and bits 1..=7 hold nbytes.
pub fn encode_frame(f: &Frame) -> Result<Vec<u8>, WireError> {
    if f.payload.len() > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(f.payload.len()));
    }
    let mut out = Vec::with_capacity(f.encoded_len());
    out.push(f.am_type.code());
    out.extend_from_slice(&f.dst.devid.to_le_bytes());
    out.extend_from_slice(&f.src.devid.to_le_bytes());
    out.extend_from_slice(&f.seq.to_le_bytes());
    let flags = ((f.payload.len() as u8) << 1) | if f.reliable { FLAG_RELIABLE } else { 0 };
    out.push(flags);
    out.extend_from_slice(&f.payload);
    Ok(out)
}

/// Inverse of [`encode_frame`]; `src_pid`/`dst_pid` come from whichever
/// envelope carried the bytes.
pub fn decode_frame(b: &[u8], src_pid: Pid, dst_pid: Pid) -> Result<Frame, WireError> {
    if b.len() < HEADER_LEN {
        return Err(WireError::TruncatedFrame { got: b.len(), expected: HEADER_LEN });
    }
    let nbytes = usize::from(b[7] >> 1);
    if b.len() != HEADER_LEN + nbytes {
        return Err(WireError::TruncatedFrame { got: b.len(), expected: HEADER_LEN + nbytes });
    }
    if nbytes > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(nbytes));
    }
    let am_type = AmType::from_code(b[0]).ok_or(WireError::UnknownAmType(b[0]))?;
    let dst_devid = DevId::from_le_bytes([b[1], b[2]]);
    let src_devid = DevId::from_le_bytes([b[3], b[4]]);
    Ok(Frame {
        am_type,
        src: RubiconAddress::new(src_pid, src_devid),
        dst: RubiconAddress::new(dst_pid, dst_devid),
        seq: u16::from_le_bytes([b[5], b[6]]),
        reliable: b[7] & FLAG_RELIABLE != 0,
        payload: b[HEADER_LEN..].to_vec(),
    })
}

/// `TRANSID(1) body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportPdu {
    pub transid: TransId,
    pub body: Vec<u8>,
}

impl TransportPdu {
    pub fn new(transid: TransId, body: Vec<u8>) -> Self {
        Self { transid, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.body.len());
        out.push(self.transid.code());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let (&code, body) = b.split_first().ok_or(WireError::Malformed { what: "transport pdu", len: 0 })?;
        let transid = TransId::from_code(code).ok_or(WireError::UnknownTransId(code))?;
        Ok(Self { transid, body: body.to_vec() })
    }
}

/// `APPID(1) body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppPayload {
    pub appid: AppId,
    pub body: Vec<u8>,
}

impl AppPayload {
    pub fn new(appid: AppId, body: Vec<u8>) -> Self {
        Self { appid, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.body.len());
        out.push(self.appid.0);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let (&code, body) = b.split_first().ok_or(WireError::Malformed { what: "app payload", len: 0 })?;
        Ok(Self { appid: AppId(code), body: body.to_vec() })
    }
}

/// Sink <-> basestation envelope: `island_pid(4) frame`.
///
/// `island_pid` is the far-end island: the destination pid on the way up
/// to the basestation, the source pid on the way down to the sink. The
/// near end is implied by which sink/basestation pair the link joins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerialEnvelope {
    pub island_pid: Pid,
    pub frame: Vec<u8>,
}

impl SerialEnvelope {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.frame.len());
        out.extend_from_slice(&self.island_pid.to_le_bytes());
        out.extend_from_slice(&self.frame);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < 4 + HEADER_LEN {
            return Err(WireError::Malformed { what: "serial envelope", len: b.len() });
        }
        Ok(Self { island_pid: Pid::from_le_bytes([b[0], b[1], b[2], b[3]]), frame: b[4..].to_vec() })
    }
}

/// Whiteboard transit tuple data: `src_pid(4) dst_pid(4) frame`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitEnvelope {
    pub src_pid: Pid,
    pub dst_pid: Pid,
    pub frame: Vec<u8>,
}

impl TransitEnvelope {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.frame.len());
        out.extend_from_slice(&self.src_pid.to_le_bytes());
        out.extend_from_slice(&self.dst_pid.to_le_bytes());
        out.extend_from_slice(&self.frame);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < 8 + HEADER_LEN {
            return Err(WireError::Malformed { what: "transit envelope", len: b.len() });
        }
        Ok(Self {
            src_pid: Pid::from_le_bytes([b[0], b[1], b[2], b[3]]),
            dst_pid: Pid::from_le_bytes([b[4], b[5], b[6], b[7]]),
            frame: b[8..].to_vec(),
        })
    }
}

/// RUBICON_ACK body: `seq(2) appid(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckBody {
    pub seq: u16,
    pub appid: AppId,
}

impl AckBody {
    pub const LEN: usize = 3;

    pub fn encode(&self) -> Vec<u8> {
        let s = self.seq.to_le_bytes();
        vec![s[0], s[1], self.appid.0]
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        if b.len() != Self::LEN {
            return Err(WireError::Malformed { what: "ack", len: b.len() });
        }
        Ok(Self { seq: u16::from_le_bytes([b[0], b[1]]), appid: AppId(b[2]) })
    }
}

/// SYN_CHANNEL body:
/// `channel_id(2) tick_index(4) count(1) count x (pos(1) value(4))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynPdu {
    pub channel_id: u16,
    pub tick_index: u32,
    pub entries: Vec<(u8, Fixed)>,
}

impl SynPdu {
    pub const FIXED_LEN: usize = 7;
    pub const ENTRY_LEN: usize = 5;

    pub fn encoded_len(entries: usize) -> usize {
        Self::FIXED_LEN + entries * Self::ENTRY_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.entries.len()));
        out.extend_from_slice(&self.channel_id.to_le_bytes());
        out.extend_from_slice(&self.tick_index.to_le_bytes());
        out.push(self.entries.len() as u8);
        for (pos, value) in &self.entries {
            out.push(*pos);
            out.extend_from_slice(&value.0.to_le_bytes());
        }
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let bad = || WireError::Malformed { what: "synaptic pdu", len: b.len() };
        if b.len() < Self::FIXED_LEN {
            return Err(bad());
        }
        let count = usize::from(b[6]);
        if b.len() != Self::encoded_len(count) {
            return Err(bad());
        }
        let entries = b[Self::FIXED_LEN..]
            .chunks_exact(Self::ENTRY_LEN)
            .map(|c| (c[0], Fixed(i32::from_le_bytes([c[1], c[2], c[3], c[4]]))))
            .collect();
        Ok(Self { channel_id: u16::from_le_bytes([b[0], b[1]]), tick_index: u32::from_le_bytes([b[2], b[3], b[4], b[5]]), entries })
    }
}

/// COMPONENT_MGMT bodies carried in JOIN frames. First byte is the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinMsg {
    /// `1 request_seq(2) descriptor(4)`
    Request { request_seq: u16, descr: MoteDescriptor },
    /// `2 request_seq(2) island_pid(4) devid(2) island_time(4)`
    Reply { request_seq: u16, island_pid: Pid, devid: DevId, island_time: u32 },
    /// `3 request_seq(2) island_pid(4)`
    Ack { request_seq: u16, island_pid: Pid },
}

impl JoinMsg {
    const REQUEST: u8 = 1;
    const REPLY: u8 = 2;
    const ACK: u8 = 3;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13);
        match *self {
            JoinMsg::Request { request_seq, descr } => {
                out.push(Self::REQUEST);
                out.extend_from_slice(&request_seq.to_le_bytes());
                out.extend_from_slice(&descr.encode());
            }
            JoinMsg::Reply { request_seq, island_pid, devid, island_time } => {
                out.push(Self::REPLY);
                out.extend_from_slice(&request_seq.to_le_bytes());
                out.extend_from_slice(&island_pid.to_le_bytes());
                out.extend_from_slice(&devid.to_le_bytes());
                out.extend_from_slice(&island_time.to_le_bytes());
            }
            JoinMsg::Ack { request_seq, island_pid } => {
                out.push(Self::ACK);
                out.extend_from_slice(&request_seq.to_le_bytes());
                out.extend_from_slice(&island_pid.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let bad = || WireError::Malformed { what: "join", len: b.len() };
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        match (b.first().copied(), b.len()) {
            (Some(Self::REQUEST), 7) => {
                Ok(JoinMsg::Request { request_seq: u16_at(1), descr: MoteDescriptor::decode(&b[3..]).ok_or_else(bad)? })
            }
            (Some(Self::REPLY), 13) => {
                Ok(JoinMsg::Reply { request_seq: u16_at(1), island_pid: u32_at(3), devid: u16_at(7), island_time: u32_at(9) })
            }
            (Some(Self::ACK), 7) => Ok(JoinMsg::Ack { request_seq: u16_at(1), island_pid: u32_at(3) }),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(payload: Vec<u8>) -> Frame {
        Frame { am_type: AmType::Network, src: RubiconAddress::new(0, 0), dst: RubiconAddress::new(0, 0), seq: 0, reliable: false, payload }
    }

    #[test]
    fn zero_frame_is_header_only() {
        let b = encode_frame(&frame(vec![])).unwrap();
        assert_eq!(b, vec![AmType::Network.code(), 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn full_payload_is_122_bytes() {
        let b = encode_frame(&frame(vec![0xAB; 114])).unwrap();
        assert_eq!(b.len(), 122);
        assert_eq!(encode_frame(&frame(vec![0; 115])), Err(WireError::PayloadTooLarge(115)));
    }

    #[test]
    fn worked_example_bytes() {
        // Same example as FORMATS.md.
        let f = Frame {
            am_type: AmType::Network,
            src: RubiconAddress::new(10, 5),
            dst: RubiconAddress::new(10, 1),
            seq: 0x0102,
            reliable: true,
            payload: vec![0x01, 0x01, 0x2A],
        };
        let b = encode_frame(&f).unwrap();
        assert_eq!(b, vec![0x01, 0x01, 0x00, 0x05, 0x00, 0x02, 0x01, 0x07, 0x01, 0x01, 0x2A]);
        assert_eq!(decode_frame(&b, 10, 10).unwrap(), f);
    }

    #[test]
    fn truncation_is_detected() {
        assert!(matches!(decode_frame(&[], 0, 0), Err(WireError::TruncatedFrame { got: 0, .. })));
        let mut b = encode_frame(&frame(vec![1, 2, 3, 4, 5])).unwrap();
        b.truncate(HEADER_LEN + 3);
        assert_eq!(decode_frame(&b, 0, 0), Err(WireError::TruncatedFrame { got: 11, expected: 13 }));
    }

    #[test]
    fn unknown_am_type() {
        let mut b = encode_frame(&frame(vec![])).unwrap();
        b[0] = 0x7F;
        assert_eq!(decode_frame(&b, 0, 0), Err(WireError::UnknownAmType(0x7F)));
    }

    #[test]
    fn transport_pdu_unknown_transid() {
        assert_eq!(TransportPdu::decode(&[0xEE, 1]), Err(WireError::UnknownTransId(0xEE)));
        assert!(TransportPdu::decode(&[]).is_err());
    }

    #[test]
    fn ack_body_layout() {
        let b = AckBody { seq: 7, appid: AppId::CL }.encode();
        assert_eq!(b, vec![7, 0, AppId::CL.0]);
    }

    #[test]
    fn max_syn_pdu_fits_frame() {
        // TRANSID + APPID + body for the largest permitted channel.
        let n = crate::transport::synaptic::MAX_CHANNEL_SIZE;
        assert!(2 + SynPdu::encoded_len(n) <= MAX_PAYLOAD);
        assert!(2 + SynPdu::encoded_len(n + 1) > MAX_PAYLOAD);
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (
            prop_oneof![Just(AmType::Network), Just(AmType::Ack), Just(AmType::Join)],
            any::<(u32, u16, u32, u16, u16, bool)>(),
            proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD),
        )
            .prop_map(|(am_type, (sp, sd, dp, dd, seq, reliable), payload)| Frame {
                am_type,
                src: RubiconAddress::new(sp, sd),
                dst: RubiconAddress::new(dp, dd),
                seq,
                reliable,
                payload,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn frame_round_trip(f in arb_frame()) {
            let b = encode_frame(&f).unwrap();
            prop_assert_eq!(b.len(), HEADER_LEN + f.nbytes());
            prop_assert!(b.len() <= MAX_FRAME);
            prop_assert_eq!(decode_frame(&b, f.src.pid, f.dst.pid).unwrap(), f);
        }

        #[test]
        fn layered_payloads_round_trip(
            code in 1u8..=4,
            appid in any::<u8>(),
            body in proptest::collection::vec(any::<u8>(), 0..=MAX_APP_BODY),
            descr in any::<(u8, u16, u8)>(),
        ) {
            let pdu = TransportPdu::new(TransId::from_code(code).unwrap(), body.clone());
            prop_assert_eq!(TransportPdu::decode(&pdu.encode()).unwrap(), pdu);
            let app = AppPayload::new(AppId(appid), body);
            prop_assert_eq!(AppPayload::decode(&app.encode()).unwrap(), app);
            let d = MoteDescriptor { mote_type: descr.0, transducers: descr.1, actuators: descr.2 };
            prop_assert_eq!(MoteDescriptor::decode(&d.encode()), Some(d));
        }

        #[test]
        fn control_bodies_round_trip(seq in any::<u16>(), pid in any::<u32>(), devid in any::<u16>(), t in any::<u32>(),
                                     entries in proptest::collection::vec((any::<u8>(), any::<i32>()), 0..=21)) {
            for m in [
                JoinMsg::Request { request_seq: seq, descr: MoteDescriptor { mote_type: 1, transducers: devid, actuators: 2 } },
                JoinMsg::Reply { request_seq: seq, island_pid: pid, devid, island_time: t },
                JoinMsg::Ack { request_seq: seq, island_pid: pid },
            ] {
                prop_assert_eq!(JoinMsg::decode(&m.encode()).unwrap(), m);
            }
            let syn = SynPdu { channel_id: devid, tick_index: t, entries: entries.into_iter().map(|(p, v)| (p, Fixed(v))).collect() };
            prop_assert_eq!(SynPdu::decode(&syn.encode()).unwrap(), syn);
        }
    }
}
