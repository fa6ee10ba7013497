//! Addresses, descriptors and identifiers shared by every level of the stack.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Island/whiteboard peer identifier.
pub type Pid = u32;
/// Device identifier within an island.
pub type DevId = u16;

/// devid of the basestation (or PC peer) itself.
pub const BASESTATION_DEVID: DevId = 0;
/// devid every sink answers to inside its own island.
pub const SINK_DEVID: DevId = 1;
/// Island-wide broadcast devid.
pub const BROADCAST_DEVID: DevId = 0xFFFF;
/// pid carried by a mote that has not joined an island yet.
pub const UNASSIGNED_PID: Pid = 0;

/// Two-part `<pid, devid>` address naming any endpoint of the ecology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RubiconAddress {
    pub pid: Pid,
    pub devid: DevId,
}

impl RubiconAddress {
    pub const fn new(pid: Pid, devid: DevId) -> Self {
        Self { pid, devid }
    }

    pub const fn sink(pid: Pid) -> Self {
        Self::new(pid, SINK_DEVID)
    }

    pub const fn basestation(pid: Pid) -> Self {
        Self::new(pid, BASESTATION_DEVID)
    }

    pub const fn broadcast(pid: Pid) -> Self {
        Self::new(pid, BROADCAST_DEVID)
    }

    pub fn is_broadcast(&self) -> bool {
        self.devid == BROADCAST_DEVID
    }
}

impl fmt::Display for RubiconAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.pid, self.devid)
    }
}

/// Capability record a mote hands to the sink when joining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MoteDescriptor {
    pub mote_type: u8,
    pub transducers: u16,
    pub actuators: u8,
}

impl MoteDescriptor {
    pub const ENCODED_LEN: usize = 4;

    pub fn encode(&self) -> [u8; Self::ENCODED_LEN] {
        let t = self.transducers.to_le_bytes();
        [self.mote_type, t[0], t[1], self.actuators]
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < Self::ENCODED_LEN {
            return None;
        }
        Some(Self { mote_type: b[0], transducers: u16::from_le_bytes([b[1], b[2]]), actuators: b[3] })
    }
}

/// Network-level message kind (the Active Message type).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AmType {
    Network = 1,
    Ack = 2,
    Join = 3,
}

impl AmType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Network),
            2 => Some(Self::Ack),
            3 => Some(Self::Join),
            _ => None,
        }
    }
}

/// Transport-level component identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransId {
    Connless = 1,
    SynChannel = 2,
    RubiconAck = 3,
    ComponentMgmt = 4,
}

impl TransId {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Connless),
            2 => Some(Self::SynChannel),
            3 => Some(Self::RubiconAck),
            4 => Some(Self::ComponentMgmt),
            _ => None,
        }
    }
}

/// Application-level component identifier. Open-ended: applications may
/// pick any code outside the reserved ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(pub u8);

impl AppId {
    /// Control layer.
    pub const CL: AppId = AppId(1);
    /// Learning layer.
    pub const LEARNING: AppId = AppId(2);
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AppId::CL => f.write_str("CL"),
            AppId::LEARNING => f.write_str("LEARNING"),
            AppId(other) => write!(f, "{other}"),
        }
    }
}

/// Role a node plays in the island topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Mote,
    Sink,
    Basestation,
}

/// Synaptic value: signed 32-bit fixed point with 16 fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fixed(pub i32);

impl Fixed {
    pub const FRAC_BITS: u32 = 16;
    pub const ZERO: Fixed = Fixed(0);

    pub fn from_f64(v: f64) -> Self {
        let scaled = (v * f64::from(1u32 << Self::FRAC_BITS)).round();
        Fixed(scaled.clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32)
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.0) / f64::from(1u32 << Self::FRAC_BITS)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_equality_needs_both_parts() {
        let a = RubiconAddress::new(7, 3);
        assert_eq!(a, RubiconAddress::new(7, 3));
        assert_ne!(a, RubiconAddress::new(8, 3));
        assert_ne!(a, RubiconAddress::new(7, 4));
        assert!(RubiconAddress::new(7, 3) < RubiconAddress::new(7, 4));
        assert!(RubiconAddress::new(7, 9) < RubiconAddress::new(8, 0));
    }

    #[test]
    fn descriptor_is_four_bytes_le() {
        let d = MoteDescriptor { mote_type: 0x12, transducers: 0xA1B2, actuators: 0x05 };
        assert_eq!(d.encode(), [0x12, 0xB2, 0xA1, 0x05]);
        assert_eq!(MoteDescriptor::decode(&d.encode()), Some(d));
        assert_eq!(MoteDescriptor::decode(&[1, 2, 3]), None);
    }

    #[test]
    fn fixed_point_scale() {
        assert_eq!(Fixed::from_f64(1.0), Fixed(65536));
        assert_eq!(Fixed::from_f64(-0.5), Fixed(-32768));
        assert_eq!(Fixed(98304).to_f64(), 1.5);
    }

    #[test]
    fn codes_round_trip() {
        for am in [AmType::Network, AmType::Ack, AmType::Join] {
            assert_eq!(AmType::from_code(am.code()), Some(am));
        }
        for t in [TransId::Connless, TransId::SynChannel, TransId::RubiconAck, TransId::ComponentMgmt] {
            assert_eq!(TransId::from_code(t.code()), Some(t));
        }
        assert_eq!(AmType::from_code(0), None);
        assert_eq!(TransId::from_code(0xEE), None);
    }
}
