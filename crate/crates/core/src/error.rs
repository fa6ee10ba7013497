use thiserror::Error;

use crate::types::RubiconAddress;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the 114-byte frame payload")]
    PayloadTooLarge(usize),
    #[error("truncated frame: {got} bytes, expected {expected}")]
    TruncatedFrame { got: usize, expected: usize },
    #[error("unknown AM type code {0:#04x}")]
    UnknownAmType(u8),
    #[error("unknown TRANSID code {0:#04x}")]
    UnknownTransId(u8),
    #[error("malformed {what} body ({len} bytes)")]
    Malformed { what: &'static str, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("outgoing buffer full")]
    BufferFull,
    #[error("interface is off")]
    InterfaceOff,
    #[error("no route to {0}")]
    NoRoute(RubiconAddress),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("sequence number {0} already has a pending reliable message")]
    DuplicatePending(u16),
    #[error("channel table full")]
    ChannelTableFull,
    #[error("invalid channel size {0}")]
    InvalidSize(usize),
    #[error("unknown synaptic channel {0}")]
    UnknownChannel(u16),
    #[error("position {pos} out of range for channel of size {size}")]
    PositionOutOfRange { pos: usize, size: usize },
    #[error("operation not valid for the channel direction")]
    WrongDirection,
    #[error("clock period must be positive")]
    InvalidPeriod,
    #[error("join not allowed in the current phase")]
    JoinBusy,
    #[error("operation requires role {0}")]
    WrongRole(&'static str),
}

impl From<WireError> for TransportError {
    fn from(e: WireError) -> Self {
        TransportError::Net(NetError::Wire(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WhiteboardError {
    #[error("tuple key must be nonempty")]
    EmptyKey,
    #[error("malformed key pattern {0:?}")]
    BadPattern(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProxyError {
    #[error("no converter installed for message code {0}")]
    NoConverter(u8),
    #[error("cannot decode message code {code}: {reason}")]
    Decode { code: u8, reason: String },
    #[error("cannot encode {name} from {text:?}")]
    Encode { name: &'static str, text: String },
}
