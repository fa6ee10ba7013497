//! Island-based communication layer for robotic ecologies of motes, sinks
//! and PC peers, plus a deterministic simulator to run it at desk scale.
//!
//! The stack has two levels. The [`network`] level queues frames on the
//! radio/serial/whiteboard interfaces and filters traffic between
//! overlapping islands. The [`transport`] level dispatches by TRANSID to
//! connectionless messaging, acknowledgements, synaptic channels and the
//! join protocol. [`whiteboard`] stands in for the shared tuplespace that
//! links islands, and [`sim`] runs whole scenarios over a lossy medium.

pub mod buffer;
pub mod error;
pub mod network;
pub mod sim;
pub mod transport;
pub mod types;
pub mod whiteboard;
pub mod wire;

pub use error::{NetError, ProxyError, TransportError, WhiteboardError, WireError};
pub use network::{NetworkConfig, NetworkLevel, RouteDecision};
pub use transport::{comm_memory, AppEvent, Modality, Stack, SynStatus, TransportConfig};
pub use types::{AmType, AppId, Fixed, MoteDescriptor, Pid, Role, RubiconAddress, TransId};
pub use wire::{decode_frame, encode_frame, Frame};
