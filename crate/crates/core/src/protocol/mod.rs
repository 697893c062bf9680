//! Lock-step message protocol between the engine and a simulator.

pub mod codec;
pub mod endpoint;
pub mod message;
pub mod session;
pub mod transport;

pub use codec::{decode, encode, DecodeError};
pub use endpoint::{parse_endpoints, parse_timeout, timeout_from_env, ConfigError, Endpoint, DEFAULT_TIMEOUT, TIMEOUT_ENV};
pub use message::{
    Message, MessageKind, ObserveRequest, SampleRequest, ERROR_CODE_ABORTED, ERROR_CODE_PROTOCOL,
};
pub use session::{
    transport_roundtrip, Connection, Direction, ProtocolError, Role, SessionValidator, Violation,
};
pub use transport::{Listener, MemoryTransport, StreamTransport, Transport, TransportError, MAX_FRAME_LEN};
