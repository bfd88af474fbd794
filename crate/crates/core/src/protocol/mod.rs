//! The check protocol: framing, transports, and the two state machines.

pub mod client;
pub mod server;
pub mod transport;
pub mod wire;

pub use client::{
    request_resource, run_check, CheckOutcome, ClientState, StopCause, DEFAULT_CLIENT_TIMEOUT,
};
pub use server::{
    serve_connection, serve_listener, ServerContext, ServerSession, ServerTuning, SessionError,
    SessionPhase,
};
pub use transport::{loopback_pair, LoopbackEnd, Transport};
pub use wire::{
    read_message, write_message, ProtocolError, ReasonCode, WireMessage, CLIENT_VERSION,
    DEFAULT_MAX_FRAME, DEFAULT_PORT,
};
