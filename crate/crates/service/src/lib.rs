//! Session service: hosts one live smartlet world per session and streams
//! snapshots and event records over a length-prefixed JSON protocol.

pub mod client;
pub mod protocol;
pub mod server;
pub mod session;

pub use client::{Client, ClientError};
pub use server::{Server, ServerConfig, ServerHandle};
pub use session::record_session;
