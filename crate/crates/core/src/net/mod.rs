//! WebSocket transport: one JSON message per text frame.

mod client;
mod server;

pub use client::{ClientError, WsClient, WsReceiver, WsSender};
pub use server::{serve, serve_on, ServerHandle, ServerOptions};
