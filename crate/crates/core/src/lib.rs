//! Selective voice routing for a shared room.
//!
//! Users in a room hear public speech from anyone within the hearing
//! radius. A user may enter one of the room's numbered private channels:
//! from then on their speech reaches only co-members, while they keep
//! hearing public speech around them. Which channel anyone else is in is
//! never sent to a client.
//!
//! - [`channel`]: the room model and recipient computation.
//! - [`protocol`]: JSON wire messages.
//! - [`relay`]: sessions and per-room executors, without I/O.
//! - [`config`]: server configuration file.
//! - [`net`]: WebSocket server and client.
//! - [`sim`]: scenario runner, audibility oracle, leak scanner, fuzzer.

pub mod channel;
pub mod config;
pub mod net;
pub mod protocol;
pub mod relay;
pub mod sim;

pub use channel::{
    AudioFrame, ChannelId, EffectEvent, EffectKind, Position, RoomConfig, RoomError, RoomState,
    RoomView, UserId, UserRecord, VoiceState,
};
pub use protocol::{ClientMessage, ErrorCode, ServerMessage};
pub use relay::{FaultInjection, Relay, RoomRelay, SessionId};
