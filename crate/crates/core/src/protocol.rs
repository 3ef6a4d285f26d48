//! Wire vocabulary between client sessions and the relay.
//!
//! One JSON object per WebSocket text frame, discriminated by `"type"`.
//! Decoding is strict: unknown types, unknown or missing fields, wrong
//! scalar kinds and trailing garbage are all rejected as `BAD_MESSAGE`.
//! Speech payloads travel as standard base-64.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{EffectKind, RoomConfig, UserId};

pub const PROTO_VERSION: u32 = 1;

/// Largest speech payload, after base-64 decoding.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;

/// Frames longer than this are rejected before parsing. Leaves room for a
/// full payload in base-64 plus the envelope.
pub const MAX_FRAME_BYTES: usize = 96 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad message: {reason}")]
pub struct WireError {
    pub reason: String,
}

impl WireError {
    fn new(reason: impl Into<String>) -> Self {
        WireError {
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        proto_version: u32,
        display_name: String,
    },
    JoinRoom {
        room_id: String,
    },
    Move {
        x: f64,
        y: f64,
    },
    Speak {
        seq: u64,
        #[serde(with = "base64_bytes")]
        payload: Vec<u8>,
    },
    EnterChannel {
        channel: i64,
    },
    ExitChannel {},
    Ping {
        nonce: u64,
    },
}

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::Hello { .. } => "HELLO",
            ClientMessage::JoinRoom { .. } => "JOIN_ROOM",
            ClientMessage::Move { .. } => "MOVE",
            ClientMessage::Speak { .. } => "SPEAK",
            ClientMessage::EnterChannel { .. } => "ENTER_CHANNEL",
            ClientMessage::ExitChannel {} => "EXIT_CHANNEL",
            ClientMessage::Ping { .. } => "PING",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfigPayload {
    pub num_channels: u32,
    pub max_users: usize,
    pub hearing_radius: f64,
}

impl From<&RoomConfig> for RoomConfigPayload {
    fn from(c: &RoomConfig) -> Self {
        RoomConfigPayload {
            num_channels: c.num_channels,
            max_users: c.max_users,
            hearing_radius: c.hearing_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub user_id: UserId,
    pub display_name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AckEffect {
    Join,
    Leave,
    Switch,
}

impl From<EffectKind> for AckEffect {
    fn from(k: EffectKind) -> Self {
        match k {
            EffectKind::Join => AckEffect::Join,
            EffectKind::Leave => AckEffect::Leave,
            EffectKind::Switch => AckEffect::Switch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    InvalidChannel,
    NotInChannel,
    RoomFull,
    UnknownRoom,
    BadMessage,
    ProtocolVersion,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::InvalidChannel,
        ErrorCode::NotInChannel,
        ErrorCode::RoomFull,
        ErrorCode::UnknownRoom,
        ErrorCode::BadMessage,
        ErrorCode::ProtocolVersion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidChannel => "INVALID_CHANNEL",
            ErrorCode::NotInChannel => "NOT_IN_CHANNEL",
            ErrorCode::RoomFull => "ROOM_FULL",
            ErrorCode::UnknownRoom => "UNKNOWN_ROOM",
            ErrorCode::BadMessage => "BAD_MESSAGE",
            ErrorCode::ProtocolVersion => "PROTOCOL_VERSION",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Server to client. Only `WELCOME` and `CHANNEL_ACK` have fields that can
/// carry channel information, and both go to the acting session alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ServerMessage {
    Welcome {
        user_id: UserId,
        room_config: Option<RoomConfigPayload>,
    },
    RoomState {
        users: Vec<RosterEntry>,
    },
    UserJoined {
        user_id: UserId,
        display_name: String,
        x: f64,
        y: f64,
    },
    UserLeft {
        user_id: UserId,
    },
    UserMoved {
        user_id: UserId,
        x: f64,
        y: f64,
    },
    Audio {
        speaker_id: UserId,
        seq: u64,
        #[serde(with = "base64_bytes")]
        payload: Vec<u8>,
    },
    ChannelAck {
        channel: Option<u32>,
        effect: AckEffect,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
    Pong {
        nonce: u64,
    },
}

impl ServerMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::Welcome { .. } => "WELCOME",
            ServerMessage::RoomState { .. } => "ROOM_STATE",
            ServerMessage::UserJoined { .. } => "USER_JOINED",
            ServerMessage::UserLeft { .. } => "USER_LEFT",
            ServerMessage::UserMoved { .. } => "USER_MOVED",
            ServerMessage::Audio { .. } => "AUDIO",
            ServerMessage::ChannelAck { .. } => "CHANNEL_ACK",
            ServerMessage::Error { .. } => "ERROR",
            ServerMessage::Pong { .. } => "PONG",
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
        }
    }
}

/// Payload size is the one constraint serde cannot express.
trait Checked {
    fn check(&self) -> Result<(), WireError>;
}

impl Checked for ClientMessage {
    fn check(&self) -> Result<(), WireError> {
        match self {
            ClientMessage::Speak { payload, .. } if payload.len() > MAX_PAYLOAD_BYTES => Err(
                WireError::new(format!("payload of {} bytes exceeds {MAX_PAYLOAD_BYTES}", payload.len())),
            ),
            _ => Ok(()),
        }
    }
}

impl Checked for ServerMessage {
    fn check(&self) -> Result<(), WireError> {
        match self {
            ServerMessage::Audio { payload, .. } if payload.len() > MAX_PAYLOAD_BYTES => Err(
                WireError::new(format!("payload of {} bytes exceeds {MAX_PAYLOAD_BYTES}", payload.len())),
            ),
            _ => Ok(()),
        }
    }
}

/// Serializes one message as a single text frame.
pub fn encode<M: Serialize>(msg: &M) -> String {
    // Message types hold only strings, integers, finite floats and byte
    // vectors, none of which fail to serialize.
    serde_json::to_string(msg).expect("wire messages always serialize")
}

fn decode_checked<M: DeserializeOwned + Checked>(frame: &[u8]) -> Result<M, WireError> {
    if frame.len() > MAX_FRAME_BYTES {
        return Err(WireError::new(format!(
            "frame of {} bytes exceeds {MAX_FRAME_BYTES}",
            frame.len()
        )));
    }
    let msg: M = serde_json::from_slice(frame).map_err(|e| WireError::new(e.to_string()))?;
    msg.check()?;
    Ok(msg)
}

pub fn decode_client(frame: &[u8]) -> Result<ClientMessage, WireError> {
    decode_checked(frame)
}

pub fn decode_server(frame: &[u8]) -> Result<ServerMessage, WireError> {
    decode_checked(frame)
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        STANDARD
            .decode(text.as_bytes())
            .map_err(|e| serde::de::Error::custom(format!("payload is not base-64: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bad(frame: &str) -> WireError {
        decode_client(frame.as_bytes()).unwrap_err()
    }

    #[test]
    fn ping_encodes_minimally() {
        assert_eq!(encode(&ClientMessage::Ping { nonce: 1 }), r#"{"type":"PING","nonce":1}"#);
    }

    #[test]
    fn enter_channel_encoding() {
        assert_eq!(
            encode(&ClientMessage::EnterChannel { channel: 6 }),
            r#"{"type":"ENTER_CHANNEL","channel":6}"#
        );
    }

    #[test]
    fn exit_channel_has_no_fields() {
        assert_eq!(encode(&ClientMessage::ExitChannel {}), r#"{"type":"EXIT_CHANNEL"}"#);
        assert_eq!(
            decode_client(br#"{"type":"EXIT_CHANNEL"}"#).unwrap(),
            ClientMessage::ExitChannel {}
        );
    }

    #[test]
    fn speak_payload_is_base64() {
        let m = ClientMessage::Speak { seq: 4, payload: b"hi".to_vec() };
        assert_eq!(encode(&m), r#"{"type":"SPEAK","seq":4,"payload":"aGk="}"#);
    }

    #[test]
    fn server_messages_use_listed_field_names() {
        let ack = ServerMessage::ChannelAck { channel: Some(3), effect: AckEffect::Join };
        assert_eq!(encode(&ack), r#"{"type":"CHANNEL_ACK","channel":3,"effect":"join"}"#);
        let leave = ServerMessage::ChannelAck { channel: None, effect: AckEffect::Leave };
        assert_eq!(encode(&leave), r#"{"type":"CHANNEL_ACK","channel":null,"effect":"leave"}"#);
        let err = ServerMessage::error(ErrorCode::RoomFull, "room is full");
        assert_eq!(encode(&err), r#"{"type":"ERROR","code":"ROOM_FULL","message":"room is full"}"#);
        let audio = ServerMessage::Audio {
            speaker_id: UserId::new("u1").unwrap(),
            seq: 2,
            payload: b"yo".to_vec(),
        };
        assert_eq!(encode(&audio), r#"{"type":"AUDIO","speaker_id":"u1","seq":2,"payload":"eW8="}"#);
    }

    #[test]
    fn schema_violations_are_rejected() {
        bad(r#"{"type":"ENTER_CHANNEL"}"#);
        bad(r#"{"type":"ENTER_CHANNEL","channel":"6"}"#);
        bad(r#"{"type":"ENTER_CHANNEL","channel":6.5}"#);
        bad(r#"{"type":"ENTER_CHANNEL","channel":6,"extra":1}"#);
        bad(r#"{"type":"EXIT_CHANNEL","channel":3}"#);
        bad(r#"{"type":"SHOUT"}"#);
        bad(r#"{"channel":6}"#);
        bad(r#"{"type":"PING","nonce":1} trailing"#);
        bad(r#"{"type":"PING","nonce":-1}"#);
        bad(r#"{"type":"SPEAK","seq":1,"payload":"***"}"#);
        bad(r#"[1,2,3]"#);
        bad("");
    }

    #[test]
    fn oversize_payload_rejected() {
        let ok = ClientMessage::Speak { seq: 1, payload: vec![7; MAX_PAYLOAD_BYTES] };
        assert_eq!(decode_client(encode(&ok).as_bytes()).unwrap(), ok);
        let big = ClientMessage::Speak { seq: 1, payload: vec![7; MAX_PAYLOAD_BYTES + 1] };
        assert!(decode_client(encode(&big).as_bytes()).unwrap_err().reason.contains("exceeds"));
    }

    #[test]
    fn error_code_strings_are_stable() {
        for code in ErrorCode::ALL {
            assert_eq!(encode(&code), format!("\"{}\"", code.as_str()));
        }
    }

    /// Collects every object key reachable in a JSON value.
    fn keys(v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, child) in m {
                    out.push(k.clone());
                    keys(child, out);
                }
            }
            serde_json::Value::Array(a) => a.iter().for_each(|c| keys(c, out)),
            _ => {}
        }
    }

    #[test]
    fn only_welcome_and_ack_can_carry_channel_data() {
        let u = || UserId::new("u1").unwrap();
        let samples = vec![
            ServerMessage::Welcome { user_id: u(), room_config: Some((&RoomConfig::default()).into()) },
            ServerMessage::RoomState {
                users: vec![RosterEntry { user_id: u(), display_name: "A".into(), x: 0.0, y: 0.0 }],
            },
            ServerMessage::UserJoined { user_id: u(), display_name: "A".into(), x: 0.0, y: 0.0 },
            ServerMessage::UserLeft { user_id: u() },
            ServerMessage::UserMoved { user_id: u(), x: 1.0, y: 2.0 },
            ServerMessage::Audio { speaker_id: u(), seq: 1, payload: vec![] },
            ServerMessage::ChannelAck { channel: Some(1), effect: AckEffect::Join },
            ServerMessage::error(ErrorCode::BadMessage, "x"),
            ServerMessage::Pong { nonce: 0 },
        ];
        for m in samples {
            let mut ks = Vec::new();
            keys(&serde_json::to_value(&m).unwrap(), &mut ks);
            let channelish = ks.iter().any(|k| k.contains("channel") || k.contains("voice"));
            let allowed = matches!(m, ServerMessage::Welcome { .. } | ServerMessage::ChannelAck { .. });
            assert!(!channelish || allowed, "{} exposes {:?}", m.kind(), ks);
        }
    }
}
