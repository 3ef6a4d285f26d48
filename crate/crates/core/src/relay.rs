//! The authoritative relay, without I/O.
//!
//! [`Session`] tracks one connection's handshake state and malformed-frame
//! streak. [`RoomRelay`] is the single ordered executor for one room: every
//! command for that room is applied here, one at a time, and turned into
//! addressed frames. [`Relay`] glues sessions and rooms together for
//! single-threaded drivers (the simulation harness, tests); the network
//! server in [`crate::net`] runs the same pieces with one task per room.

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::channel::{
    ChannelId, ConfigError, Position, RoomConfig, RoomError, RoomState, UserId, VoiceState,
};
use crate::protocol::{
    decode_client, encode, AckEffect, ClientMessage, ErrorCode, RosterEntry, ServerMessage,
    PROTO_VERSION,
};

/// Position broadcasts are capped at 20 per second per user.
pub const MOVE_BROADCAST_INTERVAL_MS: u64 = 50;

/// Consecutive malformed frames after which a session is dropped.
pub const BAD_MESSAGE_FLOOD: u32 = 10;

const ROUTING_SAMPLE_CAP: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SessionId(pub u64);

/// One text frame addressed to one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: SessionId,
    pub frame: String,
}

impl Outbound {
    fn new(to: SessionId, msg: &ServerMessage) -> Self {
        Outbound {
            to,
            frame: encode(msg),
        }
    }
}

/// Deliberate faults for exercising the audit suite. All off by default;
/// a production server never sets them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultInjection {
    /// Private speech only reaches co-members within the hearing radius.
    pub proximity_gated_private_speech: bool,
    /// CHANNEL_ACK goes to every room member instead of the actor.
    pub broadcast_channel_ack: bool,
    /// ROOM_STATE entries gain a `channel` field.
    pub channel_field_in_room_state: bool,
}

/// One line of the structured event log. Carries no channel numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEvent {
    pub time: u64,
    pub room: String,
    pub op: &'static str,
    pub actor: String,
    pub outcome: String,
}

#[derive(Debug, Clone, Default)]
pub struct RoutingStats {
    samples: VecDeque<Duration>,
}

impl RoutingStats {
    fn record(&mut self, d: Duration) {
        if self.samples.len() == ROUTING_SAMPLE_CAP {
            self.samples.pop_front();
        }
        self.samples.push_back(d);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn median(&self) -> Option<Duration> {
        if self.samples.is_empty() {
            return None;
        }
        let mut sorted: Vec<Duration> = self.samples.iter().copied().collect();
        sorted.sort_unstable();
        Some(sorted[sorted.len() / 2])
    }

    pub fn merge(&mut self, other: &RoutingStats) {
        for &d in &other.samples {
            self.record(d);
        }
    }
}

fn error_code(e: &RoomError) -> ErrorCode {
    match e {
        RoomError::RoomFull { .. } => ErrorCode::RoomFull,
        RoomError::InvalidChannel { .. } => ErrorCode::InvalidChannel,
        RoomError::NotInChannel(_) => ErrorCode::NotInChannel,
        RoomError::UnknownUser(_) | RoomError::DuplicateUser(_) | RoomError::NonFiniteCoordinate => {
            ErrorCode::BadMessage
        }
    }
}

#[derive(Debug, Clone, Default)]
struct MoveGate {
    last_broadcast: Option<u64>,
    pending: bool,
}

/// Single ordered executor for one room.
#[derive(Debug)]
pub struct RoomRelay {
    room_id: String,
    state: RoomState,
    by_session: BTreeMap<SessionId, UserId>,
    by_user: BTreeMap<UserId, SessionId>,
    last_seq: BTreeMap<UserId, u64>,
    moves: BTreeMap<UserId, MoveGate>,
    faults: FaultInjection,
    events: Vec<LogEvent>,
    routing: RoutingStats,
}

impl RoomRelay {
    pub fn new(
        room_id: impl Into<String>,
        config: RoomConfig,
        faults: FaultInjection,
    ) -> Result<Self, ConfigError> {
        Ok(RoomRelay {
            room_id: room_id.into(),
            state: RoomState::new(config)?,
            by_session: BTreeMap::new(),
            by_user: BTreeMap::new(),
            last_seq: BTreeMap::new(),
            moves: BTreeMap::new(),
            faults,
            events: Vec::new(),
            routing: RoutingStats::default(),
        })
    }

    pub fn room_id(&self) -> &str {
        &self.room_id
    }

    pub fn state(&self) -> &RoomState {
        &self.state
    }

    pub fn session_of(&self, user: &UserId) -> Option<SessionId> {
        self.by_user.get(user).copied()
    }

    pub fn user_of(&self, session: SessionId) -> Option<&UserId> {
        self.by_session.get(&session)
    }

    pub fn routing_stats(&self) -> &RoutingStats {
        &self.routing
    }

    pub fn drain_events(&mut self) -> Vec<LogEvent> {
        std::mem::take(&mut self.events)
    }

    fn log(&mut self, now: u64, op: &'static str, actor: &UserId, outcome: Result<(), ErrorCode>) {
        self.events.push(LogEvent {
            time: now,
            room: self.room_id.clone(),
            op,
            actor: actor.to_string(),
            outcome: match outcome {
                Ok(()) => "ok".to_owned(),
                Err(code) => code.as_str().to_owned(),
            },
        });
    }

    fn to_all(&self, msg: &ServerMessage) -> Vec<Outbound> {
        let frame = encode(msg);
        self.by_session
            .keys()
            .map(|&to| Outbound {
                to,
                frame: frame.clone(),
            })
            .collect()
    }

    fn to_others(&self, except: SessionId, msg: &ServerMessage) -> Vec<Outbound> {
        let frame = encode(msg);
        self.by_session
            .keys()
            .filter(|&&s| s != except)
            .map(|&to| Outbound {
                to,
                frame: frame.clone(),
            })
            .collect()
    }

    fn room_state_frame(&self) -> String {
        let users = self
            .state
            .users()
            .map(|u| RosterEntry {
                user_id: u.id().clone(),
                display_name: u.display_name().to_owned(),
                x: u.position().x,
                y: u.position().y,
            })
            .collect();
        let msg = ServerMessage::RoomState { users };
        if !self.faults.channel_field_in_room_state {
            return encode(&msg);
        }
        let mut value = serde_json::to_value(&msg).expect("ROOM_STATE serializes");
        if let Some(entries) = value.get_mut("users").and_then(|u| u.as_array_mut()) {
            for (entry, user) in entries.iter_mut().zip(self.state.users()) {
                entry["channel"] = serde_json::json!(user.voice_state().channel().map(ChannelId::get));
            }
        }
        value.to_string()
    }

    /// Admits a session's user. On failure the returned error frame is for
    /// the joining session only.
    pub fn join(
        &mut self,
        session: SessionId,
        user: UserId,
        display_name: &str,
        now: u64,
    ) -> Result<Vec<Outbound>, Outbound> {
        if self.by_session.contains_key(&session) {
            return Err(Outbound::new(
                session,
                &ServerMessage::error(ErrorCode::BadMessage, "already in this room"),
            ));
        }
        if let Err(e) = self.state.insert_user(user.clone(), display_name) {
            let code = error_code(&e);
            self.log(now, "join", &user, Err(code));
            return Err(Outbound::new(session, &ServerMessage::error(code, e.to_string())));
        }
        self.by_session.insert(session, user.clone());
        self.by_user.insert(user.clone(), session);
        self.log(now, "join", &user, Ok(()));

        let record = self.state.user(&user).expect("just inserted");
        let joined = ServerMessage::UserJoined {
            user_id: user.clone(),
            display_name: record.display_name().to_owned(),
            x: record.position().x,
            y: record.position().y,
        };
        let welcome = ServerMessage::Welcome {
            user_id: user,
            room_config: Some(self.state.config().into()),
        };
        let mut out = vec![
            Outbound::new(session, &welcome),
            Outbound {
                to: session,
                frame: self.room_state_frame(),
            },
        ];
        out.extend(self.to_others(session, &joined));
        Ok(out)
    }

    /// Removes the session's user. Any channel membership dissolves silently.
    pub fn leave(&mut self, session: SessionId, now: u64) -> Vec<Outbound> {
        let Some(user) = self.by_session.remove(&session) else {
            return Vec::new();
        };
        self.by_user.remove(&user);
        self.last_seq.remove(&user);
        self.moves.remove(&user);
        let _ = self.state.remove_user(&user);
        self.log(now, "leave", &user, Ok(()));
        self.to_all(&ServerMessage::UserLeft { user_id: user })
    }

    /// Applies one in-room command from `session`.
    pub fn command(&mut self, session: SessionId, msg: ClientMessage, now: u64) -> Vec<Outbound> {
        let Some(user) = self.by_session.get(&session).cloned() else {
            return vec![Outbound::new(
                session,
                &ServerMessage::error(ErrorCode::BadMessage, "JOIN_ROOM required first"),
            )];
        };
        let fail = |code: ErrorCode, why: String| vec![Outbound::new(session, &ServerMessage::error(code, why))];
        match msg {
            ClientMessage::Ping { nonce } => vec![Outbound::new(session, &ServerMessage::Pong { nonce })],
            ClientMessage::Hello { .. } | ClientMessage::JoinRoom { .. } => {
                fail(ErrorCode::BadMessage, format!("{} not allowed inside a room", msg.kind()))
            }
            ClientMessage::Move { x, y } => self.apply_move(session, user, x, y, now),
            ClientMessage::Speak { seq, payload } => {
                if let Some(&last) = self.last_seq.get(&user) {
                    if seq <= last {
                        return fail(ErrorCode::BadMessage, format!("seq {seq} does not follow {last}"));
                    }
                }
                self.last_seq.insert(user.clone(), seq);
                self.route_audio(&user, seq, payload)
            }
            ClientMessage::EnterChannel { channel } => {
                let result = match ChannelId::new(channel) {
                    Some(c) => self.state.enter_channel(&user, c),
                    None => Err(RoomError::InvalidChannel {
                        requested: channel,
                        available: self.state.config().num_channels,
                    }),
                };
                self.channel_reply(session, &user, "enter_channel", result, now)
            }
            ClientMessage::ExitChannel {} => {
                let result = self.state.exit_channel(&user);
                self.channel_reply(session, &user, "exit_channel", result, now)
            }
        }
    }

    fn channel_reply(
        &mut self,
        session: SessionId,
        user: &UserId,
        op: &'static str,
        result: Result<crate::channel::EffectEvent, RoomError>,
        now: u64,
    ) -> Vec<Outbound> {
        match result {
            Ok(effect) => {
                self.log(now, op, user, Ok(()));
                let ack = ServerMessage::ChannelAck {
                    channel: effect.channel.map(ChannelId::get),
                    effect: AckEffect::from(effect.kind),
                };
                if self.faults.broadcast_channel_ack {
                    self.to_all(&ack)
                } else {
                    vec![Outbound::new(session, &ack)]
                }
            }
            Err(e) => {
                let code = error_code(&e);
                self.log(now, op, user, Err(code));
                vec![Outbound::new(session, &ServerMessage::error(code, e.to_string()))]
            }
        }
    }

    fn apply_move(&mut self, session: SessionId, user: UserId, x: f64, y: f64, now: u64) -> Vec<Outbound> {
        if let Err(e) = self.state.move_user(&user, Position { x, y }) {
            let code = error_code(&e);
            self.log(now, "move", &user, Err(code));
            return vec![Outbound::new(session, &ServerMessage::error(code, e.to_string()))];
        }
        self.log(now, "move", &user, Ok(()));
        let moved = ServerMessage::UserMoved { user_id: user.clone(), x, y };
        let gate = self.moves.entry(user).or_default();
        let open = gate
            .last_broadcast
            .is_none_or(|last| now.saturating_sub(last) >= MOVE_BROADCAST_INTERVAL_MS);
        if open {
            gate.last_broadcast = Some(now);
            gate.pending = false;
            self.to_all(&moved)
        } else {
            // Others get the latest position when the window reopens.
            gate.pending = true;
            vec![Outbound::new(session, &moved)]
        }
    }

    fn route_audio(&mut self, speaker: &UserId, seq: u64, payload: Vec<u8>) -> Vec<Outbound> {
        let started = Instant::now();
        let mut recipients = self
            .state
            .compute_recipients(speaker)
            .expect("speaker is a room member");
        if self.faults.proximity_gated_private_speech {
            if let Some(source) = self.state.user(speaker) {
                if let VoiceState::Private(_) = source.voice_state() {
                    let radius = self.state.config().hearing_radius;
                    recipients.retain(|u| {
                        self.state
                            .user(u)
                            .is_some_and(|r| r.position().distance_to(&source.position()) <= radius)
                    });
                }
            }
        }
        let targets: Vec<SessionId> = recipients
            .iter()
            .filter_map(|u| self.by_user.get(u).copied())
            .collect();
        self.routing.record(started.elapsed());

        let frame = encode(&ServerMessage::Audio {
            speaker_id: speaker.clone(),
            seq,
            payload,
        });
        targets
            .into_iter()
            .map(|to| Outbound {
                to,
                frame: frame.clone(),
            })
            .collect()
    }

    /// Earliest time at which [`RoomRelay::tick`] has coalesced moves to flush.
    pub fn next_deadline(&self) -> Option<u64> {
        self.moves
            .values()
            .filter(|g| g.pending)
            .filter_map(|g| g.last_broadcast)
            .map(|t| t + MOVE_BROADCAST_INTERVAL_MS)
            .min()
    }

    /// Flushes coalesced position updates whose rate window has reopened.
    pub fn tick(&mut self, now: u64) -> Vec<Outbound> {
        let due: Vec<UserId> = self
            .moves
            .iter()
            .filter(|(_, g)| {
                g.pending
                    && g.last_broadcast
                        .is_none_or(|t| now.saturating_sub(t) >= MOVE_BROADCAST_INTERVAL_MS)
            })
            .map(|(u, _)| u.clone())
            .collect();
        let mut out = Vec::new();
        for user in due {
            let (Some(record), Some(&session)) = (self.state.user(&user), self.by_user.get(&user)) else {
                continue;
            };
            let moved = ServerMessage::UserMoved {
                user_id: user.clone(),
                x: record.position().x,
                y: record.position().y,
            };
            out.extend(self.to_others(session, &moved));
            let gate = self.moves.get_mut(&user).expect("due gate exists");
            gate.pending = false;
            gate.last_broadcast = Some(now);
        }
        out
    }
}

/// What the transport should do with a frame a session just sent.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionAction {
    /// Answer the session directly.
    Reply(ServerMessage),
    /// Answer, then close the connection.
    Close(ServerMessage),
    /// Hand to the registry: admit this session to a room.
    Join { room_id: String },
    /// Hand to the session's room executor.
    Room(ClientMessage),
}

#[derive(Debug, Clone)]
pub struct Session {
    id: SessionId,
    user: Option<UserId>,
    display_name: String,
    room: Option<String>,
    bad_streak: u32,
    last_seen: u64,
}

impl Session {
    pub fn new(id: SessionId, now: u64) -> Self {
        Session {
            id,
            user: None,
            display_name: String::new(),
            room: None,
            bad_streak: 0,
            last_seen: now,
        }
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn user(&self) -> Option<&UserId> {
        self.user.as_ref()
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn room(&self) -> Option<&str> {
        self.room.as_deref()
    }

    pub fn last_seen(&self) -> u64 {
        self.last_seen
    }

    /// Records a successful room admission.
    pub fn joined(&mut self, room_id: &str) {
        self.room = Some(room_id.to_owned());
    }

    fn bad(&mut self, reason: impl Into<String>) -> SessionAction {
        self.bad_streak += 1;
        let msg = ServerMessage::error(ErrorCode::BadMessage, reason);
        if self.bad_streak >= BAD_MESSAGE_FLOOD {
            SessionAction::Close(msg)
        } else {
            SessionAction::Reply(msg)
        }
    }

    pub fn on_frame(
        &mut self,
        frame: &[u8],
        now: u64,
        assign_id: impl FnOnce() -> UserId,
    ) -> SessionAction {
        self.last_seen = now;
        match decode_client(frame) {
            Ok(msg) => self.on_message(msg, now, assign_id),
            Err(e) => self.bad(e.reason),
        }
    }

    pub fn on_message(
        &mut self,
        msg: ClientMessage,
        now: u64,
        assign_id: impl FnOnce() -> UserId,
    ) -> SessionAction {
        self.last_seen = now;
        let action = match (&msg, &self.user, &self.room) {
            (ClientMessage::Ping { nonce }, _, None) => {
                SessionAction::Reply(ServerMessage::Pong { nonce: *nonce })
            }
            (ClientMessage::Hello { proto_version, display_name }, None, _) => {
                if *proto_version != PROTO_VERSION {
                    return SessionAction::Close(ServerMessage::error(
                        ErrorCode::ProtocolVersion,
                        format!("server speaks protocol {PROTO_VERSION}, client sent {proto_version}"),
                    ));
                }
                let len = display_name.chars().count();
                if len == 0 || len > 64 {
                    return self.bad("display_name must be 1..=64 characters");
                }
                let id = assign_id();
                self.user = Some(id.clone());
                self.display_name = display_name.clone();
                SessionAction::Reply(ServerMessage::Welcome {
                    user_id: id,
                    room_config: None,
                })
            }
            (ClientMessage::Hello { .. }, Some(_), _) => return self.bad("HELLO already completed"),
            (_, None, _) => return self.bad(format!("HELLO required before {}", msg.kind())),
            (ClientMessage::JoinRoom { room_id }, Some(_), None) => SessionAction::Join {
                room_id: room_id.clone(),
            },
            (ClientMessage::JoinRoom { .. }, Some(_), Some(_)) => return self.bad("already in a room"),
            (_, Some(_), None) => return self.bad(format!("JOIN_ROOM required before {}", msg.kind())),
            (_, Some(_), Some(_)) => SessionAction::Room(msg),
        };
        self.bad_streak = 0;
        action
    }
}

/// Result of feeding one frame to a [`Relay`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dispatch {
    pub out: Vec<Outbound>,
    /// The sender's connection has been closed by the server. Its departure
    /// is already reflected in `out`.
    pub closed: bool,
}

/// Sessions plus a registry of statically configured rooms, driven by a
/// single thread.
#[derive(Debug)]
pub struct Relay {
    sessions: BTreeMap<SessionId, Session>,
    rooms: BTreeMap<String, RoomRelay>,
    next_session: u64,
    next_user: u64,
}

impl Relay {
    pub fn new(
        rooms: impl IntoIterator<Item = (String, RoomConfig)>,
        faults: FaultInjection,
    ) -> Result<Self, ConfigError> {
        let rooms = rooms
            .into_iter()
            .map(|(id, cfg)| Ok((id.clone(), RoomRelay::new(id, cfg, faults)?)))
            .collect::<Result<_, ConfigError>>()?;
        Ok(Relay {
            sessions: BTreeMap::new(),
            rooms,
            next_session: 1,
            next_user: 1,
        })
    }

    pub fn room(&self, room_id: &str) -> Option<&RoomRelay> {
        self.rooms.get(room_id)
    }

    pub fn rooms(&self) -> impl Iterator<Item = &RoomRelay> {
        self.rooms.values()
    }

    pub fn session(&self, id: SessionId) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn connect(&mut self, now: u64) -> SessionId {
        let id = SessionId(self.next_session);
        self.next_session += 1;
        self.sessions.insert(id, Session::new(id, now));
        id
    }

    pub fn handle_frame(&mut self, session: SessionId, frame: &[u8], now: u64) -> Dispatch {
        self.dispatch(session, now, |s, assign| s.on_frame(frame, now, assign))
    }

    pub fn handle_message(&mut self, session: SessionId, msg: ClientMessage, now: u64) -> Dispatch {
        self.dispatch(session, now, |s, assign| s.on_message(msg, now, assign))
    }

    fn dispatch(
        &mut self,
        session: SessionId,
        now: u64,
        step: impl FnOnce(&mut Session, &mut dyn FnMut() -> UserId) -> SessionAction,
    ) -> Dispatch {
        let next_user = &mut self.next_user;
        let Some(s) = self.sessions.get_mut(&session) else {
            return Dispatch::default();
        };
        let mut assign = || {
            let id = UserId::new(format!("u{next_user}")).expect("generated ids are short");
            *next_user += 1;
            id
        };
        match step(s, &mut assign) {
            SessionAction::Reply(msg) => Dispatch {
                out: vec![Outbound::new(session, &msg)],
                closed: false,
            },
            SessionAction::Close(msg) => {
                let mut out = vec![Outbound::new(session, &msg)];
                out.extend(self.on_disconnect(session, now));
                Dispatch { out, closed: true }
            }
            SessionAction::Join { room_id } => {
                let user = s.user().cloned().expect("HELLO precedes JOIN_ROOM");
                let name = s.display_name().to_owned();
                let Some(room) = self.rooms.get_mut(&room_id) else {
                    let msg = ServerMessage::error(ErrorCode::UnknownRoom, format!("no room named {room_id:?}"));
                    return Dispatch {
                        out: vec![Outbound::new(session, &msg)],
                        closed: false,
                    };
                };
                match room.join(session, user, &name, now) {
                    Ok(out) => {
                        s.joined(&room_id);
                        Dispatch { out, closed: false }
                    }
                    Err(err) => Dispatch {
                        out: vec![err],
                        closed: false,
                    },
                }
            }
            SessionAction::Room(msg) => {
                let room_id = s.room().expect("in-room action").to_owned();
                let room = self.rooms.get_mut(&room_id).expect("rooms are never removed");
                Dispatch {
                    out: room.command(session, msg, now),
                    closed: false,
                }
            }
        }
    }

    /// Forgets a session; its user (if any) leaves its room.
    pub fn on_disconnect(&mut self, session: SessionId, now: u64) -> Vec<Outbound> {
        let Some(s) = self.sessions.remove(&session) else {
            return Vec::new();
        };
        match s.room().and_then(|r| self.rooms.get_mut(r)) {
            Some(room) => room.leave(session, now),
            None => Vec::new(),
        }
    }

    pub fn tick(&mut self, now: u64) -> Vec<Outbound> {
        self.rooms.values_mut().flat_map(|r| r.tick(now)).collect()
    }

    pub fn drain_events(&mut self) -> Vec<LogEvent> {
        self.rooms.values_mut().flat_map(|r| r.drain_events()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::decode_server;

    fn relay() -> Relay {
        Relay::new([("main".to_owned(), RoomConfig::default())], FaultInjection::default()).unwrap()
    }

    fn msgs(out: &[Outbound], to: SessionId) -> Vec<ServerMessage> {
        out.iter()
            .filter(|o| o.to == to)
            .map(|o| decode_server(o.frame.as_bytes()).unwrap())
            .collect()
    }

    fn join(r: &mut Relay, name: &str) -> SessionId {
        let s = r.connect(0);
        r.handle_message(s, ClientMessage::Hello { proto_version: 1, display_name: name.into() }, 0);
        let d = r.handle_message(s, ClientMessage::JoinRoom { room_id: "main".into() }, 0);
        let first = decode_server(d.out[0].frame.as_bytes()).unwrap();
        assert!(matches!(first, ServerMessage::Welcome { room_config: Some(_), .. }));
        s
    }

    #[test]
    fn hello_then_join_yields_welcome_and_room_state() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let b = r.connect(0);
        let d = r.handle_message(b, ClientMessage::Hello { proto_version: 1, display_name: "B".into() }, 0);
        assert!(matches!(&msgs(&d.out, b)[0], ServerMessage::Welcome { room_config: None, user_id } if user_id.as_str() == "u2"));
        let d = r.handle_message(b, ClientMessage::JoinRoom { room_id: "main".into() }, 0);
        let to_b = msgs(&d.out, b);
        assert_eq!(to_b.len(), 2);
        match &to_b[1] {
            ServerMessage::RoomState { users } => assert_eq!(users.len(), 2),
            other => panic!("expected ROOM_STATE, got {other:?}"),
        }
        assert!(matches!(&msgs(&d.out, a)[..], [ServerMessage::UserJoined { .. }]));
    }

    #[test]
    fn enter_is_acknowledged_to_actor_only() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let _b = join(&mut r, "B");
        let _c = join(&mut r, "C");
        let d = r.handle_message(a, ClientMessage::EnterChannel { channel: 3 }, 1);
        assert_eq!(d.out.len(), 1);
        assert_eq!(
            msgs(&d.out, a),
            vec![ServerMessage::ChannelAck { channel: Some(3), effect: AckEffect::Join }]
        );
    }

    #[test]
    fn private_speech_routes_to_comembers() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let b = join(&mut r, "B");
        let c = join(&mut r, "C");
        r.handle_message(a, ClientMessage::EnterChannel { channel: 3 }, 1);
        r.handle_message(b, ClientMessage::EnterChannel { channel: 3 }, 1);
        let d = r.handle_message(a, ClientMessage::Speak { seq: 1, payload: b"psst".to_vec() }, 2);
        assert_eq!(d.out.len(), 1);
        assert_eq!(d.out[0].to, b);
        assert!(msgs(&d.out, c).is_empty());
    }

    #[test]
    fn eleventh_join_is_room_full() {
        let mut r = relay();
        for i in 0..10 {
            join(&mut r, &format!("P{i}"));
        }
        let k = r.connect(0);
        r.handle_message(k, ClientMessage::Hello { proto_version: 1, display_name: "K".into() }, 0);
        let d = r.handle_message(k, ClientMessage::JoinRoom { room_id: "main".into() }, 0);
        assert!(matches!(&msgs(&d.out, k)[..], [ServerMessage::Error { code: ErrorCode::RoomFull, .. }]));
        assert_eq!(d.out.len(), 1);
    }

    #[test]
    fn error_paths_map_to_codes() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let code = |d: Dispatch| match &msgs(&d.out, a)[..] {
            [ServerMessage::Error { code, .. }] => *code,
            other => panic!("expected one ERROR, got {other:?}"),
        };
        assert_eq!(code(r.handle_message(a, ClientMessage::EnterChannel { channel: 9 }, 1)), ErrorCode::InvalidChannel);
        assert_eq!(code(r.handle_message(a, ClientMessage::EnterChannel { channel: -1 }, 1)), ErrorCode::InvalidChannel);
        assert_eq!(code(r.handle_message(a, ClientMessage::ExitChannel {}, 1)), ErrorCode::NotInChannel);
        assert_eq!(code(r.handle_message(a, ClientMessage::Move { x: f64::NAN, y: 0.0 }, 1)), ErrorCode::BadMessage);
        r.handle_message(a, ClientMessage::Speak { seq: 5, payload: vec![] }, 1);
        assert_eq!(code(r.handle_message(a, ClientMessage::Speak { seq: 5, payload: vec![] }, 1)), ErrorCode::BadMessage);
        let u = r.connect(0);
        r.handle_message(u, ClientMessage::Hello { proto_version: 1, display_name: "U".into() }, 0);
        let d = r.handle_message(u, ClientMessage::JoinRoom { room_id: "nowhere".into() }, 0);
        assert!(matches!(&msgs(&d.out, u)[..], [ServerMessage::Error { code: ErrorCode::UnknownRoom, .. }]));
    }

    #[test]
    fn protocol_version_mismatch_closes() {
        let mut r = relay();
        let s = r.connect(0);
        let d = r.handle_message(s, ClientMessage::Hello { proto_version: 2, display_name: "A".into() }, 0);
        assert!(d.closed);
        assert!(matches!(&msgs(&d.out, s)[..], [ServerMessage::Error { code: ErrorCode::ProtocolVersion, .. }]));
        assert!(r.session(s).is_none());
    }

    #[test]
    fn messages_before_hello_are_bad_but_ping_works() {
        let mut r = relay();
        let s = r.connect(0);
        let d = r.handle_message(s, ClientMessage::EnterChannel { channel: 1 }, 0);
        assert!(matches!(&msgs(&d.out, s)[..], [ServerMessage::Error { code: ErrorCode::BadMessage, .. }]));
        let d = r.handle_message(s, ClientMessage::Ping { nonce: 9 }, 0);
        assert_eq!(msgs(&d.out, s), vec![ServerMessage::Pong { nonce: 9 }]);
    }

    #[test]
    fn bad_message_flood_disconnects_on_tenth() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let b = join(&mut r, "B");
        for i in 1..BAD_MESSAGE_FLOOD {
            let d = r.handle_frame(a, b"garbage", i as u64);
            assert!(!d.closed, "closed early at {i}");
        }
        // A good frame resets the streak.
        r.handle_frame(a, br#"{"type":"PING","nonce":1}"#, 20);
        for _ in 1..BAD_MESSAGE_FLOOD {
            assert!(!r.handle_frame(a, b"{}", 21).closed);
        }
        let d = r.handle_frame(a, b"{}", 22);
        assert!(d.closed);
        assert!(matches!(&msgs(&d.out, b)[..], [ServerMessage::UserLeft { .. }]));
    }

    #[test]
    fn disconnect_of_private_user_reveals_nothing() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let b = join(&mut r, "B");
        r.handle_message(a, ClientMessage::EnterChannel { channel: 3 }, 1);
        let out = r.on_disconnect(a, 2);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].to, b);
        assert_eq!(out[0].frame, r#"{"type":"USER_LEFT","user_id":"u1"}"#);
        assert!(r.on_disconnect(a, 3).is_empty());
    }

    #[test]
    fn last_user_leaving_keeps_room() {
        let mut r = relay();
        let a = join(&mut r, "A");
        assert!(r.on_disconnect(a, 1).is_empty());
        assert!(r.room("main").unwrap().state().is_empty());
        join(&mut r, "B");
    }

    #[test]
    fn disconnect_before_hello_is_silent() {
        let mut r = relay();
        let _a = join(&mut r, "A");
        let s = r.connect(0);
        assert!(r.on_disconnect(s, 1).is_empty());
    }

    #[test]
    fn moves_are_rate_limited_and_coalesced() {
        let mut r = relay();
        let a = join(&mut r, "A");
        let b = join(&mut r, "B");
        let d = r.handle_message(a, ClientMessage::Move { x: 1.0, y: 0.0 }, 100);
        assert_eq!(d.out.len(), 2);
        let d = r.handle_message(a, ClientMessage::Move { x: 2.0, y: 0.0 }, 110);
        assert_eq!(d.out.len(), 1, "actor still gets an echo");
        assert_eq!(d.out[0].to, a);
        r.handle_message(a, ClientMessage::Move { x: 3.0, y: 0.0 }, 120);
        assert_eq!(r.room("main").unwrap().next_deadline(), Some(150));
        assert!(r.tick(149).is_empty());
        let flushed = r.tick(150);
        assert_eq!(flushed.len(), 1);
        assert_eq!(flushed[0].to, b);
        assert_eq!(flushed[0].frame, r#"{"type":"USER_MOVED","user_id":"u1","x":3.0,"y":0.0}"#);
        assert!(r.tick(500).is_empty());
    }

    #[test]
    fn event_log_carries_no_channel_numbers() {
        let mut r = relay();
        let a = join(&mut r, "A");
        r.handle_message(a, ClientMessage::EnterChannel { channel: 6 }, 1);
        r.handle_message(a, ClientMessage::EnterChannel { channel: 4 }, 2);
        r.handle_message(a, ClientMessage::ExitChannel {}, 3);
        let events = r.drain_events();
        assert_eq!(events.len(), 4);
        for e in &events {
            let v = serde_json::to_value(e).unwrap();
            let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            assert_eq!(keys, ["actor", "op", "outcome", "room", "time"]);
            let line = v.to_string();
            assert!(!line.contains('6') && !line.contains('4'), "{line}");
        }
    }

    #[test]
    fn faults_change_behavior() {
        let faults = FaultInjection {
            broadcast_channel_ack: true,
            channel_field_in_room_state: true,
            proximity_gated_private_speech: true,
        };
        let mut r = Relay::new([("main".to_owned(), RoomConfig::default())], faults).unwrap();
        let a = join(&mut r, "A");
        let b = join(&mut r, "B");
        let d = r.handle_message(a, ClientMessage::EnterChannel { channel: 2 }, 1);
        assert_eq!(d.out.len(), 2);
        r.handle_message(b, ClientMessage::EnterChannel { channel: 2 }, 1);
        r.handle_message(b, ClientMessage::Move { x: 1000.0, y: 0.0 }, 1);
        let d = r.handle_message(a, ClientMessage::Speak { seq: 1, payload: vec![] }, 2);
        assert!(d.out.is_empty());
        let c = r.connect(3);
        r.handle_message(c, ClientMessage::Hello { proto_version: 1, display_name: "C".into() }, 3);
        let d = r.handle_message(c, ClientMessage::JoinRoom { room_id: "main".into() }, 3);
        assert!(d.out.iter().any(|o| o.frame.contains("\"channel\":2")));
    }
}
