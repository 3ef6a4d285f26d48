//! Authoritative single-room model: membership, positions, voice scopes and
//! the recipient set for every spoken frame.
//!
//! A room holds users who share one public space. Public speech reaches
//! everyone within `hearing_radius` of the speaker, whatever their own voice
//! state. Private speech reaches only the speaker's co-members, at any
//! distance. Channel membership of other users never appears in an
//! [`RoomView`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest accepted user id, in characters.
pub const MAX_USER_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoomError {
    #[error("room is full ({max} users)")]
    RoomFull { max: usize },
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("user {0} already present")]
    DuplicateUser(UserId),
    #[error("channel {requested} is outside 1..={available}")]
    InvalidChannel { requested: i64, available: u32 },
    #[error("user {0} is not in a private channel")]
    NotInChannel(UserId),
    #[error("coordinates must be finite")]
    NonFiniteCoordinate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("num_channels must be at least 1")]
    NoChannels,
    #[error("max_users must be at least 2, got {0}")]
    TooFewUsers(usize),
    #[error("hearing_radius must be a positive finite number, got {0}")]
    BadRadius(f64),
    #[error("spawn position must be finite")]
    BadSpawn,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("user id must be 1..={MAX_USER_ID_LEN} characters")]
pub struct InvalidUserId;

/// Server-assigned identity of a user inside a room.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidUserId> {
        let id = id.into();
        let len = id.chars().count();
        if len == 0 || len > MAX_USER_ID_LEN {
            return Err(InvalidUserId);
        }
        Ok(UserId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UserId {
    type Error = InvalidUserId;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        UserId::new(value)
    }
}

impl From<UserId> for String {
    fn from(id: UserId) -> Self {
        id.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One-based private channel number. Range against a room's
/// `num_channels` is checked when entering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(u32);

impl ChannelId {
    /// Returns `None` for anything below 1 or beyond `u32`.
    pub fn new(index: i64) -> Option<Self> {
        u32::try_from(index).ok().filter(|&i| i >= 1).map(ChannelId)
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The per-user routing discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VoiceState {
    #[default]
    Public,
    Private(ChannelId),
}

impl VoiceState {
    pub fn channel(self) -> Option<ChannelId> {
        match self {
            VoiceState::Public => None,
            VoiceState::Private(c) => Some(c),
        }
    }
}

/// A point on the room's floor plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Result<Self, RoomError> {
        if x.is_finite() && y.is_finite() {
            Ok(Position { x, y })
        } else {
            Err(RoomError::NonFiniteCoordinate)
        }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl Default for Position {
    fn default() -> Self {
        Position::ORIGIN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub num_channels: u32,
    pub max_users: usize,
    pub hearing_radius: f64,
    #[serde(default)]
    pub spawn: Position,
}

impl RoomConfig {
    pub const DEFAULT_CHANNELS: u32 = 7;
    pub const DEFAULT_MAX_USERS: usize = 10;
    pub const DEFAULT_HEARING_RADIUS: f64 = 25.0;

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_channels < 1 {
            return Err(ConfigError::NoChannels);
        }
        if self.max_users < 2 {
            return Err(ConfigError::TooFewUsers(self.max_users));
        }
        if !(self.hearing_radius.is_finite() && self.hearing_radius > 0.0) {
            return Err(ConfigError::BadRadius(self.hearing_radius));
        }
        if !(self.spawn.x.is_finite() && self.spawn.y.is_finite()) {
            return Err(ConfigError::BadSpawn);
        }
        Ok(())
    }
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            num_channels: Self::DEFAULT_CHANNELS,
            max_users: Self::DEFAULT_MAX_USERS,
            hearing_radius: Self::DEFAULT_HEARING_RADIUS,
            spawn: Position::ORIGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRecord {
    id: UserId,
    display_name: String,
    position: Position,
    voice_state: VoiceState,
}

impl UserRecord {
    pub fn id(&self) -> &UserId {
        &self.id
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn position(&self) -> Position {
        self.position
    }

    pub fn voice_state(&self) -> VoiceState {
        self.voice_state
    }
}

/// One opaque speech payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioFrame {
    pub speaker: UserId,
    pub seq: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Join,
    Leave,
    Switch,
}

/// Local feedback for a channel transition. Addressed to `actor` only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectEvent {
    pub actor: UserId,
    pub kind: EffectKind,
    pub channel: Option<ChannelId>,
}

/// What one user is allowed to see of a room.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoomView {
    pub observer: UserId,
    pub own_voice_state: VoiceState,
    pub users: Vec<PeerView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeerView {
    pub id: UserId,
    pub display_name: String,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomState {
    config: RoomConfig,
    users: BTreeMap<UserId, UserRecord>,
    next_id: u64,
}

impl RoomState {
    pub fn new(config: RoomConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(RoomState {
            config,
            users: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &RoomConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn user(&self, id: &UserId) -> Option<&UserRecord> {
        self.users.get(id)
    }

    /// Users in id order.
    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    /// Adds a user under a room-local generated id (`u1`, `u2`, ...).
    pub fn add_user(&mut self, display_name: &str) -> Result<UserId, RoomError> {
        if self.users.len() >= self.config.max_users {
            return Err(RoomError::RoomFull {
                max: self.config.max_users,
            });
        }
        let id = loop {
            let candidate = UserId(format!("u{}", self.next_id));
            self.next_id += 1;
            if !self.users.contains_key(&candidate) {
                break candidate;
            }
        };
        self.insert_user(id.clone(), display_name)?;
        Ok(id)
    }

    /// Adds a user under an id assigned elsewhere (e.g. by the relay).
    pub fn insert_user(&mut self, id: UserId, display_name: &str) -> Result<(), RoomError> {
        if self.users.contains_key(&id) {
            return Err(RoomError::DuplicateUser(id));
        }
        if self.users.len() >= self.config.max_users {
            return Err(RoomError::RoomFull {
                max: self.config.max_users,
            });
        }
        let record = UserRecord {
            id: id.clone(),
            display_name: display_name.to_owned(),
            position: self.config.spawn,
            voice_state: VoiceState::Public,
        };
        self.users.insert(id, record);
        Ok(())
    }

    /// Removes a user. Any channel membership goes with it.
    pub fn remove_user(&mut self, id: &UserId) -> Result<UserRecord, RoomError> {
        self.users
            .remove(id)
            .ok_or_else(|| RoomError::UnknownUser(id.clone()))
    }

    pub fn enter_channel(
        &mut self,
        user: &UserId,
        channel: ChannelId,
    ) -> Result<EffectEvent, RoomError> {
        let available = self.config.num_channels;
        let record = self
            .users
            .get_mut(user)
            .ok_or_else(|| RoomError::UnknownUser(user.clone()))?;
        if channel.get() > available {
            return Err(RoomError::InvalidChannel {
                requested: channel.get() as i64,
                available,
            });
        }
        let kind = match record.voice_state {
            VoiceState::Private(current) if current != channel => EffectKind::Switch,
            _ => EffectKind::Join,
        };
        record.voice_state = VoiceState::Private(channel);
        Ok(EffectEvent {
            actor: user.clone(),
            kind,
            channel: Some(channel),
        })
    }

    pub fn exit_channel(&mut self, user: &UserId) -> Result<EffectEvent, RoomError> {
        let record = self
            .users
            .get_mut(user)
            .ok_or_else(|| RoomError::UnknownUser(user.clone()))?;
        if record.voice_state == VoiceState::Public {
            return Err(RoomError::NotInChannel(user.clone()));
        }
        record.voice_state = VoiceState::Public;
        Ok(EffectEvent {
            actor: user.clone(),
            kind: EffectKind::Leave,
            channel: None,
        })
    }

    pub fn move_user(&mut self, user: &UserId, to: Position) -> Result<(), RoomError> {
        let to = Position::new(to.x, to.y)?;
        let record = self
            .users
            .get_mut(user)
            .ok_or_else(|| RoomError::UnknownUser(user.clone()))?;
        record.position = to;
        Ok(())
    }

    /// Everyone who receives a frame spoken by `speaker` right now.
    pub fn compute_recipients(&self, speaker: &UserId) -> Result<BTreeSet<UserId>, RoomError> {
        let source = self
            .users
            .get(speaker)
            .ok_or_else(|| RoomError::UnknownUser(speaker.clone()))?;
        let others = self.users.values().filter(|u| u.id != *speaker);
        let recipients = match source.voice_state {
            VoiceState::Private(channel) => others
                .filter(|u| u.voice_state == VoiceState::Private(channel))
                .map(|u| u.id.clone())
                .collect(),
            VoiceState::Public => others
                .filter(|u| u.position.distance_to(&source.position) <= self.config.hearing_radius)
                .map(|u| u.id.clone())
                .collect(),
        };
        Ok(recipients)
    }

    /// The room as `observer` may see it: every user's name and position,
    /// and the observer's own voice state. Nothing else.
    pub fn observable_view(&self, observer: &UserId) -> Result<RoomView, RoomError> {
        let own = self
            .users
            .get(observer)
            .ok_or_else(|| RoomError::UnknownUser(observer.clone()))?;
        Ok(RoomView {
            observer: observer.clone(),
            own_voice_state: own.voice_state,
            users: self
                .users
                .values()
                .map(|u| PeerView {
                    id: u.id.clone(),
                    display_name: u.display_name.clone(),
                    position: u.position,
                })
                .collect(),
        })
    }

    /// Structural invariants; `Err` names the first one broken.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.users.len() > self.config.max_users {
            return Err(format!(
                "{} users exceed max_users {}",
                self.users.len(),
                self.config.max_users
            ));
        }
        for (key, record) in &self.users {
            if *key != record.id {
                return Err(format!("record for {key} carries id {}", record.id));
            }
            if let VoiceState::Private(c) = record.voice_state {
                if c.get() < 1 || c.get() > self.config.num_channels {
                    return Err(format!("{key} is in out-of-range channel {c}"));
                }
            }
            if !(record.position.x.is_finite() && record.position.y.is_finite()) {
                return Err(format!("{key} has a non-finite position"));
            }
        }
        Ok(())
    }
}
