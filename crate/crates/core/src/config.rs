//! Server configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:7700"
//! log_level = "info"
//!
//! [[rooms]]
//! room_id = "main"
//! num_channels = 7
//! max_users = 10
//! hearing_radius = 25.0
//! ```
//!
//! Every key is optional. A missing file means one room `main` with the
//! default room settings.

use std::collections::BTreeSet;
use std::fmt;
use std::net::SocketAddr;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::channel::{Position, RoomConfig};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7700";
pub const DEFAULT_ROOM: &str = "main";
const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigInvalid {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid config")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, " ({field})")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSettings {
    pub room_id: String,
    #[serde(default = "default_channels")]
    pub num_channels: u32,
    #[serde(default = "default_max_users")]
    pub max_users: usize,
    #[serde(default = "default_radius")]
    pub hearing_radius: f64,
    #[serde(default)]
    pub spawn_x: f64,
    #[serde(default)]
    pub spawn_y: f64,
}

impl RoomSettings {
    pub fn named(room_id: &str) -> Self {
        RoomSettings {
            room_id: room_id.to_owned(),
            num_channels: default_channels(),
            max_users: default_max_users(),
            hearing_radius: default_radius(),
            spawn_x: 0.0,
            spawn_y: 0.0,
        }
    }

    pub fn room_config(&self) -> RoomConfig {
        RoomConfig {
            num_channels: self.num_channels,
            max_users: self.max_users,
            hearing_radius: self.hearing_radius,
            spawn: Position {
                x: self.spawn_x,
                y: self.spawn_y,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    #[serde(default = "default_rooms")]
    pub rooms: Vec<RoomSettings>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: default_listen(),
            log_level: default_log_level(),
            rooms: default_rooms(),
        }
    }
}

fn default_channels() -> u32 {
    RoomConfig::DEFAULT_CHANNELS
}
fn default_max_users() -> usize {
    RoomConfig::DEFAULT_MAX_USERS
}
fn default_radius() -> f64 {
    RoomConfig::DEFAULT_HEARING_RADIUS
}
fn default_listen() -> String {
    DEFAULT_LISTEN.to_owned()
}
fn default_log_level() -> String {
    "info".to_owned()
}
fn default_rooms() -> Vec<RoomSettings> {
    vec![RoomSettings::named(DEFAULT_ROOM)]
}

impl ServerConfig {
    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigInvalid> {
        self.listen.parse().map_err(|e| ConfigInvalid {
            line: None,
            field: Some("listen".into()),
            message: format!("{:?} is not an address:port ({e})", self.listen),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let field_err = |field: String, message: String| ConfigInvalid {
            line: None,
            field: Some(field),
            message,
        };
        self.listen_addr()?;
        if !LOG_LEVELS.contains(&self.log_level.to_ascii_lowercase().as_str()) {
            return Err(field_err(
                "log_level".into(),
                format!("{:?} is not one of {}", self.log_level, LOG_LEVELS.join(", ")),
            ));
        }
        if self.rooms.is_empty() {
            return Err(field_err("rooms".into(), "at least one room is required".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, room) in self.rooms.iter().enumerate() {
            let len = room.room_id.chars().count();
            if len == 0 || len > 64 {
                return Err(field_err(format!("rooms[{i}].room_id"), "must be 1..=64 characters".into()));
            }
            if !seen.insert(room.room_id.as_str()) {
                return Err(field_err(
                    format!("rooms[{i}].room_id"),
                    format!("duplicate room {:?}", room.room_id),
                ));
            }
            room.room_config().validate().map_err(|e| {
                let field = match e {
                    crate::channel::ConfigError::NoChannels => "num_channels",
                    crate::channel::ConfigError::TooFewUsers(_) => "max_users",
                    crate::channel::ConfigError::BadRadius(_) => "hearing_radius",
                    crate::channel::ConfigError::BadSpawn => "spawn_x",
                };
                field_err(format!("rooms[{i}].{field}"), e.to_string())
            })?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigInvalid> {
        let config: ServerConfig = toml::from_str(text).map_err(|e| ConfigInvalid {
            line: e
                .span()
                .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1),
            field: None,
            message: e.message().to_owned(),
        })?;
        config.validate()?;
        Ok(config)
    }
}

/// Reads the config at `path`. No path, or a path that does not exist,
/// yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<ServerConfig, ConfigInvalid> {
    let Some(path) = path else {
        return Ok(ServerConfig::default());
    };
    match std::fs::read_to_string(path) {
        Ok(text) => ServerConfig::from_toml(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("config {} not found, using defaults", path.display());
            Ok(ServerConfig::default())
        }
        Err(e) => Err(ConfigInvalid {
            line: None,
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        }),
    }
}
