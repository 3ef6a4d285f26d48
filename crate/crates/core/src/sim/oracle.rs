//! Brute-force audibility oracle.
//!
//! Deliberately shares no code or types with [`crate::channel`]: it works on
//! names and plain numbers, visits every listener, and applies the two
//! audibility rules from scratch.
//!
//! - The speaker is in channel `c`: a listener hears it iff the listener is
//!   also in channel `c`. Distance is irrelevant.
//! - The speaker is public: a listener hears it iff their squared distance
//!   is at most the squared radius. The listener's own channel is
//!   irrelevant.
//! - Nobody hears themselves.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ORACLE_MAX_USERS: usize = 8;

/// `{"hearing_radius": 25.0, "users": [{"name": "A", "x": 0, "y": 0, "channel": 3}, ...]}`
/// with `channel` omitted or `null` for public users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleState {
    pub hearing_radius: f64,
    pub users: Vec<OracleUser>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleUser {
    pub name: String,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub channel: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle handles at most {ORACLE_MAX_USERS} users, got {0}")]
    TooManyUsers(usize),
    #[error("no user named {0:?}")]
    UnknownSpeaker(String),
    #[error("user name {0:?} appears twice")]
    DuplicateName(String),
}

pub fn oracle_recipients(state: &OracleState, speaker: &str) -> Result<BTreeSet<String>, OracleError> {
    if state.users.len() > ORACLE_MAX_USERS {
        return Err(OracleError::TooManyUsers(state.users.len()));
    }
    let mut names = BTreeSet::new();
    for u in &state.users {
        if !names.insert(u.name.as_str()) {
            return Err(OracleError::DuplicateName(u.name.clone()));
        }
    }
    let Some(source) = state.users.iter().find(|u| u.name == speaker) else {
        return Err(OracleError::UnknownSpeaker(speaker.to_owned()));
    };
    let limit = state.hearing_radius * state.hearing_radius;

    let mut heard = BTreeSet::new();
    for listener in &state.users {
        if listener.name == source.name {
            continue;
        }
        let audible = if let Some(c) = source.channel {
            listener.channel == Some(c)
        } else {
            let dx = listener.x - source.x;
            let dy = listener.y - source.y;
            dx * dx + dy * dy <= limit
        };
        if audible {
            heard.insert(listener.name.clone());
        }
    }
    Ok(heard)
}
