use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channel::RoomConfig;
use crate::config::DEFAULT_ROOM;
use crate::protocol::MAX_PAYLOAD_BYTES;

use super::SimError;

/// A scripted session history for one room.
///
/// ```json
/// {
///   "seed": 1,
///   "config": {"num_channels": 7, "max_users": 10, "hearing_radius": 25.0},
///   "actions": [
///     {"t": 0,  "actor": "A", "op": "join_room"},
///     {"t": 10, "actor": "A", "op": "move", "x": 3.0, "y": 4.0},
///     {"t": 20, "actor": "A", "op": "enter", "channel": 3},
///     {"t": 30, "actor": "A", "op": "speak", "text": "hello"},
///     {"t": 40, "actor": "A", "op": "exit"},
///     {"t": 50, "actor": "A", "op": "disconnect"}
///   ]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Generator seed the scenario came from; informational for hand-written
    /// scenarios.
    pub seed: u64,
    /// Room the actors join. Live runs need the server to serve it.
    #[serde(default = "default_room")]
    pub room: String,
    pub config: RoomConfig,
    pub actions: Vec<ScriptAction>,
}

fn default_room() -> String {
    DEFAULT_ROOM.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptAction {
    /// Milliseconds of virtual time.
    pub t: u64,
    pub actor: String,
    #[serde(flatten)]
    pub op: ScriptOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ScriptOp {
    /// Connect, HELLO, JOIN_ROOM.
    JoinRoom,
    Move { x: f64, y: f64 },
    Speak { text: String },
    Enter { channel: i64 },
    Exit,
    Disconnect,
    /// Sends nothing; only lets virtual time pass. Any actor name may be
    /// used, connected or not.
    Wait,
}

impl ScriptOp {
    pub fn name(&self) -> &'static str {
        match self {
            ScriptOp::JoinRoom => "join_room",
            ScriptOp::Move { .. } => "move",
            ScriptOp::Speak { .. } => "speak",
            ScriptOp::Enter { .. } => "enter",
            ScriptOp::Exit => "exit",
            ScriptOp::Disconnect => "disconnect",
            ScriptOp::Wait => "wait",
        }
    }

    pub fn is_channel_op(&self) -> bool {
        matches!(self, ScriptOp::Enter { .. } | ScriptOp::Exit)
    }
}

impl Scenario {
    pub fn new(config: RoomConfig) -> Self {
        Scenario {
            seed: 0,
            room: default_room(),
            config,
            actions: Vec::new(),
        }
    }

    /// Appends an action; handy for building scripts in code.
    pub fn at(mut self, t: u64, actor: &str, op: ScriptOp) -> Self {
        self.actions.push(ScriptAction {
            t,
            actor: actor.to_owned(),
            op,
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn actors(&self) -> BTreeSet<&str> {
        self.actions.iter().map(|a| a.actor.as_str()).collect()
    }

    /// Checks ordering, declaration-before-use and argument shapes.
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |i: usize, why: String| SimError::ScenarioInvalid(format!("action {i}: {why}"));
        self.config
            .validate()
            .map_err(|e| SimError::ScenarioInvalid(format!("config: {e}")))?;
        if self.room.is_empty() {
            return Err(SimError::ScenarioInvalid("room must not be empty".into()));
        }
        let mut connected: BTreeMap<&str, bool> = BTreeMap::new();
        let mut last_t = 0;
        for (i, a) in self.actions.iter().enumerate() {
            if a.t < last_t {
                return Err(invalid(i, format!("t={} goes back in time from {last_t}", a.t)));
            }
            last_t = a.t;
            let len = a.actor.chars().count();
            if len == 0 || len > 64 {
                return Err(invalid(i, "actor name must be 1..=64 characters".into()));
            }
            let is_connected = connected.get(a.actor.as_str()).copied().unwrap_or(false);
            match &a.op {
                ScriptOp::Wait => {}
                ScriptOp::JoinRoom if is_connected => {
                    return Err(invalid(i, format!("{} is already connected", a.actor)));
                }
                ScriptOp::JoinRoom => {
                    connected.insert(&a.actor, true);
                }
                _ if !is_connected => {
                    return Err(invalid(i, format!("{} used before join_room", a.actor)));
                }
                ScriptOp::Move { x, y } if !(x.is_finite() && y.is_finite()) => {
                    return Err(invalid(i, "move coordinates must be finite".into()));
                }
                ScriptOp::Speak { text } if text.len() > MAX_PAYLOAD_BYTES => {
                    return Err(invalid(i, "speech exceeds the payload limit".into()));
                }
                ScriptOp::Disconnect => {
                    connected.insert(&a.actor, false);
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_format() {
        let text = r#"{"seed":1,"config":{"num_channels":7,"max_users":10,"hearing_radius":25.0},
            "actions":[{"t":0,"actor":"A","op":"join_room"},
                       {"t":10,"actor":"A","op":"move","x":3.0,"y":4.0},
                       {"t":20,"actor":"A","op":"enter","channel":3},
                       {"t":30,"actor":"A","op":"speak","text":"hello"},
                       {"t":40,"actor":"A","op":"exit"},
                       {"t":50,"actor":"A","op":"disconnect"}]}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.room, "main");
        assert_eq!(s.actions.len(), 6);
        assert_eq!(s.actions[2].op, ScriptOp::Enter { channel: 3 });
        let again: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_bad_scripts() {
        let base = || Scenario::new(RoomConfig::default());
        assert!(base().at(0, "A", ScriptOp::Exit).validate().is_err());
        assert!(base()
            .at(5, "A", ScriptOp::JoinRoom)
            .at(4, "A", ScriptOp::Exit)
            .validate()
            .is_err());
        assert!(base()
            .at(0, "A", ScriptOp::JoinRoom)
            .at(0, "A", ScriptOp::JoinRoom)
            .validate()
            .is_err());
        assert!(base()
            .at(0, "A", ScriptOp::JoinRoom)
            .at(1, "A", ScriptOp::Disconnect)
            .at(2, "A", ScriptOp::Speak { text: "x".into() })
            .validate()
            .is_err());
        assert!(base()
            .at(0, "A", ScriptOp::JoinRoom)
            .at(1, "A", ScriptOp::Disconnect)
            .at(2, "A", ScriptOp::JoinRoom)
            .validate()
            .is_ok());
        assert!(Scenario::from_json(r#"{"seed":1,"config":{"num_channels":0,"max_users":10,"hearing_radius":25.0},"actions":[]}"#).is_err());
        assert!(Scenario::from_json(r#"{"seed":1,"config":{"num_channels":1,"max_users":10,"hearing_radius":25.0},"actions":[{"t":0,"actor":"A","op":"fly"}]}"#).is_err());
    }
}
