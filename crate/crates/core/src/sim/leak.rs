//! Transcript audit for channel-membership leaks.
//!
//! A client may learn its own channel (from its CHANNEL_ACK) and, by
//! receiving private speech, that it shares a channel with the speaker.
//! Nothing else it receives may depend on anyone else's channel state.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::relay::FaultInjection;

use super::runner::run_in_process;
use super::scenario::{Scenario, ScriptAction, ScriptOp};
use super::transcript::{ChannelHistory, Transcript};
use super::SimError;

/// Keys that would name or describe a channel.
const CHANNEL_KEYS: &[&str] = &["channel", "channel_id", "voice_state", "private", "members", "channels"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakRule {
    /// A channel-bearing field outside CHANNEL_ACK.
    ChannelField,
    /// A CHANNEL_ACK delivered to someone other than the actor.
    ForeignAck,
    /// Another client received something because of an enter or exit.
    ChannelOpSideEffect,
    /// A client's non-audio traffic changed when someone else's channel
    /// operations were removed from the script.
    Interference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index into `Transcript::records`; for interference, the first
    /// position at which the two inboxes differ.
    pub offset: usize,
    pub recipient: String,
    pub rule: LeakRule,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LeakReport {
    pub records_scanned: usize,
    pub violations: Vec<Violation>,
}

impl LeakReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn channel_keys(value: &Value, path: &str, found: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let here = format!("{path}.{k}");
                if CHANNEL_KEYS.contains(&k.as_str()) {
                    found.push(here.clone());
                }
                channel_keys(v, &here, found);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                channel_keys(v, &format!("{path}[{i}]"), found);
            }
        }
        _ => {}
    }
}

/// Scans every delivered frame for channel leaks.
pub fn leak_scan(transcript: &Transcript, history: &ChannelHistory) -> LeakReport {
    let channel_steps: BTreeMap<usize, &str> =
        history.iter().map(|e| (e.step, e.actor.as_str())).collect();
    let mut report = LeakReport::default();

    for (offset, r) in transcript.records.iter().enumerate() {
        report.records_scanned += 1;
        let mut flag = |rule: LeakRule, detail: String| {
            report.violations.push(Violation {
                offset,
                recipient: r.to.clone(),
                rule,
                detail,
            })
        };

        if r.kind == "CHANNEL_ACK" {
            if r.from != r.to {
                flag(LeakRule::ForeignAck, format!("ack caused by {} reached {}", r.from, r.to));
            }
        } else {
            match serde_json::from_str::<Value>(&r.detail) {
                Ok(value) => {
                    let mut found = Vec::new();
                    channel_keys(&value, "", &mut found);
                    for path in found {
                        flag(LeakRule::ChannelField, format!("{} carries {path}", r.kind));
                    }
                }
                Err(_) => flag(LeakRule::ChannelField, "frame is not JSON".into()),
            }
        }

        if let Some(actor) = r.step.and_then(|s| channel_steps.get(&s)) {
            if r.to != *actor {
                flag(
                    LeakRule::ChannelOpSideEffect,
                    format!("{} to {} after a channel op by {actor}", r.kind, r.to),
                );
            }
        }
    }
    report
}

/// For every actor, replays the scenario with every other actor's enter and
/// exit replaced by a pause, and compares the actor's non-audio inbox. Any
/// difference means channel state influenced what the actor was told.
pub fn noninterference_violations(
    scenario: &Scenario,
    faults: FaultInjection,
) -> Result<Vec<Violation>, SimError> {
    let base = run_in_process(scenario, faults)?.transcript;
    let mut violations = Vec::new();
    for observer in scenario.actors() {
        if !scenario
            .actions
            .iter()
            .any(|a| a.actor != observer && a.op.is_channel_op())
        {
            continue;
        }
        let mut alt = scenario.clone();
        alt.actions = scenario
            .actions
            .iter()
            .map(|a| {
                if a.actor != observer && a.op.is_channel_op() {
                    ScriptAction {
                        t: a.t,
                        actor: a.actor.clone(),
                        op: ScriptOp::Wait,
                    }
                } else {
                    a.clone()
                }
            })
            .collect();
        let alt = run_in_process(&alt, faults)?.transcript;

        let view = |t: &Transcript| -> Vec<(String, String)> {
            t.inbox(observer)
                .filter(|r| r.kind != "AUDIO")
                .map(|r| (r.kind.clone(), r.detail.clone()))
                .collect()
        };
        let (a, b) = (view(&base), view(&alt));
        if a != b {
            let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
            violations.push(Violation {
                offset: at,
                recipient: observer.to_owned(),
                rule: LeakRule::Interference,
                detail: format!(
                    "inbox differs at frame {at}: {:?} vs {:?}",
                    a.get(at).map(|f| &f.1),
                    b.get(at).map(|f| &f.1)
                ),
            });
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RoomConfig;
    use crate::sim::transcript::{ChannelEvent, ChannelOp, DeliveryRecord};

    fn rec(step: usize, from: &str, to: &str, detail: &str) -> DeliveryRecord {
        DeliveryRecord {
            step: Some(step),
            t: 0,
            kind: crate::sim::transcript::frame_kind(detail),
            from: from.into(),
            to: to.into(),
            detail: detail.into(),
        }
    }

    #[test]
    fn clean_transcript_passes() {
        let tr = Transcript {
            identities: BTreeMap::new(),
            records: vec![
                rec(0, "A", "A", r#"{"type":"WELCOME","user_id":"u1","room_config":{"num_channels":7,"max_users":10,"hearing_radius":25.0}}"#),
                rec(1, "A", "A", r#"{"type":"CHANNEL_ACK","channel":3,"effect":"join"}"#),
            ],
        };
        let history = vec![ChannelEvent { step: 1, t: 0, actor: "A".into(), op: ChannelOp::Enter, channel_after: Some(3) }];
        let report = leak_scan(&tr, &history);
        assert_eq!(report.records_scanned, 2);
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn each_rule_fires() {
        let tr = Transcript {
            identities: BTreeMap::new(),
            records: vec![
                rec(0, "A", "B", r#"{"type":"ROOM_STATE","users":[{"user_id":"u1","display_name":"A","x":0.0,"y":0.0,"channel":3}]}"#),
                rec(1, "A", "B", r#"{"type":"CHANNEL_ACK","channel":3,"effect":"join"}"#),
            ],
        };
        let history = vec![ChannelEvent { step: 1, t: 0, actor: "A".into(), op: ChannelOp::Enter, channel_after: Some(3) }];
        let rules: Vec<LeakRule> = leak_scan(&tr, &history).violations.iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![LeakRule::ChannelField, LeakRule::ForeignAck, LeakRule::ChannelOpSideEffect]);
    }

    #[test]
    fn noninterference_holds_for_correct_relay() {
        let s = Scenario::new(RoomConfig::default())
            .at(0, "A", ScriptOp::JoinRoom)
            .at(0, "B", ScriptOp::JoinRoom)
            .at(10, "A", ScriptOp::Enter { channel: 2 })
            .at(20, "B", ScriptOp::Move { x: 3.0, y: 0.0 })
            .at(30, "A", ScriptOp::Speak { text: "x".into() })
            .at(40, "A", ScriptOp::Exit)
            .at(50, "A", ScriptOp::Disconnect);
        assert!(noninterference_violations(&s, FaultInjection::default()).unwrap().is_empty());
        let leaky = FaultInjection { broadcast_channel_ack: true, ..Default::default() };
        assert!(!noninterference_violations(&s, leaky).unwrap().is_empty());
    }
}
