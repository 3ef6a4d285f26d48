use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One frame delivered to one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    /// Index of the scripted action that caused the frame; `None` for
    /// timer-driven flushes (coalesced position updates).
    pub step: Option<usize>,
    pub t: u64,
    /// The frame's `"type"`.
    pub kind: String,
    /// Actor whose action caused the frame, or `"server"`.
    pub from: String,
    /// Receiving actor.
    pub to: String,
    /// The frame exactly as sent.
    pub detail: String,
}

/// Every frame every actor received, in room order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    /// Actor name to the user ids the server assigned it, in order.
    pub identities: BTreeMap<String, Vec<String>>,
    pub records: Vec<DeliveryRecord>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcripts serialize")
    }

    /// Records delivered to `actor`.
    pub fn inbox<'a>(&'a self, actor: &'a str) -> impl Iterator<Item = &'a DeliveryRecord> + 'a {
        self.records.iter().filter(move |r| r.to == actor)
    }

    /// Records caused by scripted step `step`.
    pub fn at_step(&self, step: usize) -> impl Iterator<Item = &DeliveryRecord> {
        self.records.iter().filter(move |r| r.step == Some(step))
    }

    pub fn name_of(&self, user_id: &str) -> Option<&str> {
        self.identities
            .iter()
            .find(|(_, ids)| ids.iter().any(|id| id == user_id))
            .map(|(name, _)| name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOp {
    Enter,
    Exit,
}

/// Ground truth for one scripted enter/exit: the actor's channel afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEvent {
    pub step: usize,
    pub t: u64,
    pub actor: String,
    pub op: ChannelOp,
    pub channel_after: Option<u32>,
}

pub type ChannelHistory = Vec<ChannelEvent>;

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub transcript: Transcript,
    pub history: ChannelHistory,
}

pub(crate) fn frame_kind(frame: &str) -> String {
    serde_json::from_str::<serde_json::Value>(frame)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_owned))
        .unwrap_or_else(|| "?".to_owned())
}
